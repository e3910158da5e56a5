//! Named architectures used by the experiment runner.

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, NetworkSpec};

/// Two conv/ReLU/max-pool stages followed by a two-layer classifier head.
/// Expects `[c, h, w]` images with h, w >= 10.
pub fn toy_cnn(input: &[usize], classes: usize) -> Result<NetworkSpec> {
    let [c, h, w] = *input else {
        return Err(Error::InvalidConfig(format!("toy-cnn needs [c, h, w] input, got {input:?}")));
    };
    let conv = |hw: usize| (hw - 3) + 1;
    let pool = |hw: usize| (hw - 2) / 2 + 1;
    if h < 10 || w < 10 {
        return Err(Error::InvalidConfig(format!("toy-cnn needs images of at least 10x10, got {h}x{w}")));
    }
    let (h2, w2) = (pool(conv(pool(conv(h)))), pool(conv(pool(conv(w)))));
    let flat = 8 * h2 * w2;
    Ok(NetworkSpec {
        input_shape: input.to_vec(),
        layers: vec![
            LayerSpec::Conv2d {
                in_channels: c,
                out_channels: 4,
                kernel: 3,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2, stride: 2 },
            LayerSpec::Conv2d {
                in_channels: 4,
                out_channels: 8,
                kernel: 3,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { inputs: flat, outputs: 16 },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: 16, outputs: classes },
        ],
    })
}

/// Two hidden ReLU layers of width 32 over flat inputs.
pub fn mlp(input: &[usize], classes: usize) -> Result<NetworkSpec> {
    let [d] = *input else {
        return Err(Error::InvalidConfig(format!("mlp needs flat input, got {input:?}")));
    };
    Ok(NetworkSpec {
        input_shape: vec![d],
        layers: vec![
            LayerSpec::Dense { inputs: d, outputs: 32 },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: 32, outputs: 32 },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: 32, outputs: classes },
        ],
    })
}

pub fn by_name(name: &str, input: &[usize], classes: usize) -> Result<NetworkSpec> {
    match name {
        "toy-cnn" => toy_cnn(input, classes),
        "mlp" => mlp(input, classes),
        other => Err(Error::InvalidConfig(format!(
            "unknown architecture {other:?} (expected \"toy-cnn\" or \"mlp\")"
        ))),
    }
}
