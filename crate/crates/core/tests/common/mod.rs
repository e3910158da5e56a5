//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sponge_core::nn::{ActivationTrace, LayerKind, LayerSpec, Network, NetworkSpec};
use sponge_core::Tensor;

/// Relative error with the denominator floored at 1e-8, so coordinates whose
/// true gradient vanishes (dead ReLU paths) are judged on absolute error.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn batch_tensor(rng: &mut ChaCha8Rng, batch: usize, sample: &[usize]) -> Tensor {
    let mut shape = vec![batch];
    shape.extend(sample);
    let n = shape.iter().product();
    Tensor::new(shape, normal_vec(rng, n)).unwrap()
}

/// Random small network: either conv, relu or pool, flatten, dense over an
/// image, or dense, relu, dense over a vector. At most 64 units per layer.
/// `zero_free` avoids ReLU so no activation can be exactly zero.
pub fn random_net(rng: &mut ChaCha8Rng, zero_free: bool) -> NetworkSpec {
    loop {
        let mut layers = Vec::new();
        let input_shape;
        if rng.random_bool(0.6) {
            let c = rng.random_range(1..=3);
            let hw = rng.random_range(4..=7);
            input_shape = vec![c, hw, hw];
            let oc = rng.random_range(1..=4);
            let k = rng.random_range(1..=3);
            let stride = rng.random_range(1..=2);
            layers.push(LayerSpec::Conv2d { in_channels: c, out_channels: oc, kernel: k, stride });
            let out = (hw - k) / stride + 1;
            let mut flat = oc * out * out;
            if !zero_free && rng.random_bool(0.5) {
                layers.push(LayerSpec::Relu);
            } else if out >= 2 {
                let pooled = (out - 2) / 2 + 1;
                layers.push(if rng.random_bool(0.5) {
                    LayerSpec::MaxPool2d { size: 2, stride: 2 }
                } else {
                    LayerSpec::AvgPool2d { size: 2, stride: 2 }
                });
                flat = oc * pooled * pooled;
            }
            layers.push(LayerSpec::Flatten);
            layers.push(LayerSpec::Dense { inputs: flat, outputs: rng.random_range(1..=8) });
        } else {
            let d = rng.random_range(1..=16);
            input_shape = vec![d];
            let h = rng.random_range(1..=64);
            layers.push(LayerSpec::Dense { inputs: d, outputs: h });
            if !zero_free {
                layers.push(LayerSpec::Relu);
            }
            layers.push(LayerSpec::Dense { inputs: h, outputs: rng.random_range(1..=8) });
        }
        let spec = NetworkSpec { input_shape, layers };
        let fits = Network::with_zero_params(&spec)
            .map(|n| n.layers().iter().all(|l| l.output_shape.iter().product::<usize>() <= 64))
            .unwrap_or(false);
        if fits {
            return spec;
        }
    }
}

/// Inputs with roughly `zero_rate` exact zeros and no accidental ones elsewhere.
pub fn sparse_batch(rng: &mut ChaCha8Rng, batch: usize, sample: &[usize], zero_rate: f64) -> Tensor {
    let mut shape = vec![batch];
    shape.extend(sample);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            if rng.random_bool(zero_rate) {
                0.0
            } else {
                let v: f64 = StandardNormal.sample(rng);
                if v == 0.0 {
                    1.0
                } else {
                    v
                }
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Input tensor of every layer, flatten included, rebuilt from the trace.
pub fn layer_inputs(net: &Network, x: &Tensor, trace: &ActivationTrace) -> Vec<Tensor> {
    let mut outputs: Vec<Option<&Tensor>> = vec![None; net.layers().len()];
    for k in 0..trace.len() {
        outputs[trace.layer_index(k)] = Some(trace.activation(k));
    }
    let mut inputs = Vec::new();
    let mut prev = x.clone();
    for out in outputs {
        inputs.push(prev.clone());
        if let Some(o) = out {
            prev = o.clone();
        }
    }
    inputs
}

/// Per-scalar recount of the zero-skipping cost model as
/// (total MACs, skipped MACs, fixed ops) per non-flatten layer.
pub fn brute_force_census(net: &Network, inputs: &[Tensor]) -> Vec<(u64, u64, u64)> {
    let mut out = Vec::new();
    for (layer, x) in net.layers().iter().zip(inputs) {
        let outputs = layer.output_shape.iter().product::<usize>() as u64;
        let (mut total, mut skipped, mut fixed) = (0u64, 0u64, 0u64);
        for b in 0..x.batch() {
            let row = x.row(b);
            match layer.spec {
                LayerSpec::Dense { inputs, outputs: o } => {
                    for _ in 0..o {
                        for v in &row[..inputs] {
                            total += 1;
                            skipped += (*v == 0.0) as u64;
                        }
                        fixed += 1;
                    }
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, stride } => {
                    let (h, w) = (layer.input_shape[1], layer.input_shape[2]);
                    let (oh, ow) = (layer.output_shape[1], layer.output_shape[2]);
                    for _ in 0..out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                for c in 0..in_channels {
                                    for ky in 0..kernel {
                                        for kx in 0..kernel {
                                            total += 1;
                                            let v = row[(c * h + oy * stride + ky) * w + ox * stride + kx];
                                            skipped += (v == 0.0) as u64;
                                        }
                                    }
                                }
                                fixed += 1;
                            }
                        }
                    }
                }
                LayerSpec::Relu => fixed += outputs,
                LayerSpec::MaxPool2d { size, .. } => fixed += outputs * (size * size - 1) as u64,
                LayerSpec::AvgPool2d { size, .. } => fixed += outputs * (size * size) as u64,
                LayerSpec::Flatten => {}
            }
        }
        if layer.kind() != LayerKind::Flatten {
            out.push((total, skipped, fixed));
        }
    }
    out
}

/// Two conv and two dense layers with ReLU, max-pool and flatten in between.
pub fn two_conv_two_dense() -> NetworkSpec {
    NetworkSpec {
        input_shape: vec![1, 8, 8],
        layers: vec![
            LayerSpec::Conv2d { in_channels: 1, out_channels: 3, kernel: 3, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2, stride: 2 },
            LayerSpec::Conv2d { in_channels: 3, out_channels: 4, kernel: 2, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { inputs: 16, outputs: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: 6, outputs: 3 },
        ],
    }
}
