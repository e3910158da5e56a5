//! Zero-skipping accelerator cost model.
//!
//! Every multiply of an input activation with a weight in a dense or conv
//! layer is one MAC; a MAC is skipped when its activation operand is exactly
//! `0.0`. Bias additions, ReLU comparisons and pooling work are fixed
//! operations that are never skipped. Each MAC and each fixed op costs one
//! energy unit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ActivationTrace, LayerKind, LayerSpec, Network};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCensus {
    /// Index into the network's layer list.
    pub layer: usize,
    pub kind: LayerKind,
    pub total_macs: u64,
    pub skipped_macs: u64,
    pub fixed_ops: u64,
}

impl LayerCensus {
    fn merge(&mut self, other: &LayerCensus) {
        self.total_macs += other.total_macs;
        self.skipped_macs += other.skipped_macs;
        self.fixed_ops += other.fixed_ops;
    }
}

/// Operation counts summed over `samples` inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationCensus {
    pub samples: u64,
    pub layers: Vec<LayerCensus>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusTotals {
    pub total_macs: u64,
    pub skipped_macs: u64,
    pub fixed_ops: u64,
}

impl OperationCensus {
    pub fn totals(&self) -> CensusTotals {
        self.layers.iter().fold(CensusTotals::default(), |mut t, l| {
            t.total_macs += l.total_macs;
            t.skipped_macs += l.skipped_macs;
            t.fixed_ops += l.fixed_ops;
            t
        })
    }

    pub fn cost_with_skipping(&self) -> u64 {
        let t = self.totals();
        t.fixed_ops + t.total_macs - t.skipped_macs
    }

    pub fn cost_without_skipping(&self) -> u64 {
        let t = self.totals();
        t.fixed_ops + t.total_macs
    }

    /// Per-sample average cost with skipping.
    pub fn mean_cost_with_skipping(&self) -> f64 {
        self.cost_with_skipping() as f64 / self.samples.max(1) as f64
    }

    /// Accumulates another census over the same architecture.
    pub fn merge(&mut self, other: &OperationCensus) -> Result<()> {
        check_same_architecture(self, other)?;
        self.samples += other.samples;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.merge(b);
        }
        Ok(())
    }
}

fn check_same_architecture(a: &OperationCensus, b: &OperationCensus) -> Result<()> {
    if a.layers.len() != b.layers.len() {
        return Err(Error::ArchitectureMismatch(format!(
            "{} vs {} census layers",
            a.layers.len(),
            b.layers.len()
        )));
    }
    for (x, y) in a.layers.iter().zip(&b.layers) {
        if x.layer != y.layer || x.kind != y.kind {
            return Err(Error::ArchitectureMismatch(format!(
                "layer {} ({}) vs layer {} ({})",
                x.layer, x.kind, y.layer, y.kind
            )));
        }
        // Per-sample MAC counts depend only on the architecture.
        if a.samples > 0 && b.samples > 0 && x.total_macs * b.samples != y.total_macs * a.samples {
            return Err(Error::ArchitectureMismatch(format!(
                "layer {} performs a different number of MACs per sample",
                x.layer
            )));
        }
    }
    Ok(())
}

/// Census over the activations already recorded in `trace`.
pub fn census_from_trace(net: &Network, trace: &ActivationTrace) -> OperationCensus {
    let n = trace.batch() as u64;
    let mut layers = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        let x = trace.input_of(i);
        let out_elems = layer.output_shape.iter().product::<usize>() as u64;
        let mut rec = LayerCensus {
            layer: i,
            kind: layer.kind(),
            total_macs: 0,
            skipped_macs: 0,
            fixed_ops: 0,
        };
        match layer.spec {
            LayerSpec::Dense { inputs, outputs } => {
                let zeros = x.data().iter().filter(|&&v| v == 0.0).count() as u64;
                rec.total_macs = n * (inputs * outputs) as u64;
                rec.skipped_macs = zeros * outputs as u64;
                rec.fixed_ops = n * out_elems;
            }
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                ..
            } => {
                let (c, h, w) = (layer.input_shape[0], layer.input_shape[1], layer.input_shape[2]);
                let (oh, ow) = (layer.output_shape[1], layer.output_shape[2]);
                // Number of output windows reading each input pixel.
                let cover_y = coverage(h, kernel, stride, oh);
                let cover_x = coverage(w, kernel, stride, ow);
                let mut skipped = 0u64;
                for b in 0..x.batch() {
                    let row = x.row(b);
                    for ch in 0..c {
                        for y in 0..h {
                            if cover_y[y] == 0 {
                                continue;
                            }
                            for xx in 0..w {
                                if row[(ch * h + y) * w + xx] == 0.0 {
                                    skipped += cover_y[y] * cover_x[xx];
                                }
                            }
                        }
                    }
                }
                rec.total_macs = n * (oh * ow * c * kernel * kernel * out_channels) as u64;
                rec.skipped_macs = skipped * out_channels as u64;
                rec.fixed_ops = n * out_elems;
            }
            LayerSpec::Relu => rec.fixed_ops = n * out_elems,
            LayerSpec::MaxPool2d { size, .. } => rec.fixed_ops = n * out_elems * (size * size - 1) as u64,
            LayerSpec::AvgPool2d { size, .. } => rec.fixed_ops = n * out_elems * (size * size) as u64,
            LayerSpec::Flatten => continue,
        }
        layers.push(rec);
    }
    OperationCensus { samples: n, layers }
}

fn coverage(extent: usize, kernel: usize, stride: usize, out: usize) -> Vec<u64> {
    let mut c = vec![0u64; extent];
    for o in 0..out {
        for k in 0..kernel {
            c[o * stride + k] += 1;
        }
    }
    c
}

/// Runs a forward pass and counts operations under zero-skipping.
pub fn census(net: &Network, batch: &Tensor) -> Result<OperationCensus> {
    let (_, trace) = net.forward(batch)?;
    Ok(census_from_trace(net, &trace))
}

/// Cost with zero-skipping over cost without it; 1 means nothing is skipped.
pub fn energy_ratio(c: &OperationCensus) -> Result<f64> {
    let denom = c.cost_without_skipping();
    if c.layers.is_empty() || denom == 0 {
        return Err(Error::EmptyCensus);
    }
    Ok(c.cost_with_skipping() as f64 / denom as f64)
}

/// Per-sample zero-skipping cost of `sponge` over that of `clean`.
pub fn energy_increase(sponge: &OperationCensus, clean: &OperationCensus) -> Result<f64> {
    if sponge.layers.is_empty() || clean.layers.is_empty() || sponge.samples == 0 || clean.samples == 0 {
        return Err(Error::EmptyCensus);
    }
    check_same_architecture(sponge, clean)?;
    let base = clean.mean_cost_with_skipping();
    if base == 0.0 {
        return Err(Error::EmptyCensus);
    }
    Ok(sponge.mean_cost_with_skipping() / base)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFiring {
    pub layer: usize,
    pub kind: LayerKind,
    pub nonzero: u64,
    pub total: u64,
    pub fraction: f64,
}

/// Fraction of strictly nonzero activations per recorded layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiringProfile {
    pub layers: Vec<LayerFiring>,
}

impl FiringProfile {
    pub fn fractions(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.fraction).collect()
    }

    pub fn merge(&mut self, other: &FiringProfile) -> Result<()> {
        if self.layers.len() != other.layers.len()
            || self.layers.iter().zip(&other.layers).any(|(a, b)| a.layer != b.layer || a.kind != b.kind)
        {
            return Err(Error::ArchitectureMismatch("firing profiles over different layers".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.nonzero += b.nonzero;
            a.total += b.total;
            a.fraction = a.nonzero as f64 / a.total as f64;
        }
        Ok(())
    }
}

pub fn firing_profile(trace: &ActivationTrace) -> FiringProfile {
    let layers = (0..trace.len())
        .map(|k| {
            let a = trace.activation(k);
            let nonzero = a.count_nonzero() as u64;
            let total = a.len() as u64;
            LayerFiring {
                layer: trace.layer_index(k),
                kind: trace.kind(k),
                nonzero,
                total,
                fraction: nonzero as f64 / total as f64,
            }
        })
        .collect();
    FiringProfile { layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, NetworkSpec};

    fn dense32() -> Network {
        build_network(
            &NetworkSpec {
                input_shape: vec![3],
                layers: vec![LayerSpec::Dense { inputs: 3, outputs: 2 }],
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn dense_example() {
        let net = dense32();
        let c = census(&net, &Tensor::new(vec![1, 3], vec![1.0, 0.0, 2.0]).unwrap()).unwrap();
        let l = &c.layers[0];
        assert_eq!((l.total_macs, l.skipped_macs), (6, 2));
        assert_eq!(l.total_macs - l.skipped_macs, 4);
        // bias additions
        assert_eq!(l.fixed_ops, 2);
    }

    #[test]
    fn ratio_without_fixed_ops() {
        let c = OperationCensus {
            samples: 1,
            layers: vec![LayerCensus {
                layer: 0,
                kind: LayerKind::Dense,
                total_macs: 6,
                skipped_macs: 2,
                fixed_ops: 0,
            }],
        };
        assert!((energy_ratio(&c).unwrap() - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn all_zero_input_skips_everything() {
        let net = dense32();
        let c = census(&net, &Tensor::zeros(vec![4, 3])).unwrap();
        assert_eq!(c.layers[0].skipped_macs, c.layers[0].total_macs);
    }

    #[test]
    fn no_zeros_no_skips() {
        let net = dense32();
        let c = census(&net, &Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(c.totals().skipped_macs, 0);
        assert_eq!(energy_ratio(&c).unwrap(), 1.0);
    }

    #[test]
    fn empty_census_rejected() {
        let c = OperationCensus {
            samples: 0,
            layers: vec![],
        };
        assert!(matches!(energy_ratio(&c), Err(Error::EmptyCensus)));
    }

    fn one_layer(total: u64, skipped: u64) -> OperationCensus {
        OperationCensus {
            samples: 1,
            layers: vec![LayerCensus {
                layer: 0,
                kind: LayerKind::Dense,
                total_macs: total,
                skipped_macs: skipped,
                fixed_ops: 0,
            }],
        }
    }

    #[test]
    fn increase_examples() {
        let a = one_layer(10, 3);
        assert_eq!(energy_increase(&a, &a).unwrap(), 1.0);
        assert_eq!(energy_increase(&one_layer(10, 0), &one_layer(10, 5)).unwrap(), 2.0);
    }

    #[test]
    fn increase_rejects_other_architecture() {
        let mut b = one_layer(10, 0);
        b.layers[0].kind = LayerKind::Conv2d;
        assert!(matches!(
            energy_increase(&one_layer(10, 0), &b),
            Err(Error::ArchitectureMismatch(_))
        ));
        assert!(energy_increase(&one_layer(10, 0), &one_layer(12, 0)).is_err());
    }

    #[test]
    fn firing_fractions() {
        let spec = NetworkSpec {
            input_shape: vec![3],
            layers: vec![LayerSpec::Relu, LayerSpec::Dense { inputs: 3, outputs: 1 }],
        };
        let net = build_network(&spec, 2).unwrap();
        let (_, t) = net.forward(&Tensor::new(vec![1, 3], vec![1.0, 0.0, 2.0]).unwrap()).unwrap();
        assert!((firing_profile(&t).layers[0].fraction - 2.0 / 3.0).abs() < 1e-15);
        let (_, dark) = net.forward(&Tensor::new(vec![1, 3], vec![-1.0, -2.0, 0.0]).unwrap()).unwrap();
        assert_eq!(firing_profile(&dark).layers[0].fraction, 0.0);
    }
}
