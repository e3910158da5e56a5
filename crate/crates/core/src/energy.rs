//! Differentiable activation-density objectives.
//!
//! The smoothed ℓ0 count `Σ φ² / (φ² + σ)` approaches the number of nonzero
//! activations as σ → 0⁺. Summed over every recorded layer it gives the
//! network energy E used as the sponge objective; the squared ℓ2 norm is the
//! magnitude-only baseline.
//!
//! Trace-level values are batch means: for a single-sample trace they are
//! exactly the per-sample objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ActivationTrace, Gradients, Network};
use crate::tensor::Tensor;

/// Sharpness σ > 0 of the smoothed ℓ0.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Sigma(f64);

impl Sigma {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Sigma(value))
        } else {
            Err(Error::InvalidSigma(value))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Sigma {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Sigma::new(v)
    }
}

impl From<Sigma> for f64 {
    fn from(s: Sigma) -> f64 {
        s.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    L0Hat,
    L2,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::L0Hat => "l0_hat",
            Objective::L2 => "l2",
        }
    }
}

/// Objective value and its per-layer terms (batch means, before normalization).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyValue {
    pub value: f64,
    pub per_layer: Vec<f64>,
    /// Divisor applied to `value`; 1 when unnormalized.
    pub normalizer: usize,
}

pub fn l0_hat(phi: &[f64], sigma: Sigma) -> f64 {
    let s = sigma.0;
    phi.iter()
        .map(|&v| {
            let sq = v * v;
            sq / (sq + s)
        })
        .sum()
}

/// Elementwise derivative `2φσ / (φ² + σ)²`.
pub fn l0_hat_grad(phi: &[f64], sigma: Sigma) -> Vec<f64> {
    let s = sigma.0;
    phi.iter()
        .map(|&v| {
            let den = v * v + s;
            2.0 * v * s / (den * den)
        })
        .collect()
}

fn batch_mean_per_layer(trace: &ActivationTrace, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let n = trace.batch() as f64;
    trace
        .activations()
        .map(|a| (0..a.batch()).map(|b| f(a.row(b))).sum::<f64>() / n)
        .collect()
}

fn finish(per_layer: Vec<f64>, normalize_by: Option<usize>) -> EnergyValue {
    let normalizer = normalize_by.unwrap_or(1).max(1);
    let value = per_layer.iter().sum::<f64>() / normalizer as f64;
    EnergyValue {
        value,
        per_layer,
        normalizer,
    }
}

/// Network energy E = Σ_k ℓ0̂(φ_k), divided by `normalize_by` (the parameter
/// count m) when given.
pub fn energy(trace: &ActivationTrace, sigma: Sigma, normalize_by: Option<usize>) -> EnergyValue {
    finish(batch_mean_per_layer(trace, |r| l0_hat(r, sigma)), normalize_by)
}

/// Σ_k ‖φ_k‖², divided by `normalize_by` when given.
pub fn l2_energy(trace: &ActivationTrace, normalize_by: Option<usize>) -> EnergyValue {
    finish(
        batch_mean_per_layer(trace, |r| r.iter().map(|v| v * v).sum()),
        normalize_by,
    )
}

pub fn objective_value(
    trace: &ActivationTrace,
    objective: Objective,
    sigma: Sigma,
    normalize_by: Option<usize>,
) -> EnergyValue {
    match objective {
        Objective::L0Hat => energy(trace, sigma, normalize_by),
        Objective::L2 => l2_energy(trace, normalize_by),
    }
}

/// Per-activation adjoints of the objective, with batch row `b` scaled by
/// `row_weights[b]`. Rows with weight 0 get exact zeros.
pub fn energy_adjoints(
    trace: &ActivationTrace,
    objective: Objective,
    sigma: Sigma,
    row_weights: &[f64],
) -> Vec<Tensor> {
    assert_eq!(row_weights.len(), trace.batch(), "one weight per batch row");
    trace
        .activations()
        .map(|a| {
            let mut adj = Tensor::zeros(a.shape().to_vec());
            for (b, &w) in row_weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = a.row(b);
                let dst = adj.row_mut(b);
                match objective {
                    Objective::L0Hat => {
                        for (d, g) in dst.iter_mut().zip(l0_hat_grad(src, sigma)) {
                            *d = w * g;
                        }
                    }
                    Objective::L2 => {
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d = w * 2.0 * v;
                        }
                    }
                }
            }
            adj
        })
        .collect()
}

/// ∇_w of the trace objective (batch mean, normalized by m when asked),
/// computed in a single backward sweep with adjoints injected at every
/// recorded layer.
pub fn energy_weight_gradient(
    net: &Network,
    trace: &ActivationTrace,
    objective: Objective,
    sigma: Sigma,
    normalize_by_m: bool,
) -> Result<Gradients> {
    let mut scale = 1.0 / trace.batch() as f64;
    if normalize_by_m {
        scale /= net.param_count() as f64;
    }
    let adj = energy_adjoints(trace, objective, sigma, &vec![scale; trace.batch()]);
    net.backward_with_adjoints(trace, None, Some(&adj))
}
