use serde::{Deserialize, Serialize};

use super::network::{Gradients, LayerParams, Network};
use crate::error::{Error, Result};

/// Hyperparameters of SGD with momentum, weight decay and exponential
/// learning-rate decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.1,
            lr_decay: 0.95,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// `initial * decay^epoch`.
pub fn lr_schedule(initial: f64, decay: f64, epoch: usize) -> f64 {
    initial * decay.powi(epoch as i32)
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: SgdConfig,
    /// Learning rate used by the next step.
    pub lr: f64,
    pub epoch: usize,
    velocity: Vec<LayerParams>,
}

impl OptimizerState {
    pub fn new(config: SgdConfig, net: &Network) -> Self {
        OptimizerState {
            config,
            lr: config.lr,
            epoch: 0,
            velocity: Gradients::zeros_like(net).layers,
        }
    }

    /// Moves to `epoch` and sets the scheduled learning rate.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
        self.lr = lr_schedule(self.config.lr, self.config.lr_decay, epoch);
    }

    pub fn velocity(&self) -> &[LayerParams] {
        &self.velocity
    }
}

/// velocity ← momentum·velocity + grad + wd·param; param ← param − lr·velocity.
pub fn sgd_step(net: &mut Network, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    if grads.layers.len() != net.layers().len()
        || grads.layers.iter().zip(net.params()).any(|(g, p)| {
            g.weight.len() != p.weight.len() || g.bias.len() != p.bias.len()
        })
    {
        return Err(Error::ShapeMismatch {
            context: "sgd step",
            expected: net.params().map(LayerParams::len).collect(),
            found: grads.layers.iter().map(LayerParams::len).collect(),
        });
    }
    for (i, (g, layer)) in grads.layers.iter().zip(net.layers()).enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                layer: i,
                kind: layer.kind().as_str(),
            });
        }
    }
    let SgdConfig {
        momentum,
        weight_decay,
        ..
    } = state.config;
    let lr = state.lr;
    for ((p, g), v) in net.params_mut().zip(&grads.layers).zip(&mut state.velocity) {
        for ((pv, gv), vv) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vv = momentum * *vv + gv + weight_decay * *pv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}
