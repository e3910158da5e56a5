//! Sponge-poisoning training loop, its sanitizing counterpart, and model
//! evaluation.
//!
//! A fixed poison subset P of the training set carries the energy term: each
//! P-member contributes ∇L − λ∇E (sponge) or ∇L + λ∇E (sanitize) to its
//! minibatch, every other sample contributes ∇L, and the batch mean is applied
//! in one optimizer step.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asic::{census_from_trace, energy_ratio, firing_profile, FiringProfile, OperationCensus};
use crate::data::Dataset;
use crate::energy::{energy, energy_adjoints, Objective, Sigma};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, cross_entropy, sgd_step, Gradients, Network, OptimizerState};
use crate::tensor::Tensor;

const MASK_STREAM: u64 = 1;
/// Epoch `e` shuffles with stream `ORDER_STREAM + e`, so training resumes exactly.
const ORDER_STREAM: u64 = 2;
const EVAL_CHUNK: usize = 250;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Clean,
    Sponge,
    Sanitize,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Clean => "clean",
            Mode::Sponge => "sponge",
            Mode::Sanitize => "sanitize",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpongeConfig {
    /// Lagrangian strength λ ≥ 0; its sign is set by `mode`.
    pub lambda: f64,
    pub sigma: Sigma,
    /// Fraction p of training samples in the poison set.
    pub poison_fraction: f64,
    pub mode: Mode,
    pub objective: Objective,
    /// Divide the energy term by the parameter count m.
    pub normalize_by_m: bool,
    pub seed: u64,
}

impl SpongeConfig {
    pub fn clean(seed: u64) -> Self {
        SpongeConfig {
            lambda: 0.0,
            sigma: Sigma::new(1e-4).unwrap(),
            poison_fraction: 0.0,
            mode: Mode::Clean,
            objective: Objective::L0Hat,
            normalize_by_m: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::Clean {
            return Ok(());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda is a non-negative magnitude, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.poison_fraction) {
            return Err(Error::InvalidConfig(format!(
                "poison fraction must lie in [0, 1], got {}",
                self.poison_fraction
            )));
        }
        Ok(())
    }

    /// Coefficient of ∇E in the per-sample update direction of a P-member,
    /// or `None` when no energy term is applied.
    fn energy_coefficient(&self) -> Option<f64> {
        match self.mode {
            Mode::Clean => None,
            _ if self.lambda == 0.0 => None,
            Mode::Sponge => Some(-self.lambda),
            Mode::Sanitize => Some(self.lambda),
        }
    }
}

/// The fixed poison subset P, as sorted sample indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoisonMask {
    indices: Vec<usize>,
    member: Vec<bool>,
}

impl PoisonMask {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.member.get(i).copied().unwrap_or(false)
    }
}

/// Uniform subset of size round(p·s) drawn without replacement.
pub fn select_poison_mask(dataset: &Dataset, p: f64, seed: u64) -> Result<PoisonMask> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("poison fraction must lie in [0, 1], got {p}")));
    }
    let s = dataset.len();
    let k = (p * s as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MASK_STREAM);
    let mut indices = index::sample(&mut rng, s, k).into_vec();
    indices.sort_unstable();
    let mut member = vec![false; s];
    for &i in &indices {
        member[i] = true;
    }
    Ok(PoisonMask { indices, member })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based index of the completed epoch.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_energy_ratio: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Epoch with the highest validation energy ratio (first on ties).
    pub fn epoch_of_best_energy(&self) -> Option<usize> {
        let mut best: Option<&EpochRecord> = None;
        for r in &self.records {
            if best.is_none_or(|b| r.val_energy_ratio > b.val_energy_ratio) {
                best = Some(r);
            }
        }
        best.map(|r| r.epoch)
    }
}

/// Loss and assembled update direction for one minibatch. Rows flagged in
/// `poisoned` add `coef·∇E` on top of their loss gradient, all in one
/// backward sweep.
pub fn batch_gradient(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    poisoned: &[bool],
    cfg: &SpongeConfig,
) -> Result<(f64, Gradients)> {
    let (logits, trace) = net.forward(x)?;
    let (loss, dlogits) = cross_entropy(&logits, labels)?;
    let coef = cfg.energy_coefficient().filter(|_| poisoned.iter().any(|&p| p));
    let grads = match coef {
        None => net.backward(&trace, &dlogits)?,
        Some(c) => {
            let mut w = c / labels.len() as f64;
            if cfg.normalize_by_m {
                w /= net.param_count() as f64;
            }
            let weights: Vec<f64> = poisoned.iter().map(|&p| if p { w } else { 0.0 }).collect();
            let adj = energy_adjoints(&trace, cfg.objective, cfg.sigma, &weights);
            net.backward_with_adjoints(&trace, Some(&dlogits), Some(&adj))?
        }
    };
    Ok((loss, grads))
}

/// Runs `settings.epochs` epochs of minibatch SGD and returns the final
/// network with one history record per epoch.
pub fn train(
    dataset: &Dataset,
    val_set: &Dataset,
    mut net: Network,
    cfg: &SpongeConfig,
    opt: &mut OptimizerState,
    settings: &TrainSettings,
) -> Result<(Network, TrainHistory)> {
    cfg.validate()?;
    opt.config.validate()?;
    if settings.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    if dataset.sample_shape() != net.input_shape() || dataset.classes() > net.classes() {
        return Err(Error::InvalidConfig(format!(
            "dataset samples {:?} with {} classes do not fit a network taking {:?} with {} outputs",
            dataset.sample_shape(),
            dataset.classes(),
            net.input_shape(),
            net.classes()
        )));
    }
    let mask = match cfg.mode {
        Mode::Clean => select_poison_mask(dataset, 0.0, cfg.seed)?,
        _ => select_poison_mask(dataset, cfg.poison_fraction, cfg.seed)?,
    };
    let first_epoch = opt.epoch;
    let mut history = TrainHistory::default();

    for e in 0..settings.epochs {
        let global = first_epoch + e;
        opt.set_epoch(global);
        let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        order_rng.set_stream(ORDER_STREAM + global as u64);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for (b, rows) in order.chunks(settings.batch_size).enumerate() {
            let (x, y) = dataset.batch(rows);
            let poisoned: Vec<bool> = rows.iter().map(|&r| mask.contains(r)).collect();
            let (loss, grads) = batch_gradient(&net, &x, &y, &poisoned, cfg)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: global + 1,
                    batch: b,
                    loss,
                });
            }
            loss_sum += loss * rows.len() as f64;
            sgd_step(&mut net, &grads, opt)?;
        }
        let val = evaluate(&net, val_set, cfg.sigma)?;
        history.records.push(EpochRecord {
            epoch: global + 1,
            train_loss: loss_sum / dataset.len() as f64,
            val_accuracy: val.accuracy,
            val_energy_ratio: val.energy_ratio,
            lr: opt.lr,
        });
    }
    opt.set_epoch(first_epoch + settings.epochs);
    Ok((net, history))
}

/// Fine-tunes a sponge model with the energy term's sign flipped.
pub fn sanitize(
    sponge_net: Network,
    dataset: &Dataset,
    val_set: &Dataset,
    cfg: &SpongeConfig,
    opt: &mut OptimizerState,
    settings: &TrainSettings,
) -> Result<(Network, TrainHistory)> {
    if cfg.mode != Mode::Sanitize {
        return Err(Error::InvalidConfig(format!(
            "sanitize requires mode sanitize, got {}",
            cfg.mode.as_str()
        )));
    }
    train(dataset, val_set, sponge_net, cfg, opt, settings)
}

/// Accuracy and accelerator metrics of a model on a dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub energy_ratio: f64,
    /// Mean unnormalized E per sample.
    pub mean_energy: f64,
    pub census: OperationCensus,
    pub firing: FiringProfile,
}

struct Partial {
    correct: usize,
    energy_sum: f64,
    census: OperationCensus,
    firing: FiringProfile,
}

pub fn evaluate(net: &Network, dataset: &Dataset, sigma: Sigma) -> Result<Evaluation> {
    let rows: Vec<usize> = (0..dataset.len()).collect();
    let parts: Vec<Partial> = rows
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<Partial> {
            let (x, y) = dataset.batch(chunk);
            let (logits, trace) = net.forward(&x)?;
            let correct = argmax_rows(&logits).iter().zip(&y).filter(|(p, t)| p == t).count();
            Ok(Partial {
                correct,
                energy_sum: energy(&trace, sigma, None).value * chunk.len() as f64,
                census: census_from_trace(net, &trace),
                firing: firing_profile(&trace),
            })
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let mut acc = iter.next().expect("datasets are non-empty");
    for p in iter {
        acc.correct += p.correct;
        acc.energy_sum += p.energy_sum;
        acc.census.merge(&p.census)?;
        acc.firing.merge(&p.firing)?;
    }
    Ok(Evaluation {
        accuracy: acc.correct as f64 / dataset.len() as f64,
        energy_ratio: energy_ratio(&acc.census)?,
        mean_energy: acc.energy_sum / dataset.len() as f64,
        census: acc.census,
        firing: acc.firing,
    })
}
