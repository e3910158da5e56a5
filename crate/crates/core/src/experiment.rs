//! Experiment configs, run reports, sweeps and firing profiles.
//!
//! Everything the CLI does lives here so it can be tested without spawning
//! processes. Reports carry their full config, so each run can be replayed
//! from its own output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch;
use crate::asic::{energy_increase, OperationCensus};
use crate::data::{load_dataset, Dataset};
use crate::energy::{Objective, Sigma};
use crate::error::{Error, Result};
use crate::nn::{build_network, load_network, save_network, LayerKind, Network, OptimizerState, SgdConfig};
use crate::train::{evaluate, train, EpochRecord, Evaluation, Mode, SpongeConfig, TrainSettings};

pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "model.spngnet";

fn default_val_size() -> usize {
    100
}
fn default_sigma() -> Sigma {
    Sigma::new(1e-4).unwrap()
}
fn default_objective() -> Objective {
    Objective::L0Hat
}
fn default_true() -> bool {
    true
}
fn default_batch() -> usize {
    32
}

/// One training run. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `"toy-cnn"` or `"mlp"`.
    pub architecture: String,
    pub train_data: PathBuf,
    pub test_data: PathBuf,
    /// Validation file; when absent `val_size` samples are held out of `train_data`.
    #[serde(default)]
    pub val_data: Option<PathBuf>,
    #[serde(default = "default_val_size")]
    pub val_size: usize,
    pub mode: Mode,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_sigma")]
    pub sigma: Sigma,
    #[serde(default)]
    pub poison_fraction: f64,
    #[serde(default = "default_true")]
    pub normalize_by_m: bool,
    #[serde(default)]
    pub optimizer: SgdConfig,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Starting weights (required for `sanitize`).
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    /// Clean model used for the energy increase.
    #[serde(default)]
    pub baseline: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn sponge_config(&self) -> SpongeConfig {
        SpongeConfig {
            lambda: self.lambda,
            sigma: self.sigma,
            poison_fraction: self.poison_fraction,
            mode: self.mode,
            objective: self.objective,
            normalize_by_m: self.normalize_by_m,
            seed: self.seed,
        }
    }

    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sponge_config().validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.mode == Mode::Sanitize && self.init_checkpoint.is_none() {
            return Err(Error::InvalidConfig("sanitize needs init_checkpoint (the sponge model)".into()));
        }
        Ok(())
    }
}

/// Train / validation / test splits of one experiment.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads the config's datasets, resolving relative paths against `base`.
pub fn load_splits(cfg: &ExperimentConfig, base: &Path) -> Result<Splits> {
    let train = load_dataset(resolve(base, &cfg.train_data))?;
    let test = load_dataset(resolve(base, &cfg.test_data))?;
    let (train, val) = match &cfg.val_data {
        Some(p) => (train, load_dataset(resolve(base, p))?),
        None => train.split_holdout(cfg.val_size, cfg.seed)?,
    };
    Ok(Splits { train, val, test })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFraction {
    pub layer: usize,
    pub kind: LayerKind,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SanitizeSummary {
    pub accuracy_before: f64,
    pub energy_ratio_before: f64,
    pub accuracy_after: f64,
    pub energy_ratio_after: f64,
}

/// Outcome of one run, serialized as `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub mode: Mode,
    pub parameters: usize,
    pub accuracy: f64,
    pub energy_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_increase: Option<f64>,
    /// Mean unnormalized E per test sample.
    pub mean_energy: f64,
    pub firing: Vec<LayerFraction>,
    pub census: OperationCensus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sanitize: Option<SanitizeSummary>,
    pub epochs_to_best: Option<usize>,
    pub history: Vec<EpochRecord>,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub network: Network,
    pub evaluation: Evaluation,
}

/// Trains per `cfg` on pre-loaded splits. `init` overrides the seeded
/// initialization; `baseline` is the clean model's test census.
pub fn run_with_splits(
    cfg: &ExperimentConfig,
    splits: &Splits,
    init: Option<Network>,
    baseline: Option<&OperationCensus>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let net = match init {
        Some(n) => n,
        None => {
            let spec = arch::by_name(&cfg.architecture, splits.train.sample_shape(), splits.train.classes())?;
            build_network(&spec, cfg.seed)?
        }
    };
    let before = match cfg.mode {
        Mode::Sanitize => Some(evaluate(&net, &splits.test, cfg.sigma)?),
        _ => None,
    };
    let mut opt = OptimizerState::new(cfg.optimizer, &net);
    let (net, history) = train(
        &splits.train,
        &splits.val,
        net,
        &cfg.sponge_config(),
        &mut opt,
        &cfg.settings(),
    )?;
    let ev = evaluate(&net, &splits.test, cfg.sigma)?;
    let energy_increase = baseline.map(|b| energy_increase(&ev.census, b)).transpose()?;
    let report = RunReport {
        config: cfg.clone(),
        mode: cfg.mode,
        parameters: net.param_count(),
        accuracy: ev.accuracy,
        energy_ratio: ev.energy_ratio,
        energy_increase,
        mean_energy: ev.mean_energy,
        firing: ev
            .firing
            .layers
            .iter()
            .map(|l| LayerFraction {
                layer: l.layer,
                kind: l.kind,
                fraction: l.fraction,
            })
            .collect(),
        census: ev.census.clone(),
        sanitize: before.map(|b| SanitizeSummary {
            accuracy_before: b.accuracy,
            energy_ratio_before: b.energy_ratio,
            accuracy_after: ev.accuracy,
            energy_ratio_after: ev.energy_ratio,
        }),
        epochs_to_best: history.epoch_of_best_energy(),
        history: history.records,
    };
    Ok(RunOutcome {
        report,
        network: net,
        evaluation: ev,
    })
}

/// Loads data and checkpoints named by `cfg` (relative to `base`) and runs it.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let splits = load_splits(cfg, base)?;
    let init = cfg
        .init_checkpoint
        .as_ref()
        .map(|p| load_network(resolve(base, p)))
        .transpose()?;
    let baseline = match &cfg.baseline {
        Some(p) => {
            let clean = load_network(resolve(base, p))?;
            Some(evaluate(&clean, &splits.test, cfg.sigma)?.census)
        }
        None => None,
    };
    run_with_splits(cfg, &splits, init, baseline.as_ref())
}

pub fn report_json(report: &RunReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// Writes `report.json` and `model.spngnet` into `dir`.
pub fn write_outcome(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(REPORT_FILE), report_json(&outcome.report)?)?;
    save_network(&outcome.network, dir.join(CHECKPOINT_FILE))?;
    Ok(())
}

/// Ablation grid over σ, λ and p, with the listed seeds per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub base: ExperimentConfig,
    pub sigmas: Vec<Sigma>,
    pub lambdas: Vec<f64>,
    pub poison_fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn from_json(text: &str) -> Result<Self> {
        let g: SweepGrid = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if g.sigmas.is_empty() || g.lambdas.is_empty() || g.poison_fractions.is_empty() || g.seeds.is_empty() {
            return Err(Error::InvalidConfig("every sweep axis needs at least one value".into()));
        }
        Ok(g)
    }

    /// Cell configs in σ-major, then λ, p, seed order.
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &sigma in &self.sigmas {
            for &lambda in &self.lambdas {
                for &p in &self.poison_fractions {
                    for &seed in &self.seeds {
                        out.push(ExperimentConfig {
                            sigma,
                            lambda,
                            poison_fraction: p,
                            seed,
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

/// One CSV row of a sweep. Column order is the field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub lambda: f64,
    pub poison_fraction: f64,
    pub seed: u64,
    /// `ok`, `diverged` or `error`.
    pub status: String,
    pub accuracy: Option<f64>,
    pub energy_ratio: Option<f64>,
    pub energy_increase: Option<f64>,
    pub epochs_to_best: Option<usize>,
    pub message: String,
}

fn row_for(cfg: &ExperimentConfig, result: Result<RunOutcome>) -> SweepRow {
    let mut row = SweepRow {
        sigma: cfg.sigma.get(),
        lambda: cfg.lambda,
        poison_fraction: cfg.poison_fraction,
        seed: cfg.seed,
        status: "ok".into(),
        accuracy: None,
        energy_ratio: None,
        energy_increase: None,
        epochs_to_best: None,
        message: String::new(),
    };
    match result {
        Ok(o) => {
            row.accuracy = Some(o.report.accuracy);
            row.energy_ratio = Some(o.report.energy_ratio);
            row.energy_increase = o.report.energy_increase;
            row.epochs_to_best = o.report.epochs_to_best;
        }
        Err(e) => {
            row.status = match e {
                Error::Diverged { .. } | Error::NonFiniteGradient { .. } => "diverged",
                _ => "error",
            }
            .into();
            row.message = e.to_string();
        }
    }
    row
}

/// Runs every cell (in parallel) against a clean baseline per seed. Failing
/// cells become rows with a non-`ok` status.
pub fn run_sweep(grid: &SweepGrid, base: &Path) -> Result<Vec<SweepRow>> {
    let splits = load_splits(&grid.base, base)?;
    let init = grid
        .base
        .init_checkpoint
        .as_ref()
        .map(|p| load_network(resolve(base, p)))
        .transpose()?;
    let baselines: BTreeMap<u64, OperationCensus> = grid
        .seeds
        .par_iter()
        .map(|&seed| -> Result<(u64, OperationCensus)> {
            let cfg = ExperimentConfig {
                mode: Mode::Clean,
                seed,
                ..grid.base.clone()
            };
            let splits = splits_for_seed(&grid.base, &splits, seed, base)?;
            let o = run_with_splits(&cfg, &splits, init.clone(), None)?;
            Ok((seed, o.evaluation.census))
        })
        .collect::<Result<_>>()?;
    let cells = grid.cells();
    let rows = cells
        .par_iter()
        .map(|cfg| {
            let result = splits_for_seed(&grid.base, &splits, cfg.seed, base)
                .and_then(|s| run_with_splits(cfg, &s, init.clone(), baselines.get(&cfg.seed)));
            row_for(cfg, result)
        })
        .collect();
    Ok(rows)
}

// The validation holdout depends on the seed when it is carved out of the
// training file.
fn splits_for_seed(cfg: &ExperimentConfig, loaded: &Splits, seed: u64, base: &Path) -> Result<Splits> {
    if cfg.val_data.is_some() || seed == cfg.seed {
        return Ok(loaded.clone());
    }
    load_splits(&ExperimentConfig { seed, ..cfg.clone() }, base)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileLayer {
    pub layer: usize,
    pub name: String,
    pub kind: LayerKind,
    /// Fraction of firing neurons in the profiled checkpoint.
    pub fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sponge_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

/// Per-layer firing fractions of `net` on `data`; with a clean `baseline`,
/// also the clean fraction and the sponge − clean delta.
pub fn profile(net: &Network, data: &Dataset, baseline: Option<&Network>, sigma: Sigma) -> Result<Vec<ProfileLayer>> {
    if let Some(b) = baseline {
        if b.spec() != net.spec() {
            return Err(Error::ArchitectureMismatch("checkpoints have different architectures".into()));
        }
    }
    let ev = evaluate(net, data, sigma)?;
    let clean = baseline.map(|b| evaluate(b, data, sigma)).transpose()?;
    Ok(ev
        .firing
        .layers
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let c = clean.as_ref().map(|c| c.firing.layers[k].fraction);
            ProfileLayer {
                layer: l.layer,
                name: format!("{}{}", l.kind, l.layer),
                kind: l.kind,
                fraction: l.fraction,
                clean_fraction: c,
                sponge_fraction: c.map(|_| l.fraction),
                delta: c.map(|c| l.fraction - c),
            }
        })
        .collect())
}

/// Per-epoch history as CSV, for external plotting.
pub fn write_history_csv<W: Write>(history: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
