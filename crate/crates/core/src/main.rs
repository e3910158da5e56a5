use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sponge_core::data::{generate, save_dataset, GenKind, GenSpec};
use sponge_core::energy::Sigma;
use sponge_core::experiment::{
    profile, run_experiment, run_sweep, write_history_csv, write_outcome, write_sweep_csv,
    ExperimentConfig, RunReport, SweepGrid,
};
use sponge_core::nn::load_network;
use sponge_core::train::Mode;
use sponge_core::{data, Error};

#[derive(Parser)]
#[command(name = "sponge", version, about = "Sponge poisoning experiments on a zero-skipping cost model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file (SPNGDAT1).
    GenData {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        classes: usize,
        /// Feature count for blobs / rings.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Image geometry as c,h,w for tiny-images.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1, 16, 16])]
        image: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        imbalance: f64,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model from a JSON config; writes report.json and model.spngnet.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the config's `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Clean checkpoint for the energy increase.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        poison_fraction: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run a σ × λ × p × seed grid; writes one CSV row per cell.
    Sweep {
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-layer firing fractions of a checkpoint, optionally against a clean baseline.
    Profile {
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        sigma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a run report and export its per-epoch history as CSV.
    Report {
        report: PathBuf,
        #[arg(long)]
        history_csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum KindArg {
    Blobs,
    Rings,
    TinyImages,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Clean,
    Sponge,
    Sanitize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidSigma(_) => 2,
        Error::Diverged { .. } | Error::NonFiniteGradient { .. } => 3,
        _ => 1,
    }
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_text(p: &Path) -> Result<String, Error> {
    std::fs::read_to_string(p)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", p.display())))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData {
            kind,
            samples,
            classes,
            dim,
            image,
            imbalance,
            noise,
            seed,
            out,
        } => {
            let kind = match kind {
                KindArg::Blobs => GenKind::Blobs,
                KindArg::Rings => GenKind::Rings,
                KindArg::TinyImages => GenKind::TinyImages,
            };
            let spec = GenSpec {
                kind,
                samples,
                classes,
                dim,
                image: [image[0], image[1], image[2]],
                imbalance,
                noise,
                seed,
            };
            let ds = generate(&spec)?;
            save_dataset(&ds, &out)?;
            println!(
                "wrote {} samples of shape {:?}, class counts {:?} to {}",
                ds.len(),
                ds.sample_shape(),
                ds.class_counts(),
                out.display()
            );
        }
        Command::Train {
            config,
            seed,
            out,
            baseline,
            init_checkpoint,
            mode,
            lambda,
            sigma,
            poison_fraction,
            epochs,
        } => {
            let base = parent_dir(&config);
            let mut cfg = ExperimentConfig::from_json(&read_text(&config)?)?;
            // Paths given on the command line are relative to the working directory.
            let cwd = std::env::current_dir()?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out = Some(cwd.join(o));
            }
            if let Some(b) = baseline {
                cfg.baseline = Some(cwd.join(b));
            }
            if let Some(c) = init_checkpoint {
                cfg.init_checkpoint = Some(cwd.join(c));
            }
            if let Some(m) = mode {
                cfg.mode = match m {
                    ModeArg::Clean => Mode::Clean,
                    ModeArg::Sponge => Mode::Sponge,
                    ModeArg::Sanitize => Mode::Sanitize,
                };
            }
            if let Some(l) = lambda {
                cfg.lambda = l;
            }
            if let Some(s) = sigma {
                cfg.sigma = Sigma::new(s)?;
            }
            if let Some(p) = poison_fraction {
                cfg.poison_fraction = p;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let out_dir = match &cfg.out {
                Some(o) if o.is_absolute() => o.clone(),
                Some(o) => base.join(o),
                None => return Err(Error::InvalidConfig("no output directory: set `out` or pass --out".into())),
            };
            let outcome = run_experiment(&cfg, &base)?;
            write_outcome(&outcome, &out_dir)?;
            print_summary(&outcome.report);
            println!("wrote {}", out_dir.display());
        }
        Command::Sweep { grid, out } => {
            let g = SweepGrid::from_json(&read_text(&grid)?)?;
            let rows = run_sweep(&g, &parent_dir(&grid))?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            write_sweep_csv(&rows, std::fs::File::create(&out)?)?;
            println!("wrote {} rows ({} failed) to {}", rows.len(), failed, out.display());
        }
        Command::Profile {
            checkpoint,
            data: data_path,
            baseline,
            sigma,
            out,
        } => {
            let net = load_network(&checkpoint)?;
            let ds = data::load_dataset(&data_path)?;
            let clean = baseline.map(load_network).transpose()?;
            let layers = profile(&net, &ds, clean.as_ref(), Sigma::new(sigma)?)?;
            let json = serde_json::to_string_pretty(&layers)? + "\n";
            match out {
                Some(p) => std::fs::write(p, json)?,
                None => print!("{json}"),
            }
        }
        Command::Report { report, history_csv } => {
            let r: RunReport = serde_json::from_str(&read_text(&report)?)?;
            print_summary(&r);
            for l in &r.firing {
                println!("  layer {:>2} {:<10} firing {:.4}", l.layer, l.kind.as_str(), l.fraction);
            }
            if let Some(p) = history_csv {
                write_history_csv(&r.history, std::fs::File::create(&p)?)?;
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn print_summary(r: &RunReport) {
    print!(
        "mode {} accuracy {:.4} energy_ratio {:.4}",
        r.mode.as_str(),
        r.accuracy,
        r.energy_ratio
    );
    if let Some(inc) = r.energy_increase {
        print!(" energy_increase {inc:.4}");
    }
    if let Some(s) = &r.sanitize {
        print!(
            " (before: accuracy {:.4} energy_ratio {:.4})",
            s.accuracy_before, s.energy_ratio_before
        );
    }
    println!();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
