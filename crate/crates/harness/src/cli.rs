//! Command-line front end. `run` returns the process exit code.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use debinn::eval::{Bounds, DEFAULT_GRID_RESOLUTION};
use debinn::gd::NormBackward;
use debinn::gradcheck::{finite_difference_oracle, GradCheckConfig, DEFAULT_FD_STEP};
use debinn::loss::ClassWeights;
use debinn::{init_geometry, InitScheme};

use crate::config::{load_raw, prepare_data, DatasetKind, ExperimentConfig, Optimizer};
use crate::error::Result;
use crate::report::{decision_grid_raw, report, write_grid, GRID_PAD};
use crate::run::{load_run, run_dir, run_single, write_run, RunStatus};
use crate::sweep::run_sweep;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "debinn", version, about = "Distance-encoded spatial neural networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by the config-driven commands.
#[derive(Debug, clap::Args)]
pub struct Common {
    /// Experiment config (TOML). Defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum)]
    pub optimizer: Option<Optimizer>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the two-moons splits as train.csv and test.csv.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one run from the base config (the sweep table is ignored).
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run every grid point for every seed, resuming completed runs.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Summarize the runs under --out-dir.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Decision grid of a saved run on a 2-D dataset.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Run directory, or a run id under <out-dir>/runs.
        #[arg(long)]
        run: String,
        #[arg(long, default_value_t = DEFAULT_GRID_RESOLUTION)]
        resolution: usize,
    },
    /// Compare analytic coordinate gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of training samples in the batch.
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_FD_STEP)]
        step: f64,
        #[arg(long, value_enum, default_value = "diagonal")]
        norm_backward: NormBackwardArg,
        /// Exit with status 2 when the max relative error exceeds this.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum NormBackwardArg {
    Diagonal,
    Full,
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let (mut cfg, base) = match &common.config {
        Some(p) => (
            ExperimentConfig::load(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (ExperimentConfig::default(), PathBuf::from(".")),
    };
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = common.optimizer {
        if o != cfg.optimizer {
            // options for the other optimizer no longer apply
            cfg.ga = None;
            cfg.gd = None;
            cfg.sweep.retain(|k, _| !k.starts_with("ga.") && !k.starts_with("gd."));
        }
        cfg.optimizer = o;
    }
    if let Some(d) = common.dataset {
        cfg.dataset.kind = d;
    }
    cfg.validate()?;
    Ok((cfg, base))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenData { common } => {
            let (cfg, _) = load_config(&common)?;
            let mut moons = cfg.dataset.two_moons.clone();
            if let Some(s) = common.seed {
                moons.seed = s;
            }
            let (train, test) = moons.generate()?;
            std::fs::create_dir_all(&common.out_dir)?;
            train.save_csv(common.out_dir.join("train.csv"), "label")?;
            test.save_csv(common.out_dir.join("test.csv"), "label")?;
            println!("wrote {} and {} samples to {}", train.len(), test.len(), common.out_dir.display());
            Ok(EXIT_OK)
        }
        Command::Train { common } => {
            let (cfg, base) = load_config(&common)?;
            let seed = cfg.seeds[0];
            let out = run_single(&cfg, seed, 0, Vec::new(), &base)?;
            let dir = run_dir(&common.out_dir, &out.record.run_id);
            write_run(&dir, &out)?;
            print_json(&serde_json::json!({
                "run_id": out.record.run_id,
                "status": out.record.status,
                "error": out.record.error,
                "train": out.record.train,
                "test": out.record.test,
                "dir": dir,
            }))?;
            Ok(if out.record.status == RunStatus::Ok { EXIT_OK } else { EXIT_FAILURE })
        }
        Command::Sweep { common } => {
            let (cfg, base) = load_config(&common)?;
            let out = run_sweep(&cfg, &base, &common.out_dir)?;
            let failed = out.records.iter().filter(|r| r.status != RunStatus::Ok).count();
            for r in &out.records {
                println!(
                    "{}\t{:?}\t{}\t{}",
                    r.run_id,
                    r.status,
                    r.test_bacc().map(|b| format!("{b:.4}")).unwrap_or_else(|| "-".into()),
                    r.overrides.join(",")
                );
            }
            println!("{} runs ({} resumed, {} not ok)", out.records.len(), out.resumed, failed);
            Ok(EXIT_OK)
        }
        Command::Report { common } => {
            let rep = report(&common.out_dir)?;
            if rep.best.is_empty() {
                eprintln!("no successful runs under {}", common.out_dir.display());
                return Ok(EXIT_FAILURE);
            }
            for b in &rep.best {
                println!(
                    "{}\t{}\tBAcc {:.4}\tSe {:.4}\tSp {:.4}\t{}",
                    b.dataset,
                    b.optimizer.as_str(),
                    b.test_bacc,
                    b.test_sensitivity,
                    b.test_specificity,
                    b.run_id
                );
            }
            for s in &rep.stats {
                println!(
                    "{}\t{}\tmean {:.4} ± {:.4} [{:.4}, {:.4}] n={}\tp={}",
                    s.dataset,
                    s.optimizer.as_str(),
                    s.stats.mean,
                    s.stats.std,
                    s.stats.min,
                    s.stats.max,
                    s.ok_runs,
                    s.comparison.map(|c| format!("{:.4}", c.p)).unwrap_or_else(|| "-".into())
                );
            }
            println!("report written to {}", rep.dir.display());
            Ok(EXIT_OK)
        }
        Command::Grid { common, run, resolution } => {
            let dir = if Path::new(&run).is_dir() {
                PathBuf::from(&run)
            } else {
                run_dir(&common.out_dir, &run)
            };
            let (cfg, geom) = load_run(&dir)?;
            let data = prepare_data(&cfg.dataset, &dir)?;
            let (raw, _) = load_raw(&cfg.dataset, &dir)?;
            let bounds = Bounds::around(&raw, GRID_PAD)?;
            let grid = decision_grid_raw(&debinn::Network::compile(&geom)?, &data, bounds, resolution)?;
            let path = dir.join("grid.csv");
            write_grid(&path, &grid)?;
            println!("wrote {}", path.display());
            Ok(EXIT_OK)
        }
        Command::Gradcheck {
            common,
            samples,
            step,
            norm_backward,
            tolerance,
        } => {
            let (cfg, base) = load_config(&common)?;
            let data = prepare_data(&cfg.dataset, &base)?;
            let mut spec = cfg.network.clone();
            spec.input_dim = data.train.dim();
            spec.output_dim = data.train.class_count;
            let init = if spec.init == InitScheme::Singularity { InitScheme::Random } else { spec.init };
            let geom = init_geometry(&spec, init, cfg.seeds[0])?;
            let mut batch = data.train.clone();
            let n = samples.clamp(1, batch.len());
            batch.features.truncate(n);
            batch.labels.truncate(n);
            let weights = ClassWeights::uniform(batch.class_count);
            let gc = GradCheckConfig {
                step,
                norm_backward: match norm_backward {
                    NormBackwardArg::Diagonal => NormBackward::Diagonal,
                    NormBackwardArg::Full => NormBackward::Full,
                },
                ..Default::default()
            };
            let r = finite_difference_oracle(&geom, &batch, &weights, &gc)?;
            print_json(&serde_json::json!({
                "parameters": r.analytic.len(),
                "max_rel_error": r.max_rel_error,
                "max_abs_error": r.max_abs_error,
                "worst_index": r.worst_index,
                "degenerate_connections": r.degenerate,
            }))?;
            Ok(if r.max_rel_error <= tolerance { EXIT_OK } else { EXIT_FAILURE })
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}
