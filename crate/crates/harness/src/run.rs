//! Single runs and their on-disk form.
//!
//! A run directory holds `config.toml` (a snapshot that replays the run on
//! its own), `geometry.csv`, `metrics.csv`, `curves.csv` and `record.json`.
//! `record.json` is written last and marks the run as complete.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use debinn::eval::{evaluate, Metrics};
use debinn::ga::train_ga;
use debinn::gd::{train_gd, Phase};
use debinn::NetworkGeometry;
use serde::{Deserialize, Serialize};

use crate::config::{prepare_data, ExperimentConfig, Optimizer, PreparedData};
use crate::error::{HarnessError, Result};

pub const RECORD_FILE: &str = "record.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const GEOMETRY_FILE: &str = "geometry.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVES_FILE: &str = "curves.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Diverged,
    Failed,
}

/// One generation (GA) or epoch (GD).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    /// GD only: the phase of the step's last update.
    pub phase: Option<Phase>,
    /// GA: best fitness so far. GD: mean batch loss.
    pub loss: f64,
    /// GA only.
    pub mean_fitness: Option<f64>,
    pub train_bacc: f64,
    pub test_bacc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub name: String,
    pub dataset: String,
    pub optimizer: Optimizer,
    pub grid_index: usize,
    /// `key=value` per swept key.
    pub overrides: Vec<String>,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub train: Option<Metrics>,
    pub test: Option<Metrics>,
    pub curve: Vec<CurveRow>,
    /// Fitness evaluations (GA) or backward passes (GD).
    pub work: usize,
    pub duration_secs: f64,
}

impl RunRecord {
    pub fn test_bacc(&self) -> Option<f64> {
        match self.status {
            RunStatus::Ok => self.test.as_ref().map(|m| m.bacc),
            _ => None,
        }
    }

    /// Equality of everything except wall-clock time.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        RunRecord {
            duration_secs: 0.0,
            ..self.clone()
        } == RunRecord {
            duration_secs: 0.0,
            ..other.clone()
        }
    }
}

pub fn run_id(name: &str, grid_index: usize, seed: u64) -> String {
    format!("{name}-g{grid_index:04}-s{seed}")
}

/// The config of a single run: one seed, no sweep, optimizer seeds set, and
/// network dimensions taken from the data.
pub fn snapshot(cfg: &ExperimentConfig, seed: u64, data: &PreparedData) -> ExperimentConfig {
    let mut s = cfg.clone();
    s.sweep.clear();
    s.seeds = vec![seed];
    s.network.input_dim = data.train.dim();
    s.network.output_dim = data.train.class_count;
    match s.optimizer {
        Optimizer::Ga => {
            let mut ga = s.ga_config();
            ga.rng_seed = seed;
            s.ga = Some(ga);
        }
        Optimizer::Gd => {
            let mut gd = s.gd_config();
            gd.rng_seed = seed;
            s.gd = Some(gd);
        }
    }
    s
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub config: ExperimentConfig,
    pub geometry: Option<NetworkGeometry>,
}

/// Trains and evaluates one (config, seed). Training failures end up in the
/// record's status; configuration and data errors are returned.
pub fn run_single(
    cfg: &ExperimentConfig,
    seed: u64,
    grid_index: usize,
    overrides: Vec<String>,
    base_dir: &Path,
) -> Result<RunOutput> {
    cfg.validate()?;
    let data = prepare_data(&cfg.dataset, base_dir)?;
    let mut snap = snapshot(cfg, seed, &data);
    for p in [&mut snap.dataset.train, &mut snap.dataset.test].into_iter().flatten() {
        if p.is_relative() {
            *p = std::path::absolute(base_dir.join(&*p))?;
        }
    }
    snap.validate()?;
    let started = Instant::now();
    let trained = match snap.optimizer {
        Optimizer::Ga => train_ga(&snap.network, &data.train, Some(&data.test), &snap.ga_config()).map(|o| {
            let curve = o
                .history
                .iter()
                .map(|r| CurveRow {
                    step: r.generation,
                    phase: None,
                    loss: r.best_fitness,
                    mean_fitness: Some(r.mean_fitness),
                    train_bacc: r.train_bacc,
                    test_bacc: r.test_bacc,
                })
                .collect::<Vec<_>>();
            (o.geometry, curve, o.evaluations)
        }),
        Optimizer::Gd => train_gd(&snap.network, &data.train, Some(&data.test), &snap.gd_config()).map(|o| {
            let curve = o
                .curve
                .iter()
                .map(|r| CurveRow {
                    step: r.epoch,
                    phase: Some(r.phase),
                    loss: r.train_loss,
                    mean_fitness: None,
                    train_bacc: r.train_bacc,
                    test_bacc: r.test_bacc,
                })
                .collect::<Vec<_>>();
            (o.geometry, curve, o.backward_passes)
        }),
    };
    let mut record = RunRecord {
        run_id: run_id(&cfg.name, grid_index, seed),
        name: cfg.name.clone(),
        dataset: cfg.dataset.display_name(),
        optimizer: cfg.optimizer,
        grid_index,
        overrides,
        seed,
        status: RunStatus::Ok,
        error: None,
        train: None,
        test: None,
        curve: Vec::new(),
        work: 0,
        duration_secs: 0.0,
    };
    let geometry = match trained {
        Ok((geometry, curve, work)) => {
            record.curve = curve;
            record.work = work;
            let metrics = debinn::Network::compile(&geometry)
                .and_then(|net| Ok((evaluate(&net, &data.train)?, evaluate(&net, &data.test)?)));
            match metrics {
                Ok((train, test)) if train.bacc.is_finite() && test.bacc.is_finite() => {
                    record.train = Some(train);
                    record.test = Some(test);
                }
                Ok(_) => {
                    record.status = RunStatus::Failed;
                    record.error = Some("non-finite metrics".into());
                }
                Err(e) => {
                    record.status = RunStatus::Failed;
                    record.error = Some(e.to_string());
                }
            }
            Some(geometry)
        }
        Err(e @ debinn::Error::Diverged { .. }) => {
            record.status = RunStatus::Diverged;
            record.error = Some(e.to_string());
            None
        }
        Err(e) => {
            record.status = RunStatus::Failed;
            record.error = Some(e.to_string());
            None
        }
    };
    record.duration_secs = started.elapsed().as_secs_f64();
    log::info!(
        "{}: {:?} test bacc {:?} in {:.1}s",
        record.run_id,
        record.status,
        record.test_bacc(),
        record.duration_secs
    );
    Ok(RunOutput {
        record,
        config: snap,
        geometry,
    })
}

pub fn run_dir(out_dir: &Path, run_id: &str) -> PathBuf {
    out_dir.join("runs").join(run_id)
}

pub fn write_run(dir: &Path, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), out.config.to_toml()?)?;
    if let Some(g) = &out.geometry {
        g.save(dir.join(GEOMETRY_FILE))?;
    }
    let mut w = csv::Writer::from_path(dir.join(METRICS_FILE))?;
    w.write_record(["split", "bacc", "sensitivity", "specificity"])?;
    for (split, m) in [("train", &out.record.train), ("test", &out.record.test)] {
        if let Some(m) = m {
            w.write_record([
                split.to_string(),
                m.bacc.to_string(),
                m.sensitivity.to_string(),
                m.specificity.to_string(),
            ])?;
        }
    }
    w.flush()?;
    write_curve(BufWriter::new(fs::File::create(dir.join(CURVES_FILE))?), &out.record, false)?;
    let tmp = dir.join(format!("{RECORD_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_string_pretty(&out.record)?)?;
    fs::rename(tmp, dir.join(RECORD_FILE))?;
    Ok(())
}

/// Curve rows as CSV, optionally prefixed by run id, dataset and optimizer.
pub fn write_curve<W: Write>(writer: W, record: &RunRecord, with_run: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    write_curve_rows(&mut w, record, with_run, true)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn write_curve_rows<W: Write>(
    w: &mut csv::Writer<W>,
    record: &RunRecord,
    with_run: bool,
    header: bool,
) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    if header {
        let mut h = vec!["step", "phase", "loss", "mean_fitness", "train_bacc", "test_bacc"];
        if with_run {
            h.splice(0..0, ["run_id", "dataset", "optimizer"]);
        }
        w.write_record(&h)?;
    }
    for r in &record.curve {
        let mut row = vec![
            r.step.to_string(),
            match r.phase {
                Some(Phase::Soma) => "soma".into(),
                Some(Phase::Axon) => "axon".into(),
                None => String::new(),
            },
            r.loss.to_string(),
            opt(r.mean_fitness),
            r.train_bacc.to_string(),
            opt(r.test_bacc),
        ];
        if with_run {
            row.splice(
                0..0,
                [record.run_id.clone(), record.dataset.clone(), record.optimizer.as_str().to_string()],
            );
        }
        w.write_record(&row)?;
    }
    Ok(())
}

pub fn read_record(dir: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(dir.join(RECORD_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

/// Config snapshot and trained geometry of a saved run.
pub fn load_run(dir: &Path) -> Result<(ExperimentConfig, NetworkGeometry)> {
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let path = dir.join(GEOMETRY_FILE);
    if !path.exists() {
        return Err(HarnessError::Config(format!("{} has no trained geometry", dir.display())));
    }
    let geom = NetworkGeometry::load(&cfg.network, path)?;
    Ok((cfg, geom))
}
