//! Aggregation of saved runs into tables, curves and decision grids.
//!
//! Output, under `<out_dir>/report`:
//!
//! * `best_runs.csv`: best test BAcc per dataset and optimizer, with Se/Sp.
//! * `sweep_stats.csv`: BAcc distribution per dataset and optimizer, and the
//!   GA-vs-GD Mann-Whitney p-value.
//! * `curves.csv`: every curve row of every run.
//! * `grids/`: decision grids of the best runs on 2-D datasets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use debinn::eval::{
    mann_whitney_u, misclassified_area_fraction, sweep_stats, two_moons_truth_grid, Bounds, DecisionGrid,
    MannWhitney, SweepStats, DEFAULT_GRID_RESOLUTION,
};
use debinn::Network;
use serde::Serialize;

use crate::config::{load_raw, prepare_data, DatasetKind};
use crate::error::{HarnessError, Result};
use crate::run::{load_run, read_record, run_dir, write_curve_rows, RunRecord, RunStatus};
use crate::config::Optimizer;

/// Padding of decision-grid bounds, as a fraction of the data extent.
pub const GRID_PAD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestRun {
    pub dataset: String,
    pub optimizer: Optimizer,
    pub run_id: String,
    pub test_bacc: f64,
    pub test_sensitivity: f64,
    pub test_specificity: f64,
    pub train_bacc: f64,
    /// Two-moons only: share of the plotted plane labelled differently from
    /// the nearest generative arc.
    pub misclassified_area: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub dataset: String,
    pub optimizer: Optimizer,
    pub runs: usize,
    pub ok_runs: usize,
    pub stats: SweepStats,
    /// GA vs GD on the same dataset, when both have ok runs.
    pub comparison: Option<MannWhitney>,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub best: Vec<BestRun>,
    pub stats: Vec<GroupStats>,
    pub dir: PathBuf,
}

/// All completed run records under `out_dir/runs`, ordered by run id.
pub fn collect_records(out_dir: &Path) -> Result<Vec<RunRecord>> {
    let runs = out_dir.join("runs");
    let mut out = Vec::new();
    if !runs.is_dir() {
        return Ok(out);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(&runs)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for d in dirs {
        match read_record(&d) {
            Ok(r) => out.push(r),
            Err(e) => log::warn!("skipping {}: {e}", d.display()),
        }
    }
    Ok(out)
}

/// Highest test BAcc; ties go to the earlier grid point, then the lower seed.
pub fn best_run<'a>(records: &[&'a RunRecord]) -> Option<&'a RunRecord> {
    let mut best: Option<&RunRecord> = None;
    for &r in records {
        let Some(b) = r.test_bacc() else { continue };
        best = match best {
            None => Some(r),
            Some(cur) => {
                let cb = cur.test_bacc().expect("only ok records are kept");
                if b > cb || (b == cb && (r.grid_index, r.seed) < (cur.grid_index, cur.seed)) {
                    Some(r)
                } else {
                    Some(cur)
                }
            }
        }
    }
    best
}

type Groups<'a> = BTreeMap<(String, Optimizer), Vec<&'a RunRecord>>;

fn group(records: &[RunRecord]) -> Groups<'_> {
    let mut g: Groups = BTreeMap::new();
    for r in records {
        g.entry((r.dataset.clone(), r.optimizer)).or_default().push(r);
    }
    g
}

fn grid_for(out_dir: &Path, record: &RunRecord, resolution: usize) -> Result<Option<(DecisionGrid, Option<f64>)>> {
    let dir = run_dir(out_dir, &record.run_id);
    let (cfg, geom) = load_run(&dir)?;
    if geom.spec.input_dim != 2 {
        return Ok(None);
    }
    let data = prepare_data(&cfg.dataset, &dir)?;
    let (raw_train, _) = load_raw(&cfg.dataset, &dir)?;
    let bounds = Bounds::around(&raw_train, GRID_PAD)?;
    let grid = decision_grid_raw(&Network::compile(&geom)?, &data, bounds, resolution)?;
    let area = if cfg.dataset.kind == DatasetKind::TwoMoons {
        Some(misclassified_area_fraction(&grid, &two_moons_truth_grid(bounds, resolution))?)
    } else {
        None
    };
    Ok(Some((grid, area)))
}

/// Decision grid over raw feature space; points are standardized the same
/// way as the training data before classification.
pub fn decision_grid_raw(
    net: &Network,
    data: &crate::config::PreparedData,
    bounds: Bounds,
    resolution: usize,
) -> Result<DecisionGrid> {
    if net.spec.input_dim != 2 {
        return Err(HarnessError::Config("decision grids need a 2-D dataset".into()));
    }
    if resolution == 0 {
        return Err(HarnessError::Config("grid resolution must be positive".into()));
    }
    Ok(DecisionGrid::from_fn(bounds, resolution, |p| {
        net.predict(&data.to_input(&p)).expect("input dimension checked")
    }))
}

pub fn write_grid(path: &Path, grid: &DecisionGrid) -> Result<()> {
    grid.write_csv(std::io::BufWriter::new(fs::File::create(path)?))?;
    Ok(())
}

pub fn report(out_dir: &Path) -> Result<Report> {
    report_with_resolution(out_dir, DEFAULT_GRID_RESOLUTION)
}

pub fn report_with_resolution(out_dir: &Path, resolution: usize) -> Result<Report> {
    let records = collect_records(out_dir)?;
    let dir = out_dir.join("report");
    fs::create_dir_all(dir.join("grids"))?;
    let groups = group(&records);

    let mut best = Vec::new();
    let mut stats = Vec::new();
    for ((dataset, opt), recs) in &groups {
        let ok: Vec<f64> = recs.iter().filter_map(|r| r.test_bacc()).collect();
        if ok.is_empty() {
            log::warn!("{dataset}/{}: no successful runs, skipped", opt.as_str());
            continue;
        }
        let b = best_run(recs).expect("at least one ok run");
        let test = b.test.as_ref().expect("ok run has metrics");
        let mut area = None;
        match grid_for(out_dir, b, resolution) {
            Ok(Some((grid, a))) => {
                write_grid(&dir.join("grids").join(format!("{dataset}_{}.csv", opt.as_str())), &grid)?;
                area = a;
            }
            Ok(None) => {}
            Err(e) => log::warn!("{}: no decision grid: {e}", b.run_id),
        }
        best.push(BestRun {
            dataset: dataset.clone(),
            optimizer: *opt,
            run_id: b.run_id.clone(),
            test_bacc: test.bacc,
            test_sensitivity: test.sensitivity,
            test_specificity: test.specificity,
            train_bacc: b.train.as_ref().map(|m| m.bacc).unwrap_or(f64::NAN),
            misclassified_area: area,
        });
        let other = match opt {
            Optimizer::Ga => Optimizer::Gd,
            Optimizer::Gd => Optimizer::Ga,
        };
        let comparison = groups
            .get(&(dataset.clone(), other))
            .map(|o| o.iter().filter_map(|r| r.test_bacc()).collect::<Vec<_>>())
            .filter(|o| !o.is_empty())
            .map(|o| match opt {
                Optimizer::Ga => mann_whitney_u(&ok, &o),
                Optimizer::Gd => mann_whitney_u(&o, &ok),
            })
            .transpose()?;
        stats.push(GroupStats {
            dataset: dataset.clone(),
            optimizer: *opt,
            runs: recs.len(),
            ok_runs: ok.len(),
            stats: sweep_stats(&ok)?,
            comparison,
        });
    }

    let mut w = csv::Writer::from_path(dir.join("best_runs.csv"))?;
    w.write_record([
        "dataset",
        "optimizer",
        "run_id",
        "test_bacc",
        "test_sensitivity",
        "test_specificity",
        "train_bacc",
        "misclassified_area",
    ])?;
    for b in &best {
        w.write_record([
            b.dataset.clone(),
            b.optimizer.as_str().into(),
            b.run_id.clone(),
            b.test_bacc.to_string(),
            b.test_sensitivity.to_string(),
            b.test_specificity.to_string(),
            b.train_bacc.to_string(),
            b.misclassified_area.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("sweep_stats.csv"))?;
    w.write_record([
        "dataset", "optimizer", "runs", "ok_runs", "mean", "std", "median", "min", "max", "u", "p_value", "exact",
    ])?;
    for s in &stats {
        let (u, p, exact) = match s.comparison {
            Some(c) => (c.u.to_string(), c.p.to_string(), c.exact.to_string()),
            None => Default::default(),
        };
        w.write_record([
            s.dataset.clone(),
            s.optimizer.as_str().into(),
            s.runs.to_string(),
            s.ok_runs.to_string(),
            s.stats.mean.to_string(),
            s.stats.std.to_string(),
            s.stats.median.to_string(),
            s.stats.min.to_string(),
            s.stats.max.to_string(),
            u,
            p,
            exact,
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("curves.csv"))?;
    let mut header = true;
    for r in &records {
        write_curve_rows(&mut w, r, true, header)?;
        header = false;
    }
    w.flush()?;

    let statuses: Vec<RunStatus> = records.iter().map(|r| r.status).collect();
    log::info!(
        "report: {} runs ({} ok) in {} groups",
        statuses.len(),
        statuses.iter().filter(|s| **s == RunStatus::Ok).count(),
        groups.len()
    );
    Ok(Report { best, stats, dir })
}
