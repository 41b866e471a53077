//! Grid sweeps with resumption.

use std::path::Path;

use rayon::prelude::*;

use crate::config::{expand_grid, ExperimentConfig};
use crate::error::Result;
use crate::run::{read_record, run_dir, run_id, run_single, write_run, RunRecord};

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// In grid order, seeds innermost.
    pub records: Vec<RunRecord>,
    /// Runs skipped because a completed record already existed.
    pub resumed: usize,
}

/// Runs every grid point for every seed, persisting each run under
/// `out_dir/runs`. Completed runs found on disk are loaded instead of rerun.
pub fn run_sweep(cfg: &ExperimentConfig, base_dir: &Path, out_dir: &Path) -> Result<SweepOutcome> {
    cfg.validate()?;
    let grid = expand_grid(cfg)?;
    let tasks: Vec<(usize, u64)> = grid
        .iter()
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p.index, s)))
        .collect();
    log::info!("sweep {}: {} grid points, {} runs", cfg.name, grid.len(), tasks.len());
    let results: Vec<Result<(RunRecord, bool)>> = tasks
        .par_iter()
        .map(|&(index, seed)| {
            let point = &grid[index];
            let dir = run_dir(out_dir, &run_id(&cfg.name, index, seed));
            if let Ok(rec) = read_record(&dir) {
                return Ok((rec, true));
            }
            let overrides = point.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let out = run_single(&point.config, seed, index, overrides, base_dir)?;
            write_run(&dir, &out)?;
            Ok((out.record, false))
        })
        .collect();
    let mut records = Vec::with_capacity(results.len());
    let mut resumed = 0;
    for r in results {
        let (rec, old) = r?;
        resumed += old as usize;
        records.push(rec);
    }
    Ok(SweepOutcome { records, resumed })
}
