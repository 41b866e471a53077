//! Central-difference check of the analytic coordinate gradients.
//!
//! Parameters are enumerated in chromosome order (somas, axons, then γ/β).
//! The analytic gradient of a coordinate is the sum of its per-connection
//! contributions. With the diagonal GroupNorm backward the numeric loss is
//! evaluated with [`Network::forward_frozen_context`], whose exact derivative
//! is the diagonal convention; the full backward is checked against the
//! ordinary loss.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::forward::{ForwardTrace, Network};
use crate::ga::{decode, encode, Genome};
use crate::gd::{batch_gradients, coordinate_gradients, distance_gradients, DerivativeMode, NormBackward};
use crate::geometry::{MappingKind, NetworkGeometry};
use crate::loss::{network_penalty, sample_loss, ClassWeights};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so that components that are
/// zero on both sides do not blow up.
pub const DEFAULT_REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub step: f64,
    pub norm_backward: NormBackward,
    pub rel_floor: f64,
    /// Maximum number of halvings of `step` for Ridders' extrapolation of the
    /// central difference; 1 is the plain central difference. GroupNorm over
    /// a near-constant group has curvature on the scale of `√ε`, where a
    /// single central difference at `h = 1e-5` loses several digits.
    pub levels: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: DEFAULT_FD_STEP,
            norm_backward: NormBackward::Diagonal,
            rel_floor: DEFAULT_REL_FLOOR,
            levels: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Chromosome index of the largest relative error.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Connections skipped because both endpoints coincide.
    pub degenerate: usize,
}

/// Loss and chromosome-ordered gradient under the exact mapping derivative.
pub fn analytic_gradient(
    geom: &NetworkGeometry,
    ds: &Dataset,
    weights: &ClassWeights,
    mode: NormBackward,
) -> Result<(f64, Vec<f64>, usize)> {
    let net = Network::compile(geom)?;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let bg = batch_gradients(&net, ds, &idx, weights, mode)?;
    let dd = distance_gradients(&net, &bg.gradients, DerivativeMode::Exact);
    let set = coordinate_gradients(geom, &dd);
    let mut out = Vec::new();
    for e in set.soma.iter().flatten() {
        out.extend_from_slice(&e.sum.to_array());
    }
    for e in set.axon.iter().flatten() {
        out.extend_from_slice(&e.sum.to_array());
    }
    for g in &bg.gradients.layers {
        for (dg, db) in g.gamma.iter().zip(&g.beta) {
            out.push(*dg);
            out.push(*db);
        }
    }
    Ok((bg.loss, out, set.degenerate))
}

/// The loss whose derivative the analytic gradient is meant to equal:
/// inverse-mapping `dmax` pinned, and (diagonal mode) GroupNorm context
/// frozen at `contexts`.
fn matched_loss(
    geom: &NetworkGeometry,
    ds: &Dataset,
    weights: &ClassWeights,
    dmax: Option<&[f64]>,
    contexts: Option<&[ForwardTrace]>,
) -> Result<f64> {
    let net = Network::compile_with_dmax(geom, dmax)?;
    let mut total = 0.0;
    for (k, (x, &y)) in ds.features.iter().zip(&ds.labels).enumerate() {
        let trace = match contexts {
            Some(c) => net.forward_frozen_context(x, &c[k])?,
            None => net.forward(x)?,
        };
        total += sample_loss(&trace.probs, y, weights);
    }
    Ok(total / ds.len() as f64 + network_penalty(&net, net.spec.l1, net.spec.l2))
}

pub fn numeric_gradient(
    geom: &NetworkGeometry,
    ds: &Dataset,
    weights: &ClassWeights,
    config: &GradCheckConfig,
) -> Result<Vec<f64>> {
    let base = Network::compile(geom)?;
    let dmax: Option<Vec<f64>> = matches!(geom.spec.mapping, MappingKind::Inverse)
        .then(|| base.layers.iter().map(|l| l.raw.dmax).collect());
    let contexts: Option<Vec<ForwardTrace>> = match config.norm_backward {
        NormBackward::Diagonal if geom.spec.groupnorm => Some(
            ds.features
                .iter()
                .map(|x| base.forward(x))
                .collect::<Result<_>>()?,
        ),
        _ => None,
    };
    let genome = encode(geom);
    let eval = |g: &Genome| -> Result<f64> {
        matched_loss(&decode(g, &geom.spec)?, ds, weights, dmax.as_deref(), contexts.as_deref())
    };
    let mut probe = genome.clone();
    let mut central = |i: usize, h: f64| -> Result<f64> {
        probe.genes[i] = genome.genes[i] + h;
        let plus = eval(&probe)?;
        probe.genes[i] = genome.genes[i] - h;
        let minus = eval(&probe)?;
        probe.genes[i] = genome.genes[i];
        Ok((plus - minus) / (2.0 * h))
    };
    let mut out = Vec::with_capacity(genome.len());
    for i in 0..genome.len() {
        out.push(ridders(|h| central(i, h), config.step, config.levels.max(1))?);
    }
    Ok(out)
}

/// Ridders' polynomial extrapolation of `d(h)` to `h → 0`, halving `h` each
/// level and keeping the tableau entry with the smallest error estimate.
fn ridders(mut d: impl FnMut(f64) -> Result<f64>, step: f64, levels: usize) -> Result<f64> {
    const SAFE: f64 = 2.0;
    let mut tab = vec![vec![0.0; levels]; levels];
    let mut h = step;
    tab[0][0] = d(h)?;
    let mut best = tab[0][0];
    let mut err = f64::INFINITY;
    for i in 1..levels {
        h /= 2.0;
        tab[0][i] = d(h)?;
        let mut fac = 4.0;
        for j in 1..=i {
            tab[j][i] = (tab[j - 1][i] * fac - tab[j - 1][i - 1]) / (fac - 1.0);
            fac *= 4.0;
            let e = (tab[j][i] - tab[j - 1][i]).abs().max((tab[j][i] - tab[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = tab[j][i];
            }
        }
        if (tab[i][i] - tab[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    Ok(best)
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares the analytic and numeric gradients over every coordinate and
/// every γ/β.
pub fn finite_difference_oracle(
    geom: &NetworkGeometry,
    ds: &Dataset,
    weights: &ClassWeights,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if !(config.step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {}", config.step)));
    }
    let (_, analytic, degenerate) = analytic_gradient(geom, ds, weights, config.norm_backward)?;
    let numeric = numeric_gradient(geom, ds, weights, config)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        analytic,
        numeric,
        degenerate,
    };
    for (i, (&a, &n)) in report.analytic.iter().zip(&report.numeric).enumerate() {
        let rel = relative_error(a, n, config.rel_floor);
        report.max_abs_error = report.max_abs_error.max((a - n).abs());
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}
