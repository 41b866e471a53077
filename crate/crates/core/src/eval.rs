//! Classification metrics, decision-boundary rasterization and the
//! Mann-Whitney U test.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{two_moons_region, Dataset};
use crate::error::{Error, Result};
use crate::forward::{argmax, ForwardTrace, Network};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            classes: m,
            counts: rows.concat(),
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::InvalidArgument("prediction and label counts differ".into()));
        }
        let mut cm = ConfusionMatrix::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::InvalidArgument(format!("class index out of range ({t}, {p})")));
            }
            cm.counts[t * classes + p] += 1;
        }
        Ok(cm)
    }

    #[inline]
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, predicted)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Labeled CSV: header `true\predicted,<names…>`, one row per true class.
    pub fn write_csv<W: Write>(&self, writer: W, class_names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(class_names.iter().cloned());
        w.write_record(&header)?;
        for t in 0..self.classes {
            let mut rec = vec![class_names[t].clone()];
            rec.extend((0..self.classes).map(|p| self.get(t, p).to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Recall of one class, `TP / (TP + FN)`.
fn recall(cm: &ConfusionMatrix, c: usize) -> Result<f64> {
    let n = cm.row_sum(c);
    if n == 0 {
        return Err(Error::UndefinedMetric(format!("class {c} has no true samples")));
    }
    Ok(cm.get(c, c) as f64 / n as f64)
}

/// `TN / (TN + FP)` treating `c` as the positive class.
fn one_vs_rest_specificity(cm: &ConfusionMatrix, c: usize) -> Result<f64> {
    let mut tn = 0;
    let mut negatives = 0;
    for t in (0..cm.classes).filter(|&t| t != c) {
        negatives += cm.row_sum(t);
        tn += cm.row_sum(t) - cm.get(t, c);
    }
    if negatives == 0 {
        return Err(Error::UndefinedMetric(format!("no samples outside class {c}")));
    }
    Ok(tn as f64 / negatives as f64)
}

/// Mean per-class recall.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.classes == 0 {
        return Err(Error::UndefinedMetric("no classes".into()));
    }
    let mut sum = 0.0;
    for c in 0..cm.classes {
        sum += recall(cm, c)?;
    }
    Ok(sum / cm.classes as f64)
}

/// Sensitivity and specificity. Binary tasks use `positive_class`;
/// multiclass tasks return macro averages over one-vs-rest reductions and
/// ignore `positive_class`.
pub fn sensitivity_specificity(cm: &ConfusionMatrix, positive_class: usize) -> Result<(f64, f64)> {
    if cm.classes == 2 {
        if positive_class > 1 {
            return Err(Error::InvalidArgument(format!("positive class {positive_class} out of range")));
        }
        let se = recall(cm, positive_class)?;
        let sp = recall(cm, 1 - positive_class)?;
        return Ok((se, sp));
    }
    let m = cm.classes as f64;
    let mut se = 0.0;
    let mut sp = 0.0;
    for c in 0..cm.classes {
        se += recall(cm, c)?;
        sp += one_vs_rest_specificity(cm, c)?;
    }
    Ok((se / m, sp / m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub bacc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub confusion: ConfusionMatrix,
}

impl Metrics {
    pub fn from_confusion(confusion: ConfusionMatrix, positive_class: usize) -> Result<Self> {
        let bacc = balanced_accuracy(&confusion)?;
        let (sensitivity, specificity) = sensitivity_specificity(&confusion, positive_class)?;
        Ok(Metrics {
            bacc,
            sensitivity,
            specificity,
            confusion,
        })
    }
}

/// Predicted class of every sample.
pub fn predict_all(net: &Network, ds: &Dataset) -> Result<Vec<usize>> {
    ds.features
        .par_iter()
        .map_init(ForwardTrace::default, |trace, x| {
            net.forward_into(x, trace)?;
            Ok(argmax(&trace.probs))
        })
        .collect()
}

pub fn confusion_matrix(net: &Network, ds: &Dataset) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_predictions(&ds.labels, &predict_all(net, ds)?, ds.class_count)
}

/// Binary tasks treat class 1 as positive.
pub const DEFAULT_POSITIVE_CLASS: usize = 1;

pub fn evaluate(net: &Network, ds: &Dataset) -> Result<Metrics> {
    Metrics::from_confusion(confusion_matrix(net, ds)?, DEFAULT_POSITIVE_CLASS)
}

/// Axis-aligned rectangle in input space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    /// Bounding box of a 2-D dataset padded by `pad` of its extent on each side.
    pub fn around(ds: &Dataset, pad: f64) -> Result<Bounds> {
        if ds.dim() != 2 {
            return Err(Error::InvalidArgument(format!("dataset has {} features, need 2", ds.dim())));
        }
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for r in &ds.features {
            x0 = x0.min(r[0]);
            x1 = x1.max(r[0]);
            y0 = y0.min(r[1]);
            y1 = y1.max(r[1]);
        }
        let (px, py) = ((x1 - x0) * pad, (y1 - y0) * pad);
        Ok(Bounds {
            x_min: x0 - px,
            x_max: x1 + px,
            y_min: y0 - py,
            y_max: y1 + py,
        })
    }

    /// Centre of cell `(ix, iy)` of a `resolution × resolution` lattice.
    pub fn cell_center(&self, ix: usize, iy: usize, resolution: usize) -> [f64; 2] {
        let dx = (self.x_max - self.x_min) / resolution as f64;
        let dy = (self.y_max - self.y_min) / resolution as f64;
        [
            self.x_min + (ix as f64 + 0.5) * dx,
            self.y_min + (iy as f64 + 0.5) * dy,
        ]
    }
}

pub const DEFAULT_GRID_RESOLUTION: usize = 200;

/// Labels on a square lattice, row-major with `y` as the row index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionGrid {
    pub bounds: Bounds,
    pub resolution: usize,
    pub labels: Vec<usize>,
}

impl DecisionGrid {
    pub fn from_fn(bounds: Bounds, resolution: usize, f: impl Fn([f64; 2]) -> usize + Sync) -> Self {
        let labels = (0..resolution * resolution)
            .into_par_iter()
            .map(|k| f(bounds.cell_center(k % resolution, k / resolution, resolution)))
            .collect();
        DecisionGrid {
            bounds,
            resolution,
            labels,
        }
    }

    /// `x,y,label` per cell centre.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "y", "label"])?;
        for (k, &label) in self.labels.iter().enumerate() {
            let [x, y] = self.bounds.cell_center(k % self.resolution, k / self.resolution, self.resolution);
            w.write_record([x.to_string(), y.to_string(), label.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Classifies every cell centre of a `resolution²` lattice with the model.
pub fn decision_grid(net: &Network, bounds: Bounds, resolution: usize) -> Result<DecisionGrid> {
    if net.spec.input_dim != 2 {
        return Err(Error::InvalidArgument(format!(
            "decision grid needs a 2-D input, network has {}",
            net.spec.input_dim
        )));
    }
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    Ok(DecisionGrid::from_fn(bounds, resolution, |p| {
        net.predict(&p).expect("input dimension checked")
    }))
}

/// Nearest-arc labels of the noise-free two-moons generator.
pub fn two_moons_truth_grid(bounds: Bounds, resolution: usize) -> DecisionGrid {
    DecisionGrid::from_fn(bounds, resolution, two_moons_region)
}

/// Fraction of cells whose labels disagree.
pub fn misclassified_area_fraction(grid: &DecisionGrid, truth: &DecisionGrid) -> Result<f64> {
    if grid.resolution != truth.resolution || grid.labels.len() != truth.labels.len() {
        return Err(Error::InvalidArgument("grid shapes differ".into()));
    }
    if grid.labels.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let wrong = grid.labels.iter().zip(&truth.labels).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / grid.labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

/// Combined sample size up to which tie-free p-values are computed exactly.
pub const EXACT_MAX_N: usize = 16;

/// Mann-Whitney U test with midranks for ties.
///
/// Without ties and for `|xs| + |ys| <= 16` the two-sided p-value is
/// `min(1, 2·min(P[U ≤ u], P[U ≥ u]))` under the exact null distribution;
/// otherwise a normal approximation with tie and continuity corrections is used.
pub fn mann_whitney_u(xs: &[f64], ys: &[f64]) -> Result<MannWhitney> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidArgument("both samples must be nonempty".into()));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("samples contain NaN".into()));
    }
    let (n1, n2) = (xs.len(), ys.len());
    let n = n1 + n2;
    let mut pooled: Vec<(f64, bool)> = xs.iter().map(|&v| (v, true)).chain(ys.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        rank_sum += midrank * pooled[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;

    if tie_term == 0.0 && n <= EXACT_MAX_N {
        let dist = exact_u_distribution(n1, n2);
        let total: u64 = dist.iter().sum();
        let k = u.round() as usize;
        let lower: u64 = dist[..=k].iter().sum();
        let upper: u64 = dist[k..].iter().sum();
        let p = (2.0 * lower.min(upper) as f64 / total as f64).min(1.0);
        return Ok(MannWhitney { u, p, exact: true });
    }

    let (f1, f2, nf) = (n1 as f64, n2 as f64, n as f64);
    let mean = f1 * f2 / 2.0;
    let var = f1 * f2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return Ok(MannWhitney { u, p: 1.0, exact: false });
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let p = erfc(z / std::f64::consts::SQRT_2).min(1.0);
    Ok(MannWhitney { u, p, exact: false })
}

/// Null frequencies of U for sample sizes `(n1, n2)`; index = U value.
///
/// Counts the rank subsets of size `n1` by U via the recurrence
/// `f(u; a, b) = f(u - b; a - 1, b) + f(u; a, b - 1)`.
pub fn exact_u_distribution(n1: usize, n2: usize) -> Vec<u64> {
    let max_u = n1 * n2;
    // table[a][b] = frequency vector for sizes (a, b)
    let mut table: Vec<Vec<Vec<u64>>> = vec![vec![Vec::new(); n2 + 1]; n1 + 1];
    for a in 0..=n1 {
        for b in 0..=n2 {
            let mut f = vec![0u64; a * b + 1];
            if a == 0 || b == 0 {
                f[0] = 1;
            } else {
                for (u, slot) in f.iter_mut().enumerate() {
                    let from_top = if u >= b { table[a - 1][b].get(u - b).copied().unwrap_or(0) } else { 0 };
                    let from_left = table[a][b - 1].get(u).copied().unwrap_or(0);
                    *slot = from_top + from_left;
                }
            }
            table[a][b] = f;
        }
    }
    let out = std::mem::take(&mut table[n1][n2]);
    debug_assert_eq!(out.len(), max_u + 1);
    out
}

/// Summary of BAcc values over a hyperparameter sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample (N-1) standard deviation; 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn sweep_stats(values: &[f64]) -> Result<SweepStats> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no values".into()));
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(SweepStats {
        count: n,
        mean,
        median,
        std,
        min: sorted[0],
        max: sorted[n - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn bacc_examples() {
        assert_eq!(balanced_accuracy(&cm(&[&[5, 0], &[0, 7]])).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&cm(&[&[50, 50], &[50, 50]])).unwrap(), 0.5);
        let b = balanced_accuracy(&cm(&[&[8, 1, 1], &[2, 6, 2], &[0, 0, 10]])).unwrap();
        assert!((b - 0.8).abs() < 1e-15);
        assert!(matches!(
            balanced_accuracy(&cm(&[&[1, 0], &[0, 0]])),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn se_sp_examples() {
        assert_eq!(sensitivity_specificity(&cm(&[&[4, 0], &[0, 3]]), 1).unwrap(), (1.0, 1.0));
        let (se, sp) = sensitivity_specificity(&cm(&[&[9, 1], &[2, 8]]), 0).unwrap();
        assert!((se - 0.9).abs() < 1e-15 && (sp - 0.8).abs() < 1e-15);
        assert!(sensitivity_specificity(&cm(&[&[0, 0], &[2, 8]]), 0).is_err());
    }

    #[test]
    fn bacc_is_invariant_to_row_rescaling() {
        let a = cm(&[&[8, 1, 1], &[2, 6, 2], &[0, 3, 10]]);
        let b = cm(&[&[16, 2, 2], &[6, 18, 6], &[0, 3, 10]]);
        assert!((balanced_accuracy(&a).unwrap() - balanced_accuracy(&b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn grid_examples() {
        let bounds = Bounds { x_min: 0.0, x_max: 1.0, y_min: 0.0, y_max: 1.0 };
        let g = DecisionGrid::from_fn(bounds, 2, |_| 1);
        assert_eq!(g.labels.len(), 4);
        assert!(g.labels.iter().all(|&l| l == 1));
        assert_eq!(bounds.cell_center(1, 0, 2), [0.75, 0.25]);

        let inverted = DecisionGrid::from_fn(bounds, 2, |_| 0);
        assert_eq!(misclassified_area_fraction(&g, &g).unwrap(), 0.0);
        assert_eq!(misclassified_area_fraction(&g, &inverted).unwrap(), 1.0);

        let truth = DecisionGrid::from_fn(bounds, 10, |_| 0);
        let mut pred = truth.clone();
        for l in pred.labels.iter_mut().take(24) {
            *l = 1;
        }
        assert!((misclassified_area_fraction(&pred, &truth).unwrap() - 0.24).abs() < 1e-15);
        let swapped = DecisionGrid { labels: pred.labels.iter().map(|l| 1 - l).collect(), ..pred.clone() };
        let f = misclassified_area_fraction(&pred, &truth).unwrap();
        let fs = misclassified_area_fraction(&swapped, &truth).unwrap();
        assert!((f + fs - 1.0).abs() < 1e-15);

        assert!(misclassified_area_fraction(&g, &truth).is_err());
    }

    #[test]
    fn mann_whitney_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = mann_whitney_u(&xs, &xs).unwrap();
        assert!(r.p > 0.9, "p = {}", r.p);

        let hi = [10.0, 11.0, 12.0, 13.0];
        let lo = [1.0, 2.0, 3.0];
        let r = mann_whitney_u(&hi, &lo).unwrap();
        assert_eq!(r.u, 12.0);
        assert!(r.exact);
        // two extreme arrangements out of C(7,3) = 35
        assert!((r.p - 2.0 / 35.0).abs() < 1e-15);

        let swapped = mann_whitney_u(&lo, &hi).unwrap();
        assert_eq!(swapped.u, 0.0);
        assert_eq!(swapped.p, r.p);
        assert!(mann_whitney_u(&[], &lo).is_err());
    }

    #[test]
    fn exact_distribution_totals() {
        // C(n1+n2, n1) subsets in total
        assert_eq!(exact_u_distribution(4, 4).iter().sum::<u64>(), 70);
        assert_eq!(exact_u_distribution(3, 5).iter().sum::<u64>(), 56);
        assert_eq!(exact_u_distribution(2, 2), vec![1, 1, 2, 1, 1]);
    }

    #[test]
    fn normal_branch_with_ties() {
        let a = [0.81, 0.83, 0.83, 0.9, 1.0, 0.95, 0.88, 0.85];
        let b = [0.26, 0.6, 0.7, 0.75, 0.8, 0.83, 0.78, 0.74, 0.69, 0.81, 0.82, 0.8];
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(!r.exact);
        assert!(r.p > 0.0 && r.p < 0.05);
        let s = mann_whitney_u(&b, &a).unwrap();
        assert!((r.p - s.p).abs() < 1e-15);
        assert!((r.u + s.u - (a.len() * b.len()) as f64).abs() < 1e-12);
    }

    #[test]
    fn sweep_stats_examples() {
        let s = sweep_stats(&[0.7]).unwrap();
        assert_eq!((s.mean, s.median, s.min, s.max, s.std), (0.7, 0.7, 0.7, 0.7, 0.0));
        let s = sweep_stats(&[81.0, 100.0]).unwrap();
        assert_eq!((s.mean, s.min, s.max, s.median), (90.5, 81.0, 100.0, 90.5));
        assert!(sweep_stats(&[]).is_err());
    }
}
