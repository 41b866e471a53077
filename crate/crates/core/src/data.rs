//! Datasets: the synthetic two-moons generator, CSV ingestion and z-scoring.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: Split,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
        split: Split,
    ) -> Result<Self> {
        let ds = Dataset {
            class_count: class_names.len(),
            features,
            labels,
            split,
            feature_names,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        if self.features.len() != self.labels.len() {
            return Err(Error::InvalidArgument("feature and label counts differ".into()));
        }
        let dim = self.feature_names.len();
        if let Some(r) = self.features.iter().position(|f| f.len() != dim) {
            return Err(Error::InvalidArgument(format!("row {r} does not have {dim} features")));
        }
        if let Some(r) = self.features.iter().position(|f| f.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument(format!("row {r} has non-finite features")));
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= self.class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {y} outside {} classes",
                self.class_count
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(self)
    }

    /// Fails when a class has no samples.
    pub fn require_all_classes(&self) -> Result<()> {
        match self.class_counts().iter().position(|&c| c == 0) {
            Some(c) => Err(Error::InvalidConfiguration(format!(
                "class `{}` has no samples in the {:?} split",
                self.class_names[c], self.split
            ))),
            None => Ok(()),
        }
    }

    /// Writes the dataset as CSV with the label in the last column, using the
    /// class names as label values.
    pub fn write_csv<W: Write>(&self, writer: W, label_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(label_column);
        w.write_record(&header)?;
        for (row, &y) in self.features.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
            rec.push(self.class_names[y].clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f), label_column)
    }
}

/// Histogram of labels.
pub fn class_counts(ds: &Dataset) -> Vec<usize> {
    let mut counts = vec![0; ds.class_count];
    for &y in &ds.labels {
        counts[y] += 1;
    }
    counts
}

/// Two-moons generator parameters. The default reproduces the 800/200 split
/// with class counts 406/394 and 106/94.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoMoons {
    pub train_counts: [usize; 2],
    pub test_counts: [usize; 2],
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for TwoMoons {
    fn default() -> Self {
        TwoMoons {
            train_counts: [406, 394],
            test_counts: [106, 94],
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl TwoMoons {
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        gen_two_moons(self.train_counts, self.test_counts, self.noise_std, self.seed)
    }
}

/// Point on the noise-free arc of `class` at parameter `t ∈ [0, π]`.
///
/// Class 0 is the upper unit half-circle; class 1 is the reflected arc shifted
/// to `(1 - cos t, 1 - sin t - 0.5)`.
pub fn moon_point(class: usize, t: f64) -> [f64; 2] {
    if class == 0 {
        [t.cos(), t.sin()]
    } else {
        [1.0 - t.cos(), 1.0 - t.sin() - 0.5]
    }
}

/// Distance from `p` to the noise-free arc of `class`.
pub fn distance_to_moon(class: usize, p: [f64; 2]) -> f64 {
    // both arcs are unit half-circles; class 1 opens upwards
    let (cx, cy, upper) = if class == 0 { (0.0, 0.0, true) } else { (1.0, 0.5, false) };
    let (dx, dy) = (p[0] - cx, p[1] - cy);
    let on_side = if upper { dy >= 0.0 } else { dy <= 0.0 };
    if on_side {
        ((dx * dx + dy * dy).sqrt() - 1.0).abs()
    } else {
        let d1 = ((dx - 1.0).powi(2) + dy * dy).sqrt();
        let d2 = ((dx + 1.0).powi(2) + dy * dy).sqrt();
        d1.min(d2)
    }
}

/// Ground-truth label of a plane point: the class of the nearest arc,
/// class 0 on ties.
pub fn two_moons_region(p: [f64; 2]) -> usize {
    if distance_to_moon(1, p) < distance_to_moon(0, p) {
        1
    } else {
        0
    }
}

/// Generates the two interleaving half-circles with Gaussian coordinate noise.
pub fn gen_two_moons(
    train_counts: [usize; 2],
    test_counts: [usize; 2],
    noise_std: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let train = moons_split(train_counts, noise_std, seed, 0, Split::Train)?;
    let test = moons_split(test_counts, noise_std, seed, 1, Split::Test)?;
    Ok((train, test))
}

fn moons_split(counts: [usize; 2], noise: f64, seed: u64, stream: u64, split: Split) -> Result<Dataset> {
    let mut rng = rng::stream(seed, stream);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut samples = Vec::with_capacity(counts[0] + counts[1]);
    for (class, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let t = rng.random_range(0.0..=PI);
            let [x, y] = moon_point(class, t);
            let (nx, ny): (f64, f64) = (normal.sample(&mut rng), normal.sample(&mut rng));
            samples.push((vec![x + noise * nx, y + noise * ny], class));
        }
    }
    samples.shuffle(&mut rng);
    let (features, labels) = samples.into_iter().unzip();
    Dataset::new(
        features,
        labels,
        vec!["0".into(), "1".into()],
        vec!["x".into(), "y".into()],
        split,
    )
}

/// Reads a comma-delimited file with a header row. Every column except
/// `label_column` must be numeric. Labels are mapped by position in
/// `class_names`; when absent, the distinct label values (numeric order if all
/// parse as numbers) define the classes.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    class_names: Option<&[String]>,
    split: Split,
) -> Result<Dataset> {
    let f = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_csv(std::io::BufReader::new(f), label_column, class_names, split)
}

pub fn read_csv<R: Read>(
    reader: R,
    label_column: &str,
    class_names: Option<&[String]>,
    split: Split,
) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = r.headers()?.clone();
    if header.is_empty() {
        return Err(Error::Parse {
            row: 0,
            column: String::new(),
            message: "empty file".into(),
        });
    }
    let label_idx = header.iter().position(|h| h == label_column).ok_or_else(|| Error::Parse {
        row: 0,
        column: label_column.into(),
        message: "label column not found in header".into(),
    })?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let mut values = Vec::with_capacity(feature_names.len());
        for (i, cell) in rec.iter().enumerate() {
            if i == label_idx {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: header[i].to_string(),
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: header[i].to_string(),
                    message: format!("`{cell}` is not finite"),
                });
            }
            values.push(v);
        }
        features.push(values);
        raw_labels.push(rec[label_idx].to_string());
    }
    if features.is_empty() {
        return Err(Error::Parse {
            row: 0,
            column: String::new(),
            message: "file has a header but no rows".into(),
        });
    }

    let names: Vec<String> = match class_names {
        Some(n) => n.to_vec(),
        None => {
            let mut distinct: Vec<String> = raw_labels.clone();
            distinct.sort();
            distinct.dedup();
            if distinct.iter().all(|s| s.parse::<f64>().is_ok()) {
                distinct.sort_by(|a, b| {
                    a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap())
                });
            }
            distinct
        }
    };
    let mut labels = Vec::with_capacity(raw_labels.len());
    for (k, raw) in raw_labels.iter().enumerate() {
        let idx = names
            .iter()
            .position(|n| n == raw)
            .or_else(|| {
                let v: f64 = raw.parse().ok()?;
                names.iter().position(|n| n.parse::<f64>().ok() == Some(v))
            })
            .ok_or_else(|| Error::Parse {
                row: k + 1,
                column: label_column.into(),
                message: format!("unknown class `{raw}`"),
            })?;
        labels.push(idx);
    }
    Dataset::new(features, labels, names, feature_names, split)
}

/// Per-feature z-score parameters fit on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose training standard deviation was zero.
    pub constant_features: Vec<usize>,
}

impl StandardizationParams {
    pub fn fit(train: &Dataset) -> Self {
        let n = train.len() as f64;
        let d = train.dim();
        let mut mean = vec![0.0; d];
        for row in &train.features {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in &train.features {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut constant_features = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let sd = (s / n).sqrt();
                if sd < 1e-12 {
                    constant_features.push(j);
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        StandardizationParams {
            mean,
            std,
            constant_features,
        }
    }

    pub fn transform(&self, ds: &Dataset) -> Dataset {
        let mut out = ds.clone();
        for row in out.features.iter_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Z-scores both splits with statistics fit on `train` only.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, StandardizationParams)> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    if train.dim() != test.dim() {
        return Err(Error::InvalidArgument(format!(
            "train has {} features, test has {}",
            train.dim(),
            test.dim()
        )));
    }
    let params = StandardizationParams::fit(train);
    for &j in &params.constant_features {
        log::warn!("feature `{}` is constant on the training split", train.feature_names[j]);
    }
    Ok((params.transform(train), params.transform(test), params))
}
