//! Weighted cross-entropy and weight penalties shared by both optimizers.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::forward::Network;
use crate::geometry::NetworkGeometry;

/// Probabilities are floored here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-class loss weights β_c, all strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "class weights must be positive and finite, got {weights:?}"
            )));
        }
        Ok(ClassWeights(weights))
    }

    pub fn uniform(classes: usize) -> Self {
        ClassWeights(vec![1.0; classes])
    }

    /// Inverse-frequency weights `N / (M · N_c)`.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        class_weights_from_counts(counts)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }
}

/// How β_c is derived from a training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    #[default]
    InverseFrequency,
    Uniform,
}

impl ClassWeighting {
    pub fn weights_for(self, train: &Dataset) -> Result<ClassWeights> {
        match self {
            ClassWeighting::InverseFrequency => class_weights_from_counts(&train.class_counts()),
            ClassWeighting::Uniform => Ok(ClassWeights::uniform(train.class_count)),
        }
    }
}

pub fn class_weights_from_counts(counts: &[usize]) -> Result<ClassWeights> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("no classes".into()));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!("class {c} has no samples")));
    }
    let total: usize = counts.iter().sum();
    let m = counts.len() as f64;
    Ok(ClassWeights(
        counts.iter().map(|&n| total as f64 / (m * n as f64)).collect(),
    ))
}

/// Loss contribution of one sample: `-β_y · log(max(p_y, floor))`.
#[inline]
pub fn sample_loss(probs: &[f64], label: usize, weights: &ClassWeights) -> f64 {
    -weights.get(label) * probs[label].max(PROB_FLOOR).ln()
}

/// Mean weighted cross-entropy over a batch of probability rows.
pub fn weighted_cross_entropy<P: AsRef<[f64]>>(
    probs: &[P],
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} probability rows but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &y) in probs.iter().zip(labels) {
        let row = row.as_ref();
        if y >= row.len() || y >= weights.len() {
            return Err(Error::InvalidArgument(format!("label {y} out of range")));
        }
        total += sample_loss(row, y, weights);
    }
    Ok(total / probs.len() as f64)
}

/// `λ1 Σ|w| + λ2 Σw²` over the mapped connection weights.
pub fn l1_l2_penalty(geom: &NetworkGeometry, l1: f64, l2: f64) -> Result<f64> {
    Ok(network_penalty(&Network::compile(geom)?, l1, l2))
}

pub fn network_penalty(net: &Network, l1: f64, l2: f64) -> f64 {
    if l1 == 0.0 && l2 == 0.0 {
        return 0.0;
    }
    net.layers
        .iter()
        .map(|l| weight_penalty(&l.raw.weights, l1, l2))
        .sum()
}

pub fn weight_penalty(weights: &[f64], l1: f64, l2: f64) -> f64 {
    weights.iter().map(|&w| l1 * w.abs() + l2 * w * w).sum()
}
