//! Inference: geometry to weights, activation, GroupNorm, affine output, softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{weight_matrix_with_dmax, NetworkGeometry, NetworkSpec, WeightMatrix};

/// Stability constant shared by GroupNorm and weight standardization.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    #[default]
    Sigmoid,
    Tanh,
    Relu,
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::Relu => z.max(0.0),
        }
    }

    /// σ'(z). ReLU uses the zero subgradient at the kink.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => {
                let s = self.apply(z);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            ActivationKind::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupNormOutput {
    pub normalized: Vec<f64>,
    /// One entry per group.
    pub mean: Vec<f64>,
    /// Population variance, one entry per group.
    pub var: Vec<f64>,
}

/// Normalizes each consecutive group of `m` activations to zero mean and unit
/// (population) variance.
pub fn groupnorm_forward(a: &[f64], m: usize, eps: f64) -> Result<GroupNormOutput> {
    if m == 0 || !a.len().is_multiple_of(m) {
        return Err(Error::InvalidArgument(format!(
            "group size {m} does not divide width {}",
            a.len()
        )));
    }
    let mut out = GroupNormOutput {
        normalized: vec![0.0; a.len()],
        ..Default::default()
    };
    groupnorm_into(a, m, eps, &mut out.normalized, &mut out.mean, &mut out.var);
    Ok(out)
}

fn groupnorm_into(
    a: &[f64],
    m: usize,
    eps: f64,
    out: &mut [f64],
    means: &mut Vec<f64>,
    vars: &mut Vec<f64>,
) {
    means.clear();
    vars.clear();
    for (group, dst) in a.chunks(m).zip(out.chunks_mut(m)) {
        let (mu, var) = mean_var(group);
        let inv = 1.0 / (var + eps).sqrt();
        for (o, &v) in dst.iter_mut().zip(group) {
            *o = (v - mu) * inv;
        }
        means.push(mu);
        vars.push(var);
    }
}

#[inline]
pub(crate) fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    (mu, var)
}

/// Standardizes every row of a `rows × cols` matrix to zero mean and unit
/// variance. Matrices with a single column are returned unchanged.
pub fn weight_standardize(w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = w.to_vec();
    if cols < 2 {
        return out;
    }
    for r in 0..rows {
        let row = &mut out[r * cols..(r + 1) * cols];
        let (mu, var) = mean_var(row);
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mu) * inv;
        }
    }
    out
}

/// One compiled layer: connection weights into the layer plus its affine
/// parameters.
#[derive(Debug, Clone)]
pub struct Layer {
    pub raw: WeightMatrix,
    /// Weights actually applied (standardized when enabled).
    pub effective: Vec<f64>,
    pub standardized: bool,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// `None` when GroupNorm is disabled.
    pub group_size: Option<usize>,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.raw.cols
    }

    pub fn outputs(&self) -> usize {
        self.raw.rows
    }
}

/// A geometry with all weights materialized, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerTrace {
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    pub a_hat: Vec<f64>,
    pub y: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Cached intermediate values of one forward pass. `layers` covers the hidden
/// layers followed by the output layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub layers: Vec<LayerTrace>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    /// Output of layer `l` in network numbering (0 = input).
    pub fn output_of(&self, l: usize) -> &[f64] {
        if l == 0 {
            &self.input
        } else {
            &self.layers[l - 1].y
        }
    }
}

impl Network {
    pub fn compile(geom: &NetworkGeometry) -> Result<Network> {
        Self::compile_with_dmax(geom, None)
    }

    /// Compiles with the inverse-mapping `dmax` of every layer pair pinned.
    pub fn compile_with_dmax(geom: &NetworkGeometry, dmax: Option<&[f64]>) -> Result<Network> {
        let spec = &geom.spec;
        if let Some(d) = dmax {
            if d.len() + 1 != geom.layers.len() {
                return Err(Error::InvalidArgument("one dmax per layer pair expected".into()));
            }
        }
        let mut layers = Vec::with_capacity(geom.layers.len() - 1);
        for l in 1..geom.layers.len() {
            let raw = weight_matrix_with_dmax(
                &geom.layers[l - 1],
                &geom.layers[l],
                spec.mapping,
                dmax.map(|d| d[l - 1]),
            )?;
            let standardized = spec.weight_standardization && raw.cols >= 2;
            let effective = if standardized {
                weight_standardize(&raw.weights, raw.rows, raw.cols)
            } else {
                raw.weights.clone()
            };
            let width = raw.rows;
            layers.push(Layer {
                raw,
                effective,
                standardized,
                gamma: geom.norm[l].iter().map(|p| p.gamma).collect(),
                beta: geom.norm[l].iter().map(|p| p.beta).collect(),
                group_size: spec.groupnorm.then(|| spec.group_size_for(width)),
            });
        }
        Ok(Network {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        let mut trace = ForwardTrace::default();
        self.forward_into(x, &mut trace)?;
        Ok(trace)
    }

    /// Forward pass reusing the buffers of `trace`.
    pub fn forward_into(&self, x: &[f64], trace: &mut ForwardTrace) -> Result<()> {
        self.check_input(x)?;
        trace.input.clear();
        trace.input.extend_from_slice(x);
        trace.layers.resize_with(self.layers.len(), LayerTrace::default);
        let act = self.spec.activation;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, rest) = trace.layers.split_at_mut(l);
            let prev: &[f64] = if l == 0 { &trace.input } else { &before[l - 1].y };
            let t = &mut rest[0];
            let n = layer.outputs();
            let k = layer.inputs();
            t.z.clear();
            for row in layer.effective.chunks(k) {
                t.z.push(dot(row, prev));
            }
            t.a.clear();
            t.a.extend(t.z.iter().map(|&z| act.apply(z)));
            t.a_hat.resize(n, 0.0);
            match layer.group_size {
                Some(m) => groupnorm_into(&t.a, m, NORM_EPS, &mut t.a_hat, &mut t.mean, &mut t.var),
                None => {
                    t.a_hat.copy_from_slice(&t.a);
                    t.mean.clear();
                    t.var.clear();
                }
            }
            t.y.clear();
            t.y.extend(
                t.a_hat
                    .iter()
                    .zip(layer.gamma.iter().zip(&layer.beta))
                    .map(|(&ah, (&g, &b))| ah * g + b),
            );
        }
        softmax_into(&trace.layers.last().expect("at least one layer").y, &mut trace.probs);
        Ok(())
    }

    /// Forward pass in which each neuron's GroupNorm statistics see its own
    /// live activation but the other group members frozen at `context`.
    ///
    /// At the geometry that produced `context` this agrees with
    /// [`Network::forward`]; its derivative is the diagonal-only GroupNorm
    /// backward.
    pub fn forward_frozen_context(&self, x: &[f64], context: &ForwardTrace) -> Result<ForwardTrace> {
        self.check_input(x)?;
        if context.layers.len() != self.layers.len() {
            return Err(Error::InvalidArgument("context trace does not match network".into()));
        }
        let act = self.spec.activation;
        let mut trace = ForwardTrace {
            input: x.to_vec(),
            ..Default::default()
        };
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = trace.output_of(l).to_vec();
            let z: Vec<f64> = layer.effective.chunks(layer.inputs()).map(|r| dot(r, &prev)).collect();
            let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            let a_hat = match layer.group_size {
                Some(m) => {
                    let frozen = &context.layers[l].a;
                    let mut out = vec![0.0; a.len()];
                    let mut group = vec![0.0; m];
                    for (i, o) in out.iter_mut().enumerate() {
                        let start = i - i % m;
                        group.copy_from_slice(&frozen[start..start + m]);
                        group[i - start] = a[i];
                        let (mu, var) = mean_var(&group);
                        *o = (a[i] - mu) / (var + NORM_EPS).sqrt();
                    }
                    out
                }
                None => a.clone(),
            };
            let y = a_hat
                .iter()
                .zip(layer.gamma.iter().zip(&layer.beta))
                .map(|(&ah, (&g, &b))| ah * g + b)
                .collect();
            trace.layers.push(LayerTrace {
                z,
                a,
                a_hat,
                y,
                mean: context.layers[l].mean.clone(),
                var: context.layers[l].var.clone(),
            });
        }
        softmax_into(&trace.layers.last().expect("at least one layer").y, &mut trace.probs);
        Ok(trace)
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.probs)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.probabilities(x)?))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::InvalidArgument(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    softmax_into(v, &mut out);
    out
}

fn softmax_into(v: &[f64], out: &mut Vec<f64>) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(v.iter().map(|&x| (x - max).exp()));
    let sum: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= sum;
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities and the trace of a single forward pass.
pub fn forward(geom: &NetworkGeometry, x: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
    let trace = Network::compile(geom)?.forward(x)?;
    Ok((trace.probs.clone(), trace))
}

pub fn predict(geom: &NetworkGeometry, x: &[f64]) -> Result<usize> {
    Network::compile(geom)?.predict(x)
}
