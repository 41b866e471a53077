//! Spatial backpropagation.
//!
//! One iteration runs a forward pass over the batch, backpropagates the
//! weighted cross-entropy through softmax, the affine output, GroupNorm and
//! the activation to obtain `dL/dw` for every connection, converts those to
//! `dL/dd` through the mapping derivative, and projects each `dL/dd` onto the
//! axon-soma direction of its connection. Each endpoint moves by the average
//! of its per-connection displacements. Somas move on even iterations, axon
//! terminals on odd ones, and every phase recomputes the gradients from the
//! current geometry.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{balanced_accuracy, evaluate, ConfusionMatrix};
use crate::forward::{argmax, mean_var, ForwardTrace, Layer, LayerTrace, Network, NORM_EPS};
use crate::geometry::{
    InitScheme, MappingKind, NetworkGeometry, NetworkSpec, Point3, EPS_DIST,
};
use crate::loss::{network_penalty, sample_loss, ClassWeighting, ClassWeights};
use crate::rng;

/// Loss above which a run is declared diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

const CHUNK: usize = 64;

/// How `dw/dd` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Derivative of the configured mapping.
    Exact,
    /// `-1/dmax` regardless of the mapping, i.e. the inverse mapping's slope.
    LinearSurrogate,
}

impl DerivativeMode {
    /// Surrogate for the Gaussian mapping, exact for the (already linear)
    /// inverse mapping.
    pub fn default_for(mapping: MappingKind) -> Self {
        match mapping {
            MappingKind::Gaussian { .. } => DerivativeMode::LinearSurrogate,
            MappingKind::Inverse => DerivativeMode::Exact,
        }
    }
}

/// GroupNorm backward convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormBackward {
    /// Only `∂â(i)/∂a(i)`; cross terms within a group are dropped.
    #[default]
    Diagonal,
    /// Full within-group Jacobian.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` picks [`DerivativeMode::default_for`] the mapping.
    pub derivative_mode: Option<DerivativeMode>,
    pub norm_backward: NormBackward,
    /// `None` is full-batch.
    pub batch_size: Option<usize>,
    pub class_weighting: ClassWeighting,
    pub rng_seed: u64,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            learning_rate: 0.1,
            epochs: 250,
            derivative_mode: None,
            norm_backward: NormBackward::Diagonal,
            batch_size: None,
            class_weighting: ClassWeighting::InverseFrequency,
            rng_seed: 0,
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfiguration(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfiguration("epochs must be >= 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidConfiguration("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Gradient of the loss for one compiled layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerGradient {
    /// `dL/dw` for the mapped (raw) weights, row-major `to × from`.
    pub weights: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerGradient {
    fn zeros(layer: &Layer) -> Self {
        LayerGradient {
            weights: vec![0.0; layer.raw.weights.len()],
            gamma: vec![0.0; layer.outputs()],
            beta: vec![0.0; layer.outputs()],
        }
    }

    fn add(&mut self, o: &LayerGradient) {
        for (a, b) in self.weights.iter_mut().zip(&o.weights) {
            *a += b;
        }
        for (a, b) in self.gamma.iter_mut().zip(&o.gamma) {
            *a += b;
        }
        for (a, b) in self.beta.iter_mut().zip(&o.beta) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros(net: &Network) -> Self {
        Gradients {
            layers: net.layers.iter().map(LayerGradient::zeros).collect(),
        }
    }

    fn add(&mut self, o: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&o.layers) {
            a.add(b);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().chain(&l.gamma).chain(&l.beta).all(|&v| v == 0.0)
        })
    }
}

/// `e = dC/dŷ` of the output layer for softmax followed by the weighted
/// cross-entropy of one sample, `scale = β_y / N`.
pub fn output_error(probs: &[f64], label: usize, scale: f64) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(c, &p)| scale * (p - if c == label { 1.0 } else { 0.0 }))
        .collect()
}

/// `∂â(i)/∂a(i)` for every neuron of a normalized layer, written out as the
/// quotient-rule expression
///
/// `[(1 - 1/m)·s - (a_i - μ)·(1/(2s))·((2/m)(1 - 1/m)(a_i - μ) - (2/m)·Σ_{j≠i} (a_j - μ)/m)] / s²`
///
/// with `s = √(δ² + ε)` and the sum running over the other members of the group.
pub fn groupnorm_backward_diag(a: &[f64], mean: &[f64], var: &[f64], eps: f64, m: usize) -> Vec<f64> {
    let mf = m as f64;
    let mut out = Vec::with_capacity(a.len());
    for (g, group) in a.chunks(m).enumerate() {
        let mu = mean[g];
        let s2 = var[g] + eps;
        let s = s2.sqrt();
        for (i, &ai) in group.iter().enumerate() {
            let di = ai - mu;
            let others: f64 = group
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &aj)| (aj - mu) / mf)
                .sum();
            let dvar = (2.0 / mf) * (1.0 - 1.0 / mf) * di - (2.0 / mf) * others;
            let dsqrt = dvar / (2.0 * s);
            out.push(((1.0 - 1.0 / mf) * s - di * dsqrt) / s2);
        }
    }
    out
}

/// Backward pass of one layer given `e = dC/dŷ` for its outputs.
///
/// Accumulates into `grad` (with respect to the *applied* weights) and returns
/// `dC/dŷ` of the layer below.
fn backward_layer(
    layer: &Layer,
    trace: &LayerTrace,
    input: &[f64],
    e: &[f64],
    activation: crate::forward::ActivationKind,
    mode: NormBackward,
    grad: &mut LayerGradient,
) -> Vec<f64> {
    let n = layer.outputs();
    let k = layer.inputs();
    let mut d_ahat = vec![0.0; n];
    for i in 0..n {
        grad.beta[i] += e[i];
        grad.gamma[i] += e[i] * trace.a_hat[i];
        d_ahat[i] = e[i] * layer.gamma[i];
    }
    let d_a = match layer.group_size {
        None => d_ahat,
        Some(m) => match mode {
            NormBackward::Diagonal => {
                let diag = groupnorm_backward_diag(&trace.a, &trace.mean, &trace.var, NORM_EPS, m);
                d_ahat.iter().zip(&diag).map(|(g, d)| g * d).collect()
            }
            NormBackward::Full => {
                let mut out = vec![0.0; n];
                for (g, (dst, (dh, ah))) in out
                    .chunks_mut(m)
                    .zip(d_ahat.chunks(m).zip(trace.a_hat.chunks(m)))
                    .enumerate()
                {
                    let inv_s = 1.0 / (trace.var[g] + NORM_EPS).sqrt();
                    let mf = m as f64;
                    let mean_dh = dh.iter().sum::<f64>() / mf;
                    let mean_dh_ah = dh.iter().zip(ah).map(|(x, y)| x * y).sum::<f64>() / mf;
                    for (o, (&x, &y)) in dst.iter_mut().zip(dh.iter().zip(ah)) {
                        *o = inv_s * (x - mean_dh - y * mean_dh_ah);
                    }
                }
                out
            }
        },
    };
    let mut upstream = vec![0.0; k];
    for j in 0..n {
        let dz = d_a[j] * activation.derivative(trace.z[j]);
        if dz == 0.0 {
            continue;
        }
        let row = &layer.effective[j * k..(j + 1) * k];
        let grow = &mut grad.weights[j * k..(j + 1) * k];
        for i in 0..k {
            grow[i] += dz * input[i];
            upstream[i] += row[i] * dz;
        }
    }
    upstream
}

/// Output-layer backward for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputBackward {
    /// `e = dC/dŷ` per output neuron.
    pub error: Vec<f64>,
    /// Gradient with respect to the applied output weights, γ and β.
    pub gradient: LayerGradient,
    /// `dC/dŷ` of the last hidden layer.
    pub upstream: Vec<f64>,
}

/// `e`, `∂C/∂β = e`, `∂C/∂γ = e·â` and `∂C/∂w` of the output layer.
pub fn backward_output(
    net: &Network,
    trace: &ForwardTrace,
    label: usize,
    weight_scale: f64,
    mode: NormBackward,
) -> Result<OutputBackward> {
    check_trace(net, trace)?;
    let last = net.layers.len() - 1;
    let layer = &net.layers[last];
    let error = output_error(&trace.probs, label, weight_scale);
    let mut gradient = LayerGradient::zeros(layer);
    let upstream = backward_layer(
        layer,
        &trace.layers[last],
        trace.output_of(last),
        &error,
        net.spec.activation,
        mode,
        &mut gradient,
    );
    Ok(OutputBackward {
        error,
        gradient,
        upstream,
    })
}

/// Propagates `upstream` (dC/dŷ of the last hidden layer) down through every
/// hidden layer, accumulating into `grads.layers[..hidden]`.
pub fn backward_hidden(
    net: &Network,
    trace: &ForwardTrace,
    upstream: Vec<f64>,
    mode: NormBackward,
    grads: &mut Gradients,
) -> Result<()> {
    check_trace(net, trace)?;
    let mut e = upstream;
    for l in (0..net.layers.len() - 1).rev() {
        e = backward_layer(
            &net.layers[l],
            &trace.layers[l],
            trace.output_of(l),
            &e,
            net.spec.activation,
            mode,
            &mut grads.layers[l],
        );
    }
    Ok(())
}

fn check_trace(net: &Network, trace: &ForwardTrace) -> Result<()> {
    if trace.layers.len() != net.layers.len() || trace.probs.len() != net.spec.output_dim {
        return Err(Error::InvalidState("no forward trace for this network".into()));
    }
    Ok(())
}

/// Adds one sample's gradient (with respect to applied weights) into `acc`.
pub fn backward_sample(
    net: &Network,
    trace: &ForwardTrace,
    label: usize,
    weight_scale: f64,
    mode: NormBackward,
    acc: &mut Gradients,
) -> Result<()> {
    let out = backward_output(net, trace, label, weight_scale, mode)?;
    let last = net.layers.len() - 1;
    acc.layers[last].add(&out.gradient);
    backward_hidden(net, trace, out.upstream, mode, acc)
}

/// Loss, predictions and raw-weight gradients of a batch.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub gradients: Gradients,
}

/// Mean weighted cross-entropy plus the L1/L2 penalty over `indices`, and its
/// gradient with respect to every mapped weight, γ and β.
///
/// Samples are processed in fixed-size chunks whose partial sums are reduced in
/// order, so the result does not depend on the thread count.
pub fn batch_gradients(
    net: &Network,
    ds: &Dataset,
    indices: &[usize],
    weights: &ClassWeights,
    mode: NormBackward,
) -> Result<BatchGradient> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = indices.len() as f64;
    let partials: Vec<Result<(f64, Vec<usize>, Gradients)>> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Gradients::zeros(net);
            let mut trace = ForwardTrace::default();
            let mut loss = 0.0;
            let mut preds = Vec::with_capacity(chunk.len());
            for &k in chunk {
                let y = ds.labels[k];
                net.forward_into(&ds.features[k], &mut trace)?;
                loss += sample_loss(&trace.probs, y, weights);
                preds.push(argmax(&trace.probs));
                backward_sample(net, &trace, y, weights.get(y) / n, mode, &mut acc)?;
            }
            Ok((loss, preds, acc))
        })
        .collect();
    let mut total = 0.0;
    let mut predictions = Vec::with_capacity(indices.len());
    let mut gradients = Gradients::zeros(net);
    for part in partials {
        let (loss, preds, g) = part?;
        total += loss;
        predictions.extend(preds);
        gradients.add(&g);
    }
    let (l1, l2) = (net.spec.l1, net.spec.l2);
    let loss = total / n + network_penalty(net, l1, l2);
    for (layer, g) in net.layers.iter().zip(gradients.layers.iter_mut()) {
        if layer.standardized {
            g.weights = standardization_backward(&layer.raw.weights, &layer.effective, &g.weights, layer.inputs());
        }
        if l1 != 0.0 || l2 != 0.0 {
            for (gw, &w) in g.weights.iter_mut().zip(&layer.raw.weights) {
                *gw += l1 * sign(w) + 2.0 * l2 * w;
            }
        }
    }
    Ok(BatchGradient {
        loss,
        predictions,
        gradients,
    })
}

fn sign(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pulls gradients with respect to row-standardized weights back to the raw
/// weights.
fn standardization_backward(raw: &[f64], standardized: &[f64], grad: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; grad.len()];
    let m = cols as f64;
    for ((o, g), (r, s)) in out
        .chunks_mut(cols)
        .zip(grad.chunks(cols))
        .zip(raw.chunks(cols).zip(standardized.chunks(cols)))
    {
        let (_, var) = mean_var(r);
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        let mean_g = g.iter().sum::<f64>() / m;
        let mean_gs = g.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() / m;
        for ((oi, &gi), &si) in o.iter_mut().zip(g).zip(s) {
            *oi = inv * (gi - mean_g - si * mean_gs);
        }
    }
    out
}

/// `dL/dd` for every connection, one `to × from` matrix per layer pair.
///
/// The inverse mapping's `dmax` is treated as a constant.
pub fn distance_gradients(net: &Network, grads: &Gradients, mode: DerivativeMode) -> Vec<Vec<f64>> {
    let mapping = net.spec.mapping;
    net.layers
        .iter()
        .zip(&grads.layers)
        .map(|(layer, g)| {
            let dmax = layer.raw.dmax;
            layer
                .raw
                .distances
                .iter()
                .zip(&g.weights)
                .map(|(&d, &gw)| {
                    let dw_dd = match mode {
                        DerivativeMode::Exact => mapping.derivative(d, dmax),
                        DerivativeMode::LinearSurrogate => -1.0 / dmax,
                    };
                    gw * dw_dd
                })
                .collect()
        })
        .collect()
}

/// Accumulated per-connection vectors for one soma or axon terminal.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Endpoint {
    pub sum: Point3,
    /// Number of incident connections.
    pub count: usize,
}

impl Endpoint {
    pub fn mean(&self) -> Point3 {
        if self.count == 0 {
            Point3::ZERO
        } else {
            self.sum * (1.0 / self.count as f64)
        }
    }
}

/// Per-endpoint sums of per-connection vectors. Indexed by network layer;
/// `soma[0]` and `axon[last]` are empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DisplacementSet {
    pub soma: Vec<Vec<Endpoint>>,
    pub axon: Vec<Vec<Endpoint>>,
    /// Connections whose endpoints coincide; they contribute nothing.
    pub degenerate: usize,
}

/// Sums `scale · dL/dd · ∂d/∂p` over the connections of every endpoint.
fn accumulate(geom: &NetworkGeometry, dgrads: &[Vec<f64>], scale: f64) -> DisplacementSet {
    let mut set = DisplacementSet {
        soma: geom.layers.iter().enumerate().map(|(l, layer)| {
            if l == 0 { Vec::new() } else { vec![Endpoint::default(); layer.len()] }
        }).collect(),
        axon: geom.layers.iter().enumerate().map(|(l, layer)| {
            if l + 1 == geom.layers.len() { Vec::new() } else { vec![Endpoint::default(); layer.len()] }
        }).collect(),
        degenerate: 0,
    };
    for l in 1..geom.layers.len() {
        let from = &geom.layers[l - 1];
        let cols = from.len();
        for (j, dst) in geom.layers[l].iter().enumerate() {
            let soma = dst.soma.expect("validated geometry");
            for (i, src) in from.iter().enumerate() {
                let axon = src.axon.expect("validated geometry");
                set.soma[l][j].count += 1;
                set.axon[l - 1][i].count += 1;
                let diff = soma - axon;
                let d = diff.norm();
                if d < EPS_DIST {
                    set.degenerate += 1;
                    continue;
                }
                // ∂d/∂soma = diff / d, ∂d/∂axon = -diff / d
                let v = diff * (scale * dgrads[l - 1][j * cols + i] / d);
                set.soma[l][j].sum += v;
                set.axon[l - 1][i].sum += v * -1.0;
            }
        }
    }
    set
}

/// Per-coordinate loss gradient: the *sum* of per-connection contributions.
pub fn coordinate_gradients(geom: &NetworkGeometry, dgrads: &[Vec<f64>]) -> DisplacementSet {
    accumulate(geom, dgrads, 1.0)
}

/// Per-connection displacements `-lr · dL/dd · ∂d/∂p`; apply [`Endpoint::mean`].
pub fn displacement_vectors(geom: &NetworkGeometry, dgrads: &[Vec<f64>], lr: f64) -> DisplacementSet {
    accumulate(geom, dgrads, -lr)
}

/// Which endpoints an iteration moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Soma,
    Axon,
}

impl Phase {
    pub fn of_iteration(t: usize) -> Phase {
        if t.is_multiple_of(2) {
            Phase::Soma
        } else {
            Phase::Axon
        }
    }
}

/// Moves somas (even `t`) or axon terminals (odd `t`) by their averaged
/// displacement and takes a plain gradient step on every γ and β.
pub fn apply_phase(
    geom: &mut NetworkGeometry,
    displacements: &DisplacementSet,
    grads: &Gradients,
    lr: f64,
    t: usize,
) -> Phase {
    let phase = Phase::of_iteration(t);
    for (l, layer) in geom.layers.iter_mut().enumerate() {
        for (i, n) in layer.iter_mut().enumerate() {
            match phase {
                Phase::Soma => {
                    if let Some(p) = n.soma.as_mut() {
                        *p += displacements.soma[l][i].mean();
                    }
                }
                Phase::Axon => {
                    if let Some(p) = n.axon.as_mut() {
                        *p += displacements.axon[l][i].mean();
                    }
                }
            }
        }
    }
    for (l, g) in grads.layers.iter().enumerate() {
        for (p, (dg, db)) in geom.norm[l + 1].iter_mut().zip(g.gamma.iter().zip(&g.beta)) {
            p.gamma -= lr * dg;
            p.beta -= lr * db;
        }
    }
    phase
}

/// One row of the per-epoch training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    /// Phase of the epoch's last iteration.
    pub phase: Phase,
    /// Mean batch loss seen during the epoch, before each update.
    pub train_loss: f64,
    /// Training BAcc of the predictions made during the epoch's forward passes.
    pub train_bacc: f64,
    /// Test BAcc after the epoch's updates, when a test split is supplied.
    pub test_bacc: Option<f64>,
}

/// Stateful trainer: owns the geometry and the iteration counter.
pub struct GdTrainer<'a> {
    geometry: NetworkGeometry,
    config: GdConfig,
    train: &'a Dataset,
    weights: ClassWeights,
    mode: DerivativeMode,
    iteration: usize,
    backward_passes: usize,
}

impl<'a> GdTrainer<'a> {
    pub fn new(spec: &NetworkSpec, train: &'a Dataset, config: &GdConfig) -> Result<Self> {
        if spec.init == InitScheme::Singularity {
            return Err(Error::InvalidConfiguration(
                "singularity initialization has zero spatial gradients; use it with the genetic algorithm".into(),
            ));
        }
        let geometry = crate::geometry::init_geometry(spec, spec.init, config.rng_seed)?;
        Self::from_geometry(geometry, train, config)
    }

    pub fn from_geometry(geometry: NetworkGeometry, train: &'a Dataset, config: &GdConfig) -> Result<Self> {
        config.validate()?;
        geometry.validate()?;
        let spec = &geometry.spec;
        check_dataset(spec, train)?;
        let weights = config.class_weighting.weights_for(train)?;
        let mode = config.derivative_mode.unwrap_or_else(|| DerivativeMode::default_for(spec.mapping));
        Ok(GdTrainer {
            geometry,
            config: config.clone(),
            train,
            weights,
            mode,
            iteration: 0,
            backward_passes: 0,
        })
    }

    pub fn geometry(&self) -> &NetworkGeometry {
        &self.geometry
    }

    pub fn into_geometry(self) -> NetworkGeometry {
        self.geometry
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn backward_passes(&self) -> usize {
        self.backward_passes
    }

    /// One forward/backward/update iteration on the given sample indices.
    pub fn step(&mut self, batch: &[usize]) -> Result<BatchGradient> {
        let net = Network::compile(&self.geometry)?;
        let bg = batch_gradients(&net, self.train, batch, &self.weights, self.config.norm_backward)?;
        self.backward_passes += 1;
        if !bg.loss.is_finite() || bg.loss > DIVERGENCE_LOSS {
            return Err(Error::Diverged {
                iteration: self.iteration,
                loss: bg.loss,
            });
        }
        let dgrads = distance_gradients(&net, &bg.gradients, self.mode);
        let disp = displacement_vectors(&self.geometry, &dgrads, self.config.learning_rate);
        apply_phase(&mut self.geometry, &disp, &bg.gradients, self.config.learning_rate, self.iteration);
        self.iteration += 1;
        if self.geometry.validate().is_err() {
            return Err(Error::Diverged {
                iteration: self.iteration - 1,
                loss: f64::NAN,
            });
        }
        Ok(bg)
    }

    /// One pass over the training split (one iteration when full-batch).
    pub fn epoch(&mut self, epoch: usize) -> Result<EpochRow> {
        let n = self.train.len();
        let mut order: Vec<usize> = (0..n).collect();
        let batch = match self.config.batch_size {
            Some(b) if b < n => {
                order.shuffle(&mut rng::stream(self.config.rng_seed, epoch as u64 + 1));
                b
            }
            _ => n,
        };
        let mut loss = 0.0;
        let mut batches = 0;
        let mut truth = Vec::with_capacity(n);
        let mut preds = Vec::with_capacity(n);
        let mut phase = Phase::of_iteration(self.iteration);
        for chunk in order.chunks(batch) {
            phase = Phase::of_iteration(self.iteration);
            let bg = self.step(chunk)?;
            loss += bg.loss;
            batches += 1;
            truth.extend(chunk.iter().map(|&k| self.train.labels[k]));
            preds.extend(bg.predictions);
        }
        let cm = ConfusionMatrix::from_predictions(&truth, &preds, self.train.class_count)?;
        Ok(EpochRow {
            epoch,
            phase,
            train_loss: loss / batches as f64,
            train_bacc: balanced_accuracy(&cm).unwrap_or(f64::NAN),
            test_bacc: None,
        })
    }
}

pub(crate) fn check_dataset(spec: &NetworkSpec, ds: &Dataset) -> Result<()> {
    if ds.dim() != spec.input_dim {
        return Err(Error::InvalidConfiguration(format!(
            "dataset has {} features, network expects {}",
            ds.dim(),
            spec.input_dim
        )));
    }
    if ds.class_count != spec.output_dim {
        return Err(Error::InvalidConfiguration(format!(
            "dataset has {} classes, network has {} outputs",
            ds.class_count, spec.output_dim
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GdOutcome {
    pub geometry: NetworkGeometry,
    pub curve: Vec<EpochRow>,
    pub backward_passes: usize,
}

/// Trains from the `NetworkSpec` initialization for `config.epochs` epochs.
pub fn train_gd(
    spec: &NetworkSpec,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &GdConfig,
) -> Result<GdOutcome> {
    let mut trainer = GdTrainer::new(spec, train, config)?;
    if let Some(t) = test {
        check_dataset(spec, t)?;
    }
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut row = trainer.epoch(epoch)?;
        if let Some(t) = test {
            let net = Network::compile(trainer.geometry())?;
            row.test_bacc = Some(evaluate(&net, t)?.bacc);
        }
        curve.push(row);
    }
    Ok(GdOutcome {
        backward_passes: trainer.backward_passes(),
        geometry: trainer.into_geometry(),
        curve,
    })
}
