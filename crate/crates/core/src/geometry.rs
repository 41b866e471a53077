//! Spatial representation of a network and the distance-to-weight encoding.

use std::io::{Read, Write};
use std::ops::{Add, AddAssign, Mul, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ActivationKind;
use crate::rng;

/// Fallback maximum distance when every point of a layer pair coincides.
pub const EPS_DIST: f64 = 1e-12;

/// Default Gaussian mapping width in unit-cube coordinates.
pub const DEFAULT_SIGMA: f64 = 0.5;

/// Centre of the unit cube, used by onion and singularity initialization.
pub const CENTER: Point3 = Point3 {
    x: 0.5,
    y: 0.5,
    z: 0.5,
};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Point3::new(v[0], v[1], v[2])
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Point3 {
    fn add_assign(&mut self, o: Point3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Euclidean distance between two points.
pub fn distance(a: Point3, b: Point3) -> f64 {
    (a - b).norm()
}

/// `1 - d / dmax`, deliberately not clamped to `[0, 1]`.
pub fn map_inverse(d: f64, dmax: f64) -> Result<f64> {
    if !(dmax > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "inverse mapping needs dmax > 0, got {dmax}"
        )));
    }
    Ok(1.0 - d / dmax)
}

/// `exp(-d² / 2σ²)`.
pub fn map_gaussian(d: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gaussian mapping needs sigma > 0, got {sigma}"
        )));
    }
    Ok(gaussian(d, sigma))
}

#[inline]
fn gaussian(d: f64, sigma: f64) -> f64 {
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

/// Distance-to-weight mapping function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MappingKind {
    Gaussian { sigma: f64 },
    Inverse,
}

impl Default for MappingKind {
    fn default() -> Self {
        MappingKind::Gaussian {
            sigma: DEFAULT_SIGMA,
        }
    }
}

impl MappingKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MappingKind::Gaussian { sigma } if !(sigma > 0.0) || !sigma.is_finite() => Err(
                Error::InvalidConfiguration(format!("gaussian sigma must be > 0, got {sigma}")),
            ),
            _ => Ok(()),
        }
    }

    /// Weight for distance `d`; `dmax` is only consulted by the inverse mapping
    /// and must already be positive.
    #[inline]
    pub fn weight(&self, d: f64, dmax: f64) -> f64 {
        match *self {
            MappingKind::Gaussian { sigma } => gaussian(d, sigma),
            MappingKind::Inverse => 1.0 - d / dmax,
        }
    }

    /// Exact `dw/dd`, with `dmax` held constant.
    #[inline]
    pub fn derivative(&self, d: f64, dmax: f64) -> f64 {
        match *self {
            MappingKind::Gaussian { sigma } => -(d / (sigma * sigma)) * gaussian(d, sigma),
            MappingKind::Inverse => -1.0 / dmax,
        }
    }

    pub fn needs_dmax(&self) -> bool {
        matches!(self, MappingKind::Inverse)
    }
}

/// Initial placement of somas and axon terminals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// i.i.d. uniform in the unit cube.
    #[default]
    Random,
    /// One Fibonacci sphere per layer, nested around the cube centre.
    Onion,
    /// Every point at the cube centre. Only meaningful for population search.
    Singularity,
}

/// Untrained architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub mapping: MappingKind,
    pub activation: ActivationKind,
    pub init: InitScheme,
    pub groupnorm: bool,
    /// `None` normalizes each layer as a single group.
    pub group_size: Option<usize>,
    pub weight_standardization: bool,
    pub l1: f64,
    pub l2: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            input_dim: 2,
            hidden_widths: vec![16, 16],
            output_dim: 2,
            mapping: MappingKind::default(),
            activation: ActivationKind::default(),
            init: InitScheme::default(),
            groupnorm: true,
            group_size: None,
            weight_standardization: false,
            l1: 0.0,
            l2: 0.0,
        }
    }
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize) -> Self {
        NetworkSpec {
            input_dim,
            hidden_widths,
            output_dim,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfiguration(m));
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        if self.hidden_widths.is_empty() {
            return bad("at least one hidden layer is required".into());
        }
        if self.hidden_widths.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if self.output_dim < 2 {
            return bad(format!("output_dim must be >= 2, got {}", self.output_dim));
        }
        if !(self.l1 >= 0.0) || !(self.l2 >= 0.0) {
            return bad("l1 and l2 must be nonnegative".into());
        }
        self.mapping.validate()?;
        if self.groupnorm {
            if let Some(m) = self.group_size {
                if m == 0 {
                    return bad("group size must be positive".into());
                }
                for &w in self.layer_widths().iter().skip(1) {
                    if m < w && w % m != 0 {
                        return bad(format!("group size {m} does not divide layer width {w}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Widths of all layers, input and output included.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.hidden_widths.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_widths);
        widths.push(self.output_dim);
        widths
    }

    pub fn layer_count(&self) -> usize {
        self.hidden_widths.len() + 2
    }

    /// Effective GroupNorm group size for a layer of the given width.
    pub fn group_size_for(&self, width: usize) -> usize {
        match self.group_size {
            Some(m) if m < width => m,
            _ => width,
        }
    }

    /// Neurons carrying (γ, β): every hidden and output neuron.
    pub fn normalized_neuron_count(&self) -> usize {
        self.hidden_widths.iter().sum::<usize>() + self.output_dim
    }

    pub fn soma_count(&self) -> usize {
        self.normalized_neuron_count()
    }

    pub fn axon_count(&self) -> usize {
        self.input_dim + self.hidden_widths.iter().sum::<usize>()
    }

    pub fn connection_count(&self) -> usize {
        self.layer_widths().windows(2).map(|w| w[0] * w[1]).sum()
    }
}

/// Number of spatial parameters: three coordinates per soma and per axon terminal.
///
/// Input neurons only carry an axon terminal and output neurons only a soma.
pub fn parameter_count(spec: &NetworkSpec) -> Result<usize> {
    spec.validate()?;
    Ok(3 * (spec.soma_count() + spec.axon_count()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NeuronGeometry {
    pub soma: Option<Point3>,
    pub axon: Option<Point3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub gamma: f64,
    pub beta: f64,
}

impl Default for NormParams {
    fn default() -> Self {
        NormParams {
            gamma: 1.0,
            beta: 0.0,
        }
    }
}

/// Positions of every soma and axon terminal plus the per-neuron affine
/// parameters. `norm[0]` (the input layer) is always empty.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGeometry {
    pub spec: NetworkSpec,
    pub layers: Vec<Vec<NeuronGeometry>>,
    pub norm: Vec<Vec<NormParams>>,
}

/// Connection weights between two consecutive layers, rows = receiving neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub distances: Vec<f64>,
    /// Maximum distance used by the inverse mapping (after fallback).
    pub dmax: f64,
    /// Set when every distance of the pair is below [`EPS_DIST`].
    pub degenerate: bool,
}

impl WeightMatrix {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.cols + col]
    }
}

/// Weights from `from` (axon terminals) to `to` (somas).
pub fn weight_matrix(
    from: &[NeuronGeometry],
    to: &[NeuronGeometry],
    mapping: MappingKind,
) -> Result<WeightMatrix> {
    weight_matrix_with_dmax(from, to, mapping, None)
}

/// As [`weight_matrix`], optionally pinning the inverse-mapping `dmax` instead
/// of recomputing it from the geometry.
pub fn weight_matrix_with_dmax(
    from: &[NeuronGeometry],
    to: &[NeuronGeometry],
    mapping: MappingKind,
    dmax_override: Option<f64>,
) -> Result<WeightMatrix> {
    let rows = to.len();
    let cols = from.len();
    let mut distances = Vec::with_capacity(rows * cols);
    for (j, dst) in to.iter().enumerate() {
        let soma = dst
            .soma
            .ok_or_else(|| Error::InvalidArgument(format!("receiving neuron {j} has no soma")))?;
        for (i, src) in from.iter().enumerate() {
            let axon = src.axon.ok_or_else(|| {
                Error::InvalidArgument(format!("sending neuron {i} has no axon terminal"))
            })?;
            distances.push(distance(axon, soma));
        }
    }
    let observed = distances.iter().copied().fold(0.0_f64, f64::max);
    let degenerate = observed < EPS_DIST;
    if degenerate {
        log::debug!("degenerate geometry: all {rows}x{cols} distances coincide");
    }
    let dmax = match dmax_override {
        Some(d) => d,
        None if degenerate => EPS_DIST,
        None => observed,
    };
    let weights = distances.iter().map(|&d| mapping.weight(d, dmax)).collect();
    Ok(WeightMatrix {
        rows,
        cols,
        weights,
        distances,
        dmax,
        degenerate,
    })
}

/// Builds an initial geometry. Deterministic for a given `(spec, scheme, seed)`.
pub fn init_geometry(spec: &NetworkSpec, scheme: InitScheme, seed: u64) -> Result<NetworkGeometry> {
    spec.validate()?;
    let widths = spec.layer_widths();
    let last = widths.len() - 1;
    let hidden = spec.hidden_widths.len() as f64;
    let mut rng = rng::seeded(seed);
    let mut layers = Vec::with_capacity(widths.len());
    for (l, &width) in widths.iter().enumerate() {
        let has_soma = l > 0;
        let has_axon = l < last;
        let mut layer = Vec::with_capacity(width);
        match scheme {
            InitScheme::Random => {
                for _ in 0..width {
                    let mut draw = || Point3::new(rng.random(), rng.random(), rng.random());
                    let soma = has_soma.then(&mut draw);
                    let axon = has_axon.then(&mut draw);
                    layer.push(NeuronGeometry { soma, axon });
                }
            }
            InitScheme::Onion => {
                // Hidden and output layers sit at radius l/(H+1); the input
                // layer takes half of the first shell rather than collapsing
                // onto the centre.
                let radius = if l == 0 {
                    0.5 / (hidden + 1.0)
                } else {
                    l as f64 / (hidden + 1.0)
                };
                for p in fibonacci_sphere(width) {
                    let point = CENTER + p * radius;
                    layer.push(NeuronGeometry {
                        soma: has_soma.then_some(point),
                        axon: has_axon.then_some(point),
                    });
                }
            }
            InitScheme::Singularity => {
                for _ in 0..width {
                    layer.push(NeuronGeometry {
                        soma: has_soma.then_some(CENTER),
                        axon: has_axon.then_some(CENTER),
                    });
                }
            }
        }
        layers.push(layer);
    }
    let norm = widths
        .iter()
        .enumerate()
        .map(|(l, &w)| {
            if l == 0 {
                Vec::new()
            } else {
                vec![NormParams::default(); w]
            }
        })
        .collect();
    Ok(NetworkGeometry {
        spec: spec.clone(),
        layers,
        norm,
    })
}

/// `n` roughly evenly spread unit vectors.
fn fibonacci_sphere(n: usize) -> Vec<Point3> {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let theta = golden * i as f64;
            Point3::new(r * theta.cos(), y, r * theta.sin())
        })
        .collect()
}

impl NetworkGeometry {
    /// Weight matrices for every consecutive layer pair.
    pub fn weight_matrices(&self) -> Result<Vec<WeightMatrix>> {
        self.layers
            .windows(2)
            .map(|pair| weight_matrix(&pair[0], &pair[1], self.spec.mapping))
            .collect()
    }

    pub fn spatial_parameter_count(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|n| 3 * (n.soma.is_some() as usize + n.axon.is_some() as usize))
            .sum()
    }

    pub fn norm_parameter_count(&self) -> usize {
        2 * self.norm.iter().map(Vec::len).sum::<usize>()
    }

    /// Checks layer widths and soma/axon presence against the `NetworkSpec`.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let widths = self.spec.layer_widths();
        let last = widths.len() - 1;
        if self.layers.len() != widths.len() || self.norm.len() != widths.len() {
            return Err(Error::InvalidArgument("layer count does not match spec".into()));
        }
        for (l, (layer, &w)) in self.layers.iter().zip(&widths).enumerate() {
            if layer.len() != w {
                return Err(Error::InvalidArgument(format!(
                    "layer {l} has {} neurons, spec says {w}",
                    layer.len()
                )));
            }
            let expected_norm = if l == 0 { 0 } else { w };
            if self.norm[l].len() != expected_norm {
                return Err(Error::InvalidArgument(format!(
                    "layer {l} has {} (gamma, beta) pairs, expected {expected_norm}",
                    self.norm[l].len()
                )));
            }
            for (i, n) in layer.iter().enumerate() {
                if n.soma.is_some() != (l > 0) || n.axon.is_some() != (l < last) {
                    return Err(Error::InvalidArgument(format!(
                        "neuron ({l}, {i}) has the wrong soma/axon layout"
                    )));
                }
                if !n.soma.is_none_or(Point3::is_finite) || !n.axon.is_none_or(Point3::is_finite) {
                    return Err(Error::InvalidArgument(format!(
                        "neuron ({l}, {i}) has non-finite coordinates"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes `layer,neuron,role,x,y,z` rows. Affine parameters use role
    /// `norm` with γ in `x`, β in `y` and an empty `z`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["layer", "neuron", "role", "x", "y", "z"])?;
        for (l, layer) in self.layers.iter().enumerate() {
            for (i, n) in layer.iter().enumerate() {
                for (role, p) in [("soma", n.soma), ("axon", n.axon)] {
                    if let Some(p) = p {
                        w.write_record([
                            l.to_string(),
                            i.to_string(),
                            role.to_string(),
                            p.x.to_string(),
                            p.y.to_string(),
                            p.z.to_string(),
                        ])?;
                    }
                }
            }
        }
        for (l, params) in self.norm.iter().enumerate() {
            for (i, p) in params.iter().enumerate() {
                w.write_record([
                    l.to_string(),
                    i.to_string(),
                    "norm".to_string(),
                    p.gamma.to_string(),
                    p.beta.to_string(),
                    String::new(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`NetworkGeometry::write_csv`]. Rows absent
    /// from the file keep their singularity/identity defaults.
    pub fn read_csv<R: Read>(spec: &NetworkSpec, reader: R) -> Result<NetworkGeometry> {
        let mut geom = init_geometry(spec, InitScheme::Singularity, 0)?;
        let mut r = csv::Reader::from_reader(reader);
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |k: usize, name: &str| -> Result<&str> {
                rec.get(k).ok_or_else(|| Error::Parse {
                    row: row + 1,
                    column: name.into(),
                    message: "missing field".into(),
                })
            };
            let int = |k: usize, name: &str| -> Result<usize> {
                field(k, name)?.trim().parse().map_err(|e| Error::Parse {
                    row: row + 1,
                    column: name.into(),
                    message: format!("{e}"),
                })
            };
            let real = |k: usize, name: &str| -> Result<f64> {
                field(k, name)?.trim().parse().map_err(|e| Error::Parse {
                    row: row + 1,
                    column: name.into(),
                    message: format!("{e}"),
                })
            };
            let l = int(0, "layer")?;
            let i = int(1, "neuron")?;
            let role = field(2, "role")?;
            let out_of_range = || Error::Parse {
                row: row + 1,
                column: "neuron".into(),
                message: format!("({l}, {i}) is outside the network"),
            };
            match role {
                "soma" | "axon" => {
                    let p = Point3::new(real(3, "x")?, real(4, "y")?, real(5, "z")?);
                    let n = geom
                        .layers
                        .get_mut(l)
                        .and_then(|layer| layer.get_mut(i))
                        .ok_or_else(out_of_range)?;
                    let slot = if role == "soma" { &mut n.soma } else { &mut n.axon };
                    if slot.is_none() {
                        return Err(Error::Parse {
                            row: row + 1,
                            column: "role".into(),
                            message: format!("neuron ({l}, {i}) has no {role}"),
                        });
                    }
                    *slot = Some(p);
                }
                "norm" => {
                    let p = geom
                        .norm
                        .get_mut(l)
                        .and_then(|layer| layer.get_mut(i))
                        .ok_or_else(out_of_range)?;
                    p.gamma = real(3, "x")?;
                    p.beta = real(4, "y")?;
                }
                other => {
                    return Err(Error::Parse {
                        row: row + 1,
                        column: "role".into(),
                        message: format!("unknown role `{other}`"),
                    })
                }
            }
        }
        geom.validate()?;
        Ok(geom)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(spec: &NetworkSpec, path: impl AsRef<std::path::Path>) -> Result<NetworkGeometry> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(spec, std::io::BufReader::new(f))
    }
}
