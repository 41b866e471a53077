//! Genetic algorithm over flat coordinate chromosomes.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::forward::{ForwardTrace, Network};
use crate::gd::check_dataset;
use crate::geometry::{init_geometry, InitScheme, NetworkGeometry, NetworkSpec, NormParams, Point3};
use crate::loss::{network_penalty, sample_loss, ClassWeighting, ClassWeights};
use crate::rng;

/// Probability that a child gene comes from the first parent.
pub const CROSSOVER_PROB: f64 = 0.5;

/// Somas (layer-major), then axons (layer-major), then `(γ, β)` per
/// normalized neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct Genome {
    pub genes: Vec<f64>,
    /// Number of leading coordinate genes; the rest are γ/β.
    pub spatial_len: usize,
}

impl Genome {
    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }
}

pub fn genome_len(spec: &NetworkSpec) -> usize {
    3 * (spec.soma_count() + spec.axon_count()) + 2 * spec.normalized_neuron_count()
}

pub fn encode(geom: &NetworkGeometry) -> Genome {
    let mut genes = Vec::with_capacity(genome_len(&geom.spec));
    for n in geom.layers.iter().flatten() {
        if let Some(p) = n.soma {
            genes.extend_from_slice(&p.to_array());
        }
    }
    for n in geom.layers.iter().flatten() {
        if let Some(p) = n.axon {
            genes.extend_from_slice(&p.to_array());
        }
    }
    let spatial_len = genes.len();
    for p in geom.norm.iter().flatten() {
        genes.push(p.gamma);
        genes.push(p.beta);
    }
    Genome { genes, spatial_len }
}

pub fn decode(genome: &Genome, spec: &NetworkSpec) -> Result<NetworkGeometry> {
    let expected = genome_len(spec);
    let spatial = 3 * (spec.soma_count() + spec.axon_count());
    if genome.genes.len() != expected || genome.spatial_len != spatial {
        return Err(Error::InvalidArgument(format!(
            "genome has {} genes ({} spatial), spec needs {expected} ({spatial} spatial)",
            genome.genes.len(),
            genome.spatial_len
        )));
    }
    let mut geom = init_geometry(spec, InitScheme::Singularity, 0)?;
    let mut it = genome.genes.chunks_exact(3);
    for n in geom.layers.iter_mut().flatten() {
        if let Some(p) = n.soma.as_mut() {
            *p = Point3::from_slice(it.next().expect("length checked"));
        }
    }
    for n in geom.layers.iter_mut().flatten() {
        if let Some(p) = n.axon.as_mut() {
            *p = Point3::from_slice(it.next().expect("length checked"));
        }
    }
    for (p, g) in geom
        .norm
        .iter_mut()
        .flatten()
        .zip(genome.genes[spatial..].chunks_exact(2))
    {
        *p = NormParams {
            gamma: g[0],
            beta: g[1],
        };
    }
    Ok(geom)
}

/// Population count: a fixed number or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "PopulationRepr", into = "PopulationRepr")]
pub enum PopulationSize {
    #[default]
    Auto,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PopulationRepr {
    Number(usize),
    Keyword(String),
}

impl TryFrom<PopulationRepr> for PopulationSize {
    type Error = String;

    fn try_from(r: PopulationRepr) -> std::result::Result<Self, String> {
        match r {
            PopulationRepr::Number(n) => Ok(PopulationSize::Fixed(n)),
            PopulationRepr::Keyword(s) if s.eq_ignore_ascii_case("auto") => Ok(PopulationSize::Auto),
            PopulationRepr::Keyword(s) => Err(format!("population must be a number or \"auto\", got {s:?}")),
        }
    }
}

impl From<PopulationSize> for PopulationRepr {
    fn from(p: PopulationSize) -> Self {
        match p {
            PopulationSize::Auto => PopulationRepr::Keyword("auto".into()),
            PopulationSize::Fixed(n) => PopulationRepr::Number(n),
        }
    }
}

impl PopulationSize {
    pub fn resolve(self, genome_len: usize) -> usize {
        match self {
            PopulationSize::Auto => auto_population_size(genome_len),
            PopulationSize::Fixed(n) => n,
        }
    }
}

/// `max(50, round(2·√len))`.
pub fn auto_population_size(genome_len: usize) -> usize {
    ((2.0 * (genome_len as f64).sqrt()).round() as usize).max(50)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: PopulationSize,
    pub generations: usize,
    pub tournament_size: usize,
    pub mutation_rate: f64,
    pub mutation_scale: f64,
    pub elitism: usize,
    pub class_weighting: ClassWeighting,
    pub rng_seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: PopulationSize::Auto,
            generations: 100,
            tournament_size: 3,
            mutation_rate: 0.05,
            mutation_scale: 0.1,
            elitism: 1,
            class_weighting: ClassWeighting::InverseFrequency,
            rng_seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self, genome_len: usize) -> Result<usize> {
        let pop = self.population.resolve(genome_len);
        let bad = |m: String| Err(Error::InvalidConfiguration(m));
        if pop < 2 {
            return bad(format!("population must be >= 2, got {pop}"));
        }
        if self.tournament_size < 2 || self.tournament_size > pop {
            return bad(format!(
                "tournament size must be in [2, {pop}], got {}",
                self.tournament_size
            ));
        }
        if self.elitism < 1 || self.elitism >= pop {
            return bad(format!("elitism must be in [1, {}], got {}", pop - 1, self.elitism));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad(format!("mutation rate must be in [0, 1], got {}", self.mutation_rate));
        }
        if !(self.mutation_scale > 0.0) || !self.mutation_scale.is_finite() {
            return bad(format!("mutation scale must be > 0, got {}", self.mutation_scale));
        }
        Ok(pop)
    }
}

/// Weighted cross-entropy over the whole split plus the weight penalty.
/// Lower is better.
pub fn fitness(net: &Network, ds: &Dataset, weights: &ClassWeights) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut trace = ForwardTrace::default();
    let mut total = 0.0;
    for (x, &y) in ds.features.iter().zip(&ds.labels) {
        net.forward_into(x, &mut trace)?;
        total += sample_loss(&trace.probs, y, weights);
    }
    Ok(total / ds.len() as f64 + network_penalty(net, net.spec.l1, net.spec.l2))
}

pub fn genome_fitness(genome: &Genome, spec: &NetworkSpec, ds: &Dataset, weights: &ClassWeights) -> Result<f64> {
    fitness(&Network::compile(&decode(genome, spec)?)?, ds, weights)
}

/// Samples `k` distinct candidates and returns the fittest (lowest index on
/// ties).
pub fn tournament_select<R: Rng + ?Sized>(fitnesses: &[f64], k: usize, rng: &mut R) -> usize {
    let k = k.clamp(1, fitnesses.len());
    let mut best = usize::MAX;
    for i in sample(rng, fitnesses.len(), k) {
        if best == usize::MAX || fitnesses[i] < fitnesses[best] || (fitnesses[i] == fitnesses[best] && i < best) {
            best = i;
        }
    }
    best
}

pub fn crossover<R: Rng + ?Sized>(p1: &Genome, p2: &Genome, rng: &mut R) -> Result<Genome> {
    if p1.genes.len() != p2.genes.len() || p1.spatial_len != p2.spatial_len {
        return Err(Error::InvalidArgument(format!(
            "parents have {} and {} genes",
            p1.genes.len(),
            p2.genes.len()
        )));
    }
    let genes = p1
        .genes
        .iter()
        .zip(&p2.genes)
        .map(|(&a, &b)| if rng.random_bool(CROSSOVER_PROB) { a } else { b })
        .collect();
    Ok(Genome {
        genes,
        spatial_len: p1.spatial_len,
    })
}

/// Adds `N(0, scale²)` to each gene with probability `rate`; coordinate genes
/// are clamped to the unit cube afterwards.
pub fn mutate<R: Rng + ?Sized>(genome: &mut Genome, rate: f64, scale: f64, rng: &mut R) -> Result<usize> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("mutation rate {rate} outside [0, 1]")));
    }
    let noise = Normal::new(0.0, scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut mutated = 0;
    for (i, g) in genome.genes.iter_mut().enumerate() {
        if rng.random_bool(rate) {
            *g += noise.sample(rng);
            if i < genome.spatial_len {
                *g = g.clamp(0.0, 1.0);
            }
            mutated += 1;
        }
    }
    Ok(mutated)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub train_bacc: f64,
    pub test_bacc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GaOutcome {
    pub geometry: NetworkGeometry,
    pub best_fitness: f64,
    pub history: Vec<GenerationRow>,
    pub population: usize,
    pub evaluations: usize,
}

fn evaluate_population(
    pop: &[Genome],
    spec: &NetworkSpec,
    train: &Dataset,
    weights: &ClassWeights,
) -> Result<Vec<f64>> {
    pop.par_iter()
        .map(|g| {
            let f = genome_fitness(g, spec, train, weights)?;
            Ok(if f.is_finite() { f } else { f64::INFINITY })
        })
        .collect()
}

/// Indices sorted by fitness, ties by index.
fn ranking(fit: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fit.len()).collect();
    order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)));
    order
}

pub fn train_ga(
    spec: &NetworkSpec,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &GaConfig,
) -> Result<GaOutcome> {
    spec.validate().map_err(|e| Error::InvalidConfiguration(e.to_string()))?;
    check_dataset(spec, train)?;
    if let Some(t) = test {
        check_dataset(spec, t)?;
    }
    let len = genome_len(spec);
    let pop_size = config.validate(len)?;
    let weights = config.class_weighting.weights_for(train)?;

    let mut master = rng::stream(config.rng_seed, 0);
    let seeds: Vec<u64> = (0..pop_size).map(|_| master.random()).collect();
    let mut pop = seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut g = encode(&init_geometry(spec, spec.init, s)?);
            if spec.init == InitScheme::Singularity && i > 0 {
                mutate(&mut g, 1.0, config.mutation_scale, &mut rng::seeded(s))?;
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut fit = evaluate_population(&pop, spec, train, &weights)?;
    let mut evaluations = pop_size;
    let mut best = (fit[ranking(&fit)[0]], pop[ranking(&fit)[0]].clone());
    let mut history = Vec::with_capacity(config.generations + 1);

    for gen in 0..=config.generations {
        if gen > 0 {
            let order = ranking(&fit);
            let elites: Vec<Genome> = order[..config.elitism].iter().map(|&i| pop[i].clone()).collect();
            let children = (config.elitism..pop_size)
                .into_par_iter()
                .map(|i| {
                    let mut r = rng::stream(config.rng_seed, ((gen as u64) << 32) | i as u64);
                    let a = tournament_select(&fit, config.tournament_size, &mut r);
                    let b = tournament_select(&fit, config.tournament_size, &mut r);
                    let mut child = crossover(&pop[a], &pop[b], &mut r)?;
                    mutate(&mut child, config.mutation_rate, config.mutation_scale, &mut r)?;
                    Ok(child)
                })
                .collect::<Result<Vec<_>>>()?;
            let elite_fit: Vec<f64> = order[..config.elitism].iter().map(|&i| fit[i]).collect();
            let child_fit = evaluate_population(&children, spec, train, &weights)?;
            evaluations += children.len();
            pop = elites.into_iter().chain(children).collect();
            fit = elite_fit.into_iter().chain(child_fit).collect();
            let top = ranking(&fit)[0];
            if fit[top] < best.0 {
                best = (fit[top], pop[top].clone());
            }
        }
        let net = Network::compile(&decode(&best.1, spec)?)?;
        let finite: Vec<f64> = fit.iter().copied().filter(|f| f.is_finite()).collect();
        history.push(GenerationRow {
            generation: gen,
            best_fitness: best.0,
            mean_fitness: if finite.is_empty() {
                f64::INFINITY
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            },
            train_bacc: evaluate(&net, train)?.bacc,
            test_bacc: test.map(|t| evaluate(&net, t).map(|m| m.bacc)).transpose()?,
        });
        log::debug!("generation {gen}: best {:.6}", best.0);
    }

    Ok(GaOutcome {
        geometry: decode(&best.1, spec)?,
        best_fitness: best.0,
        history,
        population: pop_size,
        evaluations,
    })
}
