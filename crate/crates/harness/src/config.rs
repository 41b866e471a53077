//! Experiment configuration and sweep-grid expansion.
//!
//! Configs are TOML. Every table is optional and falls back to defaults. A
//! `[sweep]` table maps dotted keys of the base config to lists of values;
//! the grid is their Cartesian product in key order, the last key varying
//! fastest.
//!
//! ```toml
//! name = "moons-gd"
//! optimizer = "gd"
//! seeds = [0, 1]
//!
//! [dataset]
//! kind = "two_moons"
//!
//! [network]
//! hidden_widths = [16, 16]
//! mapping = { kind = "inverse" }
//!
//! [gd]
//! epochs = 250
//!
//! [sweep]
//! "gd.learning_rate" = [0.03, 0.1]
//! "network.init" = ["random", "onion"]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use debinn::data::{load_csv, standardize, Dataset, Split, StandardizationParams, TwoMoons};
use debinn::ga::GaConfig;
use debinn::gd::GdConfig;
use debinn::{InitScheme, NetworkSpec};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Largest grid a sweep will run.
pub const MAX_RUNS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Ga,
    Gd,
}

impl Optimizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Ga => "ga",
            Optimizer::Gd => "gd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    TwoMoons,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Label used in reports; defaults to the kind.
    pub name: Option<String>,
    pub two_moons: TwoMoons,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub label_column: String,
    pub class_names: Option<Vec<String>>,
    /// Z-score features with training-split statistics.
    pub standardize: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::TwoMoons,
            name: None,
            two_moons: TwoMoons::default(),
            train: None,
            test: None,
            label_column: "label".into(),
            class_names: None,
            standardize: true,
        }
    }
}

impl DatasetConfig {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| match self.kind {
            DatasetKind::TwoMoons => "two_moons".into(),
            DatasetKind::Csv => "csv".into(),
        })
    }
}

/// Train and test splits as fed to the network.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    /// Present when features were standardized.
    pub standardization: Option<StandardizationParams>,
}

impl PreparedData {
    /// Maps a raw feature vector into network input space.
    pub fn to_input(&self, raw: &[f64]) -> Vec<f64> {
        match &self.standardization {
            Some(p) => raw
                .iter()
                .zip(p.mean.iter().zip(&p.std))
                .map(|(v, (m, s))| (v - m) / s)
                .collect(),
            None => raw.to_vec(),
        }
    }
}

/// Loads or generates both splits. `base_dir` resolves relative CSV paths.
pub fn load_raw(cfg: &DatasetConfig, base_dir: &Path) -> Result<(Dataset, Dataset)> {
    match cfg.kind {
        DatasetKind::TwoMoons => Ok(cfg.two_moons.generate()?),
        DatasetKind::Csv => {
            let path = |p: &Option<PathBuf>, which: &str| -> Result<PathBuf> {
                let p = p
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config(format!("dataset.{which} is required for csv datasets")))?;
                Ok(if p.is_absolute() { p.clone() } else { base_dir.join(p) })
            };
            let names = cfg.class_names.as_deref();
            let train = load_csv(path(&cfg.train, "train")?, &cfg.label_column, names, Split::Train)?;
            // test classes follow the training split's order
            let test = load_csv(path(&cfg.test, "test")?, &cfg.label_column, Some(&train.class_names), Split::Test)?;
            Ok((train, test))
        }
    }
}

pub fn prepare_data(cfg: &DatasetConfig, base_dir: &Path) -> Result<PreparedData> {
    let (train, test) = load_raw(cfg, base_dir)?;
    train.require_all_classes()?;
    if cfg.standardize {
        let (train, test, params) = standardize(&train, &test)?;
        if !params.constant_features.is_empty() {
            log::warn!("constant features {:?} left unscaled", params.constant_features);
        }
        Ok(PreparedData {
            train,
            test,
            standardization: Some(params),
        })
    } else {
        Ok(PreparedData {
            train,
            test,
            standardization: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub optimizer: Optimizer,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub network: NetworkSpec,
    pub ga: Option<GaConfig>,
    pub gd: Option<GdConfig>,
    /// Dotted key → values. Only read by the sweep expansion.
    pub sweep: BTreeMap<String, Vec<toml::Value>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            optimizer: Optimizer::Ga,
            seeds: vec![0],
            dataset: DatasetConfig::default(),
            network: NetworkSpec::new(2, vec![16, 16], 2),
            ga: None,
            gd: None,
            sweep: BTreeMap::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn ga_config(&self) -> GaConfig {
        self.ga.clone().unwrap_or_default()
    }

    pub fn gd_config(&self) -> GdConfig {
        self.gd.clone().unwrap_or_default()
    }

    /// Structural checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        self.network.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        match self.optimizer {
            Optimizer::Ga => {
                if self.gd.is_some() {
                    return bad("[gd] options given for a ga experiment".into());
                }
                self.ga_config()
                    .validate(debinn::ga::genome_len(&self.network))
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
            }
            Optimizer::Gd => {
                if self.ga.is_some() {
                    return bad("[ga] options given for a gd experiment".into());
                }
                if self.network.init == InitScheme::Singularity {
                    return bad("singularity initialization is only available to the genetic algorithm".into());
                }
                self.gd_config().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            }
        }
        if self.dataset.kind == DatasetKind::Csv && (self.dataset.train.is_none() || self.dataset.test.is_none()) {
            return bad("csv datasets need dataset.train and dataset.test".into());
        }
        Ok(())
    }
}

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    /// Overridden keys and their values, in sweep key order.
    pub overrides: Vec<(String, toml::Value)>,
    pub config: ExperimentConfig,
}

impl GridPoint {
    pub fn label(&self) -> String {
        self.overrides
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Number of grid points times seeds.
pub fn run_count(cfg: &ExperimentConfig) -> usize {
    cfg.sweep
        .values()
        .map(|v| v.len())
        .fold(1usize, |a, b| a.saturating_mul(b))
        .saturating_mul(cfg.seeds.len())
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("sweep key {key:?}: {part:?} is not inside a table")))?;
        if i + 1 == parts.len() {
            table.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = table
            .entry((*part).to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(HarnessError::Config(format!("empty sweep key {key:?}")))
}

/// Expands the sweep into concrete configs. Each returned config has an empty
/// `sweep` table.
pub fn expand_grid(cfg: &ExperimentConfig) -> Result<Vec<GridPoint>> {
    if cfg.sweep.values().any(|v| v.is_empty()) {
        return Err(HarnessError::Config("sweep axes must not be empty".into()));
    }
    let total = run_count(cfg);
    if total > MAX_RUNS {
        return Err(HarnessError::Config(format!(
            "sweep would run {total} runs, more than the limit of {MAX_RUNS}"
        )));
    }
    let mut base = cfg.clone();
    base.sweep.clear();
    let base_value = toml::Value::try_from(&base).map_err(|e| HarnessError::Config(e.to_string()))?;
    let axes: Vec<(&String, &Vec<toml::Value>)> = cfg.sweep.iter().collect();
    let points = axes.iter().map(|(_, v)| v.len()).product::<usize>();
    let mut out = Vec::with_capacity(points);
    for index in 0..points {
        let mut rem = index;
        let mut picks = vec![0; axes.len()];
        for (a, (_, vals)) in axes.iter().enumerate().rev() {
            picks[a] = rem % vals.len();
            rem /= vals.len();
        }
        let mut value = base_value.clone();
        let mut overrides = Vec::with_capacity(axes.len());
        for ((key, vals), &p) in axes.iter().zip(&picks) {
            set_path(&mut value, key, vals[p].clone())?;
            overrides.push(((*key).clone(), vals[p].clone()));
        }
        let config: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(format!("grid point {index}: {e}")))?;
        config.validate()?;
        out.push(GridPoint {
            index,
            overrides,
            config,
        });
    }
    Ok(out)
}
