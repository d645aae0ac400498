//! Experiment configuration (a JSON document).
//!
//! ```json
//! {
//!   "model":      { "hidden": [32], "activation": "relu" },
//!   "data":       { "source": { "kind": "synthetic", "class_count": 10, "dim": 64,
//!                               "per_class": 120, "spread": 0.15, "test_fraction": 0.2 },
//!                   "partition": "iid", "shards": 40, "public_fraction": 0.15 },
//!   "clients":    { "population": 20, "cohort": 6, "local_epochs": 1, "lr": 0.05,
//!                   "batch_size": 20 },
//!   "attackers":  { "count": 10, "attack": { "kind": "negative_weight" } },
//!   "aggregator": { "kind": "opt_exact" },
//!   "server":     { "purity": "pure" },
//!   "run":        { "max_rounds": 150, "zeta": 1e-9, "master_seed": 1 }
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregatorKind;
use crate::analysis::BoundParams;
use crate::attack::AttackConfig;
use crate::data::{Purity, SyntheticParams};
use crate::error::{config, Result};
use crate::nn::{Activation, ModelSpec, SgdParams};
use crate::server::Curation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub clients: ClientsConfig,
    pub attackers: AttackersConfig,
    pub aggregator: AggregatorKind,
    #[serde(default)]
    pub server: ServerConfig,
    pub run: RunConfig,
    /// Constants for the bound calculators reported in the run summary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        class_count: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        /// Generator seed; defaults to a stream of the master seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Iid,
    Noniid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default = "default_partition")]
    pub partition: PartitionMode,
    /// Defaults to two shards per client.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shards: Option<usize>,
    #[serde(default = "default_public_fraction")]
    pub public_fraction: f64,
}

fn default_partition() -> PartitionMode {
    PartitionMode::Iid
}

fn default_public_fraction() -> f64 {
    0.15
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocalUpdate {
    Sgd,
    Esgd {
        alpha: f64,
        beta: f64,
        /// Whether the server runs the elastic update on `w0` as well.
        #[serde(default = "yes")]
        include_server: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientsConfig {
    pub population: usize,
    pub cohort: usize,
    #[serde(default = "one")]
    pub local_epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_local_update")]
    pub local_update: LocalUpdate,
}

fn one() -> usize {
    1
}

fn default_lr() -> f64 {
    0.01
}

fn default_batch() -> usize {
    20
}

fn default_local_update() -> LocalUpdate {
    LocalUpdate::Sgd
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackersConfig {
    pub count: usize,
    /// Explicit attacker ids; drawn from the master seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<usize>>,
    pub attack: AttackConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_purity")]
    pub purity: Purity,
    /// Server epochs per round on its curated data.
    #[serde(default = "one")]
    pub epochs: usize,
    /// Defaults to the client learning rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Copy the broadcast model into `w0` before each round's server training.
    #[serde(default)]
    pub warm_start: bool,
    #[serde(default = "default_curation")]
    pub curation: Curation,
    /// Epochs fitting `w0` on trusted data before curation starts; `d0` is
    /// calibrated from the fitted model.
    #[serde(default = "default_trusted_init_epochs")]
    pub trusted_init_epochs: usize,
    /// Fixed curation threshold; calibrated from trusted data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<f64>,
    #[serde(default)]
    pub trusted_clients: Vec<usize>,
    /// Re-run curation every this many rounds (once at setup when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curation_every: Option<usize>,
    #[serde(default = "default_stochastic_iters")]
    pub stochastic_iters: usize,
    #[serde(default = "default_batch")]
    pub stochastic_sample_size: usize,
}

fn default_purity() -> Purity {
    Purity::Pure
}

fn default_curation() -> Curation {
    Curation::None
}

fn default_trusted_init_epochs() -> usize {
    100
}

fn default_stochastic_iters() -> usize {
    50
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            purity: default_purity(),
            epochs: 1,
            lr: None,
            warm_start: false,
            curation: default_curation(),
            trusted_init_epochs: default_trusted_init_epochs(),
            d0: None,
            trusted_clients: Vec::new(),
            curation_every: None,
            stochastic_iters: default_stochastic_iters(),
            stochastic_sample_size: default_batch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub max_rounds: usize,
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    pub master_seed: u64,
    /// Keep client models every this many rounds for projection analysis.
    /// The final round is always kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
}

fn default_zeta() -> f64 {
    0.01
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn shards(&self) -> usize {
        self.data.shards.unwrap_or(2 * self.clients.population)
    }

    pub fn client_sgd(&self) -> SgdParams {
        SgdParams {
            epochs: self.clients.local_epochs,
            lr: self.clients.lr,
            batch_size: self.clients.batch_size,
        }
    }

    pub fn server_sgd(&self) -> SgdParams {
        SgdParams {
            epochs: self.server.epochs,
            lr: self.server.lr.unwrap_or(self.clients.lr),
            batch_size: self.clients.batch_size,
        }
    }

    /// Model for inputs of `input_dim` features and `classes` outputs.
    pub fn model_spec(&self, input_dim: usize, classes: usize) -> Result<ModelSpec> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.model.hidden);
        sizes.push(classes);
        ModelSpec::dense(sizes, self.model.activation)
    }

    pub fn synthetic_params(&self) -> Option<(SyntheticParams, f64)> {
        match self.data.source {
            DataSource::Synthetic { class_count, dim, per_class, spread, test_fraction, seed } => Some((
                SyntheticParams {
                    class_count,
                    dim,
                    per_class,
                    spread,
                    seed: seed.unwrap_or_else(|| crate::rng::Seeds::new(self.run.master_seed).child("dataset", 0)),
                },
                test_fraction,
            )),
            DataSource::Idx { .. } => None,
        }
    }

    /// Field-level checks run before any compute.
    pub fn validate(&self) -> Result<()> {
        let c = &self.clients;
        if c.population == 0 {
            return Err(config("clients.population must be at least 1"));
        }
        if c.cohort == 0 || c.cohort > c.population {
            return Err(config(format!(
                "clients.cohort must lie in 1..={}, got {}",
                c.population, c.cohort
            )));
        }
        if !(c.lr > 0.0 && c.lr.is_finite()) {
            return Err(config("clients.lr must be positive"));
        }
        if c.batch_size == 0 {
            return Err(config("clients.batch_size must be at least 1"));
        }
        if let LocalUpdate::Esgd { alpha, beta, .. } = c.local_update {
            if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
                return Err(config("clients.local_update alpha and beta must lie in [0, 1]"));
            }
        }
        let a = &self.attackers;
        if a.count > c.population {
            return Err(config(format!(
                "attackers.count {} exceeds clients.population {}",
                a.count, c.population
            )));
        }
        if let Some(ids) = &a.ids {
            if ids.len() != a.count {
                return Err(config("attackers.ids must list exactly attackers.count ids"));
            }
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != ids.len() || ids.iter().any(|&i| i >= c.population) {
                return Err(config("attackers.ids must be distinct ids below clients.population"));
            }
        }
        a.attack.validate().map_err(|e| config(format!("attackers.attack: {e}")))?;
        self.aggregator.validate().map_err(|e| config(format!("aggregator: {e}")))?;
        if self.server.purity == Purity::Pure && a.count == c.population {
            return Err(config("server.purity = pure needs at least one legitimate client"));
        }
        let shards = self.shards();
        if shards == 0 || shards % c.population != 0 {
            return Err(config(format!(
                "data.shards ({shards}) must be a positive multiple of clients.population"
            )));
        }
        if !(self.data.public_fraction > 0.0 && self.data.public_fraction < 1.0) {
            return Err(config("data.public_fraction must lie in (0, 1)"));
        }
        if let DataSource::Synthetic { class_count, dim, per_class, spread, test_fraction, .. } = self.data.source {
            if class_count == 0 || dim == 0 || per_class == 0 {
                return Err(config("data.source counts must be at least 1"));
            }
            if !(spread > 0.0) {
                return Err(config("data.source.spread must be positive"));
            }
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(config("data.source.test_fraction must lie in (0, 1)"));
            }
        }
        if self.model.hidden.iter().any(|&h| h == 0) {
            return Err(config("model.hidden sizes must be positive"));
        }
        let s = &self.server;
        if s.trusted_clients.iter().any(|&t| t >= c.population) {
            return Err(config("server.trusted_clients ids must be below clients.population"));
        }
        if matches!(s.curation, Curation::Online | Curation::Stochastic | Curation::Sorted)
            && s.trusted_clients.is_empty()
        {
            return Err(config("server.curation needs server.trusted_clients"));
        }
        if let Some(d0) = s.d0 {
            if !(d0 > 0.0) {
                return Err(config("server.d0 must be positive"));
            }
        }
        if s.curation_every == Some(0) {
            return Err(config("server.curation_every must be at least 1"));
        }
        if s.lr.is_some_and(|lr| !(lr > 0.0)) {
            return Err(config("server.lr must be positive"));
        }
        if s.stochastic_iters == 0 || s.stochastic_sample_size == 0 {
            return Err(config("server stochastic curation sizes must be at least 1"));
        }
        if self.run.max_rounds == 0 {
            return Err(config("run.max_rounds must be at least 1"));
        }
        if !(self.run.zeta > 0.0) {
            return Err(config("run.zeta must be positive"));
        }
        if self.run.snapshot_every == Some(0) {
            return Err(config("run.snapshot_every must be at least 1"));
        }
        if let Some(b) = &self.bounds {
            b.validate().map_err(|e| config(format!("bounds: {e}")))?;
        }
        Ok(())
    }
}

/// Sets the value at a dotted path (e.g. `attackers.count`) inside a JSON config.
pub fn set_json_path(doc: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config(format!("`{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(config(format!("unknown config key `{path}`")));
            }
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .ok_or_else(|| config(format!("unknown config key `{path}`")))?;
    }
    Err(config("empty config key"))
}
