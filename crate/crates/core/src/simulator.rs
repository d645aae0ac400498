//! The federated round loop.
//!
//! Setup partitions the data, picks attackers, builds and optionally curates
//! the server dataset, and broadcasts the initial model. Each round then
//! samples a cohort, runs every client's local update in parallel, trains the
//! server model, weights the cohort and aggregates. The loop ends when the
//! global model moves by at most `zeta` or after `max_rounds` rounds.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, compute_weights, SimplexWeights};
use crate::analysis::{accuracy, bias_statistic, weighted_train_loss};
use crate::attack::{choose_attackers, forge_model, poison_dataset, poison_stream, roles_from_ids, Role};
use crate::config::{DataSource, ExperimentConfig, LocalUpdate, PartitionMode};
use crate::data::{build_server_data, gen_synthetic, partition_iid, partition_noniid, split_public, ClientPartition, Dataset, ServerData};
use crate::error::{config, input, Result};
use crate::idx::load_idx;
use crate::nn::{
    self, init_model, param_dist, train_local, train_local_esgd, Elastic, ModelSpec, ParamVector, SgdParams,
};
use crate::rng::{Seeds, Stream};
use crate::server::{
    calibrate_d0_online, calibrate_d0_stochastic, curate_online, curate_stochastic, order_sorted, train_server,
    train_server_elastic, Curation, D0Calibration, ServerState, StochasticReport,
};

/// Uniform sample of `k` distinct ids out of `population`, in draw order.
pub fn sample_cohort(population: usize, k: usize, rng: &mut Stream) -> Result<Vec<usize>> {
    if k > population {
        return Err(input(format!("cohort of {k} exceeds population {population}")));
    }
    Ok(index::sample(rng, population, k).into_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxRounds,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::MaxRounds => "max_rounds",
        }
    }
}

/// Metrics of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub cohort: Vec<usize>,
    pub rho: SimplexWeights,
    pub attacker: Vec<bool>,
    pub distances: Vec<f64>,
    pub client_losses: Vec<f64>,
    pub accuracy: f64,
    /// Test accuracy of the server's reference model.
    pub server_accuracy: f64,
    pub weighted_loss: f64,
    pub delta_w_norm: f64,
    /// `||sum rho_n w_n - w0||` for the round.
    pub bias: f64,
    /// Clients given exactly zero weight.
    pub zero_weight_count: usize,
    pub aggregator: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_id: Option<usize>,
}

impl RoundRecord {
    /// Total weight given to attackers.
    pub fn attacker_mass(&self) -> f64 {
        self.rho
            .as_slice()
            .iter()
            .zip(&self.attacker)
            .filter(|(_, &a)| a)
            .map(|(r, _)| r)
            .sum()
    }

    pub fn max_attacker_rho(&self) -> f64 {
        self.rho
            .as_slice()
            .iter()
            .zip(&self.attacker)
            .filter(|(_, &a)| a)
            .map(|(&r, _)| r)
            .fold(0.0, f64::max)
    }
}

/// Models kept at one round for projection analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub round: usize,
    pub global: ParamVector,
    pub server: ParamVector,
    pub cohort: Vec<usize>,
    pub client_models: Vec<ParamVector>,
}

/// Facts fixed at setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub master_seed: u64,
    pub model_layers: Vec<usize>,
    pub param_count: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub attacker_ids: Vec<usize>,
    pub server_samples: usize,
    pub curated_samples: usize,
    pub outlier_clients: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d0_calibration: Option<D0Calibration>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stochastic_report: Option<StochasticReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub records: Vec<RoundRecord>,
    pub final_model: ParamVector,
    pub stop_reason: StopReason,
    pub metadata: RunMetadata,
    pub snapshots: Vec<Snapshot>,
}

impl RunResult {
    pub fn accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.accuracy).collect()
    }

    /// Mean accuracy of the last `k` rounds (or of all rounds if fewer).
    pub fn tail_accuracy(&self, k: usize) -> f64 {
        let acc = self.accuracies();
        let tail = &acc[acc.len().saturating_sub(k)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    /// First 1-based round whose accuracy reaches `target`.
    pub fn rounds_to_reach(&self, target: f64) -> Option<usize> {
        self.records.iter().find(|r| r.accuracy >= target).map(|r| r.round)
    }
}

struct ClientOutcome {
    model: ParamVector,
    loss: f64,
    anchor: Option<ParamVector>,
}

/// A run in progress.
pub struct Simulation {
    cfg: ExperimentConfig,
    seeds: Seeds,
    spec: ModelSpec,
    test: Dataset,
    client_data: Vec<Dataset>,
    roles: Vec<Role>,
    server_data: ServerData,
    server: ServerState,
    global: ParamVector,
    anchors: Vec<Option<ParamVector>>,
    server_anchor_seeded: bool,
    round: usize,
    meta: RunMetadata,
    snapshots: Vec<Snapshot>,
    last_models: Option<(Vec<usize>, Vec<ParamVector>)>,
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data.source {
        DataSource::Synthetic { .. } => {
            let (params, test_fraction) = cfg.synthetic_params().expect("synthetic source");
            let all = gen_synthetic(params)?;
            all.train_test_split(test_fraction, Seeds::new(cfg.run.master_seed).child("split", 0))
        }
        DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            if train.dim() != test.dim() {
                return Err(config("train and test IDX files differ in dimension"));
            }
            Ok((train, test))
        }
    }
}

impl Simulation {
    /// Setup: data, partition, roles, server data, curation, initial broadcast.
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let seeds = Seeds::new(cfg.run.master_seed);
        let (train, test) = load_data(&cfg)?;
        let classes = train.class_count().max(test.class_count());
        let spec = cfg.model_spec(train.dim(), classes)?;
        let population = cfg.clients.population;

        let part_seed = seeds.child("partition", 0);
        let partition = match cfg.data.partition {
            PartitionMode::Iid => partition_iid(&train, population, cfg.shards(), part_seed)?,
            PartitionMode::Noniid => partition_noniid(&train, population, cfg.shards(), part_seed)?,
        };
        let partition = split_public(&partition, cfg.data.public_fraction, seeds.child("public", 0))?;

        let attacker_ids = match &cfg.attackers.ids {
            Some(ids) => {
                let mut ids = ids.clone();
                ids.sort_unstable();
                ids
            }
            None => choose_attackers(population, cfg.attackers.count, &mut seeds.stream("attackers", 0, 0))?,
        };
        let roles = roles_from_ids(population, &attacker_ids)?;
        let server_data = build_server_data(&train, &partition, &roles, cfg.server.purity, &mut seeds.stream("server_data", 0, 0))?;
        if server_data.data.is_empty() {
            return Err(config("the server dataset is empty; raise data.public_fraction"));
        }
        let client_data = client_datasets(&train, &partition);
        if let Some(c) = client_data.iter().position(Dataset::is_empty) {
            return Err(config(format!("client {c} holds no samples; use fewer shards or clients")));
        }

        let w_init = init_model(&spec, seeds.child("init", 0));
        let server = ServerState::new(w_init.clone(), server_data.data.clone(), population);
        let meta = RunMetadata {
            master_seed: cfg.run.master_seed,
            model_layers: spec.layer_sizes().to_vec(),
            param_count: spec.param_count(),
            train_samples: train.len(),
            test_samples: test.len(),
            attacker_ids,
            server_samples: server_data.data.len(),
            curated_samples: server_data.data.len(),
            outlier_clients: Vec::new(),
            d0_calibration: None,
            stochastic_report: None,
        };
        let mut sim = Self {
            seeds,
            spec,
            test,
            client_data,
            roles,
            server_data,
            server,
            global: w_init,
            anchors: vec![None; population],
            server_anchor_seeded: false,
            round: 0,
            meta,
            snapshots: Vec::new(),
            last_models: None,
            cfg,
        };
        sim.curate(0)?;
        Ok(sim)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn global(&self) -> &ParamVector {
        &self.global
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn metadata(&self) -> &RunMetadata {
        &self.meta
    }

    fn curate(&mut self, round: usize) -> Result<()> {
        let s = &self.cfg.server;
        if s.curation == Curation::None {
            return Ok(());
        }
        let trusted_ids = &s.trusted_clients;
        let untrusted_ids: Vec<usize> = (0..self.cfg.clients.population)
            .filter(|c| !trusted_ids.contains(c))
            .collect();
        let trusted = self.server_data.from_clients(trusted_ids);
        if trusted.is_empty() {
            return Err(config("trusted clients share no samples with the server"));
        }
        let sgd = self.cfg.server_sgd();
        let mut rng = self.seeds.stream("curation", 0, round as u64);
        let previous_outliers = self.server.outlier_labels.clone();
        let fit_trusted = |rng: &mut Stream| {
            let base = ServerState { curated: trusted.clone(), schedule: None, ..self.server.clone() };
            train_server(&base, &self.spec, SgdParams { epochs: s.trusted_init_epochs, ..sgd }, rng)
        };
        match s.curation {
            Curation::None => unreachable!(),
            Curation::Online => {
                let base = fit_trusted(&mut rng)?;
                let d0 = match s.d0 {
                    Some(d0) => d0,
                    None => {
                        let cal = calibrate_d0_online(&self.spec, &base.w0, &trusted, sgd, &mut rng)?;
                        let d0 = cal.d0;
                        self.meta.d0_calibration = Some(cal);
                        d0
                    }
                };
                let stream: Vec<(usize, Dataset)> = untrusted_ids
                    .iter()
                    .map(|&c| (c, self.server_data.from_clients(&[c])))
                    .collect();
                // w0 is already fitted; candidates still get their one-epoch test
                let no_refit = SgdParams { epochs: 0, ..sgd };
                self.server = curate_online(&base, &self.spec, &trusted, &stream, d0, no_refit, &mut rng)?;
            }
            Curation::Stochastic => {
                let base = fit_trusted(&mut rng)?;
                let d0 = match s.d0 {
                    Some(d0) => d0,
                    None => {
                        let cal = calibrate_d0_stochastic(&self.spec, &base.w0, &trusted, s.stochastic_sample_size, sgd.lr, &mut rng)?;
                        let d0 = cal.d0;
                        self.meta.d0_calibration = Some(cal);
                        d0
                    }
                };
                let pool = self.server_data.from_clients(&untrusted_ids);
                if pool.is_empty() {
                    self.server = base;
                } else {
                    let (state, report) = curate_stochastic(&base, &self.spec, &pool, d0, s.stochastic_iters, s.stochastic_sample_size, sgd.lr, &mut rng)?;
                    self.server = state;
                    self.meta.stochastic_report = Some(report);
                }
            }
            Curation::Sorted => {
                let untrusted = self.server_data.from_clients(&untrusted_ids);
                let schedule = order_sorted(&untrusted, &trusted, sgd.batch_size)?;
                self.server.curated = schedule.data;
                self.server.schedule = Some(schedule.batches);
            }
        }
        for (flag, &was) in self.server.outlier_labels.iter_mut().zip(&previous_outliers) {
            *flag |= was;
        }
        self.meta.curated_samples = self.server.curated.len();
        self.meta.outlier_clients = self
            .server
            .outlier_labels
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(c, _)| c)
            .collect();
        Ok(())
    }

    fn client_update(&self, client: usize, round: usize) -> Result<ClientOutcome> {
        let attack = self.cfg.attackers.attack;
        let is_attacker = self.roles[client] == Role::Attacker;
        let data = if is_attacker && attack.kind.poisons_data() {
            let mut rng = poison_stream(&self.seeds, attack.kind, client, round);
            poison_dataset(&self.client_data[client], attack.kind, &mut rng)?
        } else {
            self.client_data[client].clone()
        };
        let mut rng = self.seeds.stream("local", client as u64, round as u64);
        let sgd = self.cfg.client_sgd();
        let (honest, anchor) = match self.cfg.clients.local_update {
            LocalUpdate::Sgd => (train_local(&self.spec, &self.global, &data, sgd, &mut rng)?, None),
            LocalUpdate::Esgd { alpha, beta, .. } => {
                let anchor = self.anchors[client].clone().unwrap_or_else(|| self.global.clone());
                let (w, a) = train_local_esgd(&self.spec, &self.global, &anchor, &self.global, &data, sgd, Elastic { alpha, beta }, &mut rng)?;
                (w, Some(a))
            }
        };
        let model = if is_attacker && attack.kind.forges_model() {
            let mut rng = self.seeds.stream("forge", client as u64, round as u64);
            forge_model(attack.kind, &honest, &self.global, attack.noise_scale, &mut rng)?
        } else {
            honest
        };
        let loss = nn::loss(&self.spec, &model, &data)?;
        Ok(ClientOutcome { model, loss, anchor })
    }

    fn train_server_round(&mut self, round: usize) -> Result<()> {
        if self.cfg.server.warm_start {
            self.server.w0 = self.global.clone();
        }
        let sgd = self.cfg.server_sgd();
        let mut rng = self.seeds.stream("server", 0, round as u64);
        self.server = match self.cfg.clients.local_update {
            LocalUpdate::Esgd { alpha, beta, include_server: true } => {
                if !self.server_anchor_seeded {
                    self.server.anchor = Some(self.global.clone());
                    self.server_anchor_seeded = true;
                }
                train_server_elastic(&self.server, &self.spec, sgd, Elastic { alpha, beta }, &self.global, &mut rng)?
            }
            _ => train_server(&self.server, &self.spec, sgd, &mut rng)?,
        };
        Ok(())
    }

    /// Runs the next round and returns its record.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let round = self.round + 1;
        if let Some(every) = self.cfg.server.curation_every {
            if round > 1 && (round - 1) % every == 0 {
                self.curate(round)?;
            }
        }
        let population = self.cfg.clients.population;
        let cohort = sample_cohort(population, self.cfg.clients.cohort, &mut self.seeds.stream("cohort", 0, round as u64))?;
        if cohort.is_empty() {
            return Err(config("empty cohort"));
        }
        let outcomes: Vec<ClientOutcome> = cohort
            .par_iter()
            .map(|&c| self.client_update(c, round))
            .collect::<Result<_>>()?;
        self.train_server_round(round)?;

        let models: Vec<ParamVector> = outcomes.iter().map(|o| o.model.clone()).collect();
        let weighting = compute_weights(&self.cfg.aggregator, &self.server.w0, &models)?;
        let next = aggregate(&weighting.rho, &models)?;
        let delta = param_dist(&self.global, &next)?;
        let losses: Vec<f64> = outcomes.iter().map(|o| o.loss).collect();
        let weighted_loss = weighted_train_loss(&weighting.rho, &losses)?;
        let bias = bias_statistic(&weighting.rho, &models, &self.server.w0)?;
        for (o, &c) in outcomes.into_iter().zip(&cohort) {
            if let Some(a) = o.anchor {
                self.anchors[c] = Some(a);
            }
        }
        self.global = next;
        self.round = round;
        let acc = accuracy(&self.spec, &self.global, &self.test)?;
        let server_acc = accuracy(&self.spec, &self.server.w0, &self.test)?;

        let snapshot_id = self.cfg.run.snapshot_every.filter(|&e| round % e == 0).map(|_| {
            self.snapshots.push(Snapshot {
                round,
                global: self.global.clone(),
                server: self.server.w0.clone(),
                cohort: cohort.clone(),
                client_models: models.clone(),
            });
            self.snapshots.len() - 1
        });
        // kept so the final round can be snapshotted even without `snapshot_every`
        self.last_models = Some((cohort.clone(), models));

        Ok(RoundRecord {
            round,
            attacker: cohort.iter().map(|&c| self.roles[c] == Role::Attacker).collect(),
            zero_weight_count: weighting.rho.zero_count(),
            rho: weighting.rho,
            distances: weighting.distances,
            client_losses: losses,
            accuracy: acc,
            server_accuracy: server_acc,
            weighted_loss,
            delta_w_norm: delta,
            bias,
            aggregator: self.cfg.aggregator.name().to_string(),
            tau: weighting.tau,
            snapshot_id,
            cohort,
        })
    }

    /// Runs rounds until the stopping rule fires.
    pub fn run_to_end(mut self) -> Result<RunResult> {
        let mut records = Vec::new();
        let stop_reason = loop {
            let rec = self.run_round()?;
            let converged = rec.delta_w_norm <= self.cfg.run.zeta;
            records.push(rec);
            if converged {
                break StopReason::Converged;
            }
            if self.round >= self.cfg.run.max_rounds {
                break StopReason::MaxRounds;
            }
        };
        let last = records.last_mut().expect("at least one round");
        if last.snapshot_id.is_none() {
            if let Some((cohort, models)) = self.last_models.take() {
                self.snapshots.push(Snapshot {
                    round: last.round,
                    global: self.global.clone(),
                    server: self.server.w0.clone(),
                    cohort,
                    client_models: models,
                });
                last.snapshot_id = Some(self.snapshots.len() - 1);
            }
        }
        Ok(RunResult {
            records,
            final_model: self.global,
            stop_reason,
            metadata: self.meta,
            snapshots: self.snapshots,
        })
    }
}

fn client_datasets(train: &Dataset, partition: &ClientPartition) -> Vec<Dataset> {
    partition.client_indices.iter().map(|idx| train.subset(idx)).collect()
}

/// Setup plus the full round loop.
pub fn run(cfg: ExperimentConfig) -> Result<RunResult> {
    Simulation::new(cfg)?.run_to_end()
}
