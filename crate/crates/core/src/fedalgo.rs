//! Decentralized and centralized federated training.
//!
//! Every decentralized round runs `K` local optimizer steps on each client
//! and then mixes the resulting models `Q` times with the gossip matrix:
//!
//! ```text
//! z_i   = local_update(x_i)            (SAM, SGD or momentum)
//! X_new = W^Q Z                        (Q neighbour exchanges)
//! ```
//!
//! The centralized baselines sample a fraction of clients, run the same
//! local update from the global model and replace it by the plain average.
//!
//! All randomness is drawn from streams keyed by `(seed, client, round,
//! step)`, so histories do not depend on the worker-thread count.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, MetricRecord};
use crate::model::{self, Batch, ModelKind, ModelSpec, ParamVector};
use crate::optimizer::{OptState, OptimizerKind};
use crate::partition::{self, ClientShard, Dataset, PartitionKind, PartitionSpec};
use crate::rng::{self, domain};
use crate::topology::{self, MixingMatrix, TopologyKind, TopologySpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dfedsam,
    DfedsamMgs,
    Dpsgd,
    Dfedavg,
    Dfedavgm,
    Fedavg,
    Fedsam,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Dfedsam,
        Algorithm::DfedsamMgs,
        Algorithm::Dpsgd,
        Algorithm::Dfedavg,
        Algorithm::Dfedavgm,
        Algorithm::Fedavg,
        Algorithm::Fedsam,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Dfedsam => "dfedsam",
            Algorithm::DfedsamMgs => "dfedsam_mgs",
            Algorithm::Dpsgd => "dpsgd",
            Algorithm::Dfedavg => "dfedavg",
            Algorithm::Dfedavgm => "dfedavgm",
            Algorithm::Fedavg => "fedavg",
            Algorithm::Fedsam => "fedsam",
        }
    }

    pub fn is_centralized(self) -> bool {
        matches!(self, Algorithm::Fedavg | Algorithm::Fedsam)
    }

    pub fn optimizer(self) -> OptimizerKind {
        match self {
            Algorithm::Dfedsam | Algorithm::DfedsamMgs | Algorithm::Fedsam => OptimizerKind::Sam,
            Algorithm::Dfedavgm => OptimizerKind::Momentum,
            Algorithm::Dpsgd | Algorithm::Dfedavg | Algorithm::Fedavg => OptimizerKind::Sgd,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == norm)
            .ok_or_else(|| Error::config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// One random model copied to every client.
    Shared,
    /// An independent random model per client.
    PerClient,
    Zero,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(InitMode::Shared),
            "per-client" | "per_client" => Ok(InitMode::PerClient),
            "zero" => Ok(InitMode::Zero),
            other => Err(Error::config(format!("unknown init mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    pub sep: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            n: 4000,
            d: 10,
            classes: 10,
            sep: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    /// Neighbour budget for `time_varying_k`.
    pub k: Option<usize>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            kind: TopologyKind::TimeVaryingK,
            k: Some(10),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub kind: PartitionKind,
    pub alpha: f64,
    pub classes_per_client: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            kind: PartitionKind::Dirichlet,
            alpha: 0.3,
            classes_per_client: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    pub l2: f64,
    pub curvature: Option<Vec<f64>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Logistic,
            hidden: 16,
            l2: 5e-4,
            curvature: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Hessian eigenvalue cadence `E` in rounds; 0 disables it.
    pub hessian_every: usize,
    /// Number of training samples in the fixed Hessian probe batch.
    pub hessian_probe: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            hessian_every: 10,
            hessian_probe: 1000,
        }
    }
}

/// Everything that determines one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedConfig {
    pub algorithm: Algorithm,
    /// Number of clients.
    pub m: usize,
    /// Communication rounds `T`.
    pub rounds: usize,
    /// Local steps `K` per round; 0 runs pure gossip.
    pub local_steps: usize,
    /// Gossip steps `Q` per round.
    pub gossip_steps: usize,
    pub eta0: f64,
    /// Multiplicative step-size decay applied once per round.
    pub eta_decay: f64,
    pub rho: f64,
    pub mu: f64,
    pub batch_size: usize,
    /// Fraction of clients sampled per round by the centralized baselines.
    pub sample_frac: f64,
    pub topology: TopologyConfig,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    pub data: DataSpec,
    pub metrics: MetricsConfig,
    pub init: InitMode,
    /// With a time-varying topology, draw a new graph for every gossip step.
    pub mgs_fresh_graph: bool,
    /// Client worker threads: 1 is serial, 0 uses every core.
    pub threads: usize,
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            algorithm: Algorithm::Dfedsam,
            m: 16,
            rounds: 200,
            local_steps: 5,
            gossip_steps: 1,
            eta0: 0.1,
            eta_decay: 0.998,
            rho: 0.01,
            mu: 0.9,
            batch_size: 128,
            sample_frac: 0.1,
            topology: TopologyConfig::default(),
            partition: PartitionConfig::default(),
            model: ModelConfig::default(),
            data: DataSpec::default(),
            metrics: MetricsConfig::default(),
            init: InitMode::Shared,
            mgs_fresh_graph: false,
            threads: 1,
            seed: 0,
        }
    }
}

impl FedConfig {
    pub fn topology_spec(&self) -> TopologySpec {
        TopologySpec {
            kind: self.topology.kind,
            m: self.m,
            k: self.topology.k,
            seed: rng::derive_key(self.seed, &[domain::TOPOLOGY]),
        }
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            kind: self.partition.kind,
            alpha: self.partition.alpha,
            classes_per_client: self.partition.classes_per_client,
            m: self.m,
            seed: rng::derive_key(self.seed, &[domain::PARTITION]),
        }
    }

    pub fn model_spec(&self, input_dim: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            kind: self.model.kind,
            input_dim,
            hidden: if self.model.kind == ModelKind::Mlp {
                self.model.hidden
            } else {
                0
            },
            classes: if self.model.kind == ModelKind::Quadratic {
                0
            } else {
                classes
            },
            l2: self.model.l2,
            curvature: self.model.curvature.clone(),
        }
    }

    /// Local steps actually run; D-PSGD always takes one.
    pub fn effective_local_steps(&self) -> usize {
        if self.algorithm == Algorithm::Dpsgd {
            1
        } else {
            self.local_steps
        }
    }

    pub fn effective_gossip_steps(&self) -> usize {
        if self.algorithm == Algorithm::Dpsgd {
            1
        } else {
            self.gossip_steps
        }
    }

    pub fn step_size(&self, round: usize) -> f64 {
        self.eta0 * self.eta_decay.powi(round as i32)
    }

    /// Number of clients sampled per round by the centralized baselines.
    pub fn sampled_clients(&self) -> usize {
        ((self.sample_frac * self.m as f64).ceil() as usize).clamp(1, self.m.max(1))
    }

    /// Every violated constraint, with key paths.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.m == 0 {
            out.push("m: must be at least 1".to_string());
        }
        if self.rounds == 0 {
            out.push("rounds: must be at least 1".to_string());
        }
        if self.gossip_steps == 0 {
            out.push("gossip_steps: Q must be at least 1".to_string());
        }
        if self.algorithm == Algorithm::Dfedsam && self.gossip_steps != 1 {
            out.push(format!(
                "gossip_steps: dfedsam uses a single gossip step (got Q = {}); use dfedsam_mgs for Q > 1",
                self.gossip_steps
            ));
        }
        if !(self.eta0 >= 0.0 && self.eta0.is_finite()) {
            out.push(format!("eta0: must be finite and nonnegative, got {}", self.eta0));
        }
        if !(self.eta_decay > 0.0 && self.eta_decay.is_finite()) {
            out.push(format!("eta_decay: must be positive, got {}", self.eta_decay));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            out.push(format!("rho: must be finite and nonnegative, got {}", self.rho));
        }
        if !(0.0..1.0).contains(&self.mu) {
            out.push(format!("mu: must be in [0, 1), got {}", self.mu));
        }
        if self.batch_size == 0 {
            out.push("batch_size: must be at least 1".to_string());
        }
        if !(self.sample_frac > 0.0 && self.sample_frac <= 1.0) {
            out.push(format!("sample_frac: must be in (0, 1], got {}", self.sample_frac));
        }
        if !self.algorithm.is_centralized() {
            out.extend(self.topology_spec().violations());
        }
        out.extend(self.partition_spec().violations());
        if self.partition.kind == PartitionKind::Pathological
            && self.partition.classes_per_client > self.data.classes
        {
            out.push(format!(
                "partition.classes_per_client: {} exceeds data.classes = {}",
                self.partition.classes_per_client, self.data.classes
            ));
        }
        out.extend(self.model_spec(self.data.d, self.data.classes).violations());
        if self.data.d < 2 {
            out.push(format!("data.d: must be at least 2, got {}", self.data.d));
        }
        if self.data.classes == 0 || self.data.n < 10 * self.data.classes {
            out.push(format!(
                "data.n: need at least 10 samples per class (n = {}, classes = {})",
                self.data.n, self.data.classes
            ));
        }
        if !(self.data.sep > 0.0 && self.data.sep.is_finite()) {
            out.push(format!("data.sep: must be positive, got {}", self.data.sep));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Per-round metrics plus the final client models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub records: Vec<MetricRecord>,
    /// Client models after the last completed round.
    pub final_models: Vec<ParamVector>,
}

impl RunHistory {
    pub fn last(&self) -> Option<&MetricRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        metrics::write_csv(&mut buf, &self.records).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

/// The client model matrix after a round, handed to observers.
#[derive(Clone, Debug)]
pub struct RoundSnapshot<'a> {
    pub t: usize,
    pub models: &'a [ParamVector],
    pub record: &'a MetricRecord,
}

/// `W X`: one neighbour exchange.
pub fn gossip_step(xs: &[ParamVector], w: &MixingMatrix) -> Result<Vec<ParamVector>> {
    if xs.len() != w.m() {
        return Err(Error::Dimension {
            expected: w.m(),
            got: xs.len(),
            context: "gossip rows",
        });
    }
    let p = xs.first().map_or(0, |x| x.len());
    if let Some(bad) = xs.iter().find(|x| x.len() != p) {
        return Err(Error::Dimension {
            expected: p,
            got: bad.len(),
            context: "gossip row length",
        });
    }
    Ok((0..xs.len())
        .map(|i| {
            let mut acc = vec![0.0; p];
            for &(j, wij) in w.row(i) {
                for (a, v) in acc.iter_mut().zip(xs[j].iter()) {
                    *a += wij * v;
                }
            }
            ParamVector(acc)
        })
        .collect())
}

/// `W^Q X` as `Q` successive exchanges.
pub fn gossip_round(xs: &[ParamVector], w: &MixingMatrix, q: usize) -> Result<Vec<ParamVector>> {
    if q == 0 {
        return Err(Error::invalid("gossip_round needs Q >= 1"));
    }
    let mut cur = gossip_step(xs, w)?;
    for _ in 1..q {
        cur = gossip_step(&cur, w)?;
    }
    Ok(cur)
}

/// Runs `k` optimizer steps from `x`. Step `s` trains on a batch drawn
/// from the stream keyed `(seed, client, round, s)`; a batch at least as
/// large as the shard is the whole shard.
#[allow(clippy::too_many_arguments)]
pub fn local_update(
    spec: &ModelSpec,
    x: &ParamVector,
    opt: &mut OptState,
    shard: &Batch,
    k: usize,
    batch_size: usize,
    seed: u64,
    client: usize,
    round: usize,
) -> Result<ParamVector> {
    let mut y = x.clone();
    let full = batch_size >= shard.len() || spec.kind == ModelKind::Quadratic;
    for step in 0..k {
        let drawn;
        let batch = if full {
            shard
        } else {
            let mut r = rng::stream(seed, &[domain::BATCH, client as u64, round as u64, step as u64]);
            drawn = shard.select(&sample(&mut r, shard.len(), batch_size).into_vec());
            &drawn
        };
        y = opt.step_on(spec, &y, batch).map_err(|e| match e {
            Error::NonFinite { context } => Error::NonFinite {
                context: format!("{context} (client {client}, round {round}, step {step})"),
            },
            other => other,
        })?;
    }
    Ok(y)
}

/// A configured experiment: data, shards and gossip matrices ready to run.
pub struct Simulation {
    config: FedConfig,
    spec: ModelSpec,
    data: Dataset,
    shards: Vec<ClientShard>,
    shard_batches: Vec<Batch>,
    train_batch: Batch,
    test_batch: Batch,
    probe_batch: Batch,
    static_mixing: Option<MixingMatrix>,
    initial: Option<Vec<ParamVector>>,
}

impl Simulation {
    /// Builds the synthetic dataset and its client partition from `config`.
    pub fn new(config: FedConfig) -> Result<Self> {
        config.validate()?;
        let d = &config.data;
        let data = partition::make_synthetic(
            d.n,
            d.d,
            d.classes,
            d.sep,
            rng::derive_key(config.seed, &[domain::DATA]),
        )?;
        let shards = partition::partition(&data, &config.partition_spec())?;
        Simulation::from_parts(config, data, shards)
    }

    /// Uses a caller-supplied dataset and partition. `config.data` and
    /// `config.partition` are ignored.
    pub fn from_parts(config: FedConfig, data: Dataset, shards: Vec<ClientShard>) -> Result<Self> {
        let mut bad: Vec<String> = config
            .violations()
            .into_iter()
            .filter(|v| !v.starts_with("data.") && !v.starts_with("partition") && !v.starts_with("model."))
            .collect();
        let spec = config.model_spec(data.dim(), data.classes());
        bad.extend(spec.violations());
        if shards.len() != config.m {
            bad.push(format!("m: {} clients but {} shards", config.m, shards.len()));
        }
        if let Some(s) = shards.iter().find(|s| s.indices.is_empty()) {
            bad.push(format!("shard of client {} is empty", s.client_id));
        }
        if !bad.is_empty() {
            return Err(Error::Config(bad));
        }

        let shard_batches: Vec<Batch> = shards.iter().map(|s| data.batch(&s.indices)).collect();
        let train_batch = data.batch(data.train());
        let test_batch = data.batch(data.test());
        let probe_n = config.metrics.hessian_probe.clamp(1, data.train().len());
        let probe_batch = data.batch(&data.train()[..probe_n]);
        let static_mixing = if config.algorithm.is_centralized() || config.topology.kind == TopologyKind::TimeVaryingK {
            None
        } else {
            let g = topology::build_graph(&config.topology_spec(), 0)?;
            Some(topology::mixing_matrix(&g)?)
        };
        Ok(Simulation {
            spec,
            data,
            shards,
            shard_batches,
            train_batch,
            test_batch,
            probe_batch,
            static_mixing,
            initial: None,
            config,
        })
    }

    /// Starts every client from the given models instead of `config.init`.
    pub fn with_initial_models(mut self, xs: Vec<ParamVector>) -> Result<Self> {
        if xs.len() != self.config.m {
            return Err(Error::Dimension {
                expected: self.config.m,
                got: xs.len(),
                context: "initial models",
            });
        }
        let p = self.spec.num_params();
        if let Some(bad) = xs.iter().find(|x| x.len() != p) {
            return Err(Error::Dimension {
                expected: p,
                got: bad.len(),
                context: "initial model length",
            });
        }
        self.initial = Some(xs);
        Ok(self)
    }

    pub fn config(&self) -> &FedConfig {
        &self.config
    }

    pub fn model_spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn shards(&self) -> &[ClientShard] {
        &self.shards
    }

    pub fn shard_batches(&self) -> &[Batch] {
        &self.shard_batches
    }

    /// Gossip matrix of a static topology; `None` for time-varying or
    /// centralized runs.
    pub fn static_mixing(&self) -> Option<&MixingMatrix> {
        self.static_mixing.as_ref()
    }

    pub fn initial_models(&self) -> Vec<ParamVector> {
        if let Some(xs) = &self.initial {
            return xs.clone();
        }
        let seed = self.config.seed;
        let m = self.config.m;
        match self.config.init {
            InitMode::Shared => vec![self.spec.init(seed, &[domain::INIT]); m],
            InitMode::PerClient => (0..m)
                .map(|i| self.spec.init(seed, &[domain::INIT, i as u64 + 1]))
                .collect(),
            InitMode::Zero => vec![ParamVector::zeros(self.spec.num_params()); m],
        }
    }

    pub fn run(&self) -> Result<RunHistory> {
        self.run_with(|_| Ok(()))
    }

    /// Runs all rounds, calling `observer` after each one.
    pub fn run_with<F>(&self, mut observer: F) -> Result<RunHistory>
    where
        F: FnMut(&RoundSnapshot<'_>) -> Result<()>,
    {
        let cfg = &self.config;
        let pool = if cfg.threads == 1 {
            None
        } else {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| Error::invalid(format!("thread pool: {e}")))?,
            )
        };
        let p = self.spec.num_params();
        let mut xs = self.initial_models();
        let mut opts: Vec<OptState> = (0..cfg.m)
            .map(|_| match cfg.algorithm.optimizer() {
                OptimizerKind::Sgd => OptState::sgd(cfg.eta0),
                OptimizerKind::Sam => OptState::sam(cfg.eta0, cfg.rho),
                OptimizerKind::Momentum => OptState::momentum(cfg.eta0, cfg.mu, p),
            })
            .collect();
        let mut global = metrics::mean_model(&xs);
        let mut history = RunHistory {
            algorithm: cfg.algorithm,
            seed: cfg.seed,
            records: Vec::with_capacity(cfg.rounds),
            final_models: xs.clone(),
        };
        let k = cfg.effective_local_steps();
        let q = cfg.effective_gossip_steps();

        for round in 0..cfg.rounds {
            let eta = cfg.step_size(round);
            opts.iter_mut().for_each(|o| o.eta = eta);

            let active: Vec<usize> = if cfg.algorithm.is_centralized() {
                let mut r = rng::stream(cfg.seed, &[domain::SAMPLE_CLIENTS, round as u64]);
                let mut ids = sample(&mut r, cfg.m, cfg.sampled_clients()).into_vec();
                ids.sort_unstable();
                ids
            } else {
                (0..cfg.m).collect()
            };

            let start = |i: usize| if cfg.algorithm.is_centralized() { &global } else { &xs[i] };
            let mut work: Vec<(usize, &mut OptState)> = opts
                .iter_mut()
                .enumerate()
                .filter(|(i, _)| active.binary_search(i).is_ok())
                .collect();
            let update = |(i, opt): &mut (usize, &mut OptState)| {
                local_update(
                    &self.spec,
                    start(*i),
                    opt,
                    &self.shard_batches[*i],
                    k,
                    cfg.batch_size,
                    cfg.seed,
                    *i,
                    round,
                )
            };
            let results: Vec<Result<ParamVector>> = match &pool {
                None => work.iter_mut().map(update).collect(),
                Some(pool) => pool.install(|| work.par_iter_mut().map(update).collect()),
            };
            let mut zs = Vec::with_capacity(results.len());
            for res in results {
                match res {
                    Ok(z) => zs.push(z),
                    Err(Error::NonFinite { context }) => {
                        return Err(Error::Diverged {
                            detail: context,
                            history: Box::new(history),
                        })
                    }
                    Err(e) => return Err(e),
                }
            }

            let next = if cfg.algorithm.is_centralized() {
                global = metrics::mean_model(&zs);
                vec![global.clone(); cfg.m]
            } else {
                self.mix(&zs, round, q)?
            };
            if !next.iter().all(|x| x.is_finite()) {
                return Err(Error::Diverged {
                    detail: format!("non-finite model after aggregation in round {round}"),
                    history: Box::new(history),
                });
            }

            let record = self.measure(&next, round + 1, eta)?;
            if !record.train_loss.is_finite() || !record.grad_norm_sq.is_finite() {
                return Err(Error::Diverged {
                    detail: format!("non-finite metrics in round {round}"),
                    history: Box::new(history),
                });
            }
            xs = next;
            observer(&RoundSnapshot {
                t: record.t,
                models: &xs,
                record: &record,
            })?;
            history.records.push(record);
            history.final_models.clone_from(&xs);
        }
        Ok(history)
    }

    fn mix(&self, zs: &[ParamVector], round: usize, q: usize) -> Result<Vec<ParamVector>> {
        if let Some(w) = &self.static_mixing {
            return gossip_round(zs, w, q);
        }
        let spec = self.config.topology_spec();
        if self.config.mgs_fresh_graph {
            let mut cur = zs.to_vec();
            for step in 0..q {
                let w = topology::mixing_matrix(&topology::build_graph_at(&spec, round as u64, step as u64)?)?;
                cur = gossip_step(&cur, &w)?;
            }
            Ok(cur)
        } else {
            let w = topology::mixing_matrix(&topology::build_graph(&spec, round as u64)?)?;
            gossip_round(zs, &w, q)
        }
    }

    /// Metrics of the averaged model `x_bar` for client models `xs`.
    pub fn measure(&self, xs: &[ParamVector], t: usize, eta: f64) -> Result<MetricRecord> {
        let spec = &self.spec;
        let mean = metrics::mean_model(xs);
        let m = self.shard_batches.len() as f64;
        let mut train_loss = 0.0;
        for b in &self.shard_batches {
            train_loss += model::loss(spec, &mean, b)?;
        }
        train_loss /= m;
        let classify = spec.is_classifier();
        let has_test = classify && !self.test_batch.is_empty();
        let every = self.config.metrics.hessian_every;
        let hessian_eig = if every > 0 && (t.is_multiple_of(every) || t == self.config.rounds) {
            Some(model::largest_hessian_eig(spec, &mean, &self.probe_batch, 500, 1e-9)?.value)
        } else {
            None
        };
        Ok(MetricRecord {
            t,
            train_loss,
            test_loss: if has_test {
                Some(model::loss(spec, &mean, &self.test_batch)?)
            } else {
                None
            },
            train_acc: if classify {
                Some(model::accuracy(spec, &mean, &self.train_batch)?)
            } else {
                None
            },
            test_acc: if has_test {
                Some(model::accuracy(spec, &mean, &self.test_batch)?)
            } else {
                None
            },
            consensus_dist: metrics::consensus_distance(xs),
            grad_norm_sq: metrics::avg_model_grad_norm_sq(spec, xs, &self.shard_batches)?,
            eta_t: eta,
            hessian_eig,
        })
    }
}

/// Builds the simulation for `config` and runs it.
pub fn run(config: &FedConfig) -> Result<RunHistory> {
    Simulation::new(config.clone())?.run()
}
