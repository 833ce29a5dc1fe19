//! Experiment configuration, single runs and sweeps.
//!
//! A config file is JSON whose top level holds the training fields of
//! [`FedConfig`] plus an `output` section. Every key is optional and falls
//! back to [`ExperimentConfig::default`]; unknown keys are errors.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::fedalgo::{Algorithm, FedConfig, RunHistory, Simulation};
use crate::metrics::{self, MetricRecord, CSV_HEADER};
use crate::partition;
use crate::topology::{self, TopologyDump, TopologyKind};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "DFLSIM_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const DEFAULT_SWEEP_CAP: usize = 500;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Run directory; `None` picks a name under the output root.
    pub dir: Option<PathBuf>,
    pub force: bool,
    pub dump_topology: Option<PathBuf>,
    pub dump_partition: Option<PathBuf>,
    pub save_models: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    pub fed: FedConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// The config as one JSON object: training keys plus `output`.
    pub fn to_value(&self) -> Value {
        let mut v = serde_json::to_value(&self.fed).expect("config serializes");
        v.as_object_mut()
            .expect("FedConfig is an object")
            .insert("output".into(), serde_json::to_value(&self.output).expect("output serializes"));
        v
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("config serializes")
    }

    /// Parses a (possibly partial) config object. Structural problems are
    /// collected and reported together, then the result is validated.
    pub fn from_value(user: &Value) -> Result<Self> {
        let mut merged = ExperimentConfig::default().to_value();
        let mut problems = Vec::new();
        merge_checked(&mut merged, user, "", &mut problems);
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut obj = match merged {
            Value::Object(o) => o,
            _ => unreachable!("default config is an object"),
        };
        let output = obj.remove("output").unwrap_or(Value::Null);
        let output: OutputConfig = serde_json::from_value(output)
            .map_err(|e| Error::config(format!("output: {e}")))?;
        let fed: FedConfig =
            serde_json::from_value(Value::Object(obj)).map_err(|e| Error::config(e.to_string()))?;
        fed.validate()?;
        Ok(ExperimentConfig { fed, output })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::config(format!("config is not valid JSON: {e}")))?;
        ExperimentConfig::from_value(&v)
    }
}

fn kind_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_u64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Overlays `user` on `base`, recording unknown keys and type mismatches
/// with their dotted key paths. A `null` in `base` accepts any value.
fn merge_checked(base: &mut Value, user: &Value, path: &str, problems: &mut Vec<String>) {
    let join = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, uv) in u {
                match b.get_mut(k) {
                    None => problems.push(format!("{}: unknown key", join(k))),
                    Some(bv) => merge_checked(bv, uv, &join(k), problems),
                }
            }
        }
        (b @ Value::Null, u) => *b = u.clone(),
        (b, u) => {
            let ok = match (&*b, u) {
                (Value::Bool(_), Value::Bool(_)) | (Value::String(_), Value::String(_)) => true,
                (Value::Array(_), Value::Array(_)) => true,
                (Value::Number(bn), Value::Number(un)) => !bn.is_u64() || un.is_u64(),
                (Value::Object(_), _) => false,
                _ => false,
            };
            if ok {
                *b = u.clone();
            } else {
                let shown = if path.is_empty() { "<root>" } else { path };
                problems.push(format!("{shown}: expected {}, got {}", kind_name(b), kind_name(u)));
            }
        }
    }
}

/// Sets `path` (dotted) in a JSON object tree, creating objects as needed.
pub fn set_path(root: &mut Value, path: &str, value: Value) {
    let mut cur = root;
    let mut parts = path.split('.').peekable();
    while let Some(p) = parts.next() {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("just made an object");
        if parts.peek().is_none() {
            obj.insert(p.to_string(), value);
            return;
        }
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
}

/// Reads an optional config file and applies `overrides` (dotted key,
/// value) on top before parsing.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<ExperimentConfig> {
    let mut v = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("{} is not valid JSON: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    for (k, val) in overrides {
        set_path(&mut v, k, val.clone());
    }
    ExperimentConfig::from_value(&v)
}

/// Parses `--set key=value`: the value is JSON if it parses, else a string.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(format!("`{s}`: expected key=value")))?;
    let val = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), val))
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// Directory name used when none is configured.
pub fn default_run_name(fed: &FedConfig) -> String {
    let topo = if fed.algorithm.is_centralized() {
        "central".to_string()
    } else {
        fed.topology.kind.to_string()
    };
    format!("{}-{}-m{}-q{}-s{}", fed.algorithm, topo, fed.m, fed.gossip_steps, fed.seed)
}

pub fn resolve_output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output
        .dir
        .clone()
        .unwrap_or_else(|| output_root().join(default_run_name(&cfg.fed)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub min_train_loss: f64,
    pub min_grad_norm_sq: f64,
    pub min_consensus_dist: f64,
    pub max_test_acc: Option<f64>,
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rounds_completed: usize,
    pub final_metrics: Option<MetricRecord>,
    pub best: Option<Best>,
    /// Final train accuracy minus final test accuracy.
    pub generalization_gap: Option<f64>,
    pub wall_time_s: f64,
    pub detail: Option<String>,
}

impl RunSummary {
    fn new(status: RunStatus, h: &RunHistory, wall: f64, detail: Option<String>) -> Self {
        let recs = &h.records;
        let best = if recs.is_empty() {
            None
        } else {
            let min = |f: fn(&MetricRecord) -> f64| recs.iter().map(f).fold(f64::INFINITY, f64::min);
            Some(Best {
                min_train_loss: min(|r| r.train_loss),
                min_grad_norm_sq: min(|r| r.grad_norm_sq),
                min_consensus_dist: min(|r| r.consensus_dist),
                max_test_acc: recs.iter().filter_map(|r| r.test_acc).reduce(f64::max),
            })
        };
        let last = recs.last();
        let generalization_gap = last
            .and_then(|r| Some((r.train_acc?, r.test_acc?)))
            .and_then(|(a, b)| metrics::generalization_gap(a, b).ok());
        RunSummary {
            status,
            algorithm: h.algorithm,
            seed: h.seed,
            rounds_completed: recs.len(),
            final_metrics: last.cloned(),
            best,
            generalization_gap,
            wall_time_s: wall,
            detail,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(Error::config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
        for name in ["config.json", "metrics.csv", "summary.json"] {
            let p = dir.join(name);
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
    } else {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Runs one experiment into `resolve_output_dir(cfg)`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    run_experiment_in(cfg, &resolve_output_dir(cfg))
}

/// Runs one experiment, writing `config.json`, `metrics.csv` (one row per
/// round, flushed as it goes) and `summary.json` into `dir`. On divergence
/// the partial CSV and a summary are kept and the error is returned.
pub fn run_experiment_in(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    cfg.fed.validate()?;
    prepare_dir(dir, cfg.output.force)?;
    fs::write(dir.join("config.json"), cfg.to_json_pretty() + "\n")?;
    let started = Instant::now();

    let sim = Simulation::new(cfg.fed.clone())?;
    if let Some(p) = &cfg.output.dump_topology {
        let spec = cfg.fed.topology_spec();
        let g = topology::build_graph(&spec, 0)?;
        let w = topology::mixing_matrix(&g)?;
        write_json(p, &TopologyDump::new(&g, &w))?;
    }
    if let Some(p) = &cfg.output.dump_partition {
        write_json(p, &partition::shard_dump(sim.shards()))?;
    }

    let mut csv = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    writeln!(csv, "{CSV_HEADER}")?;
    csv.flush()?;
    let outcome = sim.run_with(|snap| {
        writeln!(csv, "{}", snap.record.csv_row())?;
        csv.flush()?;
        Ok(())
    });
    drop(csv);
    let wall = started.elapsed().as_secs_f64();

    match outcome {
        Ok(history) => {
            if let Some(p) = &cfg.output.save_models {
                write_json(p, &history.final_models)?;
            }
            let summary = RunSummary::new(RunStatus::Ok, &history, wall, None);
            write_json(&dir.join("summary.json"), &summary)?;
            Ok(summary)
        }
        Err(Error::Diverged { detail, history }) => {
            if let Some(p) = &cfg.output.save_models {
                write_json(p, &history.final_models)?;
            }
            let summary = RunSummary::new(RunStatus::Diverged, &history, wall, Some(detail.clone()));
            write_json(&dir.join("summary.json"), &summary)?;
            Err(Error::Diverged { detail, history })
        }
        Err(e) => Err(e),
    }
}

/// Lists of values to take the cartesian product over. An empty list
/// keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    pub algorithm: Vec<Algorithm>,
    pub topology: Vec<TopologyKind>,
    #[serde(rename = "Q", alias = "q", alias = "gossip_steps")]
    pub q: Vec<usize>,
    #[serde(rename = "K", alias = "k", alias = "local_steps")]
    pub k: Vec<usize>,
    pub rho: Vec<f64>,
    pub alpha: Vec<f64>,
    pub m: Vec<usize>,
    pub seed: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub axes: SweepAxes,
    pub cap: usize,
}

impl SweepSpec {
    pub fn new(base: ExperimentConfig, axes: SweepAxes) -> Self {
        SweepSpec {
            base,
            axes,
            cap: DEFAULT_SWEEP_CAP,
        }
    }

    /// Parses `{"base": {...}, "axes": {...}, "cap": n}`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::config(format!("sweep is not valid JSON: {e}")))?;
        let obj = v.as_object().ok_or_else(|| Error::config("sweep: expected an object"))?;
        let mut problems: Vec<String> = obj
            .keys()
            .filter(|k| !["base", "axes", "cap"].contains(&k.as_str()))
            .map(|k| format!("{k}: unknown key"))
            .collect();
        let axes = match obj.get("axes") {
            None => SweepAxes::default(),
            Some(a) => serde_json::from_value(a.clone()).unwrap_or_else(|e| {
                problems.push(format!("axes: {e}"));
                SweepAxes::default()
            }),
        };
        let cap = match obj.get("cap") {
            None => DEFAULT_SWEEP_CAP,
            Some(c) => c.as_u64().map(|c| c as usize).unwrap_or_else(|| {
                problems.push("cap: expected integer".into());
                DEFAULT_SWEEP_CAP
            }),
        };
        let base = match obj.get("base") {
            None => Ok(ExperimentConfig::default()),
            Some(b) => ExperimentConfig::from_value(b),
        };
        let base = match base {
            Ok(b) => b,
            Err(Error::Config(v)) => {
                problems.extend(v.into_iter().map(|p| format!("base.{p}")));
                ExperimentConfig::default()
            }
            Err(e) => return Err(e),
        };
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(SweepSpec { base, axes, cap })
    }

    pub fn len(&self) -> usize {
        let a = &self.axes;
        [
            a.algorithm.len(),
            a.topology.len(),
            a.q.len(),
            a.k.len(),
            a.rho.len(),
            a.alpha.len(),
            a.m.len(),
            a.seed.len(),
        ]
        .iter()
        .map(|&n| n.max(1))
        .product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Every cell of the product in a fixed order, with its axis labels.
    pub fn expand(&self) -> Result<Vec<SweepRun>> {
        let n = self.len();
        if n > self.cap {
            return Err(Error::config(format!(
                "sweep has {n} runs, above the cap of {}",
                self.cap
            )));
        }
        let mut runs = vec![SweepRun {
            index: 0,
            labels: Vec::new(),
            config: self.base.clone(),
        }];
        let a = &self.axes;
        fn axis<T: Clone + ToString>(
            runs: Vec<SweepRun>,
            name: &str,
            vals: &[T],
            apply: impl Fn(&mut FedConfig, &T),
        ) -> Vec<SweepRun> {
            if vals.is_empty() {
                return runs;
            }
            let apply = &apply;
            runs.into_iter()
                .flat_map(|r| {
                    vals.iter().map(move |v| {
                        let mut r = r.clone();
                        apply(&mut r.config.fed, v);
                        r.labels.push((name.to_string(), v.to_string()));
                        r
                    }).collect::<Vec<_>>()
                })
                .collect()
        }
        runs = axis(runs, "algorithm", &a.algorithm, |f, v| f.algorithm = *v);
        runs = axis(runs, "topology", &a.topology, |f, v| f.topology.kind = *v);
        runs = axis(runs, "Q", &a.q, |f, v| f.gossip_steps = *v);
        runs = axis(runs, "K", &a.k, |f, v| f.local_steps = *v);
        runs = axis(runs, "rho", &a.rho, |f, v| f.rho = *v);
        runs = axis(runs, "alpha", &a.alpha, |f, v| f.partition.alpha = *v);
        runs = axis(runs, "m", &a.m, |f, v| f.m = *v);
        runs = axis(runs, "seed", &a.seed, |f, v| f.seed = *v);
        for (i, r) in runs.iter_mut().enumerate() {
            r.index = i;
            r.config.output = OutputConfig::default();
        }
        Ok(runs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub index: usize,
    /// `(axis, value)` pairs for the axes that vary.
    pub labels: Vec<(String, String)>,
    pub config: ExperimentConfig,
}

impl SweepRun {
    pub fn dir_name(&self) -> String {
        let mut s = format!("run{:04}", self.index);
        for (k, v) in &self.labels {
            s.push('_');
            s.push_str(k);
            s.push('=');
            s.push_str(v);
        }
        s
    }
}

/// One row of the sweep table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub run: SweepRun,
    pub status: String,
    pub final_test_acc: Option<f64>,
    pub generalization_gap: Option<f64>,
    pub final_consensus_dist: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status != "ok").count()
    }

    pub fn to_csv(&self) -> String {
        let axes: Vec<&str> = self
            .rows
            .first()
            .map(|r| r.run.labels.iter().map(|(k, _)| k.as_str()).collect())
            .unwrap_or_default();
        let mut out = String::from("run");
        for a in &axes {
            out.push(',');
            out.push_str(a);
        }
        out.push_str(",status,final_test_acc,generalization_gap,final_consensus_dist,final_train_loss\n");
        let f = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&r.run.dir_name());
            for (_, v) in &r.run.labels {
                out.push(',');
                out.push_str(v);
            }
            out.push_str(&format!(
                ",{},{},{},{},{}\n",
                r.status,
                f(r.final_test_acc),
                f(r.generalization_gap),
                f(r.final_consensus_dist),
                f(r.final_train_loss)
            ));
        }
        out
    }
}

/// Runs every cell of `spec` under `root`, `parallelism` at a time (0 uses
/// every core), and writes `root/sweep.csv`. Failed children are recorded
/// and the sweep continues.
pub fn run_sweep(spec: &SweepSpec, root: &Path, parallelism: usize, force: bool) -> Result<SweepReport> {
    let runs = spec.expand()?;
    fs::create_dir_all(root)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        runs.into_par_iter()
            .map(|run| {
                let dir = root.join(run.dir_name());
                let mut cfg = run.config.clone();
                cfg.output.force = force;
                let res = run_experiment_in(&cfg, &dir);
                let mut row = SweepRow {
                    run,
                    status: "ok".into(),
                    final_test_acc: None,
                    generalization_gap: None,
                    final_consensus_dist: None,
                    final_train_loss: None,
                    error: None,
                };
                let summary = match res {
                    Ok(s) => Some(s),
                    Err(e) => {
                        row.status = match e {
                            Error::Diverged { .. } => "diverged",
                            Error::Config(_) => "config_error",
                            _ => "error",
                        }
                        .into();
                        row.error = Some(e.to_string());
                        None
                    }
                };
                if let Some(last) = summary.as_ref().and_then(|s| s.final_metrics.as_ref()) {
                    row.final_test_acc = last.test_acc;
                    row.final_consensus_dist = Some(last.consensus_dist);
                    row.final_train_loss = Some(last.train_loss);
                }
                row.generalization_gap = summary.and_then(|s| s.generalization_gap);
                row
            })
            .collect()
    });
    let report = SweepReport { rows };
    fs::write(root.join("sweep.csv"), report.to_csv())?;
    Ok(report)
}
