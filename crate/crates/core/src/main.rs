use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use dflsim::fedalgo::{Algorithm, InitMode};
use dflsim::harness::{self, SweepSpec, OUTPUT_ROOT_ENV};
use dflsim::metrics::{self, BoundInputs};
use dflsim::topology::{self, TopologyDump, TopologyKind, TopologySpec};
use dflsim::{Error, Result};

#[derive(Parser)]
#[command(name = "dflsim", version, about = "Decentralized federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Simulate(Box<SimulateArgs>),
    /// Run the cartesian product of a sweep file.
    Sweep(SweepArgs),
    /// Print the spectrum and gossip-matrix checks of a topology.
    TopologyInfo(TopologyArgs),
    /// Evaluate the convergence bound from a JSON file of inputs.
    Bound {
        /// BoundInputs JSON file.
        input: PathBuf,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory (default: a generated name under the output root).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Overwrite a non-empty run directory.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    m: Option<usize>,
    /// Communication rounds T.
    #[arg(long = "t", visible_alias = "rounds")]
    rounds: Option<usize>,
    /// Local steps K.
    #[arg(long = "k", visible_alias = "local-steps")]
    local_steps: Option<usize>,
    /// Gossip steps Q.
    #[arg(long = "q", visible_alias = "gossip-steps")]
    gossip_steps: Option<usize>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    eta_decay: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    sample_frac: Option<f64>,
    #[arg(long)]
    topology: Option<TopologyKind>,
    /// Neighbour budget of time_varying_k.
    #[arg(long)]
    topology_k: Option<usize>,
    /// iid, dirichlet or pathological.
    #[arg(long)]
    partition: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    classes_per_client: Option<usize>,
    /// quadratic, logistic or mlp.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    hessian_every: Option<usize>,
    #[arg(long)]
    init: Option<InitMode>,
    /// Draw a fresh time-varying graph for every gossip step.
    #[arg(long)]
    mgs_fresh_graph: bool,
    /// Client worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any config key, e.g. `--set data.sep=2.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    dump_topology: Option<PathBuf>,
    #[arg(long)]
    dump_partition: Option<PathBuf>,
    #[arg(long)]
    save_models: Option<PathBuf>,
}

impl SimulateArgs {
    fn overrides(&self) -> Result<Vec<(String, Value)>> {
        let mut out: Vec<(String, Value)> = Vec::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        put("algorithm", self.algorithm.map(|a| json!(a)));
        put("m", self.m.map(|v| json!(v)));
        put("rounds", self.rounds.map(|v| json!(v)));
        put("local_steps", self.local_steps.map(|v| json!(v)));
        put("gossip_steps", self.gossip_steps.map(|v| json!(v)));
        put("eta0", self.eta0.map(|v| json!(v)));
        put("eta_decay", self.eta_decay.map(|v| json!(v)));
        put("rho", self.rho.map(|v| json!(v)));
        put("mu", self.mu.map(|v| json!(v)));
        put("batch_size", self.batch_size.map(|v| json!(v)));
        put("sample_frac", self.sample_frac.map(|v| json!(v)));
        put("topology.kind", self.topology.map(|v| json!(v)));
        put("topology.k", self.topology_k.map(|v| json!(v)));
        put("partition.kind", self.partition.as_ref().map(|v| json!(v)));
        put("partition.alpha", self.alpha.map(|v| json!(v)));
        put("partition.classes_per_client", self.classes_per_client.map(|v| json!(v)));
        put("model.kind", self.model.as_ref().map(|v| json!(v)));
        put("model.hidden", self.hidden.map(|v| json!(v)));
        put("model.l2", self.l2.map(|v| json!(v)));
        put("metrics.hessian_every", self.hessian_every.map(|v| json!(v)));
        put("init", self.init.map(|v| json!(v)));
        put("mgs_fresh_graph", self.mgs_fresh_graph.then_some(json!(true)));
        put("threads", self.threads.map(|v| json!(v)));
        put("seed", self.seed.map(|v| json!(v)));
        put("output.dir", self.out.as_ref().map(|v| json!(v)));
        put("output.force", self.force.then_some(json!(true)));
        put("output.dump_topology", self.dump_topology.as_ref().map(|v| json!(v)));
        put("output.dump_partition", self.dump_partition.as_ref().map(|v| json!(v)));
        put("output.save_models", self.save_models.as_ref().map(|v| json!(v)));
        for s in &self.set {
            out.push(harness::parse_assignment(s)?);
        }
        Ok(out)
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep file: {"base": {...}, "axes": {...}, "cap": 500}.
    spec: PathBuf,
    /// Sweep root directory (default: `sweep` under the output root).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Runs executed concurrently (0 = all cores).
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TopologyArgs {
    #[arg(long)]
    topology: TopologyKind,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    round: u64,
    /// Also write the JSON dump here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

fn simulate(args: &SimulateArgs) -> Result<i32> {
    let cfg = harness::parse_config(args.config.as_deref(), &args.overrides()?)?;
    let dir = harness::resolve_output_dir(&cfg);
    let summary = harness::run_experiment(&cfg)?;
    println!("{}", dir.display());
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}

fn sweep(args: &SweepArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", args.spec.display())))?;
    let spec = SweepSpec::from_json_str(&text)?;
    let root = args.out.clone().unwrap_or_else(|| harness::output_root().join("sweep"));
    let report = harness::run_sweep(&spec, &root, args.parallel, args.force)?;
    print!("{}", report.to_csv());
    for row in report.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("{}: {}", row.run.dir_name(), row.error.as_deref().unwrap_or(""));
    }
    Ok(if report.failures() > 0 { 4 } else { 0 })
}

fn topology_info(args: &TopologyArgs) -> Result<i32> {
    let spec = TopologySpec {
        kind: args.topology,
        m: args.m,
        k: args.k.or((args.topology == TopologyKind::TimeVaryingK).then_some(10)),
        seed: args.seed,
    };
    let g = topology::build_graph(&spec, args.round)?;
    let w = topology::mixing_matrix(&g)?;
    println!("topology      {}", spec.kind);
    println!("m             {}", g.m());
    println!("edges         {}", g.num_edges());
    println!("lambda        {:.12}", w.lambda());
    println!("spectral_gap  {:.12}", w.spectral_gap());
    print!("{}", topology::validate_gossip(w.matrix(), Some(&g)));
    if let Some(p) = &args.dump {
        std::fs::write(p, serde_json::to_string_pretty(&TopologyDump::new(&g, &w))? + "\n")?;
    }
    Ok(0)
}

fn bound(input: &PathBuf) -> Result<i32> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", input.display())))?;
    let inputs: BoundInputs = serde_json::from_str(&text).map_err(|e| Error::config(e.to_string()))?;
    let report = metrics::convergence_bound(&inputs)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::TopologyInfo(a) => topology_info(a),
        Command::Bound { input } => bound(input),
    };
    match res {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Config(list) = &e {
                if list.len() > 1 {
                    for item in list {
                        eprintln!("  - {item}");
                    }
                }
            }
            if e.exit_code() == 1 && matches!(e, Error::Io(_)) {
                eprintln!("(set {OUTPUT_ROOT_ENV} to change the default output root)");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
