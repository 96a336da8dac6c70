//! `l2r`: build, transfer, route and evaluate region-graph routing models.

mod config;

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use l2r::apply_pref::DEFAULT_PAIR_CAP;
use l2r::error::Error as CoreError;
use l2r::eval::{evaluate, write_report, Band, EvalConfig, Method, Metric};
use l2r::ingest::{
    generate_synthetic, load_road_network, load_trajectories, write_road_network, write_trajectories, SyntheticConfig,
    TimeWindow,
};
use l2r::model::{build_model, BuildOptions, Model, Stage};
use l2r::netmodel::FuelModel;
use l2r::router::Router;
use l2r::transfer::TransferConfig;

use config::{Config, PIPELINE_KEYS};

/// Bad flags, config values or arguments. Exits with status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser, Debug)]
#[command(name = "l2r", version, about = "Region-graph routing learned from trajectories")]
struct Cli {
    /// key = value settings; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Cap on worker threads [default: all cores]
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic grid world: nodes.csv, edges.csv,
    /// trajectories.jsonl and planted.json
    Synth(SynthArgs),
    /// Cluster trajectories into regions and build the region graph
    Build(BuildArgs),
    /// Learn T-edge preferences, transfer them to B-edges and fill B-edges
    /// with paths
    Transfer(TransferArgs),
    /// Answer one routing query as JSON
    Route(RouteArgs),
    /// Score L2R, Shortest and Fastest on trajectories departing at or
    /// after a boundary
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Random seed, overriding the config's rng_seed [default: 1]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(long)]
    nodes: PathBuf,
    #[arg(long)]
    edges: PathBuf,
    /// Map-matched trajectories, one JSON object per line
    #[arg(long)]
    traj: PathBuf,
    /// Keep trajectories departing in this daily window (UTC)
    #[arg(long, value_name = "HH:MM-HH:MM")]
    window: Option<String>,
    /// Train only on trajectories departing before this epoch second
    #[arg(long, value_name = "T")]
    boundary: Option<i64>,
    /// Model file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TransferArgs {
    #[arg(long)]
    model: PathBuf,
    /// Similarity threshold on the raw [0, 2] scale [default: 0.7]
    #[arg(long)]
    amr: Option<f64>,
    /// Smoothness weight [default: 1.0]
    #[arg(long)]
    mu1: Option<f64>,
    /// Ridge weight [default: 0.01]
    #[arg(long)]
    mu2: Option<f64>,
    /// Road types kept per region for similarity features [default: 2]
    #[arg(long)]
    k: Option<usize>,
    /// Relative residual at which the solver stops [default: 1e-6]
    #[arg(long)]
    tolerance: Option<f64>,
    /// Solver iteration cap per feature column [default: 1000]
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Transfer-center pairs examined per B-edge [default: 64]
    #[arg(long)]
    pair_cap: Option<usize>,
    /// Model file to write; preferences.json and transfer_report.json go
    /// next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RouteArgs {
    #[arg(long)]
    model: PathBuf,
    /// Source node id
    #[arg(long)]
    from: i64,
    /// Destination node id
    #[arg(long)]
    to: i64,
    /// Departure time in epoch seconds
    #[arg(long)]
    depart: Option<i64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    /// Trajectories departing at or after this epoch second are queries
    #[arg(long, value_name = "T")]
    boundary: Option<i64>,
    /// Distance band edges in km [default: 0,2,5,10,35]
    #[arg(long, value_name = "KM,KM,...")]
    bands: Option<String>,
    /// Directory for report.json and report.csv
    #[arg(long)]
    out: PathBuf,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())),
        None => Ok(()),
    }
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("cannot load model {}", path.display()))
}

fn fuel_model(cfg: &Config) -> Result<FuelModel> {
    let d = FuelModel::default();
    Ok(FuelModel {
        a: cfg.pick(None, "fuel_a", d.a)?,
        b: cfg.pick(None, "fuel_b", d.b)?,
        c: cfg.pick(None, "fuel_c", d.c)?,
    })
}

fn parse_bands(text: &str) -> Result<Vec<Band>> {
    let edges: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("bands: cannot parse {text:?}")))?;
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(usage("bands need at least two increasing values"));
    }
    Ok(edges.windows(2).map(|w| Band { lo_km: w[0], hi_km: w[1] }).collect())
}

fn synth(args: SynthArgs, cfg: &Config) -> Result<()> {
    let mut world_cfg = SyntheticConfig::default();
    for (k, v) in cfg.entries() {
        if PIPELINE_KEYS.contains(&k) {
            continue;
        }
        world_cfg.set(k, v).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(seed) = args.seed {
        world_cfg.rng_seed = seed;
    }
    world_cfg.validate().map_err(|e| usage(e.to_string()))?;
    let world = generate_synthetic(&world_cfg)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    write_road_network(&world.network, &args.out.join("nodes.csv"), &args.out.join("edges.csv"))?;
    write_trajectories(&world.network, &world.trajectories, &args.out.join("trajectories.jsonl"))?;
    write_json(&args.out.join("planted.json"), &world.planted)?;
    info!(
        "wrote {} vertices, {} edges, {} trajectories to {}",
        world.network.vertex_count(),
        world.network.edge_count(),
        world.trajectories.len(),
        args.out.display()
    );
    Ok(())
}

fn build(args: BuildArgs, cfg: &Config) -> Result<()> {
    let window_text: Option<String> = match args.window {
        Some(w) => Some(w),
        None => cfg.get("window")?,
    };
    let window = window_text
        .as_deref()
        .map(str::parse::<TimeWindow>)
        .transpose()
        .map_err(|e| usage(e.to_string()))?;
    let boundary: Option<i64> = match args.boundary {
        Some(b) => Some(b),
        None => cfg.get("boundary")?,
    };

    let net = load_road_network(&args.nodes, &args.edges, fuel_model(cfg)?)?;
    let (mut trajs, report) = load_trajectories(&args.traj, &net, window)?;
    for r in report.rejects.iter().take(10) {
        warn!("{}:{}: rejected: {}", args.traj.display(), r.line, r.reason);
    }
    if let Some(b) = boundary {
        trajs.retain(|t| t.departure < b);
    }
    info!(
        "{} trajectory records: {} accepted, {} rejected, {} outside window, {} used for training",
        report.records,
        report.accepted,
        report.rejects.len(),
        report.outside_window,
        trajs.len()
    );
    if trajs.is_empty() {
        return Err(anyhow::anyhow!("{}: no usable training trajectories", args.traj.display()));
    }
    let opts = BuildOptions {
        window: window.map(|w| w.to_string()),
        boundary,
        ..BuildOptions::default()
    };
    let model = build_model(net, &trajs, opts)?;
    ensure_parent(&args.out)?;
    model.save(&args.out)?;
    info!("wrote {}", args.out.display());
    Ok(())
}

fn transfer(args: TransferArgs, cfg: &Config) -> Result<()> {
    let d = TransferConfig::default();
    let config = TransferConfig {
        amr: cfg.pick(args.amr, "amr", d.amr)?,
        mu1: cfg.pick(args.mu1, "mu1", d.mu1)?,
        mu2: cfg.pick(args.mu2, "mu2", d.mu2)?,
        k: cfg.pick(args.k, "k", d.k)?,
        tolerance: cfg.pick(args.tolerance, "tolerance", d.tolerance)?,
        max_iterations: cfg.pick(args.max_iterations, "max_iterations", d.max_iterations)?,
        null_threshold: cfg.pick(None, "null_threshold", d.null_threshold)?,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let pair_cap = cfg.pick(args.pair_cap, "pair_cap", DEFAULT_PAIR_CAP)?;
    if pair_cap == 0 {
        return Err(usage("pair_cap must be at least 1"));
    }

    let mut model = load_model(&args.model)?;
    let summary = model.transfer(&config, pair_cap)?.clone();
    ensure_parent(&args.out)?;
    model.save(&args.out)?;
    let dir = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    write_json(&dir.join("preferences.json"), &model.preferences())?;
    write_json(&dir.join("transfer_report.json"), &summary)?;
    info!(
        "learned {} T-edge preferences; B-edge null rate {:.3}; wrote {}",
        summary.learned,
        summary.report.null_rate,
        args.out.display()
    );
    Ok(())
}

fn route(args: RouteArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    if model.stage != Stage::Transferred {
        warn!("model has not been through transfer; B-edges cannot be routed");
    }
    let net = &model.network;
    let vertex = |id: i64| net.vertex_by_original(id).ok_or(CoreError::UnknownVertex(id));
    let (s, d) = (vertex(args.from)?, vertex(args.to)?);
    let result = Router::new(net, &model.graph).route(s, d, args.depart)?;
    let out = serde_json::to_string(&result.output(net))?;
    println!("{out}");
    Ok(())
}

fn eval(args: EvalArgs, cfg: &Config) -> Result<()> {
    let boundary: i64 = match args.boundary {
        Some(b) => b,
        None => cfg
            .get("boundary")?
            .ok_or_else(|| usage("eval needs --boundary or a boundary config key"))?,
    };
    let bands: Option<String> = match args.bands {
        Some(b) => Some(b),
        None => cfg.get("bands")?,
    };
    let config = match bands {
        Some(b) => EvalConfig { bands: parse_bands(&b)? },
        None => EvalConfig::default(),
    };

    let model = load_model(&args.model)?;
    let (trajs, report) = load_trajectories(&args.traj, &model.network, None)?;
    if !report.rejects.is_empty() {
        warn!("{}: {} records rejected", args.traj.display(), report.rejects.len());
    }
    let test: Vec<_> = trajs.into_iter().filter(|t| t.departure >= boundary).collect();
    let result = evaluate(&model, &test, &config)?;
    write_report(&result, &args.out)?;
    for m in Method::ALL {
        let mean = |metric| result.mean(m, metric).map_or("n/a".to_string(), |v| format!("{v:.4}"));
        info!(
            "{}: psim_intersection {} psim_union {}",
            m.name(),
            mean(Metric::PsimIntersection),
            mean(Metric::PsimUnion)
        );
    }
    info!("{} queries scored; wrote {}", result.scored, args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if !matches!(cli.command, Command::Synth(_)) {
        cfg.warn_unknown();
    }
    match cli.command {
        Command::Synth(a) => synth(a, &cfg),
        Command::Build(a) => build(a, &cfg),
        Command::Transfer(a) => transfer(a, &cfg),
        Command::Route(a) => route(a),
        Command::Eval(a) => eval(a, &cfg),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::NotConverged { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
