use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use edgetail::analytics::{evaluate_server, system_tail_bound, BoundStatus};
use edgetail::bench::{self, BenchError};
use edgetail::config::{SimMode, SimulationConfig};
use edgetail::env::Environment;
use edgetail::io;
use edgetail::metrics::{average_queue_length, export_cdf, LatencySummary};
use edgetail::plans::PlanCatalog;
use edgetail::schedulers::{self, PolicyMatrix, SchedulerKind};
use edgetail::sim::{self, QueueSnapshot, RequestRecord, RunOptions};
use edgetail::workload::{generate_workload, RequestTrace};
use serde::Serialize;
use serde_json::json;

/// Errors that exit with status 2 instead of 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "edgetail", version, about = "Tail-latency simulation for parallel edge computation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trace with a scheduler and write per-request results.
    Run(RunArgs),
    /// Play one stepped episode with a fixed policy and write its audit trail.
    Episode(EpisodeArgs),
    /// Print the optimized per-server tail bounds for a routing matrix.
    Bound(BoundArgs),
    /// Summarize a per-request CSV.
    Report(ReportArgs),
    /// Run the config's scenario x scheduler grid.
    Bench(BenchArgs),
    /// Serve the stepped environment over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["analytic", "coupled"])]
    mode: Option<String>,
    #[arg(long)]
    delta_ms: Option<f64>,
    #[arg(long)]
    gamma_ms: Option<f64>,
    #[arg(long)]
    load_scale: Option<f64>,
}

impl Overrides {
    fn load(&self) -> Result<SimulationConfig> {
        let mut config = SimulationConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(mode) = &self.mode {
            config.sim.mode = mode.parse::<SimMode>().map_err(Usage)?;
        }
        if let Some(d) = self.delta_ms {
            config.step.delta_ms = d;
        }
        if let Some(g) = self.gamma_ms {
            config.reward.gamma = g;
        }
        if let Some(s) = self.load_scale {
            config.sim.load_scale = s;
        }
        config.validate().context("invalid configuration after overrides")?;
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long, value_parser = ["rd", "gd", "da", "policy"], default_value = "da")]
    scheduler: String,
    /// `{service_id: [probabilities]}` for `--scheduler policy`.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Replay this arrival trace instead of generating one.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EpisodeArgs {
    #[command(flatten)]
    common: Overrides,
    /// Fixed plan distributions applied at every step; uniform when absent.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    #[command(flatten)]
    common: Overrides,
    /// Routing matrix, one row per service and one column per server.
    #[arg(long, conflicts_with = "policy")]
    omega: Option<PathBuf>,
    #[arg(long)]
    policy: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    requests: PathBuf,
    /// Snapshot CSV; defaults to `queues.csv` next to the requests file.
    #[arg(long)]
    queues: Option<PathBuf>,
    /// Defaults to `report/` next to the requests file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    resolution: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn load_policy(path: &Path, catalog: &PlanCatalog, servers: usize) -> Result<PolicyMatrix> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let map: BTreeMap<String, Vec<f64>> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    PolicyMatrix::from_service_map(catalog, &map, servers).with_context(|| format!("policy {}", path.display()))
}

#[derive(Serialize)]
struct RunSummary {
    requests: usize,
    completed: usize,
    latency: Option<LatencySummary>,
    mean_queue_length: f64,
    per_server_queue_length: Vec<f64>,
    utilization: f64,
}

/// Latency part of a summary from per-request records alone.
fn latency_summary(records: &[RequestRecord]) -> Option<LatencySummary> {
    let latencies: Vec<f64> = records.iter().map(|r| r.latency_ms).collect();
    LatencySummary::from_latencies(&latencies).ok()
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let started = Instant::now();
    let config = args.common.load()?;
    let kind: SchedulerKind = args.scheduler.parse().map_err(Usage)?;
    let catalog = PlanCatalog::build(&config)?;
    let policy = match (&args.policy, kind) {
        (Some(p), SchedulerKind::Policy) => Some(load_policy(p, &catalog, config.num_servers())?),
        (Some(_), _) => bail!(Usage("--policy requires --scheduler policy".into())),
        (None, _) => None,
    };
    let trace = match &args.trace {
        Some(path) => {
            let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            RequestTrace::read_csv(file, config.seed, config.sim.horizon_ms)?
        }
        None => generate_workload(&config, config.seed)?,
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut trace_file = fs::File::create(args.out.join("trace.csv"))?;
    trace.write_csv(&mut trace_file)?;

    let mut scheduler = schedulers::build(kind, &catalog, config.num_servers(), config.seed, policy.clone());
    let mut snapshots: Vec<QueueSnapshot> = Vec::new();
    let result = sim::run(
        &config,
        trace,
        scheduler.as_mut(),
        &mut snapshots,
        RunOptions::from_config(&config),
        config.seed,
    )?;
    io::write_requests_file(&args.out.join("requests.csv"), &result.records)?;
    io::write_snapshots_file(&args.out.join("queues.csv"), &snapshots)?;
    let queues = average_queue_length(&snapshots).ok();
    let summary = RunSummary {
        requests: result.records.len(),
        completed: result.completed(),
        latency: latency_summary(&result.records),
        mean_queue_length: queues.as_ref().map_or(0.0, |q| q.mean),
        per_server_queue_length: queues.map_or_else(Vec::new, |q| q.per_server.iter().map(|p| p.1).collect()),
        utilization: config.mean_utilization(),
    };
    write_json(&args.out.join("summary.json"), &summary)?;
    write_json(&args.out.join("config.json"), &config)?;
    if let Some(p) = &policy {
        write_json(&args.out.join("policy.json"), p)?;
    }
    write_json(
        &args.out.join("manifest.json"),
        &json!({
            "command": "run",
            "config_path": args.common.config,
            "config_echo": "config.json",
            "seed": config.seed,
            "scheduler": kind,
            "mode": config.sim.mode,
            "policy": args.policy,
            "trace": args.trace,
            "output_dir": args.out,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix_ms": unix_ms() - started.elapsed().as_millis(),
            "elapsed_ms": started.elapsed().as_secs_f64() * 1e3,
        }),
    )?;
    match &summary.latency {
        Some(l) => println!(
            "{} requests, p50 {:.3} ms, p99 {:.3} ms, p99.9 {:.3} ms, {} unfinished",
            summary.requests, l.p50, l.p99, l.p999, l.infinite
        ),
        None => println!("{} requests, none finished", summary.requests),
    }
    Ok(())
}

fn cmd_episode(args: EpisodeArgs) -> Result<()> {
    let started = Instant::now();
    let config = args.common.load()?;
    let mut env = Environment::new(config.clone())?;
    let policy = match &args.policy {
        Some(p) => load_policy(p, env.catalog(), config.num_servers())?,
        None => PolicyMatrix::uniform(env.catalog(), config.num_servers()),
    };
    let action = policy.distributions().to_vec();
    let mut states = vec![env.reset(Some(config.seed))?.values];
    let mut rows = Vec::new();
    loop {
        let out = env.step(&action)?;
        states.push(out.state.values);
        rows.push(out.info.clone());
        println!(
            "window {:>3}: reward {:>12.6}, credited {}, deferred {}",
            out.info.window_index, out.reward, out.info.credited, out.info.deferred
        );
        if out.done {
            break;
        }
    }
    fs::create_dir_all(&args.out)?;
    io::write_requests_file(&args.out.join("requests.csv"), env.records()?)?;
    io::write_snapshots_file(&args.out.join("queues.csv"), env.snapshots()?)?;
    let mut w = String::from("window,start_ms,end_ms,reward,credited,deferred,kappa_bound\n");
    for (log, info) in env.windows()?.iter().zip(&rows) {
        w.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            log.index,
            log.start_ms,
            log.end_ms,
            log.reward,
            log.credited.len(),
            log.deferred.len(),
            info.kappa_bound
        ));
    }
    fs::write(args.out.join("rewards.csv"), w)?;
    write_json(&args.out.join("states.json"), &states)?;
    write_json(&args.out.join("config.json"), &config)?;
    write_json(
        &args.out.join("manifest.json"),
        &json!({
            "command": "episode",
            "config_path": args.common.config,
            "config_echo": "config.json",
            "seed": config.seed,
            "scheduler": "policy",
            "policy": policy,
            "mode": config.sim.mode,
            "output_dir": args.out,
            "version": env!("CARGO_PKG_VERSION"),
            "elapsed_ms": started.elapsed().as_secs_f64() * 1e3,
        }),
    )?;
    Ok(())
}

fn cmd_bound(args: BoundArgs) -> Result<()> {
    let config = args.common.load()?;
    let catalog = PlanCatalog::build(&config)?;
    let m = config.num_servers();
    let omega: Vec<Vec<f64>> = if let Some(path) = &args.omega {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let rows = io::read_matrix(file)?;
        if rows.len() != config.num_services() || rows.iter().any(|r| r.len() != m) {
            bail!(
                "omega must be {} rows x {m} columns, got {} rows",
                config.num_services(),
                rows.len()
            );
        }
        if rows.iter().flatten().any(|w| !(0.0..=1.0).contains(w)) {
            bail!("omega entries must lie in [0, 1]");
        }
        rows
    } else if let Some(path) = &args.policy {
        load_policy(path, &catalog, m)?.omega().to_vec()
    } else {
        PolicyMatrix::uniform(&catalog, m).omega().to_vec()
    };
    let lambdas = config.scaled_lambdas();
    let sizes = config.mean_sizes();
    let gamma = config.reward.gamma;
    let mut servers = Vec::new();
    let mut etas = Vec::new();
    for server in &config.servers {
        let col: Vec<f64> = omega.iter().map(|row| row[server.id as usize - 1]).collect();
        let (phi, eval) = evaluate_server(server, &lambdas, &sizes, &col, gamma)?;
        etas.push(eval.eta_star);
        servers.push(json!({
            "server_id": server.id,
            "phi": phi.map(|p| p.as_array()),
            "x_star": eval.x_star,
            "eta_star": eval.eta_star,
            "status": eval.status,
            "stable": eval.status != BoundStatus::Unstable,
        }));
    }
    let system = system_tail_bound(&etas)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "gamma_ms": gamma,
            "servers": servers,
            "kappa_bound": system.kappa_bound,
        }))?
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let dir = args.requests.parent().unwrap_or(Path::new(".")).to_path_buf();
    let records = io::read_requests_file(&args.requests)
        .with_context(|| format!("reading {}", args.requests.display()))?;
    let queues_path = args.queues.unwrap_or_else(|| dir.join("queues.csv"));
    let snapshots = if queues_path.exists() {
        io::read_snapshots_file(&queues_path).with_context(|| format!("reading {}", queues_path.display()))?
    } else {
        Vec::new()
    };
    let out = args.out.unwrap_or_else(|| dir.join("report"));
    fs::create_dir_all(&out)?;
    let latencies: Vec<f64> = records.iter().map(|r| r.latency_ms).collect();
    let latency = latency_summary(&records);
    let queues = average_queue_length(&snapshots).ok();
    write_json(
        &out.join("summary.json"),
        &json!({
            "requests": records.len(),
            "completed": records.iter().filter(|r| r.is_complete()).count(),
            "latency": latency,
            "mean_queue_length": queues.as_ref().map(|q| q.mean),
        }),
    )?;
    io::write_cdf(fs::File::create(out.join("cdf.csv"))?, &export_cdf(&latencies, args.resolution))?;
    let mut q = String::from("server_id,avg_queue_length\n");
    if let Some(summary) = &queues {
        for (id, v) in &summary.per_server {
            q.push_str(&format!("{id},{v}\n"));
        }
    }
    fs::write(out.join("queues.csv"), q)?;
    println!("report written to {}", out.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let config = args.common.load()?;
    let rows = match bench::run_bench(&config) {
        Err(BenchError::EmptyGrid) => bail!(Usage(BenchError::EmptyGrid.to_string())),
        other => other?,
    };
    print!("{}", bench::render_table(&rows));
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("bench.json"), &rows)?;
        let mut csv = String::from("scenario,scheduler,servers,services,load_scale,utilization,p50,p90,p95,p99,p999,mean_queue_length,infinite\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.scenario, r.scheduler, r.servers, r.services, r.load_scale, r.utilization,
                r.p50, r.p90, r.p95, r.p99, r.p999, r.mean_queue_length, r.infinite
            ));
        }
        fs::write(out.join("bench.csv"), csv)?;
        write_json(&out.join("config.json"), &config)?;
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let config = args.common.load()?;
    Environment::new(config.clone())?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Usage(format!("cannot bind {addr}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        edgetail_gateway::serve(listener, config, shutdown_signal()).await?;
        eprintln!("shut down, sessions closed");
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Episode(a) => cmd_episode(a),
        Command::Bound(a) => cmd_bound(a),
        Command::Report(a) => cmd_report(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
