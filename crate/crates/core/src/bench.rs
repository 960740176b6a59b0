//! Scenario x scheduler grids with per-seed replication.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, SimulationConfig};
use crate::metrics::{LatencySummary, MetricsError};
use crate::plans::{PlanCatalog, PlanError};
use crate::schedulers::{self, SchedulerKind};
use crate::sim::{self, Observer, QueueSnapshot, RunOptions, SimError};
use crate::workload::{generate_workload, WorkloadError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bench grid is empty: configure at least one scenario, scheduler and seed")]
    EmptyGrid,
    #[error("scheduler `policy` needs a trained distribution and cannot be benched directly")]
    PolicyScheduler,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Running mean of total queue length per server over snapshots.
#[derive(Debug, Default)]
pub struct QueueMeter {
    totals: Vec<f64>,
    samples: usize,
}

impl QueueMeter {
    /// Mean over servers of each server's mean queue length.
    pub fn mean(&self) -> f64 {
        if self.samples == 0 || self.totals.is_empty() {
            return 0.0;
        }
        self.totals.iter().sum::<f64>() / (self.totals.len() * self.samples) as f64
    }

    pub fn per_server(&self) -> Vec<f64> {
        let n = self.samples.max(1) as f64;
        self.totals.iter().map(|t| t / n).collect()
    }
}

impl Observer for QueueMeter {
    fn on_snapshot(&mut self, snapshot: &QueueSnapshot) {
        self.totals.resize(snapshot.servers.len(), 0.0);
        for (slot, q) in self.totals.iter_mut().zip(&snapshot.servers) {
            *slot += q.total_length() as f64;
        }
        self.samples += 1;
    }
}

/// One replication of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub seed: u64,
    pub summary: LatencySummary,
    pub mean_queue_length: f64,
}

pub fn replicate(config: &SimulationConfig, kind: SchedulerKind, seed: u64) -> Result<Replication, BenchError> {
    let catalog = PlanCatalog::build(config)?;
    let mut scheduler = schedulers::build(kind, &catalog, config.num_servers(), seed, None);
    let trace = generate_workload(config, seed)?;
    let mut meter = QueueMeter::default();
    let result = sim::run(config, trace, scheduler.as_mut(), &mut meter, RunOptions::from_config(config), seed)?;
    Ok(Replication {
        seed,
        summary: LatencySummary::from_latencies(&result.latencies())?,
        mean_queue_length: meter.mean(),
    })
}

/// Medians over seeds of one (scenario, scheduler) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: String,
    pub scheduler: SchedulerKind,
    pub servers: usize,
    pub services: usize,
    pub load_scale: f64,
    pub utilization: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub p999: f64,
    pub mean_queue_length: f64,
    /// Drain-cap casualties summed over seeds.
    pub infinite: usize,
    pub replications: Vec<Replication>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn row(scenario: &str, kind: SchedulerKind, config: &SimulationConfig, reps: Vec<Replication>) -> BenchRow {
    let med = |f: fn(&Replication) -> f64| median(&reps.iter().map(f).collect::<Vec<_>>());
    BenchRow {
        scenario: scenario.to_string(),
        scheduler: kind,
        servers: config.num_servers(),
        services: config.num_services(),
        load_scale: config.sim.load_scale,
        utilization: config.mean_utilization(),
        p50: med(|r| r.summary.p50),
        p90: med(|r| r.summary.p90),
        p95: med(|r| r.summary.p95),
        p99: med(|r| r.summary.p99),
        p999: med(|r| r.summary.p999),
        mean_queue_length: med(|r| r.mean_queue_length),
        infinite: reps.iter().map(|r| r.summary.infinite).sum(),
        replications: reps,
    }
}

/// Runs every cell of the config's bench grid. Cells and seeds run in
/// parallel; results are independent of thread count.
pub fn run_bench(config: &SimulationConfig) -> Result<Vec<BenchRow>, BenchError> {
    let bench = config.bench.as_ref().ok_or(BenchError::EmptyGrid)?;
    if bench.scenarios.is_empty() || bench.schedulers.is_empty() || bench.seeds.is_empty() {
        return Err(BenchError::EmptyGrid);
    }
    if bench.schedulers.contains(&SchedulerKind::Policy) {
        return Err(BenchError::PolicyScheduler);
    }
    let mut cells = Vec::new();
    for scenario in &bench.scenarios {
        let mut sub = config.scenario(scenario)?;
        if let Some(target) = bench.target_utilization {
            sub.sim.load_scale = sub.load_scale_for_utilization(target);
        }
        for &kind in &bench.schedulers {
            cells.push((scenario.name.clone(), kind, sub.clone()));
        }
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| bench.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Vec<Replication> = jobs
        .par_iter()
        .map(|&(c, seed)| replicate(&cells[c].2, cells[c].1, seed))
        .collect::<Result<_, _>>()?;
    let per_cell = bench.seeds.len();
    Ok(cells
        .into_iter()
        .zip(results.chunks(per_cell))
        .map(|((name, kind, sub), reps)| row(&name, kind, &sub, reps.to_vec()))
        .collect())
}

/// Fixed-width percentile table, one row per cell.
pub fn render_table(rows: &[BenchRow]) -> String {
    let mut out = format!(
        "{:<12} {:<6} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>9} {:>5}\n",
        "scenario", "sched", "util", "p50", "p90", "p95", "p99", "p99.9", "avg_q", "inf"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:<6} {:>5.2} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>9.3} {:>5}\n",
            r.scenario,
            r.scheduler.to_string().to_uppercase(),
            r.utilization,
            r.p50,
            r.p90,
            r.p95,
            r.p99,
            r.p999,
            r.mean_queue_length,
            r.infinite
        ));
    }
    out
}
