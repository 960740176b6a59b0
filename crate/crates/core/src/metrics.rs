//! Latency percentiles, CDF export and queue-congestion summaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::QueueSnapshot;
use crate::ServerId;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no finite latencies to summarize")]
    Empty,
    #[error("percentile fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("no queue snapshots")]
    NoSnapshots,
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Nearest rank on an ascending slice: the `ceil(p * n)`-th smallest value.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    // absorb representation error such as 0.99 * 100 = 99.00000000000001
    let rank = ((p * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

pub fn percentile(latencies: &[f64], p: f64) -> Result<f64, MetricsError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(MetricsError::InvalidFraction(p));
    }
    if latencies.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(nearest_rank(&sorted(latencies), p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    /// Finite latencies summarized.
    pub count: usize,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub p999: f64,
    pub mean: f64,
    pub max: f64,
    /// Requests cut off by the drain cap, excluded from the percentiles.
    pub infinite: usize,
}

impl LatencySummary {
    pub fn from_latencies(latencies: &[f64]) -> Result<Self, MetricsError> {
        let finite: Vec<f64> = latencies.iter().copied().filter(|l| l.is_finite()).collect();
        if finite.is_empty() {
            return Err(MetricsError::Empty);
        }
        let s = sorted(&finite);
        Ok(Self {
            count: s.len(),
            p50: nearest_rank(&s, 0.50),
            p90: nearest_rank(&s, 0.90),
            p95: nearest_rank(&s, 0.95),
            p99: nearest_rank(&s, 0.99),
            p999: nearest_rank(&s, 0.999),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            max: s[s.len() - 1],
            infinite: latencies.len() - finite.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub latency_ms: f64,
    pub fraction: f64,
}

/// Empirical CDF of the finite latencies, one point per distinct value,
/// thinned to at most `resolution` points. The last point always has
/// fraction 1.
pub fn export_cdf(latencies: &[f64], resolution: usize) -> Vec<CdfPoint> {
    let s = sorted(&latencies.iter().copied().filter(|l| l.is_finite()).collect::<Vec<_>>());
    let n = s.len() as f64;
    let mut steps: Vec<CdfPoint> = Vec::new();
    for (k, &value) in s.iter().enumerate() {
        let point = CdfPoint {
            latency_ms: value,
            fraction: (k + 1) as f64 / n,
        };
        match steps.last_mut() {
            Some(last) if last.latency_ms == value => *last = point,
            _ => steps.push(point),
        }
    }
    let resolution = resolution.max(2);
    if steps.len() <= resolution {
        return steps;
    }
    let last = steps.len() - 1;
    let mut picked: Vec<CdfPoint> = (0..resolution)
        .map(|k| steps[(k * last + (resolution - 1) / 2) / (resolution - 1)])
        .collect();
    picked.dedup_by(|a, b| a.latency_ms == b.latency_ms);
    *picked.last_mut().expect("non-empty") = steps[last];
    picked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueLengthSummary {
    /// Mean of `q_up + q_srv + q_down` per server.
    pub per_server: Vec<(ServerId, f64)>,
    /// Mean over servers.
    pub mean: f64,
}

pub fn average_queue_length(snapshots: &[QueueSnapshot]) -> Result<QueueLengthSummary, MetricsError> {
    let first = snapshots.first().ok_or(MetricsError::NoSnapshots)?;
    let mut totals: Vec<(ServerId, f64)> = first.servers.iter().map(|s| (s.server_id, 0.0)).collect();
    for snap in snapshots {
        for (slot, q) in totals.iter_mut().zip(&snap.servers) {
            slot.1 += q.total_length() as f64;
        }
    }
    let n = snapshots.len() as f64;
    for slot in &mut totals {
        slot.1 /= n;
    }
    let mean = if totals.is_empty() {
        0.0
    } else {
        totals.iter().map(|t| t.1).sum::<f64>() / totals.len() as f64
    };
    Ok(QueueLengthSummary {
        per_server: totals,
        mean,
    })
}
