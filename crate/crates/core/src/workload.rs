//! Poisson request traces.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ServiceSpec, SimulationConfig, SizeDistribution};
use crate::ServiceId;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("horizon must be positive, got {0} ms")]
    NonPositiveHorizon(f64),
    #[error("load scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace is not sorted at row {0}")]
    Unsorted(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub arrival_ms: f64,
    pub service_id: ServiceId,
    pub size_cycles: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestTrace {
    pub arrivals: Vec<Arrival>,
    pub seed: u64,
    pub horizon_ms: f64,
}

/// Trace for the configured services, load scale and horizon.
pub fn generate_workload(config: &SimulationConfig, seed: u64) -> Result<RequestTrace, WorkloadError> {
    generate(&config.services, config.sim.load_scale, config.sim.horizon_ms, seed)
}

/// Each service gets its own ChaCha stream (selected by service id) so a
/// service's arrivals do not depend on which other services are present.
pub fn generate(
    services: &[ServiceSpec],
    load_scale: f64,
    horizon_ms: f64,
    seed: u64,
) -> Result<RequestTrace, WorkloadError> {
    if !(horizon_ms > 0.0) {
        return Err(WorkloadError::NonPositiveHorizon(horizon_ms));
    }
    if !(load_scale > 0.0) {
        return Err(WorkloadError::NonPositiveScale(load_scale));
    }
    let mut arrivals = Vec::new();
    for service in services {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(service.id));
        let gaps = Exp::new(service.lambda * load_scale).expect("positive rate");
        let sizes = Exp::new(1.0 / service.mean_size).expect("positive size");
        let mut t = 0.0;
        loop {
            t += gaps.sample(&mut rng);
            if t > horizon_ms {
                break;
            }
            let size = match service.size_distribution {
                SizeDistribution::Exponential => loop {
                    let s = sizes.sample(&mut rng);
                    if s > 0.0 {
                        break s;
                    }
                },
                SizeDistribution::Deterministic => service.mean_size,
            };
            arrivals.push(Arrival {
                arrival_ms: t,
                service_id: service.id,
                size_cycles: size,
            });
        }
    }
    arrivals.sort_by(|a, b| {
        a.arrival_ms
            .total_cmp(&b.arrival_ms)
            .then(a.service_id.cmp(&b.service_id))
    });
    Ok(RequestTrace {
        arrivals,
        seed,
        horizon_ms,
    })
}

impl RequestTrace {
    pub fn empty(horizon_ms: f64) -> Self {
        Self {
            arrivals: Vec::new(),
            seed: 0,
            horizon_ms,
        }
    }

    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    pub fn count_for(&self, service: ServiceId) -> usize {
        self.arrivals.iter().filter(|a| a.service_id == service).count()
    }

    /// Inter-arrival gaps of one service's sub-stream.
    pub fn gaps_for(&self, service: ServiceId) -> Vec<f64> {
        let mut prev = 0.0;
        self.arrivals
            .iter()
            .filter(|a| a.service_id == service)
            .map(|a| {
                let gap = a.arrival_ms - prev;
                prev = a.arrival_ms;
                gap
            })
            .collect()
    }

    /// CSV with header `arrival_ms,service_id,size_cycles`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), WorkloadError> {
        let mut w = csv::Writer::from_writer(writer);
        for arrival in &self.arrivals {
            w.serialize(arrival)?;
        }
        if self.arrivals.is_empty() {
            w.write_record(["arrival_ms", "service_id", "size_cycles"])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, seed: u64, horizon_ms: f64) -> Result<Self, WorkloadError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut arrivals: Vec<Arrival> = Vec::new();
        for (row, record) in r.deserialize().enumerate() {
            let arrival: Arrival = record?;
            if let Some(prev) = arrivals.last() {
                if arrival.arrival_ms < prev.arrival_ms {
                    return Err(WorkloadError::Unsorted(row));
                }
            }
            arrivals.push(arrival);
        }
        Ok(Self {
            arrivals,
            seed,
            horizon_ms,
        })
    }
}
