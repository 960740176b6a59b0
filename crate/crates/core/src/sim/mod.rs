//! Discrete-event simulation of edge servers modelled as three-stage tandem
//! queues, with per-request fan-out over a parallel plan and max-join.

mod engine;
mod event;
mod node;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plans::Plan;
use crate::{ServerId, ServiceId};

pub use engine::{dispatch, run, split_work, stage_service_time, Observer, RunOptions, Simulation};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("scheduler chose plan {plan} for service {service}, but server {server} does not support it")]
    Protocol {
        service: ServiceId,
        plan: String,
        server: ServerId,
    },
    #[error("scheduler returned an empty plan for service {0}")]
    EmptyPlan(ServiceId),
    #[error("trace references unknown service {0}")]
    UnknownService(ServiceId),
    #[error("snapshot requested at {at} ms, after the current clock {clock} ms")]
    FutureSnapshot { at: f64, clock: f64 },
    #[error("snapshot requested at {at} ms, before the last processed event at {last} ms")]
    StaleSnapshot { at: f64, last: f64 },
    #[error("trace is not sorted by arrival time at entry {0}")]
    UnsortedTrace(usize),
    #[error(transparent)]
    Plan(#[from] crate::plans::PlanError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Uplink,
    Server,
    Downlink,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Uplink, Stage::Server, Stage::Downlink];

    pub fn index(self) -> usize {
        match self {
            Stage::Uplink => 0,
            Stage::Server => 1,
            Stage::Downlink => 2,
        }
    }

    pub fn next(self) -> Option<Stage> {
        match self {
            Stage::Uplink => Some(Stage::Server),
            Stage::Server => Some(Stage::Downlink),
            Stage::Downlink => None,
        }
    }
}

/// The share of one request processed by one server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTask {
    pub request: usize,
    pub server_id: ServerId,
    /// Cycles, the same at all three stages.
    pub work: f64,
    /// Per-stage timestamps indexed by [`Stage::index`]; NaN until reached.
    pub enqueued: [f64; 3],
    pub started: [f64; 3],
    pub finished: [f64; 3],
}

impl SubTask {
    /// Time from the parent's arrival to leaving the downlink.
    pub fn sojourn(&self, arrival: f64) -> f64 {
        self.finished[Stage::Downlink.index()] - arrival
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: usize,
    pub service_id: ServiceId,
    pub arrival_ms: f64,
    pub size: f64,
    pub plan: Plan,
    /// `+inf` while in flight, and for requests cut off by the drain cap.
    pub departure_ms: f64,
    pub latency_ms: f64,
}

impl RequestRecord {
    pub fn is_complete(&self) -> bool {
        self.departure_ms.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerQueues {
    pub server_id: ServerId,
    /// Tasks queued per stage, including the one in service.
    pub lengths: [usize; 3],
    /// Pending cycles per stage.
    pub backlogs: [f64; 3],
}

impl ServerQueues {
    pub fn total_length(&self) -> usize {
        self.lengths.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSnapshot {
    pub t_ms: f64,
    pub servers: Vec<ServerQueues>,
}

impl QueueSnapshot {
    pub fn server(&self, id: ServerId) -> Option<&ServerQueues> {
        self.servers.iter().find(|s| s.server_id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub records: Vec<RequestRecord>,
    pub subtasks: Vec<SubTask>,
    /// Clock value when the run stopped.
    pub end_ms: f64,
}

impl SimulationResult {
    pub fn completed(&self) -> usize {
        self.records.iter().filter(|r| r.is_complete()).count()
    }

    pub fn latencies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.latency_ms).collect()
    }
}
