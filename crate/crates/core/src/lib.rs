//! Tail-latency simulation and analytics for parallel computation at the edge.
//!
//! Requests for a service are split evenly across a *parallel plan* (a set of
//! edge servers). Every server is a three-stage tandem of FCFS queues
//! (uplink, compute, downlink) and a request completes when its slowest
//! sub-task leaves its downlink. The crate provides:
//!
//! * [`config`] / [`workload`] / [`plans`]: scenario description, Poisson
//!   request traces and plan catalogs.
//! * [`analytics`]: closed-form M/M/1 tandem analytics and the optimized
//!   Chernoff tail bound per server plus the system-level bound.
//! * [`sim`]: a deterministic discrete-event simulator.
//! * [`schedulers`]: random, greedy, delay-aware and probabilistic plan
//!   selection, and the plan-distribution to routing-probability mapping.
//! * [`env`]: the simulator wrapped as a stepped learning environment.
//! * [`metrics`] / [`io`] / [`bench`]: percentiles, CDFs, CSV artifacts and
//!   scenario sweeps.

pub mod analytics;
pub mod bench;
pub mod config;
pub mod env;
pub mod io;
pub mod metrics;
pub mod plans;
pub mod presets;
pub mod schedulers;
pub mod sim;
pub mod units;
pub mod workload;

pub use config::{SimMode, SimulationConfig};
pub use plans::{Plan, PlanCatalog};
pub use sim::{QueueSnapshot, RequestRecord, Simulation, SimulationResult, Stage};
pub use workload::RequestTrace;

/// Server identifier, dense in `1..=M`.
pub type ServerId = u32;
/// Service identifier.
pub type ServiceId = u32;
