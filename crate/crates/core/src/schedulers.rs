//! Plan-selection policies and the mapping from plan distributions to
//! per-server routing probabilities.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ServerSpec;
use crate::plans::{Plan, PlanCatalog};
use crate::sim::{QueueSnapshot, Stage};
use crate::{ServerId, ServiceId};

/// Sum-to-one tolerance for plan distributions.
pub const DISTRIBUTION_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("expected distributions for {expected} services, got {got}")]
    ServiceCount { expected: usize, got: usize },
    #[error("service {service}: expected {expected} plan probabilities, got {got}")]
    LengthMismatch {
        service: ServiceId,
        expected: usize,
        got: usize,
    },
    #[error("service {service}: probabilities must be finite and non-negative")]
    Negative { service: ServiceId },
    #[error("service {service}: probabilities sum to {sum}, not 1")]
    NotNormalized { service: ServiceId, sum: f64 },
    #[error("no distribution given for service {0}")]
    MissingService(ServiceId),
    #[error("distribution given for unknown service `{0}`")]
    UnknownService(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    /// Uniform random plan.
    Rd,
    /// Plan with the most servers.
    Gd,
    /// Plan with the smallest predicted delay.
    Da,
    /// Plan sampled from an installed distribution.
    Policy,
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerKind::Rd => "rd",
            SchedulerKind::Gd => "gd",
            SchedulerKind::Da => "da",
            SchedulerKind::Policy => "policy",
        })
    }
}

impl FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rd" => Ok(Self::Rd),
            "gd" => Ok(Self::Gd),
            "da" => Ok(Self::Da),
            "policy" => Ok(Self::Policy),
            other => Err(format!("unknown scheduler `{other}` (expected rd|gd|da|policy)")),
        }
    }
}

/// Read access to the queues at the current instant.
pub trait QueueView {
    fn now(&self) -> f64;
    fn server(&self, id: ServerId) -> Option<&ServerSpec>;
    /// Pending cycles at a stage.
    fn backlog(&self, server: ServerId, stage: Stage) -> f64;
}

/// A [`QueueView`] over a recorded snapshot.
pub struct SnapshotView<'a> {
    pub snapshot: &'a QueueSnapshot,
    pub servers: &'a [ServerSpec],
}

impl QueueView for SnapshotView<'_> {
    fn now(&self) -> f64 {
        self.snapshot.t_ms
    }

    fn server(&self, id: ServerId) -> Option<&ServerSpec> {
        self.servers.iter().find(|s| s.id == id)
    }

    fn backlog(&self, server: ServerId, stage: Stage) -> f64 {
        self.snapshot
            .server(server)
            .map_or(0.0, |q| q.backlogs[stage.index()])
    }
}

/// What a scheduler is asked to decide on.
#[derive(Debug, Clone, Copy)]
pub struct PlanRequest<'a> {
    pub service_index: usize,
    pub service_id: ServiceId,
    pub size: f64,
    pub plans: &'a [Plan],
}

pub trait Scheduler: Send {
    fn choose(&mut self, request: &PlanRequest<'_>, view: &dyn QueueView) -> Plan;
}

pub fn choose_plan_random<'p, R: Rng + ?Sized>(plans: &'p [Plan], rng: &mut R) -> &'p Plan {
    &plans[rng.random_range(0..plans.len())]
}

/// Largest plan; ties go to the lexicographically smallest server set.
pub fn choose_plan_greedy(plans: &[Plan]) -> &Plan {
    let mut best = &plans[0];
    for plan in &plans[1..] {
        if plan.len() > best.len() || (plan.len() == best.len() && plan < best) {
            best = plan;
        }
    }
    best
}

/// `max_{j in plan} sum_stage (backlog_stage(j) + size/|plan|) / r_stage(j)`.
pub fn predicted_delay(plan: &Plan, size: f64, view: &dyn QueueView) -> f64 {
    let share = size / plan.len() as f64;
    plan.servers()
        .iter()
        .map(|&id| {
            let spec = view.server(id).expect("plan members are configured servers");
            Stage::ALL
                .iter()
                .map(|&stage| (view.backlog(id, stage) + share) / spec.rate(stage))
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Plan with the smallest predicted delay. Ties go to the smaller plan, then
/// the lexicographically smaller one.
pub fn choose_plan_delay_aware<'p>(plans: &'p [Plan], view: &dyn QueueView, size: f64) -> &'p Plan {
    let mut best = &plans[0];
    let mut best_delay = predicted_delay(best, size, view);
    for plan in &plans[1..] {
        let delay = predicted_delay(plan, size, view);
        let better = delay < best_delay
            || (delay == best_delay && (plan.len(), plan) < (best.len(), best));
        if better {
            best = plan;
            best_delay = delay;
        }
    }
    best
}

pub fn validate_distribution(
    service: ServiceId,
    distribution: &[f64],
    expected_len: usize,
) -> Result<(), PolicyError> {
    if distribution.len() != expected_len {
        return Err(PolicyError::LengthMismatch {
            service,
            expected: expected_len,
            got: distribution.len(),
        });
    }
    if distribution.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(PolicyError::Negative { service });
    }
    let sum: f64 = distribution.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(PolicyError::NotNormalized { service, sum });
    }
    Ok(())
}

pub fn choose_plan_probabilistic<'p, R: Rng + ?Sized>(
    plans: &'p [Plan],
    service: ServiceId,
    distribution: &[f64],
    rng: &mut R,
) -> Result<&'p Plan, PolicyError> {
    validate_distribution(service, distribution, plans.len())?;
    Ok(&plans[sample_index(distribution, rng)])
}

fn sample_index<R: Rng + ?Sized>(distribution: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (k, p) in distribution.iter().enumerate() {
        cumulative += p;
        if cumulative > u {
            return k;
        }
    }
    // rounding left u above the total mass
    distribution
        .iter()
        .rposition(|p| *p > 0.0)
        .unwrap_or(distribution.len() - 1)
}

/// `omega[i][j-1] = sum_k Pr(B_i(k)) * 1{j in B_i(k)}`.
pub fn policy_to_omega(
    catalog: &PlanCatalog,
    distributions: &[Vec<f64>],
    num_servers: usize,
) -> Result<Vec<Vec<f64>>, PolicyError> {
    if distributions.len() != catalog.num_services() {
        return Err(PolicyError::ServiceCount {
            expected: catalog.num_services(),
            got: distributions.len(),
        });
    }
    let mut omega = vec![vec![0.0; num_servers]; catalog.num_services()];
    for (i, (entry, dist)) in catalog.entries().iter().zip(distributions).enumerate() {
        if dist.len() != entry.plans.len() {
            return Err(PolicyError::LengthMismatch {
                service: entry.service_id,
                expected: entry.plans.len(),
                got: dist.len(),
            });
        }
        for (plan, p) in entry.plans.iter().zip(dist) {
            for &server in plan.servers() {
                omega[i][server as usize - 1] += p;
            }
        }
    }
    Ok(omega)
}

/// Per-service plan distributions with the induced routing matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMatrix {
    distributions: Vec<Vec<f64>>,
    omega: Vec<Vec<f64>>,
}

impl PolicyMatrix {
    pub fn new(
        catalog: &PlanCatalog,
        distributions: Vec<Vec<f64>>,
        num_servers: usize,
    ) -> Result<Self, PolicyError> {
        if distributions.len() != catalog.num_services() {
            return Err(PolicyError::ServiceCount {
                expected: catalog.num_services(),
                got: distributions.len(),
            });
        }
        for (entry, dist) in catalog.entries().iter().zip(&distributions) {
            validate_distribution(entry.service_id, dist, entry.plans.len())?;
        }
        let omega = policy_to_omega(catalog, &distributions, num_servers)?;
        Ok(Self {
            distributions,
            omega,
        })
    }

    pub fn uniform(catalog: &PlanCatalog, num_servers: usize) -> Self {
        let distributions = catalog
            .sizes()
            .into_iter()
            .map(|n| vec![1.0 / n as f64; n])
            .collect();
        Self::new(catalog, distributions, num_servers).expect("uniform distributions are valid")
    }

    /// From a `{service_id: [probabilities]}` document.
    pub fn from_service_map(
        catalog: &PlanCatalog,
        map: &BTreeMap<String, Vec<f64>>,
        num_servers: usize,
    ) -> Result<Self, PolicyError> {
        for key in map.keys() {
            let known = key
                .parse::<ServiceId>()
                .ok()
                .and_then(|id| catalog.service_index(id))
                .is_some();
            if !known {
                return Err(PolicyError::UnknownService(key.clone()));
            }
        }
        let distributions = catalog
            .entries()
            .iter()
            .map(|e| {
                map.get(&e.service_id.to_string())
                    .cloned()
                    .ok_or(PolicyError::MissingService(e.service_id))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(catalog, distributions, num_servers)
    }

    pub fn distributions(&self) -> &[Vec<f64>] {
        &self.distributions
    }

    pub fn distribution(&self, service_index: usize) -> &[f64] {
        &self.distributions[service_index]
    }

    /// `I x M` routing probabilities.
    pub fn omega(&self) -> &[Vec<f64>] {
        &self.omega
    }

    /// Routing probabilities of every service towards server `server`.
    pub fn omega_column(&self, server: ServerId) -> Vec<f64> {
        self.omega.iter().map(|row| row[server as usize - 1]).collect()
    }
}

pub struct RandomScheduler {
    rng: ChaCha8Rng,
}

impl RandomScheduler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: scheduler_rng(seed),
        }
    }
}

impl Scheduler for RandomScheduler {
    fn choose(&mut self, request: &PlanRequest<'_>, _view: &dyn QueueView) -> Plan {
        choose_plan_random(request.plans, &mut self.rng).clone()
    }
}

pub struct GreedyScheduler;

impl Scheduler for GreedyScheduler {
    fn choose(&mut self, request: &PlanRequest<'_>, _view: &dyn QueueView) -> Plan {
        choose_plan_greedy(request.plans).clone()
    }
}

/// Re-evaluates the delay predictor on every request.
pub struct DelayAwareScheduler;

impl Scheduler for DelayAwareScheduler {
    fn choose(&mut self, request: &PlanRequest<'_>, view: &dyn QueueView) -> Plan {
        choose_plan_delay_aware(request.plans, view, request.size).clone()
    }
}

pub struct PolicyScheduler {
    policy: PolicyMatrix,
    rng: ChaCha8Rng,
}

impl PolicyScheduler {
    pub fn new(policy: PolicyMatrix, seed: u64) -> Self {
        Self {
            policy,
            rng: scheduler_rng(seed),
        }
    }

    pub fn policy(&self) -> &PolicyMatrix {
        &self.policy
    }

    pub fn set_policy(&mut self, policy: PolicyMatrix) {
        self.policy = policy;
    }
}

impl Scheduler for PolicyScheduler {
    fn choose(&mut self, request: &PlanRequest<'_>, _view: &dyn QueueView) -> Plan {
        let dist = self.policy.distribution(request.service_index);
        request.plans[sample_index(dist, &mut self.rng)].clone()
    }
}

const SCHEDULER_STREAM: u64 = u64::MAX - 2;

fn scheduler_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SCHEDULER_STREAM);
    rng
}

/// Scheduler of the given kind. `policy` is used by [`SchedulerKind::Policy`]
/// and defaults to uniform over each service's plans.
pub fn build(
    kind: SchedulerKind,
    catalog: &PlanCatalog,
    num_servers: usize,
    seed: u64,
    policy: Option<PolicyMatrix>,
) -> Box<dyn Scheduler> {
    match kind {
        SchedulerKind::Rd => Box::new(RandomScheduler::new(seed)),
        SchedulerKind::Gd => Box::new(GreedyScheduler),
        SchedulerKind::Da => Box::new(DelayAwareScheduler),
        SchedulerKind::Policy => Box::new(PolicyScheduler::new(
            policy.unwrap_or_else(|| PolicyMatrix::uniform(catalog, num_servers)),
            seed,
        )),
    }
}
