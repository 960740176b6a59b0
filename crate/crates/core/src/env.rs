//! Stepped learning environment over the simulator.
//!
//! An episode is `N` windows of `delta_ms`. Each step installs a plan
//! distribution per service, advances the clock one window while sampling
//! queue snapshots every `delta_ms / 100`, credits finished requests to the
//! window and returns the reward and the next enhanced state.
//!
//! State layout is server-major: for every server in id order, 18 values
//! `q_max[3], q_min[3], q_ave[3], q_var[3], eta, eta', eta'', M, M', M''`,
//! where each `[3]` is (uplink, server, downlink) queue length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{evaluate_server, system_tail_bound, AnalyticsError, BoundEvaluation};
use crate::config::{RewardConfig, SimulationConfig};
use crate::plans::{Plan, PlanCatalog, PlanError};
use crate::schedulers::{PolicyError, PolicyMatrix, PolicyScheduler};
use crate::sim::{QueueSnapshot, RequestRecord, SimError, Simulation};
use crate::workload::{generate, WorkloadError};

pub const SAMPLES_PER_WINDOW: usize = 100;
pub const FEATURES_PER_SERVER: usize = 18;
/// Sum-to-one slack accepted on incoming actions before renormalizing.
pub const ACTION_TOL: f64 = 1e-6;
pub const EPSILON_MODE: &str = "plan_mean_positive_growth";

pub const FEATURE_NAMES: [&str; FEATURES_PER_SERVER] = [
    "q_max_up", "q_max_srv", "q_max_down",
    "q_min_up", "q_min_srv", "q_min_down",
    "q_ave_up", "q_ave_srv", "q_ave_down",
    "q_var_up", "q_var_srv", "q_var_down",
    "eta", "eta_grad", "eta_hess",
    "mgf", "mgf_grad", "mgf_hess",
];

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("environment has not been reset")]
    NotReset,
    #[error("episode is done; reset to start another")]
    EpisodeDone,
    #[error("{field}: {reason}")]
    InvalidAction { field: String, reason: String },
    #[error("no snapshots in window")]
    NoSnapshots,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

impl EnvError {
    fn action(field: impl Into<String>, reason: impl Into<String>) -> Self {
        EnvError::InvalidAction {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancedState {
    pub num_servers: usize,
    pub values: Vec<f64>,
}

impl EnhancedState {
    pub fn server(&self, index: usize) -> &[f64] {
        &self.values[index * FEATURES_PER_SERVER..(index + 1) * FEATURES_PER_SERVER]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub window_index: usize,
    /// Requests credited to this window.
    pub credited: usize,
    /// Requests that arrived but are carried to a later window.
    pub deferred: usize,
    pub kappa_bound: f64,
    pub epsilon_mode: String,
    /// Credited requests with latency at or above the threshold.
    pub tail_events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnhancedState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// What happened in one window, for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowLog {
    pub index: usize,
    pub start_ms: f64,
    pub end_ms: f64,
    pub credited: Vec<usize>,
    pub deferred: Vec<usize>,
    /// Positive queue-length growth per server and stage.
    pub epsilon: Vec<[f64; 3]>,
    pub reward: f64,
}

/// Mean over the plan's servers of the summed per-stage growth.
pub fn plan_epsilon(plan: &Plan, epsilon: &[[f64; 3]]) -> f64 {
    let total: f64 = plan
        .servers()
        .iter()
        .map(|&j| epsilon[j as usize - 1].iter().sum::<f64>())
        .sum();
    total / plan.len() as f64
}

pub fn request_reward(latency_ms: f64, plan_eps: f64, reward: &RewardConfig) -> f64 {
    let outcome = if latency_ms < reward.gamma {
        reward.beta1
    } else {
        -reward.beta2
    };
    outcome - reward.beta3 * plan_eps
}

/// `max(0, end - start)` per server and stage.
pub fn queue_growth(start: &QueueSnapshot, end: &QueueSnapshot) -> Vec<[f64; 3]> {
    start
        .servers
        .iter()
        .zip(&end.servers)
        .map(|(a, b)| std::array::from_fn(|s| (b.lengths[s] as f64 - a.lengths[s] as f64).max(0.0)))
        .collect()
}

/// Queue statistics over `snapshots` plus each server's analytic features
/// at its optimal Chernoff point under `policy`.
pub fn compute_enhanced_state(
    snapshots: &[QueueSnapshot],
    policy: &PolicyMatrix,
    config: &SimulationConfig,
) -> Result<(EnhancedState, Vec<BoundEvaluation>), EnvError> {
    if snapshots.is_empty() {
        return Err(EnvError::NoSnapshots);
    }
    let lambdas = config.scaled_lambdas();
    let sizes = config.mean_sizes();
    let n = snapshots.len() as f64;
    let mut values = Vec::with_capacity(config.num_servers() * FEATURES_PER_SERVER);
    let mut bounds = Vec::with_capacity(config.num_servers());
    for (k, server) in config.servers.iter().enumerate() {
        let series = |s: usize| snapshots.iter().map(move |snap| snap.servers[k].lengths[s] as f64);
        let max: [f64; 3] = std::array::from_fn(|s| series(s).fold(f64::NEG_INFINITY, f64::max));
        let min: [f64; 3] = std::array::from_fn(|s| series(s).fold(f64::INFINITY, f64::min));
        let ave: [f64; 3] = std::array::from_fn(|s| series(s).sum::<f64>() / n);
        let var: [f64; 3] = std::array::from_fn(|s| series(s).map(|q| (q - ave[s]).powi(2)).sum::<f64>() / n);
        let (_, bound) = evaluate_server(server, &lambdas, &sizes, &policy.omega_column(server.id), config.reward.gamma)?;
        values.extend(max.into_iter().chain(min).chain(ave).chain(var).chain(bound.features()));
        bounds.push(bound);
    }
    Ok((
        EnhancedState {
            num_servers: config.num_servers(),
            values,
        },
        bounds,
    ))
}

fn kappa(bounds: &[BoundEvaluation]) -> Result<f64, EnvError> {
    let etas: Vec<f64> = bounds.iter().map(|b| b.eta_star).collect();
    Ok(system_tail_bound(&etas)?.kappa_bound)
}

struct Episode {
    seed: u64,
    sim: Simulation,
    scheduler: PolicyScheduler,
    window: usize,
    snapshots: Vec<QueueSnapshot>,
    /// Arrived, not yet credited, ascending ids.
    pending: Vec<usize>,
    seen: usize,
    windows: Vec<WindowLog>,
    state: EnhancedState,
    kappa: f64,
    done: bool,
}

pub struct Environment {
    config: SimulationConfig,
    catalog: PlanCatalog,
    resets: u64,
    episode: Option<Episode>,
}

impl Environment {
    pub fn new(config: SimulationConfig) -> Result<Self, EnvError> {
        let catalog = PlanCatalog::build(&config)?;
        Ok(Self {
            config,
            catalog,
            resets: 0,
            episode: None,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn catalog(&self) -> &PlanCatalog {
        &self.catalog
    }

    pub fn num_servers(&self) -> usize {
        self.config.num_servers()
    }

    pub fn num_services(&self) -> usize {
        self.catalog.num_services()
    }

    pub fn state_dimension(&self) -> usize {
        FEATURES_PER_SERVER * self.num_servers()
    }

    /// Cardinality of every plan, per service in config order.
    pub fn plan_shapes(&self) -> Vec<Vec<usize>> {
        self.catalog
            .entries()
            .iter()
            .map(|e| e.plans.iter().map(Plan::len).collect())
            .collect()
    }

    pub fn plans(&self) -> Vec<Vec<Vec<u32>>> {
        self.catalog
            .entries()
            .iter()
            .map(|e| e.plans.iter().map(|p| p.servers().to_vec()).collect())
            .collect()
    }

    /// Arrival horizon of an episode: the configured horizon, cut to the
    /// episode length so no arrivals are left for after the last window.
    pub fn episode_horizon_ms(&self) -> f64 {
        let episode = self.config.step.delta_ms * self.config.step.steps_per_episode as f64;
        self.config.sim.horizon_ms.min(episode)
    }

    /// Starts a new episode. Without a seed, uses the config seed plus the
    /// number of earlier resets.
    pub fn reset(&mut self, seed: Option<u64>) -> Result<EnhancedState, EnvError> {
        let seed = seed.unwrap_or_else(|| self.config.seed.wrapping_add(self.resets));
        self.resets += 1;
        let trace = generate(
            &self.config.services,
            self.config.sim.load_scale,
            self.episode_horizon_ms(),
            seed,
        )?;
        let sim = Simulation::new(&self.config, self.catalog.clone(), trace, seed)?;
        let policy = PolicyMatrix::uniform(&self.catalog, self.num_servers());
        let first = sim.snapshot(0.0)?;
        let (state, bounds) = compute_enhanced_state(std::slice::from_ref(&first), &policy, &self.config)?;
        self.episode = Some(Episode {
            seed,
            sim,
            scheduler: PolicyScheduler::new(policy, seed),
            window: 0,
            snapshots: vec![first],
            pending: Vec::new(),
            seen: 0,
            windows: Vec::new(),
            kappa: kappa(&bounds)?,
            state: state.clone(),
            done: false,
        });
        Ok(state)
    }

    /// Checks shapes and values; sums within [`ACTION_TOL`] of one are
    /// renormalized.
    pub fn validate_action(&self, action: &[Vec<f64>]) -> Result<PolicyMatrix, EnvError> {
        if action.len() != self.num_services() {
            return Err(EnvError::action(
                "action",
                format!("expected {} distributions, got {}", self.num_services(), action.len()),
            ));
        }
        let mut normalized = Vec::with_capacity(action.len());
        for (i, (dist, entry)) in action.iter().zip(self.catalog.entries()).enumerate() {
            if dist.len() != entry.plans.len() {
                return Err(EnvError::action(
                    format!("action[{i}]"),
                    format!("expected {} probabilities, got {}", entry.plans.len(), dist.len()),
                ));
            }
            if let Some(k) = dist.iter().position(|p| !p.is_finite() || *p < 0.0) {
                return Err(EnvError::action(
                    format!("action[{i}][{k}]"),
                    format!("probability must be finite and non-negative, got {}", dist[k]),
                ));
            }
            let sum: f64 = dist.iter().sum();
            if (sum - 1.0).abs() > ACTION_TOL {
                return Err(EnvError::action(format!("action[{i}]"), format!("probabilities sum to {sum}, not 1")));
            }
            normalized.push(dist.iter().map(|p| p / sum).collect());
        }
        Ok(PolicyMatrix::new(&self.catalog, normalized, self.num_servers())?)
    }

    pub fn step(&mut self, action: &[Vec<f64>]) -> Result<StepOutcome, EnvError> {
        match &self.episode {
            None => return Err(EnvError::NotReset),
            Some(ep) if ep.done => return Err(EnvError::EpisodeDone),
            Some(_) => {}
        }
        let policy = self.validate_action(action)?;
        let config = &self.config;
        let ep = self.episode.as_mut().expect("checked");
        ep.scheduler.set_policy(policy);

        let delta = config.step.delta_ms;
        let n = ep.window + 1;
        let start_ms = (n - 1) as f64 * delta;
        let end_ms = n as f64 * delta;
        let base = (n - 1) * SAMPLES_PER_WINDOW;
        let start_snapshot = ep.snapshots.last().expect("reset snapshot").clone();
        let mut window_snaps = Vec::with_capacity(SAMPLES_PER_WINDOW);
        for k in 1..=SAMPLES_PER_WINDOW {
            let t = if k == SAMPLES_PER_WINDOW {
                end_ms
            } else {
                (base + k) as f64 * delta / SAMPLES_PER_WINDOW as f64
            };
            ep.sim.advance_to(t, &mut ep.scheduler)?;
            window_snaps.push(ep.sim.snapshot(t)?);
        }
        let epsilon = queue_growth(&start_snapshot, window_snaps.last().expect("samples"));
        ep.snapshots.extend(window_snaps.iter().cloned());

        let done = n == config.step.steps_per_episode;
        if done && ep.sim.in_flight() > 0 {
            ep.sim.advance_to(end_ms + config.drain_cap_ms(), &mut ep.scheduler)?;
        }

        let records = ep.sim.records();
        ep.pending.extend(ep.seen..records.len());
        ep.seen = records.len();
        let gamma = config.reward.gamma;
        let (credited, deferred): (Vec<usize>, Vec<usize>) = ep.pending.iter().partition(|&&id| {
            let r = &records[id];
            done || r.departure_ms <= end_ms || r.arrival_ms < end_ms - gamma
        });
        let mut reward = 0.0;
        let mut tail_events = 0;
        for &id in &credited {
            let r = &records[id];
            if r.latency_ms >= gamma {
                tail_events += 1;
            }
            reward += request_reward(r.latency_ms, plan_epsilon(&r.plan, &epsilon), &config.reward);
        }
        ep.pending = deferred.clone();

        let (state, bounds) = compute_enhanced_state(&window_snaps, ep.scheduler.policy(), config)?;
        ep.kappa = kappa(&bounds)?;
        ep.state = state.clone();
        ep.window = n;
        ep.done = done;
        let info = StepInfo {
            window_index: n,
            credited: credited.len(),
            deferred: deferred.len(),
            kappa_bound: ep.kappa,
            epsilon_mode: EPSILON_MODE.to_string(),
            tail_events,
        };
        ep.windows.push(WindowLog {
            index: n,
            start_ms,
            end_ms,
            credited,
            deferred,
            epsilon,
            reward,
        });
        Ok(StepOutcome {
            state,
            reward,
            done,
            info,
        })
    }

    fn episode(&self) -> Result<&Episode, EnvError> {
        self.episode.as_ref().ok_or(EnvError::NotReset)
    }

    pub fn seed(&self) -> Result<u64, EnvError> {
        Ok(self.episode()?.seed)
    }

    pub fn window_index(&self) -> Result<usize, EnvError> {
        Ok(self.episode()?.window)
    }

    pub fn is_done(&self) -> Result<bool, EnvError> {
        Ok(self.episode()?.done)
    }

    pub fn state(&self) -> Result<&EnhancedState, EnvError> {
        Ok(&self.episode()?.state)
    }

    pub fn kappa_bound(&self) -> Result<f64, EnvError> {
        Ok(self.episode()?.kappa)
    }

    /// Every request that has arrived so far, indexed by id.
    pub fn records(&self) -> Result<&[RequestRecord], EnvError> {
        Ok(self.episode()?.sim.records())
    }

    /// The reset snapshot at t = 0 followed by every window sample.
    pub fn snapshots(&self) -> Result<&[QueueSnapshot], EnvError> {
        Ok(&self.episode()?.snapshots)
    }

    pub fn windows(&self) -> Result<&[WindowLog], EnvError> {
        Ok(&self.episode()?.windows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{minimize_eta, PhiTriple, DEFAULT_TOL};
    use crate::config::ServerSpec;
    use crate::presets;
    use crate::sim::ServerQueues;
    use std::collections::BTreeSet;

    fn small_config() -> SimulationConfig {
        let mut c = presets::reference_config(3);
        c.step.steps_per_episode = 3;
        c.sim.horizon_ms = 3000.0;
        c
    }

    fn uniform_action(env: &Environment) -> Vec<Vec<f64>> {
        env.catalog().sizes().iter().map(|&n| vec![1.0 / n as f64; n]).collect()
    }

    fn snap(lengths: &[[usize; 3]]) -> QueueSnapshot {
        QueueSnapshot {
            t_ms: 0.0,
            servers: lengths
                .iter()
                .enumerate()
                .map(|(k, l)| ServerQueues {
                    server_id: k as u32 + 1,
                    lengths: *l,
                    backlogs: [0.0; 3],
                })
                .collect(),
        }
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        let plan: Plan = "1".parse().unwrap();
        let r = request_reward(30.0, plan_epsilon(&plan, &[[0.0; 3]]), &cfg);
        assert!((r - 0.1).abs() < 1e-15);
        let r = request_reward(50.0, plan_epsilon(&plan, &[[1.0, 2.0, 3.0]]), &cfg);
        assert!((r + 0.9).abs() < 1e-15);
        let pair: Plan = "1+2".parse().unwrap();
        assert_eq!(plan_epsilon(&pair, &[[1.0, 2.0, 3.0], [0.0; 3]]), 3.0);
        assert_eq!(request_reward(40.0, 0.0, &cfg), -0.3);
    }

    #[test]
    fn growth_is_positive_part() {
        let a = snap(&[[3, 0, 1]]);
        let b = snap(&[[1, 2, 4]]);
        assert_eq!(queue_growth(&a, &b), vec![[0.0, 2.0, 3.0]]);
    }

    #[test]
    fn constant_queue_statistics() {
        let config = small_config();
        let policy = PolicyMatrix::uniform(&PlanCatalog::build(&config).unwrap(), 4);
        let snaps: Vec<_> = (0..100).map(|_| snap(&[[5, 5, 5]; 4])).collect();
        let (state, _) = compute_enhanced_state(&snaps, &policy, &config).unwrap();
        assert_eq!(state.values.len(), 18 * 4);
        for j in 0..4 {
            assert_eq!(&state.server(j)[..12], &[5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 0.0, 0.0, 0.0]);
        }
        assert!(matches!(compute_enhanced_state(&[], &policy, &config), Err(EnvError::NoSnapshots)));
    }

    fn one_server(rates: [f64; 3], lambda: f64) -> SimulationConfig {
        let mut c = presets::reference_config(1);
        c.servers = vec![ServerSpec {
            id: 1,
            r_u: rates[0],
            r_s: rates[1],
            r_d: rates[2],
            supported: BTreeSet::from([1]),
        }];
        c.services.truncate(1);
        c.services[0].lambda = lambda;
        c.services[0].mean_size = 1e6;
        c
    }

    #[test]
    fn analytic_features_match_direct_call() {
        let config = one_server([0.10e6, 0.15e6, 0.12e6], 0.05);
        config.validate().unwrap();
        let policy = PolicyMatrix::uniform(&PlanCatalog::build(&config).unwrap(), 1);
        let (state, _) = compute_enhanced_state(&[snap(&[[0; 3]])], &policy, &config).unwrap();
        let direct = minimize_eta(PhiTriple::new(0.05, 0.10, 0.07), 40.0, DEFAULT_TOL).unwrap();
        let got = &state.server(0)[12..];
        for (a, b) in got.iter().zip(direct.features()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-300), "{a} vs {b}");
        }

        let overloaded = one_server([0.04e6, 0.15e6, 0.12e6], 0.05);
        let (state, _) = compute_enhanced_state(&[snap(&[[0; 3]])], &policy, &overloaded).unwrap();
        assert_eq!(&state.server(0)[12..], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn reset_gives_idle_state_and_is_deterministic() {
        let mut env = Environment::new(small_config()).unwrap();
        let a = env.reset(Some(5)).unwrap();
        assert_eq!(a.values.len(), env.state_dimension());
        for j in 0..4 {
            assert!(a.server(j)[..12].iter().all(|&v| v == 0.0));
        }
        let b = env.reset(Some(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_after_reset_matches_fresh_environment() {
        let mut used = Environment::new(small_config()).unwrap();
        used.reset(Some(1)).unwrap();
        let action = uniform_action(&used);
        used.step(&action).unwrap();
        used.reset(Some(9)).unwrap();
        let replay = used.step(&action).unwrap();
        let mut fresh = Environment::new(small_config()).unwrap();
        fresh.reset(Some(9)).unwrap();
        assert_eq!(fresh.step(&action).unwrap(), replay);
    }

    #[test]
    fn episode_lifecycle_and_errors() {
        let mut env = Environment::new(small_config()).unwrap();
        let action = uniform_action(&env);
        assert!(matches!(env.step(&action), Err(EnvError::NotReset)));
        env.reset(None).unwrap();
        let mut bad = action.clone();
        bad[1].push(0.0);
        match env.step(&bad) {
            Err(EnvError::InvalidAction { field, .. }) => assert_eq!(field, "action[1]"),
            other => panic!("{other:?}"),
        }
        let mut bad = action.clone();
        bad[0][0] = -0.1;
        match env.step(&bad) {
            Err(EnvError::InvalidAction { field, .. }) => assert_eq!(field, "action[0][0]"),
            other => panic!("{other:?}"),
        }
        let mut bad = action.clone();
        bad[2] = vec![0.8 / bad[2].len() as f64; bad[2].len()];
        assert!(matches!(env.step(&bad), Err(EnvError::InvalidAction { .. })));
        assert!(matches!(env.step(&action[..2]), Err(EnvError::InvalidAction { .. })));

        let mut total = 0;
        for n in 1..=3 {
            let out = env.step(&action).unwrap();
            assert_eq!(out.info.window_index, n);
            assert_eq!(out.done, n == 3);
            assert!(out.reward.is_finite());
            total += out.info.credited;
            if n == 3 {
                assert_eq!(out.info.deferred, 0);
            }
        }
        assert_eq!(total, env.records().unwrap().len());
        assert!(matches!(env.step(&action), Err(EnvError::EpisodeDone)));
        assert_eq!(env.snapshots().unwrap().len(), 1 + 3 * SAMPLES_PER_WINDOW);
    }

    #[test]
    fn near_normalized_action_is_accepted() {
        let mut env = Environment::new(small_config()).unwrap();
        env.reset(Some(2)).unwrap();
        let mut action = uniform_action(&env);
        action[0][0] += 5e-7;
        let policy = env.validate_action(&action).unwrap();
        let sum: f64 = policy.distribution(0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(env.step(&action).is_ok());
    }

    #[test]
    fn empty_window_has_zero_reward() {
        let mut config = small_config();
        config.sim.load_scale = 1e-9;
        let mut env = Environment::new(config).unwrap();
        env.reset(Some(3)).unwrap();
        let action = uniform_action(&env);
        let out = env.step(&action).unwrap();
        assert_eq!(out.info.credited, 0);
        assert_eq!(out.reward, 0.0);
    }
}
