//! JSON scenario configuration.
//!
//! ```json
//! {
//!   "servers":  [{"id": 1, "r_u": 5.4e6, "r_s": 7.2e6, "r_d": 5.4e6, "supported": [1, 2, 3, 8]}],
//!   "services": [{"id": 1, "lambda": 0.4, "mean_size": 4.1e7, "size_distribution": "exponential"}],
//!   "reward":   {"gamma": 40, "beta1": 0.1, "beta2": 0.3, "beta3": 0.1, "sigma": 0.99},
//!   "step":     {"delta_ms": 1000, "steps_per_episode": 15},
//!   "sim":      {"mode": "coupled", "load_scale": 1.0, "horizon_ms": 15000, "subset_cap": 6},
//!   "seed": 1
//! }
//! ```
//!
//! Rates are per millisecond (see [`crate::units`]). `lambda` is the raw
//! per-service rate; the effective rate is `lambda * sim.load_scale`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedulers::SchedulerKind;
use crate::sim::Stage;
use crate::{ServerId, ServiceId};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema violation: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema violation at `{key}`: {reason}")]
    Schema { key: String, reason: String },
    #[error("unsupported service {0}: no server supports it")]
    UnsupportedService(ServiceId),
    #[error("non-positive rate at `{key}`: {value}")]
    NonPositiveRate { key: String, value: f64 },
}

fn schema(key: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Schema {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Static capabilities of one edge server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    pub id: ServerId,
    /// Uplink speed, cycles/ms.
    pub r_u: f64,
    /// Compute speed, cycles/ms.
    pub r_s: f64,
    /// Downlink speed, cycles/ms.
    pub r_d: f64,
    pub supported: BTreeSet<ServiceId>,
}

impl ServerSpec {
    pub fn rate(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Uplink => self.r_u,
            Stage::Server => self.r_s,
            Stage::Downlink => self.r_d,
        }
    }

    pub fn supports(&self, service: ServiceId) -> bool {
        self.supported.contains(&service)
    }

    /// Rate of the slowest of the three stages.
    pub fn bottleneck_rate(&self) -> f64 {
        self.r_u.min(self.r_s).min(self.r_d)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeDistribution {
    #[default]
    Exponential,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub id: ServiceId,
    /// Arrival rate in requests/ms before load scaling.
    pub lambda: f64,
    /// Mean task size in cycles.
    pub mean_size: f64,
    #[serde(default)]
    pub size_distribution: SizeDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Tail threshold, ms.
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// Discount factor used by the learning agent; carried for its benefit.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    0.99
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            gamma: 40.0,
            beta1: 0.1,
            beta2: 0.3,
            beta3: 0.1,
            sigma: default_sigma(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    #[serde(default = "default_delta")]
    pub delta_ms: f64,
    #[serde(default = "default_steps")]
    pub steps_per_episode: usize,
}

fn default_delta() -> f64 {
    1000.0
}

fn default_steps() -> usize {
    15
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            delta_ms: default_delta(),
            steps_per_episode: default_steps(),
        }
    }
}

/// How stage service times are realized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    /// Independent exponential draw per stage with mean `work / rate`.
    Analytic,
    /// Deterministic `work / rate` at every stage.
    #[default]
    Coupled,
}

impl std::str::FromStr for SimMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "analytic" => Ok(SimMode::Analytic),
            "coupled" => Ok(SimMode::Coupled),
            other => Err(format!("unknown mode `{other}` (expected analytic|coupled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default)]
    pub mode: SimMode,
    #[serde(default = "default_load_scale")]
    pub load_scale: f64,
    pub horizon_ms: f64,
    #[serde(default = "default_subset_cap")]
    pub subset_cap: usize,
    /// Time allowed after the last arrival for queues to empty. Defaults to
    /// ten step lengths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drain_cap_ms: Option<f64>,
}

fn default_load_scale() -> f64 {
    1.0
}

fn default_subset_cap() -> usize {
    6
}

/// One cell of a bench grid: a subset of the configured servers and services.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub servers: Vec<ServerId>,
    pub services: Vec<ServiceId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub scenarios: Vec<Scenario>,
    #[serde(default = "default_bench_schedulers")]
    pub schedulers: Vec<SchedulerKind>,
    /// When set, `load_scale` is tuned per scenario to reach this mean utilization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_utilization: Option<f64>,
    #[serde(default = "default_bench_seeds")]
    pub seeds: Vec<u64>,
}

fn default_bench_schedulers() -> Vec<SchedulerKind> {
    vec![SchedulerKind::Rd, SchedulerKind::Gd, SchedulerKind::Da]
}

fn default_bench_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub servers: Vec<ServerSpec>,
    pub services: Vec<ServiceSpec>,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub step: StepConfig,
    pub sim: SimSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSection>,
}

fn check_positive(key: impl Into<String>, value: f64) -> Result<(), ConfigError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::NonPositiveRate {
            key: key.into(),
            value,
        })
    }
}

impl SimulationConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: SimulationConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.servers.is_empty() {
            return Err(schema("servers", "at least one server is required"));
        }
        for (k, server) in self.servers.iter().enumerate() {
            if server.id as usize != k + 1 {
                return Err(schema(
                    format!("servers[{k}].id"),
                    format!("server ids must be dense 1..M in order, found {}", server.id),
                ));
            }
            check_positive(format!("servers[{k}].r_u"), server.r_u)?;
            check_positive(format!("servers[{k}].r_s"), server.r_s)?;
            check_positive(format!("servers[{k}].r_d"), server.r_d)?;
            if server.supported.is_empty() {
                return Err(schema(
                    format!("servers[{k}].supported"),
                    "must list at least one service",
                ));
            }
        }

        if self.services.is_empty() {
            return Err(schema("services", "at least one service is required"));
        }
        let mut seen = BTreeSet::new();
        for (k, service) in self.services.iter().enumerate() {
            if !seen.insert(service.id) {
                return Err(schema(
                    format!("services[{k}].id"),
                    format!("duplicate service id {}", service.id),
                ));
            }
            check_positive(format!("services[{k}].lambda"), service.lambda)?;
            check_positive(format!("services[{k}].mean_size"), service.mean_size)?;
            if !self.servers.iter().any(|s| s.supports(service.id)) {
                return Err(ConfigError::UnsupportedService(service.id));
            }
        }

        let r = &self.reward;
        check_positive("reward.gamma", r.gamma)?;
        check_positive("reward.beta1", r.beta1)?;
        check_positive("reward.beta2", r.beta2)?;
        check_positive("reward.beta3", r.beta3)?;
        if !(r.sigma > 0.0 && r.sigma <= 1.0) {
            return Err(schema("reward.sigma", "must lie in (0, 1]"));
        }

        check_positive("step.delta_ms", self.step.delta_ms)?;
        if self.step.steps_per_episode == 0 {
            return Err(schema("step.steps_per_episode", "must be at least 1"));
        }
        if self.step.delta_ms < 10.0 * r.gamma {
            return Err(schema(
                "step.delta_ms",
                format!(
                    "step length {} ms must be at least 10x the tail threshold {} ms",
                    self.step.delta_ms, r.gamma
                ),
            ));
        }

        check_positive("sim.load_scale", self.sim.load_scale)?;
        check_positive("sim.horizon_ms", self.sim.horizon_ms)?;
        if self.sim.subset_cap == 0 {
            return Err(schema("sim.subset_cap", "must be at least 1"));
        }
        if let Some(cap) = self.sim.drain_cap_ms {
            if !(cap.is_finite() && cap >= 0.0) {
                return Err(schema("sim.drain_cap_ms", "must be finite and non-negative"));
            }
        }

        if let Some(bench) = &self.bench {
            if let Some(u) = bench.target_utilization {
                check_positive("bench.target_utilization", u)?;
            }
            for (k, scenario) in bench.scenarios.iter().enumerate() {
                self.scenario(scenario).map_err(|e| {
                    schema(format!("bench.scenarios[{k}]"), e.to_string())
                })?;
            }
        }
        Ok(())
    }

    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn num_services(&self) -> usize {
        self.services.len()
    }

    pub fn server(&self, id: ServerId) -> Option<&ServerSpec> {
        id.checked_sub(1).and_then(|k| self.servers.get(k as usize))
    }

    pub fn service_index(&self, id: ServiceId) -> Option<usize> {
        self.services.iter().position(|s| s.id == id)
    }

    /// Effective arrival rates (requests/ms) in service order.
    pub fn scaled_lambdas(&self) -> Vec<f64> {
        self.services
            .iter()
            .map(|s| s.lambda * self.sim.load_scale)
            .collect()
    }

    pub fn mean_sizes(&self) -> Vec<f64> {
        self.services.iter().map(|s| s.mean_size).collect()
    }

    pub fn drain_cap_ms(&self) -> f64 {
        self.sim.drain_cap_ms.unwrap_or(10.0 * self.step.delta_ms)
    }

    /// Offered work divided by the summed bottleneck-stage speed of all
    /// servers. Independent of scheduling because plans split work evenly.
    pub fn mean_utilization(&self) -> f64 {
        let offered: f64 = self
            .services
            .iter()
            .map(|s| s.lambda * self.sim.load_scale * s.mean_size)
            .sum();
        let capacity: f64 = self.servers.iter().map(ServerSpec::bottleneck_rate).sum();
        offered / capacity
    }

    /// The load scale at which [`Self::mean_utilization`] equals `target`.
    pub fn load_scale_for_utilization(&self, target: f64) -> f64 {
        let unscaled = Self {
            sim: SimSection {
                load_scale: 1.0,
                ..self.sim.clone()
            },
            ..self.clone()
        };
        target / unscaled.mean_utilization()
    }

    /// Restricts the configuration to a scenario's servers and services.
    /// Servers are renumbered densely in the listed order.
    pub fn scenario(&self, scenario: &Scenario) -> Result<SimulationConfig, ConfigError> {
        if scenario.servers.is_empty() || scenario.services.is_empty() {
            return Err(schema(
                format!("scenario `{}`", scenario.name),
                "needs at least one server and one service",
            ));
        }
        let mut servers = Vec::with_capacity(scenario.servers.len());
        for (k, id) in scenario.servers.iter().enumerate() {
            let spec = self.server(*id).ok_or_else(|| {
                schema(
                    format!("scenario `{}`.servers", scenario.name),
                    format!("unknown server {id}"),
                )
            })?;
            servers.push(ServerSpec {
                id: k as ServerId + 1,
                ..spec.clone()
            });
        }
        let mut services = Vec::with_capacity(scenario.services.len());
        for id in &scenario.services {
            let idx = self.service_index(*id).ok_or_else(|| {
                schema(
                    format!("scenario `{}`.services", scenario.name),
                    format!("unknown service {id}"),
                )
            })?;
            services.push(self.services[idx].clone());
        }
        let sub = SimulationConfig {
            servers,
            services,
            bench: None,
            ..self.clone()
        };
        sub.validate()?;
        Ok(sub)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn reference_config_validates() {
        let config = presets::reference_config(8);
        config.validate().unwrap();
        assert_eq!(config.num_servers(), 4);
        assert_eq!(config.num_services(), 8);
        assert_eq!(config.servers[0].r_u, 5.4e6);
        assert_eq!(
            config.servers[0].supported.iter().copied().collect::<Vec<_>>(),
            vec![1, 2, 3, 8]
        );
    }

    #[test]
    fn reward_parameters_round_trip() {
        let config = presets::reference_config(8);
        let back = SimulationConfig::from_json(&config.to_json_pretty()).unwrap();
        assert_eq!(back.reward.gamma, 40.0);
        assert_eq!(back.reward.beta1, 0.1);
        assert_eq!(back.reward.beta2, 0.3);
        assert_eq!(back.reward.beta3, 0.1);
        assert_eq!(back.reward.sigma, 0.99);
        assert_eq!(back, config);
    }

    #[test]
    fn unsupported_service_is_rejected() {
        let mut config = presets::reference_config(8);
        config.services.push(ServiceSpec {
            id: 42,
            lambda: 0.1,
            mean_size: 1e6,
            size_distribution: SizeDistribution::Exponential,
        });
        let err = config.validate().unwrap_err();
        assert!(matches!(err, ConfigError::UnsupportedService(42)));
        assert!(err.to_string().contains("unsupported service"));
    }

    #[test]
    fn non_positive_rate_names_the_key() {
        let mut config = presets::reference_config(8);
        config.servers[2].r_s = 0.0;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("servers[2].r_s"), "{err}");
    }

    #[test]
    fn unknown_key_names_the_key() {
        let text = presets::reference_config(8)
            .to_json_pretty()
            .replace("\"load_scale\"", "\"load_scael\"");
        let err = SimulationConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("load_scael"), "{err}");
    }

    #[test]
    fn missing_key_names_the_key() {
        let err = SimulationConfig::from_json(r#"{"servers": [], "services": []}"#).unwrap_err();
        assert!(err.to_string().contains("sim"), "{err}");
    }

    #[test]
    fn step_must_dominate_gamma() {
        let mut config = presets::reference_config(8);
        config.step.delta_ms = 300.0;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("step.delta_ms"), "{err}");
    }

    #[test]
    fn load_scale_hits_target_utilization() {
        let mut config = presets::reference_config(8);
        config.sim.load_scale = config.load_scale_for_utilization(0.8);
        assert!((config.mean_utilization() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn scenario_renumbers_servers() {
        let config = presets::reference_config(8);
        let sub = config
            .scenario(&Scenario {
                name: "2-3".into(),
                servers: vec![2, 3],
                services: vec![1, 6, 8],
            })
            .unwrap();
        assert_eq!(sub.servers.iter().map(|s| s.id).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(sub.servers[0].r_u, 7.0e6);
        // service 2 is only served by servers 1 and 4
        let bad = config.scenario(&Scenario {
            name: "bad".into(),
            servers: vec![2, 3],
            services: vec![2],
        });
        assert!(bad.is_err());
    }
}
