//! The reference four-server, nine-service edge network.

use std::collections::BTreeSet;

use crate::config::{
    RewardConfig, ServerSpec, ServiceSpec, SimMode, SimSection, SimulationConfig,
    SizeDistribution, StepConfig,
};
use crate::units::{hundreds_per_second_to_per_ms, mega_cycles_per_ms, ten_mega_cycles};

/// (r_u, r_s, r_d) in 10^6 cycles/ms and supported service ids.
const SERVERS: [([f64; 3], &[u32]); 4] = [
    ([5.4, 7.2, 5.4], &[1, 2, 3, 8]),
    ([7.0, 8.0, 6.0], &[1, 5, 6, 8]),
    ([8.0, 8.7, 8.0], &[1, 3, 6, 8]),
    ([5.3, 6.5, 4.5], &[2, 4, 5, 7, 8]),
];

/// Arrival rate in 100 requests/s.
const LAMBDA: [f64; 9] = [4.0, 5.0, 6.0, 3.0, 4.0, 5.0, 4.0, 4.0, 3.0];
/// Mean task size in 10^7 cycles.
const MEAN_SIZE: [f64; 9] = [4.1, 4.0, 4.2, 4.9, 4.0, 4.0, 4.2, 4.5, 4.9];

pub fn reference_servers() -> Vec<ServerSpec> {
    SERVERS
        .iter()
        .enumerate()
        .map(|(k, (rates, supported))| ServerSpec {
            id: k as u32 + 1,
            r_u: mega_cycles_per_ms(rates[0]),
            r_s: mega_cycles_per_ms(rates[1]),
            r_d: mega_cycles_per_ms(rates[2]),
            supported: supported.iter().copied().collect::<BTreeSet<_>>(),
        })
        .collect()
}

/// The first `count` services (at most nine).
pub fn reference_services(count: usize) -> Vec<ServiceSpec> {
    (0..count.min(LAMBDA.len()))
        .map(|k| ServiceSpec {
            id: k as u32 + 1,
            lambda: hundreds_per_second_to_per_ms(LAMBDA[k]),
            mean_size: ten_mega_cycles(MEAN_SIZE[k]),
            size_distribution: SizeDistribution::Exponential,
        })
        .collect()
}

/// Reference servers with services `1..=services`. Service 9 has no
/// supporting server in the reference table, so `services` must be at most 8
/// for the result to validate.
pub fn reference_config(services: usize) -> SimulationConfig {
    let step = StepConfig::default();
    SimulationConfig {
        servers: reference_servers(),
        services: reference_services(services),
        reward: RewardConfig::default(),
        sim: SimSection {
            mode: SimMode::Coupled,
            load_scale: 1.0,
            horizon_ms: step.delta_ms * step.steps_per_episode as f64,
            subset_cap: 6,
            drain_cap_ms: None,
        },
        step,
        seed: 1,
        bench: None,
    }
}
