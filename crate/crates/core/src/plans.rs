//! Parallel plans: non-empty sets of servers that jointly serve one request.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ServerSpec, SimulationConfig};
use crate::{ServerId, ServiceId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("service {0} has no supporting server")]
    NoSupporters(ServiceId),
    #[error("subset cap must be at least 1")]
    ZeroCap,
    #[error("a plan must contain at least one server")]
    EmptyPlan,
    #[error("invalid plan label `{0}`")]
    BadLabel(String),
}

/// Sorted, duplicate-free server ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<ServerId>", into = "Vec<ServerId>")]
pub struct Plan(Vec<ServerId>);

impl Plan {
    pub fn new(mut servers: Vec<ServerId>) -> Result<Self, PlanError> {
        servers.sort_unstable();
        servers.dedup();
        if servers.is_empty() {
            return Err(PlanError::EmptyPlan);
        }
        Ok(Self(servers))
    }

    pub fn servers(&self) -> &[ServerId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, server: ServerId) -> bool {
        self.0.binary_search(&server).is_ok()
    }
}

impl TryFrom<Vec<ServerId>> for Plan {
    type Error = PlanError;

    fn try_from(v: Vec<ServerId>) -> Result<Self, Self::Error> {
        Plan::new(v)
    }
}

impl From<Plan> for Vec<ServerId> {
    fn from(p: Plan) -> Self {
        p.0
    }
}

/// `+`-joined server ids, e.g. `1+3`.
impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, id) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str("+")?;
            }
            write!(f, "{id}")?;
        }
        Ok(())
    }
}

impl FromStr for Plan {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ids = s
            .split('+')
            .map(|p| p.trim().parse::<ServerId>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| PlanError::BadLabel(s.to_string()))?;
        Plan::new(ids)
    }
}

/// All non-empty subsets of the supporters of `service` with at most
/// `subset_cap` members, ordered by cardinality and then lexicographically.
pub fn enumerate_plans(
    servers: &[ServerSpec],
    service: ServiceId,
    subset_cap: usize,
) -> Result<Vec<Plan>, PlanError> {
    if subset_cap == 0 {
        return Err(PlanError::ZeroCap);
    }
    let mut supporters: Vec<ServerId> = servers
        .iter()
        .filter(|s| s.supports(service))
        .map(|s| s.id)
        .collect();
    supporters.sort_unstable();
    if supporters.is_empty() {
        return Err(PlanError::NoSupporters(service));
    }
    let n = supporters.len();
    let mut plans = Vec::new();
    for k in 1..=subset_cap.min(n) {
        // lexicographic k-combinations of positions
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            plans.push(Plan(idx.iter().map(|&i| supporters[i]).collect()));
            let Some(pos) = (0..k).rev().find(|&p| idx[p] != p + n - k) else {
                break;
            };
            idx[pos] += 1;
            for q in pos + 1..k {
                idx[q] = idx[q - 1] + 1;
            }
        }
    }
    Ok(plans)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServicePlans {
    pub service_id: ServiceId,
    pub plans: Vec<Plan>,
}

/// Plan lists for every configured service, in service order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanCatalog {
    entries: Vec<ServicePlans>,
}

impl PlanCatalog {
    pub fn build(config: &SimulationConfig) -> Result<Self, PlanError> {
        let entries = config
            .services
            .iter()
            .map(|s| {
                Ok(ServicePlans {
                    service_id: s.id,
                    plans: enumerate_plans(&config.servers, s.id, config.sim.subset_cap)?,
                })
            })
            .collect::<Result<_, PlanError>>()?;
        Ok(Self { entries })
    }

    pub fn from_entries(entries: Vec<ServicePlans>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[ServicePlans] {
        &self.entries
    }

    pub fn num_services(&self) -> usize {
        self.entries.len()
    }

    pub fn plans(&self, service_index: usize) -> &[Plan] {
        &self.entries[service_index].plans
    }

    pub fn service_index(&self, service: ServiceId) -> Option<usize> {
        self.entries.iter().position(|e| e.service_id == service)
    }

    /// `|B_i|` per service.
    pub fn sizes(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.plans.len()).collect()
    }

    /// Total action dimension, the sum of `|B_i|`.
    pub fn action_dimension(&self) -> usize {
        self.entries.iter().map(|e| e.plans.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use std::collections::BTreeSet;

    fn servers_supporting(ids: &[ServerId], service: ServiceId) -> Vec<ServerSpec> {
        let max = ids.iter().copied().max().unwrap_or(0).max(1);
        (1..=max)
            .map(|id| ServerSpec {
                id,
                r_u: 1.0,
                r_s: 1.0,
                r_d: 1.0,
                supported: if ids.contains(&id) {
                    BTreeSet::from([service])
                } else {
                    BTreeSet::from([service + 100])
                },
            })
            .collect()
    }

    fn brute_force(supporters: &[ServerId], cap: usize) -> BTreeSet<Vec<ServerId>> {
        let n = supporters.len();
        (1u32..(1 << n))
            .map(|mask| {
                (0..n)
                    .filter(|b| mask & (1 << b) != 0)
                    .map(|b| supporters[b])
                    .collect::<Vec<_>>()
            })
            .filter(|s| s.len() <= cap)
            .collect()
    }

    #[test]
    fn two_supporters() {
        let plans = enumerate_plans(&servers_supporting(&[3, 5], 1), 1, 6).unwrap();
        let labels: Vec<String> = plans.iter().map(Plan::to_string).collect();
        assert_eq!(labels, ["3", "5", "3+5"]);
    }

    #[test]
    fn singleton_supporter() {
        let plans = enumerate_plans(&servers_supporting(&[7], 1), 1, 4).unwrap();
        assert_eq!(plans, vec![Plan::new(vec![7]).unwrap()]);
    }

    #[test]
    fn cap_two_of_three_matches_brute_force() {
        let plans = enumerate_plans(&servers_supporting(&[1, 2, 3], 1), 1, 2).unwrap();
        assert_eq!(plans.len(), 6);
        let got: BTreeSet<Vec<ServerId>> = plans.iter().map(|p| p.servers().to_vec()).collect();
        assert_eq!(got, brute_force(&[1, 2, 3], 2));
    }

    #[test]
    fn no_supporters_is_an_error() {
        let servers = presets::reference_servers();
        assert_eq!(enumerate_plans(&servers, 9, 6), Err(PlanError::NoSupporters(9)));
        assert_eq!(enumerate_plans(&servers, 1, 0), Err(PlanError::ZeroCap));
    }

    #[test]
    fn uncapped_count_and_canonical_order() {
        for n in 1..=6u32 {
            let ids: Vec<ServerId> = (1..=n).collect();
            let plans = enumerate_plans(&servers_supporting(&ids, 1), 1, 6).unwrap();
            assert_eq!(plans.len(), (1usize << n) - 1);
            let got: BTreeSet<Vec<ServerId>> =
                plans.iter().map(|p| p.servers().to_vec()).collect();
            assert_eq!(got, brute_force(&ids, 6));
            assert!(plans.windows(2).all(|w| (w[0].len(), w[0].servers()) < (w[1].len(), w[1].servers())));
        }
    }

    #[test]
    fn label_round_trip() {
        let p: Plan = "4+1+2".parse().unwrap();
        assert_eq!(p.servers(), &[1, 2, 4]);
        assert_eq!(p.to_string(), "1+2+4");
        assert!("".parse::<Plan>().is_err());
        assert!("1+x".parse::<Plan>().is_err());
    }

    #[test]
    fn reference_catalog_shapes() {
        let catalog = PlanCatalog::build(&presets::reference_config(8)).unwrap();
        // supporters: #1 {1,2,3}, #2 {1,4}, #3 {1,3}, #4 {4}, #5 {2,4}, #6 {2,3}, #7 {4}, #8 {1,2,3,4}
        assert_eq!(catalog.sizes(), vec![7, 3, 3, 1, 3, 3, 1, 15]);
        assert_eq!(catalog.action_dimension(), 36);
    }

    proptest::proptest! {
        #[test]
        fn prefix_stable_under_larger_cap(n in 1u32..=7, cap in 1usize..7) {
            let ids: Vec<ServerId> = (1..=n).collect();
            let servers = servers_supporting(&ids, 1);
            let small = enumerate_plans(&servers, 1, cap).unwrap();
            let large = enumerate_plans(&servers, 1, cap + 1).unwrap();
            proptest::prop_assert_eq!(&large[..small.len()], &small[..]);
        }
    }
}
