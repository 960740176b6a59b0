//! Closed-form analytics for a server modelled as three M/M/1 queues in
//! tandem (uplink, compute, downlink) fed by a Poisson stream.
//!
//! With drifts `phi_k = mu_k - Lambda` the sojourn time `T` has moment
//! generating function `M(x) = prod_k phi_k / (phi_k - x)` on
//! `0 <= x < min phi`. The Chernoff bound `P(T > gamma) <= M(x) e^{-x gamma}`
//! is convex in `x` there and its minimizer solves
//! `S1(x) = sum_k 1/(phi_k - x) = gamma`, which we locate by bisection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ServerSpec;

/// Default relative tolerance on `|S1(x*) - gamma|`.
pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_BISECTION_STEPS: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("length mismatch: {left} rates vs {right} routing probabilities")]
    LengthMismatch { left: usize, right: usize },
    #[error("no traffic routed to this server")]
    NoTraffic,
    #[error("mean task size must be positive, got {0}")]
    NonPositiveSize(f64),
    #[error("exponent {x} outside the feasible domain [0, {limit})")]
    Domain { x: f64, limit: f64 },
    #[error("unstable tandem: {0:?}")]
    Unstable(PhiTriple),
    #[error("tail threshold must be positive, got {0}")]
    NonPositiveGamma(f64),
    #[error("no per-server bounds supplied")]
    Empty,
    #[error("second derivative is not positive at x = {0}")]
    NotConvex(f64),
}

/// `Lambda_j = sum_i lambda_i * omega_ij`.
pub fn aggregate_arrival_rate(lambdas: &[f64], omega_col: &[f64]) -> Result<f64, AnalyticsError> {
    if lambdas.len() != omega_col.len() {
        return Err(AnalyticsError::LengthMismatch {
            left: lambdas.len(),
            right: omega_col.len(),
        });
    }
    Ok(lambdas.iter().zip(omega_col).map(|(l, w)| l * w).sum())
}

/// Traffic-weighted mean task size `sum c_i lambda_i w_i / sum lambda_i w_i`.
pub fn mean_task_size(lambdas: &[f64], sizes: &[f64], omega_col: &[f64]) -> Result<f64, AnalyticsError> {
    if sizes.len() != lambdas.len() {
        return Err(AnalyticsError::LengthMismatch {
            left: lambdas.len(),
            right: sizes.len(),
        });
    }
    let rate = aggregate_arrival_rate(lambdas, omega_col)?;
    if !(rate > 0.0) {
        return Err(AnalyticsError::NoTraffic);
    }
    let work: f64 = lambdas
        .iter()
        .zip(sizes)
        .zip(omega_col)
        .map(|((l, c), w)| c * l * w)
        .sum();
    Ok(work / rate)
}

/// Mean service rates of the three stages, requests/ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceRates {
    pub uplink: f64,
    pub server: f64,
    pub downlink: f64,
}

pub fn service_rates(server: &ServerSpec, mean_size: f64) -> Result<ServiceRates, AnalyticsError> {
    if !(mean_size > 0.0) {
        return Err(AnalyticsError::NonPositiveSize(mean_size));
    }
    Ok(ServiceRates {
        uplink: server.r_u / mean_size,
        server: server.r_s / mean_size,
        downlink: server.r_d / mean_size,
    })
}

/// Per-stage drift `mu - Lambda`, requests/ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiTriple {
    pub phi_u: f64,
    pub phi_s: f64,
    pub phi_d: f64,
}

impl PhiTriple {
    pub fn new(phi_u: f64, phi_s: f64, phi_d: f64) -> Self {
        Self { phi_u, phi_s, phi_d }
    }

    pub fn from_rates(rates: ServiceRates, arrival_rate: f64) -> Self {
        Self::new(
            rates.uplink - arrival_rate,
            rates.server - arrival_rate,
            rates.downlink - arrival_rate,
        )
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.phi_u, self.phi_s, self.phi_d]
    }

    pub fn is_stable(&self) -> bool {
        self.as_array().iter().all(|p| p.is_finite() && *p > 0.0)
    }

    pub fn min(&self) -> f64 {
        self.phi_u.min(self.phi_s).min(self.phi_d)
    }

    /// `S1(x) = sum 1/(phi_k - x)`.
    pub fn reciprocal_sum(&self, x: f64) -> f64 {
        self.as_array().iter().map(|p| 1.0 / (p - x)).sum()
    }

    /// `S2(x) = sum 1/(phi_k - x)^2`.
    pub fn reciprocal_square_sum(&self, x: f64) -> f64 {
        self.as_array().iter().map(|p| (p - x).powi(-2)).sum()
    }

    fn check(&self, x: f64) -> Result<(), AnalyticsError> {
        if !self.is_stable() {
            return Err(AnalyticsError::Unstable(*self));
        }
        let limit = self.min();
        if !(x >= 0.0 && x < limit) {
            return Err(AnalyticsError::Domain { x, limit });
        }
        Ok(())
    }
}

/// A value with its first and second derivative in `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derivatives {
    pub value: f64,
    pub grad: f64,
    pub hess: f64,
}

/// Sojourn-time MGF of the tandem with its first two derivatives.
pub fn mgf_response(phi: PhiTriple, x: f64) -> Result<Derivatives, AnalyticsError> {
    phi.check(x)?;
    let value: f64 = phi.as_array().iter().map(|p| p / (p - x)).product();
    let s1 = phi.reciprocal_sum(x);
    let s2 = phi.reciprocal_square_sum(x);
    Ok(Derivatives {
        value,
        grad: value * s1,
        hess: value * (s1 * s1 + s2),
    })
}

/// Second derivative of the MGF written with pairwise sums,
/// `M(x) [(y_u + y_s)^2 + (y_s + y_d)^2 + (y_u + y_d)^2]`, `y_k = 1/(phi_k - x)`.
pub fn mgf_hess_pairwise(phi: PhiTriple, x: f64) -> Result<f64, AnalyticsError> {
    let m = mgf_response(phi, x)?;
    let [yu, ys, yd] = phi.as_array().map(|p| 1.0 / (p - x));
    Ok(m.value * ((yu + ys).powi(2) + (ys + yd).powi(2) + (yu + yd).powi(2)))
}

/// Chernoff bound `eta(x) = M(x) e^{-x gamma}` with derivatives.
pub fn chernoff_eta(phi: PhiTriple, gamma: f64, x: f64) -> Result<Derivatives, AnalyticsError> {
    if !(gamma > 0.0) {
        return Err(AnalyticsError::NonPositiveGamma(gamma));
    }
    let m = mgf_response(phi, x)?;
    let decay = (-x * gamma).exp();
    Ok(Derivatives {
        value: m.value * decay,
        grad: decay * (m.grad - gamma * m.value),
        hess: decay * (gamma * gamma * m.value - 2.0 * gamma * m.grad + m.hess),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    /// Interior minimizer found.
    Optimized,
    /// `S1(0) >= gamma`: the best bound is the trivial one.
    Vacuous,
    /// Some drift is non-positive; the queue grows without bound.
    Unstable,
    /// No traffic is routed to the server; it cannot produce tail events.
    NoTraffic,
}

/// The optimized bound for one server and the analytic features at `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEvaluation {
    pub x: f64,
    pub mgf: f64,
    pub mgf_grad: f64,
    pub mgf_hess: f64,
    pub eta: f64,
    pub eta_grad: f64,
    pub eta_hess: f64,
    pub x_star: f64,
    /// `eta(x*)` clamped to at most one.
    pub eta_star: f64,
    pub status: BoundStatus,
    pub iterations: usize,
}

impl BoundEvaluation {
    /// Sentinel for degenerate bounds: eta = 1, everything else zero.
    pub fn sentinel(status: BoundStatus) -> Self {
        Self {
            x: 0.0,
            mgf: 0.0,
            mgf_grad: 0.0,
            mgf_hess: 0.0,
            eta: 1.0,
            eta_grad: 0.0,
            eta_hess: 0.0,
            x_star: 0.0,
            eta_star: 1.0,
            status,
            iterations: 0,
        }
    }

    /// An unused server: zero tail probability and zero features.
    pub fn no_traffic() -> Self {
        Self {
            eta: 0.0,
            eta_star: 0.0,
            ..Self::sentinel(BoundStatus::NoTraffic)
        }
    }

    pub fn is_vacuous(&self) -> bool {
        matches!(self.status, BoundStatus::Vacuous | BoundStatus::Unstable)
    }

    /// `[eta, eta', eta'', M, M', M'']`, the per-server analytic features.
    pub fn features(&self) -> [f64; 6] {
        [
            self.eta,
            self.eta_grad,
            self.eta_hess,
            self.mgf,
            self.mgf_grad,
            self.mgf_hess,
        ]
    }
}

/// Minimizes the Chernoff bound over `(0, min phi)`.
///
/// `S1` is strictly increasing there, so the stationary point is the unique
/// root of `S1(x) - gamma`; bisection stops once `|S1(x) - gamma| <= tol * gamma`.
pub fn minimize_eta(phi: PhiTriple, gamma: f64, tol: f64) -> Result<BoundEvaluation, AnalyticsError> {
    if !(gamma > 0.0) {
        return Err(AnalyticsError::NonPositiveGamma(gamma));
    }
    if !phi.is_stable() {
        return Err(AnalyticsError::Unstable(phi));
    }
    if phi.reciprocal_sum(0.0) >= gamma {
        return Ok(BoundEvaluation::sentinel(BoundStatus::Vacuous));
    }

    let mut lo = 0.0;
    let mut hi = phi.min() * (1.0 - 1e-12);
    let mut x = hi;
    let mut iterations = 0;
    if phi.reciprocal_sum(hi) > gamma {
        while iterations < MAX_BISECTION_STEPS {
            iterations += 1;
            x = 0.5 * (lo + hi);
            let residual = phi.reciprocal_sum(x) - gamma;
            if residual.abs() <= tol * gamma || x <= lo || x >= hi {
                break;
            }
            if residual < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
        }
    }

    let m = mgf_response(phi, x)?;
    let eta = chernoff_eta(phi, gamma, x)?;
    // the exponential factor may underflow for large x*gamma; certify the
    // sign through the bracket it multiplies
    let bracket = gamma * gamma * m.value - 2.0 * gamma * m.grad + m.hess;
    if !(bracket > 0.0) {
        return Err(AnalyticsError::NotConvex(x));
    }
    Ok(BoundEvaluation {
        x,
        mgf: m.value,
        mgf_grad: m.grad,
        mgf_hess: m.hess,
        eta: eta.value,
        eta_grad: eta.grad,
        eta_hess: eta.hess,
        x_star: x,
        eta_star: eta.value.min(1.0),
        status: BoundStatus::Optimized,
        iterations,
    })
}

/// Optimized bound for one server under routing column `omega_col`, folding
/// the degenerate cases into [`BoundStatus`].
pub fn evaluate_server(
    server: &ServerSpec,
    lambdas: &[f64],
    sizes: &[f64],
    omega_col: &[f64],
    gamma: f64,
) -> Result<(Option<PhiTriple>, BoundEvaluation), AnalyticsError> {
    let arrival = aggregate_arrival_rate(lambdas, omega_col)?;
    if !(arrival > 0.0) {
        return Ok((None, BoundEvaluation::no_traffic()));
    }
    let mean = mean_task_size(lambdas, sizes, omega_col)?;
    let phi = PhiTriple::from_rates(service_rates(server, mean)?, arrival);
    if !phi.is_stable() {
        return Ok((Some(phi), BoundEvaluation::sentinel(BoundStatus::Unstable)));
    }
    Ok((Some(phi), minimize_eta(phi, gamma, DEFAULT_TOL)?))
}

/// System-level bound `1 - prod_j (1 - min(eta_j, 1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemBound {
    pub per_server: Vec<f64>,
    pub kappa_bound: f64,
}

pub fn system_tail_bound(etas: &[f64]) -> Result<SystemBound, AnalyticsError> {
    if etas.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    let survival: f64 = etas.iter().map(|e| 1.0 - e.clamp(0.0, 1.0)).product();
    Ok(SystemBound {
        per_server: etas.to_vec(),
        kappa_bound: 1.0 - survival,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    const PHI: PhiTriple = PhiTriple {
        phi_u: 1.0,
        phi_s: 2.0,
        phi_d: 4.0,
    };

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    fn server(rates: [f64; 3]) -> ServerSpec {
        ServerSpec {
            id: 1,
            r_u: rates[0],
            r_s: rates[1],
            r_d: rates[2],
            supported: BTreeSet::from([1]),
        }
    }

    #[test]
    fn aggregate_rate_examples() {
        assert!(close(aggregate_arrival_rate(&[0.4, 0.5], &[0.5, 0.2]).unwrap(), 0.3, 1e-15));
        assert_eq!(aggregate_arrival_rate(&[0.4, 0.5], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(aggregate_arrival_rate(&[0.4, 0.5], &[0.0, 1.0]).unwrap(), 0.5);
        assert!(matches!(
            aggregate_arrival_rate(&[0.4], &[0.5, 0.2]),
            Err(AnalyticsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn mean_size_examples() {
        assert_eq!(mean_task_size(&[0.4], &[4.1e7], &[1.0]).unwrap(), 4.1e7);
        assert_eq!(mean_task_size(&[1.0, 1.0], &[2.0, 4.0], &[0.5, 0.5]).unwrap(), 3.0);
        assert_eq!(mean_task_size(&[3.0, 1.0], &[2.0, 4.0], &[1.0, 1.0]).unwrap(), 2.5);
        assert_eq!(
            mean_task_size(&[3.0, 1.0], &[2.0, 4.0], &[0.0, 0.0]),
            Err(AnalyticsError::NoTraffic)
        );
    }

    #[test]
    fn service_rate_examples() {
        let r = service_rates(&server([5.4e6, 8.7e6, 5.4e6]), 4.1e7).unwrap();
        assert!(close(r.server, 0.212_195_121_951_219_5, 1e-12));
        let r = service_rates(&server([5.4e6, 8.7e6, 5.4e6]), 8.7e6).unwrap();
        assert_eq!(r.server, 1.0);
        let r = service_rates(&server([5.4e6, 7.2e6, 5.4e6]), 4.5e7).unwrap();
        assert!(close(r.uplink, 0.12, 1e-14));
        assert!(close(r.server, 0.16, 1e-14));
        assert!(close(r.downlink, 0.12, 1e-14));
        assert!(service_rates(&server([1.0, 1.0, 1.0]), 0.0).is_err());
    }

    #[test]
    fn mgf_at_zero_is_one() {
        let m = mgf_response(PHI, 0.0).unwrap();
        assert_eq!(m.value, 1.0);
        let s1 = 1.0 + 0.5 + 0.25;
        let s2 = 1.0 + 0.25 + 0.0625;
        assert!(close(m.grad, s1, 1e-15));
        assert!(close(m.hess, s1 * s1 + s2, 1e-15));
    }

    #[test]
    fn mgf_hand_product() {
        let m = mgf_response(PHI, 0.5).unwrap();
        let expected = 2.0 * (2.0 / 1.5) * (4.0 / 3.5);
        assert!(close(m.value, expected, 1e-15));
        assert!(close(m.value, 3.047_619_047_619_047_6, 1e-12));
    }

    #[test]
    fn mgf_gradient_matches_central_difference() {
        let h = 1e-6;
        let value = |x: f64| PHI.as_array().iter().map(|p| p / (p - x)).product::<f64>();
        let fd = (value(0.5 + h) - value(0.5 - h)) / (2.0 * h);
        let m = mgf_response(PHI, 0.5).unwrap();
        assert!(close(m.grad, fd, 1e-6), "{} vs {fd}", m.grad);
    }

    #[test]
    fn mgf_domain_and_stability_errors() {
        assert!(matches!(mgf_response(PHI, 1.0), Err(AnalyticsError::Domain { .. })));
        assert!(matches!(mgf_response(PHI, -0.1), Err(AnalyticsError::Domain { .. })));
        let unstable = PhiTriple::new(-0.1, 1.0, 1.0);
        assert!(matches!(mgf_response(unstable, 0.0), Err(AnalyticsError::Unstable(_))));
    }

    #[test]
    fn eta_examples() {
        assert_eq!(chernoff_eta(PHI, 10.0, 0.0).unwrap().value, 1.0);
        let e = chernoff_eta(PHI, 10.0, 0.5).unwrap();
        assert!(close(e.value, 3.047_619_047_619_047_6 * (-5.0f64).exp(), 1e-12));
        assert!(close(e.value, 0.020_534, 1e-4));
        assert!(chernoff_eta(PHI, 0.0, 0.5).is_err());
    }

    #[test]
    fn minimize_interior_root() {
        let gamma = 4.0;
        let b = minimize_eta(PHI, gamma, DEFAULT_TOL).unwrap();
        assert_eq!(b.status, BoundStatus::Optimized);
        // independent bisection on the first-order condition
        let s1 = |x: f64| 1.0 / (1.0 - x) + 1.0 / (2.0 - x) + 1.0 / (4.0 - x);
        let (mut lo, mut hi) = (0.0f64, 1.0 - 1e-15);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if s1(mid) < gamma {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((b.x_star - lo).abs() < 1e-9, "{} vs {lo}", b.x_star);
        let eta = |x: f64| (1.0 / (1.0 - x)) * (2.0 / (2.0 - x)) * (4.0 / (4.0 - x)) * (-x * gamma).exp();
        assert!(close(b.eta_star, eta(lo), 1e-9));
        assert!(b.eta_star < 1.0);
        assert!(eta(b.x_star - 0.01) > b.eta_star);
        assert!(eta(b.x_star + 0.01) > b.eta_star);
        assert!((s1(b.x_star) - gamma).abs() <= 1e-10 * gamma);
        assert!(b.eta_hess > 0.0);
    }

    #[test]
    fn minimize_vacuous_when_gamma_is_small() {
        let b = minimize_eta(PHI, 1.5, DEFAULT_TOL).unwrap();
        assert_eq!(b.status, BoundStatus::Vacuous);
        assert_eq!(b.eta_star, 1.0);
        assert_eq!(b.x_star, 0.0);
        assert_eq!(b.features(), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn minimize_rejects_unstable() {
        assert!(matches!(
            minimize_eta(PhiTriple::new(0.0, 1.0, 2.0), 4.0, DEFAULT_TOL),
            Err(AnalyticsError::Unstable(_))
        ));
    }

    #[test]
    fn bound_decays_for_large_gamma() {
        let gamma = 1e3;
        let b = minimize_eta(PHI, gamma, DEFAULT_TOL).unwrap();
        let x = 0.9 * PHI.min();
        let probe = mgf_response(PHI, x).unwrap().value * (-x * gamma).exp();
        assert!(b.eta_star <= probe);
        let mut prev = f64::INFINITY;
        for k in 1..=60 {
            let g = 2.0 + k as f64 * 0.5;
            let e = minimize_eta(PHI, g, DEFAULT_TOL).unwrap().eta_star;
            assert!(e <= prev, "gamma {g}: {e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn system_bound_examples() {
        assert!(close(system_tail_bound(&[0.3]).unwrap().kappa_bound, 0.3, 1e-15));
        assert_eq!(system_tail_bound(&[0.5, 0.5]).unwrap().kappa_bound, 0.75);
        assert_eq!(system_tail_bound(&[0.1, 1.7]).unwrap().kappa_bound, 1.0);
        assert_eq!(system_tail_bound(&[]), Err(AnalyticsError::Empty));
    }

    #[test]
    fn evaluate_server_statuses() {
        let s = server([1.0, 1.0, 1.0]);
        let (phi, b) = evaluate_server(&s, &[0.5], &[1.0], &[0.0], 40.0).unwrap();
        assert!(phi.is_none());
        assert_eq!(b.status, BoundStatus::NoTraffic);
        assert_eq!(b.eta_star, 0.0);
        let (_, b) = evaluate_server(&s, &[2.0], &[1.0], &[1.0], 40.0).unwrap();
        assert_eq!(b.status, BoundStatus::Unstable);
        assert_eq!(b.features(), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let (phi, b) = evaluate_server(&s, &[0.5], &[1.0], &[1.0], 40.0).unwrap();
        let direct = minimize_eta(phi.unwrap(), 40.0, DEFAULT_TOL).unwrap();
        assert_eq!(b, direct);
    }

    #[test]
    fn tied_drifts_match_erlang_closed_form() {
        // Three equal stages: sojourn is Erlang(3, a), so x* = a - 3/gamma.
        let (a, gamma) = (0.2, 40.0);
        let b = minimize_eta(PhiTriple::new(a, a, a), gamma, DEFAULT_TOL).unwrap();
        let x_star = a - 3.0 / gamma;
        assert!(close(b.x_star, x_star, 1e-8), "{} vs {x_star}", b.x_star);
        let eta = (a * gamma / 3.0).powi(3) * (3.0 - a * gamma).exp();
        assert!(close(b.eta_star, eta, 1e-8), "{} vs {eta}", b.eta_star);
        let partial = minimize_eta(PhiTriple::new(a, a, 0.5), gamma, DEFAULT_TOL).unwrap();
        assert!(partial.eta_star > 0.0 && partial.eta_star < 1.0);
    }

    fn phi_strategy() -> impl Strategy<Value = PhiTriple> {
        (0.01f64..5.0, 0.01f64..5.0, 0.01f64..5.0).prop_map(|(a, b, c)| PhiTriple::new(a, b, c))
    }

    proptest! {
        #[test]
        fn pairwise_form_agrees(phi in phi_strategy(), frac in 0.0f64..0.99) {
            let x = frac * phi.min();
            let a = mgf_response(phi, x).unwrap().hess;
            let b = mgf_hess_pairwise(phi, x).unwrap();
            prop_assert!(close(a, b, 1e-12), "{} vs {}", a, b);
        }

        #[test]
        fn mgf_positive_and_normalized(phi in phi_strategy(), frac in 0.0f64..0.999) {
            prop_assert_eq!(mgf_response(phi, 0.0).unwrap().value, 1.0);
            let m = mgf_response(phi, frac * phi.min()).unwrap();
            prop_assert!(m.value >= 1.0 && m.grad > 0.0 && m.hess > 0.0);
        }

        #[test]
        fn bound_is_monotone_in_gamma(phi in phi_strategy(), g1 in 0.1f64..200.0, dg in 0.0f64..50.0) {
            let a = minimize_eta(phi, g1, DEFAULT_TOL).unwrap().eta_star;
            let b = minimize_eta(phi, g1 + dg, DEFAULT_TOL).unwrap().eta_star;
            prop_assert!(a >= b * (1.0 - 1e-12));
        }

        #[test]
        fn kappa_lies_between_max_and_sum(etas in proptest::collection::vec(0.0f64..1.5, 1..8)) {
            let k = system_tail_bound(&etas).unwrap().kappa_bound;
            let clamped: Vec<f64> = etas.iter().map(|e| e.min(1.0)).collect();
            let max = clamped.iter().cloned().fold(0.0, f64::max);
            let sum: f64 = clamped.iter().sum();
            prop_assert!(k >= max - 1e-12 && k <= sum.min(1.0) + 1e-12);
        }
    }
}
