//! Weighted alpha-fair bandwidth sharing.
//!
//! For flow counts `z`, the allocation maximizes
//! `sum_{z_i > 0} kappa_i z_i^alpha lambda_i^{1-alpha} / (1 - alpha)`
//! (`kappa_i z_i log lambda_i` when `alpha = 1`) subject to `A lambda <= C`
//! and `lambda_i = 0` whenever `z_i = 0`. It is computed on the dual: for
//! resource prices `p`, the maximizing rates are
//! `lambda_i(p) = z_i (kappa_i / sum_j p_j A_ji)^{1/alpha}`, and `p` is found
//! by projected Newton on the (smooth, convex) dual function.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::{self, Coupling, SeparableDual};
use crate::topology::NetworkTopology;

/// Failure threshold on the composite KKT residual.
pub const KKT_TOLERANCE: f64 = 1e-8;
/// Newton keeps iterating below [`KKT_TOLERANCE`] until this or stagnation.
const KKT_POLISH: f64 = 1e-14;
pub const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("allocation did not converge: KKT residual {residual:e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },
    #[error("grid oracle supports at most 3 routes, got {0}")]
    TooManyRoutes(usize),
}

/// A bandwidth sharing policy: maps flow counts to per-route bandwidths.
pub trait BandwidthPolicy: Send + Sync {
    fn allocate(&self, topology: &NetworkTopology, z: &[f64]) -> Result<AllocationResult, AllocError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaFairPolicy {
    alpha: f64,
    kappa: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub lambda: Vec<f64>,
    pub prices: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl AlphaFairPolicy {
    pub fn new(alpha: f64, kappa: Vec<f64>) -> Result<Self, AllocError> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(AllocError::InvalidInput(format!("alpha must be positive, got {alpha}")));
        }
        if kappa.is_empty() || kappa.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(AllocError::InvalidInput("weights must be positive".into()));
        }
        Ok(Self { alpha, kappa })
    }

    /// Unit weights on `routes` routes.
    pub fn unweighted(alpha: f64, routes: usize) -> Result<Self, AllocError> {
        Self::new(alpha, vec![1.0; routes])
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    fn check(&self, topology: &NetworkTopology, z: &[f64]) -> Result<(), AllocError> {
        let n = topology.num_routes();
        if z.len() != n || self.kappa.len() != n {
            return Err(AllocError::InvalidInput(format!(
                "expected {n} routes, got z of length {} and kappa of length {}",
                z.len(),
                self.kappa.len()
            )));
        }
        if let Some(bad) = z.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(AllocError::InvalidInput(format!("flow counts must be finite and nonnegative, got {bad}")));
        }
        Ok(())
    }

    /// `lambda_i(p)` for a route with `z_i > 0` and aggregate price `s`.
    #[inline]
    fn rate(&self, i: usize, z: f64, s: f64) -> f64 {
        z * (self.kappa[i] / s).powf(1.0 / self.alpha)
    }

    /// Computes the allocation, optionally warm-starting the Newton iteration
    /// from the prices of an earlier call.
    pub fn allocate_from(
        &self,
        topology: &NetworkTopology,
        z: &[f64],
        warm: Option<&[f64]>,
    ) -> Result<AllocationResult, AllocError> {
        self.check(topology, z)?;
        let (num_routes, num_resources) = (topology.num_routes(), topology.num_resources());
        let scale = z.iter().cloned().fold(0.0, f64::max);
        if scale == 0.0 {
            return Ok(AllocationResult {
                lambda: vec![0.0; num_routes],
                prices: vec![0.0; num_resources],
                kkt_residual: 0.0,
                iterations: 0,
            });
        }
        // Scale invariance: solve for z / max z and rescale prices afterwards.
        let zn: Vec<f64> = z.iter().map(|v| v / scale).collect();
        let routes: Vec<usize> = (0..num_routes).filter(|&i| zn[i] > 0.0).collect();
        // Resources carrying no positive route keep price 0.
        let resources: Vec<usize> =
            (0..num_resources).filter(|&j| routes.iter().any(|&i| topology.uses(j, i))).collect();
        let coupling = Coupling {
            rows: resources
                .iter()
                .map(|&j| (0..routes.len()).filter(|&a| topology.uses(j, routes[a])).collect())
                .collect(),
            cols: routes
                .iter()
                .map(|&i| (0..resources.len()).filter(|&b| topology.uses(resources[b], i)).collect())
                .collect(),
        };
        let prob = AlphaFairDual { policy: self, routes: &routes, z: &zn };
        let c: Vec<f64> = resources.iter().map(|&j| topology.capacities()[j]).collect();

        let expand = |q: &[f64]| {
            let mut full = vec![0.0; num_resources];
            for (b, &j) in resources.iter().enumerate() {
                full[j] = q[b];
            }
            full
        };
        let recover = |q: &[f64]| -> Vec<f64> {
            let s = coupling.transpose_apply(q);
            let mut lambda = vec![0.0; num_routes];
            for (a, &i) in routes.iter().enumerate() {
                lambda[i] = self.rate(i, zn[i], s[a]);
            }
            lambda
        };
        let residual = |lambda: &[f64], prices: &[f64]| kkt_residual(topology, self, &zn, lambda, prices);

        let factor = scale.powf(self.alpha);
        let mut p0 = warm
            .filter(|w| w.len() == num_resources)
            .map(|w| resources.iter().map(|&j| w[j].max(0.0) / factor).collect::<Vec<_>>())
            .unwrap_or_default();
        if p0.is_empty() || coupling.transpose_apply(&p0).iter().any(|&s| !(s > 0.0)) {
            // Price each resource as if it were the only constraint, which
            // puts every price on the right order of magnitude.
            p0 = coupling
                .rows
                .iter()
                .zip(&c)
                .map(|(members, cap)| {
                    let demand: f64 =
                        members.iter().map(|&a| zn[routes[a]] * self.kappa[routes[a]].powf(1.0 / self.alpha)).sum();
                    (demand / cap).powf(self.alpha)
                })
                .collect();
        }
        let outcome = dual::minimize(&prob, &coupling, &c, p0, KKT_POLISH, MAX_ITERATIONS, |q| {
            residual(&recover(q), &expand(q))
        });

        let mut lambda = recover(&outcome.prices);
        let load = topology.apply(&lambda);
        let shrink = load
            .iter()
            .zip(topology.capacities())
            .filter(|(l, _)| **l > 0.0)
            .map(|(l, c)| c / l)
            .fold(1.0, f64::min);
        if shrink < 1.0 {
            for v in &mut lambda {
                *v *= shrink;
            }
        }
        let normalized = expand(&outcome.prices);
        let kkt = residual(&lambda, &normalized);
        if !(kkt <= KKT_TOLERANCE) {
            return Err(AllocError::NonConvergence { residual: kkt, iterations: outcome.iterations });
        }
        Ok(AllocationResult {
            lambda,
            prices: normalized.iter().map(|p| p * factor).collect(),
            kkt_residual: kkt,
            iterations: outcome.iterations,
        })
    }

    /// Value of the alpha-fair objective, `-inf` when a positive route gets
    /// no bandwidth and `alpha >= 1`, and `0` when no route is positive.
    pub fn objective_value(&self, z: &[f64], lambda: &[f64]) -> f64 {
        let a = self.alpha;
        z.iter()
            .zip(lambda)
            .enumerate()
            .filter(|(_, (zi, _))| **zi > 0.0)
            .map(|(i, (&zi, &li))| {
                if a == 1.0 {
                    self.kappa[i] * zi * li.ln()
                } else {
                    self.kappa[i] * zi.powf(a) * li.powf(1.0 - a) / (1.0 - a)
                }
            })
            .sum()
    }
}

impl BandwidthPolicy for AlphaFairPolicy {
    fn allocate(&self, topology: &NetworkTopology, z: &[f64]) -> Result<AllocationResult, AllocError> {
        self.allocate_from(topology, z, None)
    }
}

/// Composite KKT residual: parametric-form stationarity, complementary
/// slackness, primal feasibility and dual feasibility, maximized.
pub fn kkt_residual(topology: &NetworkTopology, policy: &AlphaFairPolicy, z: &[f64], lambda: &[f64], prices: &[f64]) -> f64 {
    let s = topology.apply_transpose(prices);
    let mut worst = 0.0f64;
    for i in 0..z.len() {
        if z[i] > 0.0 {
            let target = if s[i] > 0.0 { policy.rate(i, z[i], s[i]) } else { f64::INFINITY };
            worst = worst.max((lambda[i] - target).abs());
        }
    }
    let load = topology.apply(lambda);
    for (j, &c) in topology.capacities().iter().enumerate() {
        worst = worst.max((prices[j] * (c - load[j])).abs());
        worst = worst.max((load[j] - c).max(0.0));
        worst = worst.max((-prices[j]).max(0.0));
    }
    worst
}

struct AlphaFairDual<'a> {
    policy: &'a AlphaFairPolicy,
    routes: &'a [usize],
    z: &'a [f64],
}

impl SeparableDual for AlphaFairDual<'_> {
    fn phi(&self, a: usize, s: f64) -> f64 {
        if !(s > 0.0) {
            return f64::INFINITY;
        }
        let i = self.routes[a];
        let alpha = self.policy.alpha;
        let lambda = self.policy.rate(i, self.z[i], s);
        if alpha == 1.0 {
            let kz = self.policy.kappa[i] * self.z[i];
            kz * (kz / s).ln() - kz
        } else {
            s * lambda * alpha / (1.0 - alpha)
        }
    }

    fn dphi(&self, a: usize, s: f64) -> f64 {
        let i = self.routes[a];
        -self.policy.rate(i, self.z[i], s)
    }

    fn d2phi(&self, a: usize, s: f64) -> f64 {
        let i = self.routes[a];
        self.policy.rate(i, self.z[i], s) / (self.policy.alpha * s)
    }
}

/// Brute-force maximizer over the feasible lattice of mesh `step`, for at
/// most three routes. The objective is increasing in each positive
/// coordinate, so the last positive route takes the largest feasible value.
pub fn grid_oracle(
    topology: &NetworkTopology,
    policy: &AlphaFairPolicy,
    z: &[f64],
    step: f64,
) -> Result<Vec<f64>, AllocError> {
    policy.check(topology, z)?;
    let n = topology.num_routes();
    if n > 3 {
        return Err(AllocError::TooManyRoutes(n));
    }
    if !(step > 0.0) {
        return Err(AllocError::InvalidInput("step must be positive".into()));
    }
    let routes: Vec<usize> = (0..n).filter(|&i| z[i] > 0.0).collect();
    let mut best = vec![0.0; n];
    if routes.is_empty() {
        return Ok(best);
    }
    let mut best_value = f64::NEG_INFINITY;
    let mut current = vec![0.0; n];
    search(topology, policy, z, step, &routes, 0, &mut current, &mut best, &mut best_value);
    Ok(best)
}

/// Largest lattice value for `route` given the others in `current`.
fn headroom(topology: &NetworkTopology, route: usize, current: &[f64], step: f64) -> f64 {
    let room = topology
        .route_resources(route)
        .map(|j| topology.capacities()[j] - topology.resource_routes(j).filter(|&i| i != route).map(|i| current[i]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    if room < 0.0 {
        return -1.0;
    }
    ((room / step) + 1e-9).floor() * step
}

#[allow(clippy::too_many_arguments)]
fn search(
    topology: &NetworkTopology,
    policy: &AlphaFairPolicy,
    z: &[f64],
    step: f64,
    routes: &[usize],
    depth: usize,
    current: &mut Vec<f64>,
    best: &mut Vec<f64>,
    best_value: &mut f64,
) {
    let i = routes[depth];
    let top = headroom(topology, i, current, step);
    if top < 0.0 {
        return;
    }
    if depth + 1 == routes.len() {
        current[i] = top;
        let v = policy.objective_value(z, current);
        if v > *best_value || best_value.is_infinite() && best.iter().all(|&x| x == 0.0) {
            *best_value = v;
            best.clone_from(current);
        }
        current[i] = 0.0;
        return;
    }
    let count = (top / step).round() as usize;
    for k in 0..=count {
        current[i] = k as f64 * step;
        search(topology, policy, z, step, routes, depth + 1, current, best, best_value);
    }
    current[i] = 0.0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linear() -> NetworkTopology {
        NetworkTopology::linear([1.0, 1.0]).unwrap()
    }

    #[test]
    fn single_route_saturates() {
        let t = NetworkTopology::single(1.0).unwrap();
        for alpha in [0.5, 1.0, 2.0, 7.0] {
            let p = AlphaFairPolicy::unweighted(alpha, 1).unwrap();
            for z in [1e-6, 0.3, 1.0, 1e6] {
                let r = p.allocate(&t, &[z]).unwrap();
                assert!((r.lambda[0] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn proportional_fairness_on_linear_network() {
        let p = AlphaFairPolicy::unweighted(1.0, 3).unwrap();
        let r = p.allocate(&linear(), &[1.0, 1.0, 1.0]).unwrap();
        let expect = [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
        for i in 0..3 {
            assert!((r.lambda[i] - expect[i]).abs() < 1e-9);
        }
        assert!((r.prices[0] - 1.5).abs() < 1e-8 && (r.prices[1] - 1.5).abs() < 1e-8);
        assert!(r.kkt_residual <= KKT_TOLERANCE);
    }

    #[test]
    fn alpha_two_on_linear_network() {
        let p = AlphaFairPolicy::unweighted(2.0, 3).unwrap();
        let r = p.allocate(&linear(), &[1.0, 1.0, 1.0]).unwrap();
        let s = 2f64.sqrt();
        let expect = [s - 1.0, 2.0 - s, 2.0 - s];
        for i in 0..3 {
            assert!((r.lambda[i] - expect[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_input_and_errors() {
        let p = AlphaFairPolicy::unweighted(1.0, 3).unwrap();
        let r = p.allocate(&linear(), &[0.0; 3]).unwrap();
        assert_eq!(r.lambda, vec![0.0; 3]);
        assert!(matches!(p.allocate(&linear(), &[1.0, -1.0, 0.0]), Err(AllocError::InvalidInput(_))));
        assert!(matches!(p.allocate(&linear(), &[1.0]), Err(AllocError::InvalidInput(_))));
        assert!(AlphaFairPolicy::new(0.0, vec![1.0]).is_err());
        assert!(AlphaFairPolicy::new(1.0, vec![0.0]).is_err());
    }

    #[test]
    fn objective_conventions() {
        let p1 = AlphaFairPolicy::unweighted(1.0, 1).unwrap();
        assert_eq!(p1.objective_value(&[0.0], &[0.0]), 0.0);
        assert_eq!(p1.objective_value(&[1.0], &[0.0]), f64::NEG_INFINITY);
        let p2 = AlphaFairPolicy::unweighted(2.0, 1).unwrap();
        assert_eq!(p2.objective_value(&[1.0], &[0.0]), f64::NEG_INFINITY);
        let p3 = AlphaFairPolicy::unweighted(1.0, 3).unwrap();
        let v = p3.objective_value(&[1.0; 3], &[1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
        assert!((v - ((1.0f64 / 3.0).ln() + 2.0 * (2.0f64 / 3.0).ln())).abs() < 1e-12);
        assert!((v + 1.9095).abs() < 1e-4);
    }

    #[test]
    fn grid_oracle_cases() {
        let p = AlphaFairPolicy::unweighted(1.0, 3).unwrap();
        let g = grid_oracle(&linear(), &p, &[1.0; 3], 1e-3).unwrap();
        let expect = [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
        for i in 0..3 {
            assert!((g[i] - expect[i]).abs() <= 2e-3);
        }
        let t = NetworkTopology::single(1.0).unwrap();
        let single = AlphaFairPolicy::unweighted(1.0, 1).unwrap();
        assert!((grid_oracle(&t, &single, &[2.0], 0.01).unwrap()[0] - 1.0).abs() < 1e-9);
        let g = grid_oracle(&linear(), &p, &[1.0, 0.0, 1.0], 1e-2).unwrap();
        assert_eq!(g[1], 0.0);
        assert!((g[0] - 0.5).abs() < 2e-2);
        let four = NetworkTopology::from_rows(&[&[1, 1, 1, 1]], &[1.0]).unwrap();
        let p4 = AlphaFairPolicy::unweighted(1.0, 4).unwrap();
        assert_eq!(grid_oracle(&four, &p4, &[1.0; 4], 0.1), Err(AllocError::TooManyRoutes(4)));
    }

    #[test]
    fn slack_resources_are_priced_zero() {
        // resource 1 is only used by route 1, which is empty
        let t = NetworkTopology::from_rows(&[&[1, 0], &[0, 1]], &[1.0, 1.0]).unwrap();
        let p = AlphaFairPolicy::unweighted(1.0, 2).unwrap();
        let r = p.allocate(&t, &[3.0, 0.0]).unwrap();
        assert_eq!(r.prices[1], 0.0);
        assert!((r.lambda[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_resources_do_not_break_newton() {
        let t = NetworkTopology::from_rows(&[&[1, 1], &[1, 1], &[1, 0]], &[1.0, 1.0, 2.0]).unwrap();
        let p = AlphaFairPolicy::unweighted(1.5, 2).unwrap();
        let r = p.allocate(&t, &[1.0, 2.0]).unwrap();
        assert!(r.kkt_residual <= KKT_TOLERANCE);
        assert!((r.lambda[0] + r.lambda[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let p = AlphaFairPolicy::new(0.7, vec![1.0, 2.0, 0.5]).unwrap();
        let cold = p.allocate(&linear(), &[3.0, 1.0, 2.0]).unwrap();
        let warm = p.allocate_from(&linear(), &[3.0, 1.0, 2.5], Some(&cold.prices)).unwrap();
        let again = p.allocate(&linear(), &[3.0, 1.0, 2.5]).unwrap();
        for i in 0..3 {
            assert!((warm.lambda[i] - again.lambda[i]).abs() < 1e-9);
        }
        assert!(cold.kkt_residual <= KKT_TOLERANCE);
    }

    proptest! {
        #[test]
        fn weights_shift_bandwidth(k in 0.1f64..10.0) {
            let t = NetworkTopology::from_rows(&[&[1, 1]], &[1.0]).unwrap();
            let p = AlphaFairPolicy::new(1.0, vec![k, 1.0]).unwrap();
            let r = p.allocate(&t, &[1.0, 1.0]).unwrap();
            // proportional fairness on one link splits by weight
            prop_assert!((r.lambda[0] - k / (k + 1.0)).abs() < 1e-9);
        }
    }
}
