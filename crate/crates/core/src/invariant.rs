//! Invariant states of the fluid model under weighted alpha-fair policies.
//!
//! Invariant states exist iff `A rho <= C`; they are the vectors
//! `xi_i = z_i theta_i^e` (excess-lifetime law) with `z` in
//! `P = { z >= 0 : Lambda_i(z) = rho_i whenever z_i > 0 }`. Points of `P` are
//! parametrized by workloads on the critical resources through the lifting
//! map, the minimizer of
//!
//! ```text
//!   F(z) = 1/(alpha+1) sum_i nu_i kappa_i mu_i^(alpha-1) (z_i/nu_i)^(alpha+1)
//!   s.t.   sum_i A_ji z_i / mu_i >= w_j   for critical j,
//! ```
//!
//! whose solution has the form `z_i = rho_i (sum_j q_j A_ji / kappa_i)^(1/alpha)`.

use log::warn;
use serde::Serialize;
use thiserror::Error;

use crate::allocator::{AllocError, BandwidthPolicy, KKT_TOLERANCE, MAX_ITERATIONS};
use crate::dual::{self, Coupling, SeparableDual};
use crate::fluid::FluidData;
use crate::measure::{levy_distance, AtomicMeasure, ExcessLifetime, MeasureError, DEFAULT_DISCRETIZATION};

/// Tolerance on `(A rho)_j = C_j` for critical resources.
pub const CRITICAL_TOL: f64 = 1e-9;
/// Resources this close to critical, but not within [`CRITICAL_TOL`], are warned about.
pub const NEAR_CRITICAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvariantError {
    #[error(transparent)]
    Allocator(#[from] AllocError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("no resource is critical")]
    EmptyCriticalSet,
    #[error("workload lift did not converge: KKT residual {residual:e}")]
    NonConvergence { residual: f64 },
    #[error("state is not in P: max |Lambda_i(z) - rho_i| = {deviation:e}")]
    NotInP { deviation: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criticality {
    /// `A rho`.
    pub load: Vec<f64>,
    /// Critical resources, ascending.
    pub critical: Vec<usize>,
    pub near_critical: Vec<usize>,
    /// Whether `A rho <= C` within [`CRITICAL_TOL`], i.e. invariant states exist.
    pub feasible: bool,
}

pub fn critical_resources(data: &FluidData) -> Criticality {
    let t = data.topology();
    let load = t.apply(data.rho());
    let mut critical = Vec::new();
    let mut near_critical = Vec::new();
    for (j, (&l, &c)) in load.iter().zip(t.capacities()).enumerate() {
        let gap = (l - c).abs();
        if gap <= CRITICAL_TOL {
            critical.push(j);
        } else if gap <= NEAR_CRITICAL_TOL {
            warn!("resource {j} is within {gap:e} of critical; the lift map is discontinuous here");
            near_critical.push(j);
        }
    }
    let feasible = load.iter().zip(t.capacities()).all(|(l, c)| *l <= c + CRITICAL_TOL);
    Criticality { load, critical, near_critical, feasible }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Membership {
    pub member: bool,
    /// `max |Lambda_i(z) - rho_i|` over routes with `z_i > 0`.
    pub deviation: f64,
}

pub fn is_in_p(data: &FluidData, z: &[f64], tol: f64) -> Result<Membership, InvariantError> {
    let alloc = data.policy().allocate(data.topology(), z)?;
    let deviation = (0..z.len())
        .filter(|&i| z[i] > 0.0)
        .map(|i| (alloc.lambda[i] - data.rho()[i]).abs())
        .fold(0.0, f64::max);
    Ok(Membership { member: deviation <= tol, deviation })
}

/// `w_j(z) = sum_i A_ji z_i / mu_i` for each critical resource `j`.
pub fn critical_workload(data: &FluidData, critical: &[usize], z: &[f64]) -> Vec<f64> {
    let t = data.topology();
    critical
        .iter()
        .map(|&j| t.resource_routes(j).map(|i| z[i] / data.mu()[i]).sum())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lift {
    pub z: Vec<f64>,
    /// Multipliers, one per critical resource.
    pub q: Vec<f64>,
    pub kkt_residual: f64,
}

struct LiftDual<'a> {
    data: &'a FluidData,
    routes: &'a [usize],
}

impl LiftDual<'_> {
    fn z(&self, a: usize, s: f64) -> f64 {
        let i = self.routes[a];
        let p = self.data.policy();
        self.data.rho()[i] * (s.max(0.0) / p.kappa()[i]).powf(1.0 / p.alpha())
    }
}

impl SeparableDual for LiftDual<'_> {
    fn phi(&self, a: usize, s: f64) -> f64 {
        if s < 0.0 {
            return f64::INFINITY;
        }
        let i = self.routes[a];
        let alpha = self.data.policy().alpha();
        s / self.data.mu()[i] * self.z(a, s) * alpha / (alpha + 1.0)
    }

    fn dphi(&self, a: usize, s: f64) -> f64 {
        self.z(a, s) / self.data.mu()[self.routes[a]]
    }

    fn d2phi(&self, a: usize, s: f64) -> f64 {
        let s = s.max(1e-300);
        let v = self.z(a, s) / (self.data.mu()[self.routes[a]] * self.data.policy().alpha() * s);
        v.min(1e300)
    }
}

/// The lifting map: the minimizer of `F` subject to the critical-workload
/// constraints `w` (indexed like `critical_resources(data).critical`).
pub fn lift_workload(data: &FluidData, w: &[f64]) -> Result<Lift, InvariantError> {
    let critical = critical_resources(data).critical;
    if critical.is_empty() {
        return Err(InvariantError::EmptyCriticalSet);
    }
    if w.len() != critical.len() {
        return Err(InvariantError::InvalidInput(format!(
            "expected {} critical workloads, got {}",
            critical.len(),
            w.len()
        )));
    }
    if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(InvariantError::InvalidInput(format!("workloads must be finite and nonnegative, got {v}")));
    }
    let n = data.num_routes();
    let scale = w.iter().cloned().fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(Lift { z: vec![0.0; n], q: vec![0.0; critical.len()], kkt_residual: 0.0 });
    }
    // z is homogeneous of degree 1 in w and q of degree alpha.
    let wn: Vec<f64> = w.iter().map(|v| v / scale).collect();
    let t = data.topology();
    let routes: Vec<usize> = (0..n).filter(|&i| critical.iter().any(|&j| t.uses(j, i))).collect();
    let coupling = Coupling {
        rows: critical.iter().map(|&j| (0..routes.len()).filter(|&a| t.uses(j, routes[a])).collect()).collect(),
        cols: routes.iter().map(|&i| (0..critical.len()).filter(|&b| t.uses(critical[b], i)).collect()).collect(),
    };
    let prob = LiftDual { data, routes: &routes };
    let c: Vec<f64> = wn.iter().map(|v| -v).collect();
    let recover = |q: &[f64]| -> Vec<f64> {
        let s = coupling.transpose_apply(q);
        let mut z = vec![0.0; n];
        for (a, &i) in routes.iter().enumerate() {
            z[i] = prob.z(a, s[a]);
        }
        z
    };
    let residual = |z: &[f64], q: &[f64]| -> f64 {
        let achieved = critical_workload(data, &critical, z);
        let mut worst = 0.0f64;
        for b in 0..critical.len() {
            worst = worst.max((q[b] * (achieved[b] - wn[b])).abs());
            worst = worst.max((wn[b] - achieved[b]).max(0.0));
            worst = worst.max((-q[b]).max(0.0));
        }
        worst
    };
    let outcome = dual::minimize(&prob, &coupling, &c, vec![1.0; critical.len()], 1e-14, MAX_ITERATIONS, |q| {
        residual(&recover(q), q)
    });
    let mut z = recover(&outcome.prices);
    // Push the constraints to feasibility; harmless at the optimum.
    let achieved = critical_workload(data, &critical, &z);
    let grow = achieved
        .iter()
        .zip(&wn)
        .filter(|(_, w)| **w > 0.0)
        .map(|(a, w)| if *a > 0.0 { w / a } else { f64::INFINITY })
        .fold(1.0, f64::max);
    if grow.is_finite() && grow > 1.0 {
        for v in &mut z {
            *v *= grow;
        }
    }
    let kkt = residual(&z, &outcome.prices);
    if !(kkt <= KKT_TOLERANCE) {
        return Err(InvariantError::NonConvergence { residual: kkt });
    }
    let factor = scale.powf(data.policy().alpha());
    Ok(Lift {
        z: z.iter().map(|v| v * scale).collect(),
        q: outcome.prices.iter().map(|v| v * factor).collect(),
        kkt_residual: kkt,
    })
}

/// `z_i = rho_i (sum_j q_j A_ji / kappa_i)^(1/alpha)` for multipliers `q` on
/// the critical resources.
pub fn z_from_multipliers(data: &FluidData, critical: &[usize], q: &[f64]) -> Vec<f64> {
    let t = data.topology();
    let p = data.policy();
    (0..data.num_routes())
        .map(|i| {
            let s: f64 = critical.iter().zip(q).filter(|(j, _)| t.uses(**j, i)).map(|(_, v)| v).sum();
            data.rho()[i] * (s / p.kappa()[i]).powf(1.0 / p.alpha())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantState {
    pub z: Vec<f64>,
    pub measures: Vec<AtomicMeasure>,
    /// Multipliers on the critical resources, when there are any.
    pub q: Option<Vec<f64>>,
}

/// Membership tolerance used by [`make_invariant_state`].
pub const MEMBERSHIP_TOL: f64 = 1e-6;

/// Builds `xi_i = z_i theta_i^e` with `theta_i^e` discretized to `atoms` atoms.
pub fn make_invariant_state(data: &FluidData, z: &[f64], atoms: usize) -> Result<InvariantState, InvariantError> {
    if z.len() != data.num_routes() {
        return Err(InvariantError::InvalidInput(format!("expected {} routes, got {}", data.num_routes(), z.len())));
    }
    let membership = is_in_p(data, z, MEMBERSHIP_TOL)?;
    if !membership.member {
        return Err(InvariantError::NotInP { deviation: membership.deviation });
    }
    let measures = z
        .iter()
        .zip(data.theta())
        .map(|(&zi, theta)| {
            if zi == 0.0 {
                Ok(AtomicMeasure::zero())
            } else {
                Ok(ExcessLifetime::new(theta)?.discretize(atoms).scaled(zi))
            }
        })
        .collect::<Result<Vec<_>, MeasureError>>()?;
    let critical = critical_resources(data).critical;
    let q = if critical.is_empty() {
        None
    } else {
        Some(lift_workload(data, &critical_workload(data, &critical, z))?.q)
    };
    Ok(InvariantState { z: z.to_vec(), measures, q })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantTolerances {
    pub load: f64,
    pub membership: f64,
    pub shape: f64,
    pub atoms: usize,
}

impl Default for InvariantTolerances {
    fn default() -> Self {
        Self::for_atoms(DEFAULT_DISCRETIZATION)
    }
}

impl InvariantTolerances {
    pub fn for_atoms(atoms: usize) -> Self {
        Self { load: CRITICAL_TOL, membership: MEMBERSHIP_TOL, shape: 3.0 / (atoms as f64).sqrt(), atoms }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantCheck {
    pub accepted: bool,
    pub load_feasible: bool,
    pub membership: Membership,
    /// Lévy distance of each component to `z_i theta_i^e`.
    pub shape_distance: Vec<f64>,
    pub diagnostics: Vec<String>,
}

pub fn is_invariant_state(
    data: &FluidData,
    xi: &[AtomicMeasure],
    tol: &InvariantTolerances,
) -> Result<InvariantCheck, InvariantError> {
    if xi.len() != data.num_routes() {
        return Err(InvariantError::InvalidInput(format!("expected {} routes, got {}", data.num_routes(), xi.len())));
    }
    let t = data.topology();
    let load = t.apply(data.rho());
    let mut diagnostics = Vec::new();
    let load_feasible = load.iter().zip(t.capacities()).all(|(l, c)| *l <= c + tol.load);
    if !load_feasible {
        diagnostics.push("A rho exceeds C: no invariant state exists".to_string());
    }
    let z: Vec<f64> = xi.iter().map(|m| m.total_mass()).collect();
    let membership = is_in_p(data, &z, tol.membership)?;
    if !membership.member {
        diagnostics.push(format!("masses are not in P (deviation {:e})", membership.deviation));
    }
    let mut shape_distance = Vec::with_capacity(xi.len());
    for (i, (m, theta)) in xi.iter().zip(data.theta()).enumerate() {
        let target = if z[i] > 0.0 {
            ExcessLifetime::new(theta)?.discretize(tol.atoms).scaled(z[i])
        } else {
            AtomicMeasure::zero()
        };
        let d = levy_distance(m, &target);
        if d > tol.shape {
            diagnostics.push(format!("route {i} is {d:.3e} from the excess-lifetime shape"));
        }
        shape_distance.push(d);
    }
    let accepted = load_feasible && membership.member && shape_distance.iter().all(|&d| d <= tol.shape);
    Ok(InvariantCheck { accepted, load_feasible, membership, shape_distance, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::AlphaFairPolicy;
    use crate::measure::DistributionSpec;
    use crate::topology::NetworkTopology;

    fn single(rho: f64, theta: DistributionSpec) -> FluidData {
        let nu = rho * theta.service_rate();
        FluidData::new(NetworkTopology::single(1.0).unwrap(), AlphaFairPolicy::unweighted(1.0, 1).unwrap(), vec![nu], vec![theta])
            .unwrap()
    }

    fn linear(alpha: f64) -> FluidData {
        FluidData::new(
            NetworkTopology::linear([1.0, 1.0]).unwrap(),
            AlphaFairPolicy::unweighted(alpha, 3).unwrap(),
            vec![0.5; 3],
            vec![DistributionSpec::exponential(1.0); 3],
        )
        .unwrap()
    }

    #[test]
    fn lift_recovers_from_overshoot_to_zero() {
        // alpha > 1 makes the dual curvature infinite at q = 0, where the
        // first Newton step lands.
        let rho = [0.400114380310312, 0.8457392332390076, 0.3988670680888057, 0.6634108920389509];
        let t = NetworkTopology::from_rows(&[&[1, 1, 1, 1]], &[rho.iter().sum()]).unwrap();
        let policy =
            AlphaFairPolicy::new(2.0, vec![0.7348976201026385, 2.10048517370649, 0.7871190654075941, 0.6572408135419725])
                .unwrap();
        let d = FluidData::new(t, policy, rho.to_vec(), vec![DistributionSpec::exponential(1.0); 4]).unwrap();
        let lift = lift_workload(&d, &[3.6333125390248964]).unwrap();
        let w: f64 = lift.z.iter().sum();
        assert!((w - 3.6333125390248964).abs() < 1e-8);
    }

    #[test]
    fn critical_sets() {
        let c = critical_resources(&single(0.5, DistributionSpec::exponential(1.0)));
        assert!(c.critical.is_empty() && c.feasible);
        let c = critical_resources(&single(1.0, DistributionSpec::exponential(1.0)));
        assert_eq!(c.critical, vec![0]);
        let c = critical_resources(&linear(1.0));
        assert_eq!(c.critical, vec![0, 1]);
        let c = critical_resources(&single(1.5, DistributionSpec::exponential(1.0)));
        assert!(!c.feasible);
    }

    #[test]
    fn membership_examples() {
        let d = single(0.5, DistributionSpec::exponential(1.0));
        assert!(is_in_p(&d, &[0.0], 1e-9).unwrap().member);
        assert!(!is_in_p(&d, &[1.0], 1e-9).unwrap().member);
        let d = single(1.0, DistributionSpec::exponential(1.0));
        assert!(is_in_p(&d, &[3.7], 1e-9).unwrap().member);
    }

    #[test]
    fn single_resource_lift() {
        let d = single(1.0, DistributionSpec::exponential(2.0));
        let lift = lift_workload(&d, &[2.0]).unwrap();
        assert!((lift.z[0] - 4.0).abs() < 1e-8);
        assert_eq!(lift_workload(&d, &[0.0]).unwrap().z, vec![0.0]);
        let sub = single(0.5, DistributionSpec::exponential(1.0));
        assert_eq!(lift_workload(&sub, &[]), Err(InvariantError::EmptyCriticalSet));
    }

    #[test]
    fn linear_lift_is_symmetric_and_tight() {
        let d = linear(1.0);
        let lift = lift_workload(&d, &[1.0, 1.0]).unwrap();
        assert!((lift.z[1] - lift.z[2]).abs() < 1e-9);
        let w = critical_workload(&d, &[0, 1], &lift.z);
        assert!((w[0] - 1.0).abs() < 1e-8 && (w[1] - 1.0).abs() < 1e-8);
        assert!((lift.z[0] - 2.0 / 3.0).abs() < 1e-8);
        let back = z_from_multipliers(&d, &[0, 1], &lift.q);
        for i in 0..3 {
            assert!((back[i] - lift.z[i]).abs() < 1e-8);
        }
        assert!(is_in_p(&d, &lift.z, 1e-6).unwrap().member);
    }

    #[test]
    fn invariant_state_construction() {
        let d = single(1.0, DistributionSpec::deterministic(1.0));
        let s = make_invariant_state(&d, &[2.0], 512).unwrap();
        assert!((s.measures[0].total_mass() - 2.0).abs() < 1e-9);
        assert!((s.measures[0].cdf(0.5) - 1.0).abs() < 1e-2);
        assert!(s.q.is_some());
        let check = is_invariant_state(&d, &s.measures, &InvariantTolerances::default()).unwrap();
        assert!(check.accepted, "{check:?}");

        let zero = make_invariant_state(&single(0.5, DistributionSpec::exponential(1.0)), &[0.0], 512).unwrap();
        assert!(zero.measures[0].is_zero() && zero.q.is_none());
        let not_in_p = make_invariant_state(&single(0.5, DistributionSpec::exponential(1.0)), &[1.0], 512);
        assert!(matches!(not_in_p, Err(InvariantError::NotInP { .. })));
    }

    #[test]
    fn shape_and_load_rejections() {
        let d = single(1.0, DistributionSpec::exponential(1.0));
        let check = is_invariant_state(&d, &[AtomicMeasure::dirac(1.0)], &InvariantTolerances::default()).unwrap();
        assert!(!check.accepted && check.membership.member);
        assert!(check.shape_distance[0] > 0.1);
        let over = single(1.5, DistributionSpec::exponential(1.0));
        let check = is_invariant_state(&over, &[AtomicMeasure::zero()], &InvariantTolerances::default()).unwrap();
        assert!(!check.accepted && !check.load_feasible);
    }
}
