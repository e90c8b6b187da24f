//! Fluid model solver.
//!
//! The state is a vector of atomic measures transported along
//! characteristics: every step of length `dt` moves each route's atoms left
//! by the per-flow service `Lambda_i(z) / z_i * dt` (allocation frozen at the
//! start of the step), removes what reaches 0, and appends a copy of the
//! discretized size law with mass `nu_i * dt`.

use serde::Serialize;
use thiserror::Error;

use crate::allocator::{AllocError, AlphaFairPolicy, BandwidthPolicy};
use crate::measure::{AtomicMeasure, DistributionSpec, MeasureError, SmoothStep, DEFAULT_DISCRETIZATION};
use crate::topology::NetworkTopology;

/// Atoms closer than `max_location / COARSEN_CELLS` are merged after each step.
pub const COARSEN_CELLS: f64 = 4096.0;
pub const DEFAULT_ATOM_CAP: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FluidError {
    #[error(transparent)]
    Allocator(#[from] AllocError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("route {route} holds {atoms} atoms, above the budget of {cap}")]
    AtomBudgetExceeded { route: usize, atoms: usize, cap: usize },
    #[error("invalid fluid data: {0}")]
    InvalidData(String),
}

/// Network, policy and traffic primitives of the fluid model.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidData {
    topology: NetworkTopology,
    policy: AlphaFairPolicy,
    nu: Vec<f64>,
    theta: Vec<DistributionSpec>,
    mu: Vec<f64>,
    rho: Vec<f64>,
}

impl FluidData {
    /// Requires strictly positive arrival rates.
    pub fn new(
        topology: NetworkTopology,
        policy: AlphaFairPolicy,
        nu: Vec<f64>,
        theta: Vec<DistributionSpec>,
    ) -> Result<Self, FluidError> {
        if let Some(v) = nu.iter().find(|v| !(**v > 0.0)) {
            return Err(FluidError::InvalidData(format!("arrival rates must be positive, got {v}")));
        }
        Self::with_zero_rates(topology, policy, nu, theta)
    }

    /// Like [`FluidData::new`] but also accepts `nu_i = 0`. Only meant for
    /// tests of degenerate dynamics.
    pub fn with_zero_rates(
        topology: NetworkTopology,
        policy: AlphaFairPolicy,
        nu: Vec<f64>,
        theta: Vec<DistributionSpec>,
    ) -> Result<Self, FluidError> {
        let n = topology.num_routes();
        if nu.len() != n || theta.len() != n || policy.kappa().len() != n {
            return Err(FluidError::InvalidData(format!("expected {n} routes in rates, sizes and weights")));
        }
        if let Some(v) = nu.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(FluidError::InvalidData(format!("arrival rates must be finite and nonnegative, got {v}")));
        }
        for t in &theta {
            t.validate()?;
        }
        let mu: Vec<f64> = theta.iter().map(|t| t.service_rate()).collect();
        let rho = nu.iter().zip(&mu).map(|(n, m)| n / m).collect();
        Ok(Self { topology, policy, nu, theta, mu, rho })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn policy(&self) -> &AlphaFairPolicy {
        &self.policy
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn theta(&self) -> &[DistributionSpec] {
        &self.theta
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn num_routes(&self) -> usize {
        self.topology.num_routes()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidOptions {
    pub horizon: f64,
    pub dt: f64,
    /// Atoms in each inflow batch.
    pub inflow_atoms: usize,
    pub atom_cap: usize,
    /// Keep the measures every this many steps (0: never).
    pub snapshot_every: usize,
    /// Also keep the measures at the grid points closest to these times.
    pub snapshot_times: Vec<f64>,
}

impl FluidOptions {
    pub fn new(horizon: f64, dt: f64) -> Self {
        Self {
            horizon,
            dt,
            inflow_atoms: DEFAULT_DISCRETIZATION,
            atom_cap: DEFAULT_ATOM_CAP,
            snapshot_every: 0,
            snapshot_times: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    fn grid_index(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.steps())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidSnapshot {
    pub step: usize,
    pub time: f64,
    pub measures: Vec<AtomicMeasure>,
}

/// Grid trajectory of a fluid solve. Auxiliary arrays are indexed
/// `[step][route]` (or `[step][resource]` for `u`) and cover every grid time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidSolution {
    pub dt: f64,
    pub times: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    /// Cumulative service per unit of mass.
    pub service: Vec<Vec<f64>>,
    pub snapshots: Vec<FluidSnapshot>,
    pub rho: Vec<f64>,
}

impl FluidSolution {
    pub fn snapshot_near(&self, t: f64) -> Option<&FluidSnapshot> {
        self.snapshots.iter().min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
    }

    pub fn final_measures(&self) -> Option<&[AtomicMeasure]> {
        self.snapshots.last().filter(|s| s.step + 1 == self.times.len()).map(|s| s.measures.as_slice())
    }
}

pub fn solve(data: &FluidData, zeta0: &[AtomicMeasure], opts: &FluidOptions) -> Result<FluidSolution, FluidError> {
    solve_observed(data, zeta0, opts, |_, _, _| {})
}

/// Runs the solver, calling `observer(step, time, measures)` at every grid
/// time including 0.
pub fn solve_observed(
    data: &FluidData,
    zeta0: &[AtomicMeasure],
    opts: &FluidOptions,
    mut observer: impl FnMut(usize, f64, &[AtomicMeasure]),
) -> Result<FluidSolution, FluidError> {
    let n = data.num_routes();
    if zeta0.len() != n {
        return Err(FluidError::InvalidData(format!("initial state has {} routes, expected {n}", zeta0.len())));
    }
    if !(opts.dt > 0.0 && opts.horizon >= 0.0 && opts.inflow_atoms > 0) {
        return Err(FluidError::InvalidData("need dt > 0, horizon >= 0 and a positive inflow atom count".into()));
    }
    if let Some(i) = zeta0.iter().position(|m| m.has_atom_at_zero()) {
        return Err(FluidError::InvalidData(format!("initial measure of route {i} has an atom at 0")));
    }
    let topology = data.topology();
    let capacities = topology.capacities();
    let steps = opts.steps();
    let snapshot_steps: Vec<usize> = opts.snapshot_times.iter().map(|&t| opts.grid_index(t)).collect();
    let wants_snapshot = |k: usize| {
        let periodic = opts.snapshot_every > 0 && (k % opts.snapshot_every == 0 || k == steps);
        periodic || snapshot_steps.contains(&k)
    };
    let inflow: Vec<AtomicMeasure> = data
        .theta()
        .iter()
        .zip(data.nu())
        .map(|(t, &nu)| if nu > 0.0 { t.discretize(opts.inflow_atoms).scaled(nu * opts.dt) } else { AtomicMeasure::zero() })
        .collect();

    let mut state: Vec<AtomicMeasure> = zeta0.to_vec();
    let mut tau = vec![0.0; n];
    let mut service = vec![0.0; n];
    let mut sol = FluidSolution {
        dt: opts.dt,
        times: Vec::with_capacity(steps + 1),
        z: Vec::with_capacity(steps + 1),
        w: Vec::with_capacity(steps + 1),
        tau: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        service: Vec::with_capacity(steps + 1),
        snapshots: Vec::new(),
        rho: data.rho().to_vec(),
    };
    let mut prices: Option<Vec<f64>> = None;
    for k in 0..=steps {
        let t = k as f64 * opts.dt;
        let z: Vec<f64> = state.iter().map(|m| m.total_mass()).collect();
        let load = topology.apply(&tau);
        sol.times.push(t);
        sol.w.push(state.iter().map(|m| m.first_moment()).collect());
        sol.tau.push(tau.clone());
        sol.u.push(capacities.iter().zip(&load).map(|(c, l)| c * t - l).collect());
        sol.service.push(service.clone());
        observer(k, t, &state);
        if wants_snapshot(k) {
            sol.snapshots.push(FluidSnapshot { step: k, time: t, measures: state.clone() });
        }
        sol.z.push(z.clone());
        if k == steps {
            break;
        }

        let alloc = data.policy().allocate_from(topology, &z, prices.as_deref())?;
        for i in 0..n {
            if z[i] > 0.0 {
                let shift = alloc.lambda[i] / z[i] * opts.dt;
                let (_, served) = state[i].shift_left_in_place(shift);
                tau[i] += served;
                service[i] += shift;
            }
            // Inflow is injected on empty routes too. A route with spare
            // capacity then drains it within the next step, so z_i stays O(dt).
            if !inflow[i].is_zero() {
                state[i] = state[i].plus(&inflow[i]);
            }
            if let Some(top) = state[i].max_location() {
                state[i].coarsen(top / COARSEN_CELLS);
            }
            if state[i].len() > opts.atom_cap {
                return Err(FluidError::AtomBudgetExceeded { route: i, atoms: state[i].len(), cap: opts.atom_cap });
            }
        }
        prices = Some(alloc.prices);
    }
    Ok(sol)
}

/// `max |w_i(t) - w_i(0) - rho_i t + tau_i(t)|` over the grid.
pub fn workload_identity_residual(sol: &FluidSolution) -> f64 {
    let Some(w0) = sol.w.first() else { return 0.0 };
    let mut worst = 0.0f64;
    for (k, &t) in sol.times.iter().enumerate() {
        for i in 0..w0.len() {
            worst = worst.max((sol.w[k][i] - w0[i] - sol.rho[i] * t + sol.tau[k][i]).abs());
        }
    }
    worst
}

/// Checks the weak form of the fluid equation on the stored snapshots,
/// which must be consecutive grid times starting at 0:
///
/// ```text
/// <f, zeta_i(t)> = <f, zeta_i(0)> - int_0^t <f', zeta_i(s)> Lambda_i(z(s)) / z_i(s) ds
///                  + nu_i <f, theta_i> int_0^t 1{z_i(s) > 0} ds
/// ```
///
/// Time integrals use the trapezoid rule, the allocation is recomputed from
/// the snapshot masses and `<f, theta_i>` is integrated by quadrature.
pub fn fluid_equation_residual(data: &FluidData, sol: &FluidSolution, battery: &[SmoothStep]) -> Result<f64, FluidError> {
    let snaps = &sol.snapshots;
    if snaps.is_empty() {
        return Ok(0.0);
    }
    let n = data.num_routes();
    let lambdas: Vec<Vec<f64>> = snaps
        .iter()
        .map(|s| {
            let z: Vec<f64> = s.measures.iter().map(|m| m.total_mass()).collect();
            data.policy().allocate(data.topology(), &z).map(|a| a.lambda)
        })
        .collect::<Result<_, _>>()?;
    let mut worst = 0.0f64;
    for f in battery {
        let f_theta: Vec<f64> = data.theta().iter().map(|t| t.expect(|x| f.value(x))).collect();
        for i in 0..n {
            // integrand values at each snapshot
            let drift: Vec<f64> = snaps
                .iter()
                .zip(&lambdas)
                .map(|(s, l)| {
                    let m = &s.measures[i];
                    let z = m.total_mass();
                    if z > 0.0 {
                        m.integrate(|x| f.derivative(x)) * l[i] / z
                    } else {
                        0.0
                    }
                })
                .collect();
            let busy: Vec<f64> =
                snaps.iter().map(|s| if s.measures[i].total_mass() > 0.0 { 1.0 } else { 0.0 }).collect();
            let start = snaps[0].measures[i].integrate(|x| f.value(x));
            let (mut drift_int, mut busy_int) = (0.0, 0.0);
            for k in 0..snaps.len() {
                if k > 0 {
                    let h = snaps[k].time - snaps[k - 1].time;
                    drift_int += 0.5 * h * (drift[k] + drift[k - 1]);
                    busy_int += 0.5 * h * (busy[k] + busy[k - 1]);
                }
                let lhs = snaps[k].measures[i].integrate(|x| f.value(x));
                let rhs = start - drift_int + data.nu()[i] * f_theta[i] * busy_int;
                worst = worst.max((lhs - rhs).abs());
            }
        }
    }
    Ok(worst)
}
