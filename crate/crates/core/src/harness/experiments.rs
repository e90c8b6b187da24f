use rayon::prelude::*;
use serde::Serialize;

use super::{HarnessError, Scenario};
use crate::fluid::{self, FluidOptions};
use crate::invariant::{self, InvariantCheck, InvariantTolerances};
use crate::measure::{vector_distance, AtomicMeasure, DistributionSpec, Metric};
use crate::rng::{self, Purpose};
use crate::simulator::{fluid_scale, SimState};

/// Relative slack allowed when checking that a sequence does not increase.
pub const MONOTONE_SLACK: f64 = 0.10;

/// Attached to failing convergence reports.
pub const UNIQUENESS_NOTE: &str = "fluid model solutions are not known to be unique from a given initial state; \
a large distance may reflect a different fluid solution rather than a defect";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Self::Pass
        } else {
            Self::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Self::Pass
    }
}

/// Median, averaging the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn nonincreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] * (1.0 + MONOTONE_SLACK))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub r: f64,
    pub replications: usize,
    /// `[replication][sample]` Lévy vector distances.
    pub distances: Vec<Vec<f64>>,
    /// Supremum over sample times, per replication.
    pub sup_distance: Vec<f64>,
    pub median_sup_distance: f64,
    pub max_sup_distance: f64,
}

/// Scaled simulation and fluid `z` at the sample times.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Trajectory {
    pub r: f64,
    pub times: Vec<f64>,
    pub fluid_z: Vec<Vec<f64>>,
    pub sim_z: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub seed: u64,
    pub sample_times: Vec<f64>,
    pub threshold: Option<f64>,
    pub rows: Vec<ConvergenceRow>,
    /// `D(r)` nonincreasing within [`MONOTONE_SLACK`].
    pub monotone: bool,
    /// `D(r_max) < D(r_min) / 2`.
    pub halved: bool,
    pub below_threshold: Option<bool>,
    pub verdict: Verdict,
    pub trajectory: Trajectory,
    pub diagnostics: Vec<String>,
}

impl ConvergenceReport {
    pub fn medians(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.median_sup_distance).collect()
    }
}

/// Simulates every `(r, replication)` pair, scales it and measures its
/// distance to the fluid solution at the sample times.
pub fn run_convergence(scenario: &Scenario) -> Result<ConvergenceReport, HarnessError> {
    let exp = scenario.experiment();
    let data = scenario.fluid_data()?;
    let model = scenario.sim_model()?;
    let times = &scenario.sample_times;
    let horizon = times.last().copied().unwrap_or(0.0);
    let mut opts = FluidOptions::new(horizon, exp.dt);
    opts.inflow_atoms = exp.discretization_atoms;
    opts.snapshot_times = times.clone();
    let fluid = fluid::solve(&data, &scenario.initial_measures()?, &opts)?;
    let fluid_at: Vec<&[AtomicMeasure]> = times
        .iter()
        .map(|&t| fluid.snapshot_near(t).map(|s| s.measures.as_slice()).expect("snapshots requested at sample times"))
        .collect();

    let jobs: Vec<(usize, u32)> = (0..exp.r_list.len())
        .flat_map(|k| (0..exp.replications as u32).map(move |rep| (k, rep)))
        .collect();
    let runs: Vec<(Vec<f64>, Vec<Vec<f64>>)> = jobs
        .par_iter()
        .map(|&(k, rep)| -> Result<_, HarnessError> {
            let r = exp.r_list[k];
            let mut state = SimState::new(&model, r, exp.seed, rep)?;
            let real_times: Vec<f64> = times.iter().map(|t| t * r).collect();
            let trace = fluid_scale(&state.run_until(horizon * r, &real_times)?, r);
            let mut d = Vec::with_capacity(times.len());
            for (sample, f) in trace.samples.iter().zip(&fluid_at) {
                d.push(vector_distance(&sample.measures, f, Metric::Levy)?);
            }
            let z = trace.samples.iter().map(|s| s.snapshot.z.clone()).collect();
            Ok((d, z))
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(exp.r_list.len());
    let mut trajectory = Trajectory::default();
    for (k, &r) in exp.r_list.iter().enumerate() {
        let block = &runs[k * exp.replications..(k + 1) * exp.replications];
        let distances: Vec<Vec<f64>> = block.iter().map(|(d, _)| d.clone()).collect();
        let sup: Vec<f64> = distances.iter().map(|d| d.iter().cloned().fold(0.0, f64::max)).collect();
        rows.push(ConvergenceRow {
            r,
            replications: exp.replications,
            median_sup_distance: median(&sup),
            max_sup_distance: sup.iter().cloned().fold(0.0, f64::max),
            distances,
            sup_distance: sup,
        });
        if k + 1 == exp.r_list.len() {
            trajectory = Trajectory {
                r,
                times: times.clone(),
                fluid_z: fluid_at.iter().map(|m| m.iter().map(|x| x.total_mass()).collect()).collect(),
                sim_z: block[0].1.clone(),
            };
        }
    }
    Ok(assess_convergence(exp.seed, times.clone(), exp.threshold, rows, trajectory))
}

/// Derives the verdict from the raw distances.
pub(crate) fn assess_convergence(
    seed: u64,
    sample_times: Vec<f64>,
    threshold: Option<f64>,
    rows: Vec<ConvergenceRow>,
    trajectory: Trajectory,
) -> ConvergenceReport {
    let d: Vec<f64> = rows.iter().map(|r| r.median_sup_distance).collect();
    let monotone = nonincreasing(&d);
    let halved = match (d.first(), d.last()) {
        (Some(a), Some(b)) if d.len() > 1 => b < &(a / 2.0),
        _ => false,
    };
    let below_threshold = threshold.zip(d.last()).map(|(t, last)| *last <= t);
    let verdict = Verdict::from_bool(!d.is_empty() && monotone && below_threshold.unwrap_or(true));
    let mut diagnostics = Vec::new();
    if !monotone {
        diagnostics.push(format!("median sup distances {d:?} increase by more than {}%", MONOTONE_SLACK * 100.0));
    }
    if below_threshold == Some(false) {
        diagnostics.push(format!("D(r_max) = {:e} exceeds the threshold {:e}", d.last().unwrap(), threshold.unwrap()));
    }
    if verdict == Verdict::Fail {
        diagnostics.push(UNIQUENESS_NOTE.to_string());
    }
    ConvergenceReport { seed, sample_times, threshold, rows, monotone, halved, below_threshold, verdict, trajectory, diagnostics }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlnRow {
    pub r: f64,
    /// `sup_t max_i |<1, L_i(t)>/r - nu_i t|`, per replication.
    pub count_discrepancy: Vec<f64>,
    /// `sup_t max_i |<chi, L_i(t)>/r - rho_i t|`, per replication.
    pub work_discrepancy: Vec<f64>,
    /// Median over replications of the larger of the two.
    pub median_discrepancy: f64,
    pub max_discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlnReport {
    pub seed: u64,
    pub sample_times: Vec<f64>,
    pub rows: Vec<LlnRow>,
    pub decreasing: bool,
    /// For fully deterministic traffic: every discrepancy within `(|nu| + |rho|) / r`.
    pub deterministic_bound: Option<bool>,
    pub verdict: Verdict,
}

/// Load discrepancies of one replication, drawn from the same streams the
/// simulator uses.
fn lln_discrepancy(scenario: &Scenario, r: f64, rep: u32) -> (f64, f64) {
    let exp = scenario.experiment();
    let (mut count_gap, mut work_gap) = (0.0f64, 0.0f64);
    for (i, t) in scenario.file.traffic.iter().enumerate() {
        let Some(inter) = &t.interarrival else { continue };
        let mut gaps = rng::stream(exp.seed, rep, i, Purpose::Interarrival);
        let mut sizes = rng::stream(exp.seed, rep, i, Purpose::Size);
        let (mut clock, mut count, mut work) = (inter.sample(&mut gaps), 0u64, 0.0);
        for &s in &scenario.sample_times {
            while clock <= s * r {
                count += 1;
                work += t.size.sample(&mut sizes);
                clock += inter.sample(&mut gaps);
            }
            count_gap = count_gap.max((count as f64 / r - scenario.nu[i] * s).abs());
            work_gap = work_gap.max((work / r - scenario.rho[i] * s).abs());
        }
    }
    (count_gap, work_gap)
}

pub fn run_lln(scenario: &Scenario) -> Result<LlnReport, HarnessError> {
    scenario.sim_model()?;
    let exp = scenario.experiment();
    let jobs: Vec<(usize, u32)> = (0..exp.r_list.len())
        .flat_map(|k| (0..exp.replications as u32).map(move |rep| (k, rep)))
        .collect();
    let gaps: Vec<(f64, f64)> = jobs.par_iter().map(|&(k, rep)| lln_discrepancy(scenario, exp.r_list[k], rep)).collect();
    let deterministic = scenario.file.traffic.iter().all(|t| {
        matches!(t.interarrival, Some(DistributionSpec::Deterministic { .. }))
            && matches!(t.size, DistributionSpec::Deterministic { .. })
    });
    let norm = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    let bound_const = norm(&scenario.nu) + norm(&scenario.rho);
    let mut rows = Vec::new();
    let mut bound_ok = true;
    for (k, &r) in exp.r_list.iter().enumerate() {
        let block = &gaps[k * exp.replications..(k + 1) * exp.replications];
        let combined: Vec<f64> = block.iter().map(|(c, w)| c.max(*w)).collect();
        bound_ok &= combined.iter().all(|&d| d <= bound_const / r * (1.0 + 1e-12));
        rows.push(LlnRow {
            r,
            count_discrepancy: block.iter().map(|g| g.0).collect(),
            work_discrepancy: block.iter().map(|g| g.1).collect(),
            median_discrepancy: median(&combined),
            max_discrepancy: combined.iter().cloned().fold(0.0, f64::max),
        });
    }
    let d: Vec<f64> = rows.iter().map(|r| r.median_discrepancy).collect();
    let decreasing = d.len() > 1 && nonincreasing(&d) && d.last() < d.first();
    let deterministic_bound = deterministic.then_some(bound_ok);
    let verdict = Verdict::from_bool(decreasing && deterministic_bound.unwrap_or(true));
    Ok(LlnReport { seed: exp.seed, sample_times: scenario.sample_times.clone(), rows, decreasing, deterministic_bound, verdict })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    pub z: Vec<f64>,
    pub tolerance: f64,
    pub check: InvariantCheck,
    /// `(t, d(zeta(t), xi), d(zeta'(t), xi'))` with `xi' = xi + 0.5 delta_3` on route 0.
    pub series: Vec<(f64, f64, f64)>,
    pub sup_distance: f64,
    pub perturbed_sup_distance: f64,
    pub verdict: Verdict,
}

/// Mass and location of the perturbation used as a negative control.
pub const PERTURBATION: (f64, f64) = (3.0, 0.5);

/// Solves the fluid model from the invariant state built on the scenario's
/// `z0` and from a perturbed copy, tracking distances to the start.
pub fn run_stationarity(scenario: &Scenario) -> Result<StationarityReport, HarnessError> {
    let exp = scenario.experiment();
    let data = scenario.fluid_data()?;
    let state = invariant::make_invariant_state(&data, &scenario.z0, exp.discretization_atoms)?;
    let check = invariant::is_invariant_state(&data, &state.measures, &InvariantTolerances::for_atoms(exp.discretization_atoms))?;
    let mut perturbed = state.measures.clone();
    perturbed[0] = perturbed[0].plus(&AtomicMeasure::weighted_dirac(PERTURBATION.0, PERTURBATION.1));

    let mut opts = FluidOptions::new(exp.horizon, exp.dt);
    opts.inflow_atoms = exp.discretization_atoms;
    let stride = ((0.01 / exp.dt).round() as usize).max(1);
    let steps = opts.steps();
    let track = |start: &[AtomicMeasure]| -> Result<Vec<(f64, f64)>, HarnessError> {
        let mut out = Vec::new();
        let mut failure = None;
        fluid::solve_observed(&data, start, &opts, |k, t, m| {
            if k % stride == 0 || k == steps {
                match vector_distance(m, start, Metric::Levy) {
                    Ok(d) => out.push((t, d)),
                    Err(e) => failure = Some(e),
                }
            }
        })?;
        match failure {
            Some(e) => Err(e.into()),
            None => Ok(out),
        }
    };
    let (base, pert) = rayon::join(|| track(&state.measures), || track(&perturbed));
    let (base, pert) = (base?, pert?);
    let series: Vec<(f64, f64, f64)> = base.iter().zip(&pert).map(|(a, b)| (a.0, a.1, b.1)).collect();
    let sup_distance = base.iter().map(|p| p.1).fold(0.0, f64::max);
    let perturbed_sup_distance = pert.iter().map(|p| p.1).fold(0.0, f64::max);
    let tolerance = exp.stationarity_tolerance;
    let verdict = Verdict::from_bool(check.accepted && sup_distance <= tolerance && perturbed_sup_distance > tolerance);
    Ok(StationarityReport {
        z: state.z,
        tolerance,
        check,
        series,
        sup_distance,
        perturbed_sup_distance,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn monotone_with_slack() {
        assert!(nonincreasing(&[1.0, 1.05, 0.5]));
        assert!(!nonincreasing(&[1.0, 1.2]));
    }

    fn row(r: f64, d: f64) -> ConvergenceRow {
        ConvergenceRow {
            r,
            replications: 1,
            distances: vec![vec![d]],
            sup_distance: vec![d],
            median_sup_distance: d,
            max_sup_distance: d,
        }
    }

    #[test]
    fn convergence_verdicts() {
        let ok = assess_convergence(0, vec![0.0], Some(0.1), vec![row(10.0, 0.3), row(100.0, 0.1), row(1000.0, 0.05)], Trajectory::default());
        assert!(ok.verdict.passed() && ok.halved && ok.diagnostics.is_empty());
        let bad = assess_convergence(0, vec![0.0], Some(0.01), vec![row(10.0, 0.3), row(100.0, 0.4)], Trajectory::default());
        assert_eq!(bad.verdict, Verdict::Fail);
        assert!(bad.diagnostics.iter().any(|d| d == UNIQUENESS_NOTE));
    }
}
