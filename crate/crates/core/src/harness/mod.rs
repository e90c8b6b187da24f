//! Scenario files and the experiments built on them.

mod experiments;
mod plots;

pub use experiments::{
    median, run_convergence, run_lln, run_stationarity, ConvergenceReport, ConvergenceRow, LlnReport, LlnRow,
    StationarityReport, Trajectory, Verdict, MONOTONE_SLACK, UNIQUENESS_NOTE,
};
pub use plots::{emit_plots, ExperimentReport};

use log::info;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::allocator::{AllocError, AlphaFairPolicy};
use crate::fluid::{FluidData, FluidError};
use crate::invariant::InvariantError;
use crate::measure::{AtomicMeasure, DistributionSpec, MeasureError, DEFAULT_DISCRETIZATION};
use crate::simulator::{InitialSizes, RouteTraffic, SimError, SimModel};
use crate::topology::{NetworkTopology, RawTopology, TopologyError};

/// Environment variable consulted for a seed override.
pub const SEED_ENV: &str = "FLOWSHARE_SEED";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Semantic(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Allocator(#[from] AllocError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Simulator(#[from] SimError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Vec<f64>>,
}

/// Per-route traffic: an interarrival law for simulations, or a bare rate
/// for fluid-only runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interarrival: Option<DistributionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    pub size: DistributionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub z0: Vec<f64>,
    #[serde(default)]
    pub sizes: InitialSizes,
}

fn default_r_list() -> Vec<f64> {
    vec![10.0, 100.0, 1000.0]
}
fn default_replications() -> usize {
    20
}
fn default_horizon() -> f64 {
    5.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_atoms() -> usize {
    DEFAULT_DISCRETIZATION
}
fn default_stationarity_tolerance() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_r_list")]
    pub r_list: Vec<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to eleven evenly spaced times on `[0, horizon]`.
    #[serde(default)]
    pub sample_times: Vec<f64>,
    /// Largest acceptable `D(r_max)` for the convergence experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default = "default_atoms")]
    pub discretization_atoms: usize,
    #[serde(default = "default_stationarity_tolerance")]
    pub stationarity_tolerance: f64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all experiment fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub topology: RawTopology,
    pub policy: PolicySpec,
    pub traffic: Vec<TrafficSpec>,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub experiment: ExperimentSpec,
}

/// A validated scenario with its derived rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub topology: NetworkTopology,
    pub policy: AlphaFairPolicy,
    pub nu: Vec<f64>,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub z0: Vec<f64>,
    pub sample_times: Vec<f64>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, HarnessError> {
        let topology = NetworkTopology::validate(&file.topology)?;
        let n = topology.num_routes();
        let kappa = match &file.policy.kappa {
            Some(k) => k.clone(),
            None => {
                info!("policy.kappa not given; using unit weights");
                vec![1.0; n]
            }
        };
        if kappa.len() != n {
            return Err(HarnessError::Semantic(format!("policy.kappa has {} entries for {n} routes", kappa.len())));
        }
        let policy = AlphaFairPolicy::new(file.policy.alpha, kappa)?;
        if file.traffic.len() != n {
            return Err(HarnessError::Semantic(format!("traffic has {} entries for {n} routes", file.traffic.len())));
        }
        let mut nu = Vec::with_capacity(n);
        for (i, t) in file.traffic.iter().enumerate() {
            t.size.validate().map_err(|e| HarnessError::Semantic(format!("traffic[{i}].size: {e}")))?;
            let rate = match (&t.interarrival, t.nu) {
                (Some(d), None) => {
                    d.validate().map_err(|e| HarnessError::Semantic(format!("traffic[{i}].interarrival: {e}")))?;
                    d.service_rate()
                }
                (None, Some(v)) => v,
                _ => {
                    return Err(HarnessError::Semantic(format!(
                        "traffic[{i}] needs exactly one of `interarrival` and `nu`"
                    )))
                }
            };
            if !(rate.is_finite() && rate > 0.0) {
                return Err(HarnessError::Semantic(format!("traffic[{i}]: arrival rate must be positive, got {rate}")));
            }
            nu.push(rate);
        }
        let mu: Vec<f64> = file.traffic.iter().map(|t| t.size.service_rate()).collect();
        let rho = nu.iter().zip(&mu).map(|(a, b)| a / b).collect();

        let z0 = if file.initial.z0.is_empty() { vec![0.0; n] } else { file.initial.z0.clone() };
        if z0.len() != n || z0.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(HarnessError::Semantic(format!("initial.z0 must hold {n} nonnegative numbers")));
        }
        if let InitialSizes::Explicit(d) = &file.initial.sizes {
            d.validate().map_err(|e| HarnessError::Semantic(format!("initial.sizes: {e}")))?;
        }

        let e = &file.experiment;
        if e.r_list.iter().any(|r| !(r.is_finite() && *r >= 1.0)) {
            return Err(HarnessError::Semantic("experiment.r_list entries must be at least 1".into()));
        }
        if e.r_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(HarnessError::Semantic("experiment.r_list must be strictly increasing".into()));
        }
        if e.replications == 0 {
            return Err(HarnessError::Semantic("experiment.replications must be positive".into()));
        }
        if !(e.horizon.is_finite() && e.horizon > 0.0) || !(e.dt.is_finite() && e.dt > 0.0) {
            return Err(HarnessError::Semantic("experiment.horizon and experiment.dt must be positive".into()));
        }
        if e.discretization_atoms == 0 {
            return Err(HarnessError::Semantic("experiment.discretization_atoms must be positive".into()));
        }
        let sample_times = if e.sample_times.is_empty() {
            (0..=10).map(|k| e.horizon * k as f64 / 10.0).collect()
        } else {
            e.sample_times.clone()
        };
        if sample_times.windows(2).any(|w| w[1] <= w[0]) || sample_times.iter().any(|&t| !(0.0..=e.horizon).contains(&t)) {
            return Err(HarnessError::Semantic("experiment.sample_times must increase within [0, horizon]".into()));
        }
        Ok(Self { file, topology, policy, nu, mu, rho, z0, sample_times })
    }

    pub fn experiment(&self) -> &ExperimentSpec {
        &self.file.experiment
    }

    pub fn num_routes(&self) -> usize {
        self.topology.num_routes()
    }

    /// Replaces the master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.file.experiment.seed = seed;
        self
    }

    pub fn fluid_data(&self) -> Result<FluidData, HarnessError> {
        let theta = self.file.traffic.iter().map(|t| t.size.clone()).collect();
        Ok(FluidData::new(self.topology.clone(), self.policy.clone(), self.nu.clone(), theta)?)
    }

    /// Requires an interarrival law on every route.
    pub fn sim_model(&self) -> Result<SimModel, HarnessError> {
        let traffic = self
            .file
            .traffic
            .iter()
            .enumerate()
            .map(|(i, t)| match &t.interarrival {
                Some(a) => Ok(RouteTraffic { interarrival: Some(a.clone()), size: t.size.clone() }),
                None => Err(HarnessError::Semantic(format!("traffic[{i}] has no interarrival law to simulate"))),
            })
            .collect::<Result<_, _>>()?;
        Ok(SimModel {
            topology: self.topology.clone(),
            policy: self.policy.clone(),
            traffic,
            z0: self.z0.clone(),
            initial_sizes: self.file.initial.sizes.clone(),
        })
    }

    /// `z0_i` times the discretized initial-size law of each route.
    pub fn initial_measures(&self) -> Result<Vec<AtomicMeasure>, HarnessError> {
        let atoms = self.experiment().discretization_atoms;
        self.file
            .traffic
            .iter()
            .zip(&self.z0)
            .map(|(t, &z)| {
                if z == 0.0 {
                    Ok(AtomicMeasure::zero())
                } else {
                    Ok(self.file.initial.sizes.law(&t.size, atoms)?.scaled(z))
                }
            })
            .collect()
    }
}
