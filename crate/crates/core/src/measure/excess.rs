use rand::RngCore;

use super::distribution::{bisect_increasing, open_unit};
use super::{AtomicMeasure, DistributionSpec, MeasureError};

/// Excess-lifetime (stationary residual) law of a document-size distribution:
/// density `mu * P(V > x)` where `mu = 1 / E[V]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcessLifetime {
    base: DistributionSpec,
    mu: f64,
}

impl ExcessLifetime {
    pub fn new(base: &DistributionSpec) -> Result<Self, MeasureError> {
        base.validate()?;
        Ok(Self { base: base.clone(), mu: base.service_rate() })
    }

    pub fn base(&self) -> &DistributionSpec {
        &self.base
    }

    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        self.mu * self.base.tail(x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (self.mu * self.base.integrated_tail(x)).min(1.0)
    }

    /// `E[V^2] / (2 E[V])`.
    pub fn mean(&self) -> f64 {
        0.5 * self.mu * self.base.second_moment()
    }

    pub fn support_max(&self) -> f64 {
        self.base.support_max()
    }

    /// The law in parametric form when the family is closed under the transform.
    pub fn closed_form(&self) -> Option<DistributionSpec> {
        match &self.base {
            DistributionSpec::Exponential { rate } => Some(DistributionSpec::Exponential { rate: *rate }),
            DistributionSpec::HyperExponential { weights, rates } => Some(DistributionSpec::HyperExponential {
                weights: weights.iter().zip(rates).map(|(w, r)| self.mu * w / r).collect(),
                rates: rates.clone(),
            }),
            _ => None,
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match &self.base {
            DistributionSpec::Exponential { .. } => self.base.quantile(u),
            DistributionSpec::Deterministic { value } => u * value,
            _ => {
                if u >= 1.0 {
                    return self.support_max();
                }
                let hi = self.support_max().min(self.base.mean().max(1e-300));
                bisect_increasing(|x| self.cdf(x), u, 0.0, hi)
            }
        }
    }

    pub fn sample(&self, rng: &mut impl RngCore) -> f64 {
        self.quantile(open_unit(rng))
    }

    /// Discretization on an `n`-cell grid of equal excess-lifetime probability:
    /// atoms sit at cell midpoints with mass equal to the CDF increment; the
    /// last (possibly unbounded) cell is placed so that the first moment is
    /// exact.
    pub fn discretize(&self, n: usize) -> AtomicMeasure {
        assert!(n > 0);
        let edges: Vec<f64> = (0..n).map(|k| self.quantile(k as f64 / n as f64)).collect();
        let mut pairs = Vec::with_capacity(n);
        let mut used_mass = 0.0;
        let mut used_moment = 0.0;
        for k in 0..n - 1 {
            let mass = self.cdf(edges[k + 1]) - self.cdf(edges[k]);
            if mass <= 0.0 {
                continue;
            }
            let x = 0.5 * (edges[k] + edges[k + 1]);
            used_mass += mass;
            used_moment += mass * x;
            pairs.push((x, mass));
        }
        let last_mass = 1.0 - used_mass;
        if last_mass > 0.0 {
            let lo = edges[n - 1];
            let x = ((self.mean() - used_moment) / last_mass).clamp(lo, self.support_max().max(lo));
            pairs.push((x, last_mass));
        }
        AtomicMeasure::from_sorted_pairs(pairs)
    }
}
