use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{quad, AtomicMeasure, MeasureError};

/// Probability law on `(0, inf)` with finite positive mean and no mass at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Exponential { rate: f64 },
    Deterministic { value: f64 },
    /// Uniform on `[a, b]` with `0 < a < b`.
    Uniform { a: f64, b: f64 },
    HyperExponential { weights: Vec<f64>, rates: Vec<f64> },
    /// Finitely many atoms with total mass 1, none at 0.
    Empirical(AtomicMeasure),
}

fn invalid(msg: impl Into<String>) -> MeasureError {
    MeasureError::InvalidDistribution(msg.into())
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Maps 64 random bits to the open interval (0, 1).
pub(crate) fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

impl DistributionSpec {
    pub fn exponential(rate: f64) -> Self {
        Self::Exponential { rate }
    }

    pub fn deterministic(value: f64) -> Self {
        Self::Deterministic { value }
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        match self {
            Self::Exponential { rate } if !positive(*rate) => Err(invalid("exponential rate must be positive")),
            Self::Deterministic { value } if !positive(*value) => Err(invalid("deterministic value must be positive")),
            Self::Uniform { a, b } if !(positive(*a) && b.is_finite() && a < b) => {
                Err(invalid("uniform bounds must satisfy 0 < a < b"))
            }
            Self::HyperExponential { weights, rates } => {
                if weights.is_empty() || weights.len() != rates.len() {
                    return Err(invalid("hyperexponential needs matching nonempty weights and rates"));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || rates.iter().any(|r| !positive(*r)) {
                    return Err(invalid("hyperexponential weights must be nonnegative and rates positive"));
                }
                if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(invalid("hyperexponential weights must sum to 1"));
                }
                Ok(())
            }
            Self::Empirical(m) => {
                if m.is_zero() || (m.total_mass() - 1.0).abs() > 1e-9 {
                    return Err(invalid("empirical atoms must have total mass 1"));
                }
                if m.has_atom_at_zero() {
                    return Err(invalid("empirical atoms must not charge 0"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Deterministic { value } => *value,
            Self::Uniform { a, b } => 0.5 * (a + b),
            Self::HyperExponential { weights, rates } => weights.iter().zip(rates).map(|(w, r)| w / r).sum(),
            Self::Empirical(m) => m.first_moment(),
        }
    }

    /// `1 / mean`.
    pub fn service_rate(&self) -> f64 {
        1.0 / self.mean()
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 2.0 / (rate * rate),
            Self::Deterministic { value } => value * value,
            Self::Uniform { a, b } => (a * a + a * b + b * b) / 3.0,
            Self::HyperExponential { weights, rates } => {
                weights.iter().zip(rates).map(|(w, r)| 2.0 * w / (r * r)).sum()
            }
            Self::Empirical(m) => m.integrate(|x| x * x),
        }
    }

    /// `P(V > x)`.
    pub fn tail(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        match self {
            Self::Exponential { rate } => (-rate * x).exp(),
            Self::Deterministic { value } => {
                if x < *value {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Uniform { a, b } => {
                if x < *a {
                    1.0
                } else if x < *b {
                    (b - x) / (b - a)
                } else {
                    0.0
                }
            }
            Self::HyperExponential { weights, rates } => {
                weights.iter().zip(rates).map(|(w, r)| w * (-r * x).exp()).sum()
            }
            Self::Empirical(m) => m.total_mass() - m.cdf(x),
        }
    }

    /// `P(V <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Exponential { rate } => -(-rate * x).exp_m1(),
            Self::HyperExponential { weights, rates } => {
                weights.iter().zip(rates).map(|(w, r)| -w * (-r * x).exp_m1()).sum()
            }
            Self::Empirical(m) => m.cdf(x),
            _ => 1.0 - self.tail(x),
        }
    }

    /// `int_0^x P(V > u) du`.
    pub fn integrated_tail(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => -(-rate * x).exp_m1() / rate,
            Self::Deterministic { value } => x.min(*value),
            Self::Uniform { a, b } => {
                if x <= *a {
                    x
                } else if x < *b {
                    a + ((b - a) * (b - a) - (b - x) * (b - x)) / (2.0 * (b - a))
                } else {
                    0.5 * (a + b)
                }
            }
            Self::HyperExponential { weights, rates } => {
                weights.iter().zip(rates).map(|(w, r)| -w * (-r * x).exp_m1() / r).sum()
            }
            Self::Empirical(m) => m.integrate(|l| l.min(x)),
        }
    }

    /// `E[V; V <= x]`.
    pub fn partial_expectation(&self, x: f64) -> f64 {
        if x.is_infinite() {
            return self.mean();
        }
        match self {
            Self::Exponential { rate } => {
                // (1 - e^{-t} - t e^{-t}) / rate with t = rate x
                let t = rate * x;
                (-(-t).exp_m1() - t * (-t).exp()) / rate
            }
            _ => self.integrated_tail(x) - x * self.tail(x),
        }
    }

    /// Supremum of the support, infinite for unbounded laws.
    pub fn support_max(&self) -> f64 {
        match self {
            Self::Exponential { .. } | Self::HyperExponential { .. } => f64::INFINITY,
            Self::Deterministic { value } => *value,
            Self::Uniform { b, .. } => *b,
            Self::Empirical(m) => m.max_location().unwrap_or(0.0),
        }
    }

    /// Generalized inverse `inf { x : P(V <= x) >= u }` for `u` in `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            Self::Exponential { rate } => -(-u).ln_1p() / rate,
            Self::Deterministic { value } => *value,
            Self::Uniform { a, b } => a + u * (b - a),
            Self::HyperExponential { rates, .. } => {
                if u >= 1.0 {
                    return f64::INFINITY;
                }
                let slowest = rates.iter().cloned().fold(f64::INFINITY, f64::min);
                // P(V > x) <= e^{-slowest x}, so this bracket contains the quantile.
                let hi = -(-u).ln_1p() / slowest + 1.0;
                bisect_increasing(|x| self.cdf(x), u, 0.0, hi)
            }
            Self::Empirical(m) => {
                let mut acc = 0.0;
                for (x, w) in m.atoms() {
                    acc += w;
                    if acc >= u - 1e-15 {
                        return x;
                    }
                }
                m.max_location().unwrap_or(0.0)
            }
        }
    }

    /// Inverse-CDF sample.
    pub fn sample(&self, rng: &mut impl RngCore) -> f64 {
        self.quantile(open_unit(rng))
    }

    /// `<f, law>`, in closed form for atomic laws and by quadrature otherwise.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        const TOL: f64 = 1e-12;
        match self {
            Self::Deterministic { value } => f(*value),
            Self::Empirical(m) => m.integrate(f),
            Self::Uniform { a, b } => quad::integrate(|x| f(x), *a, *b, TOL) / (b - a),
            Self::Exponential { rate } => {
                let scale = 1.0 / rate;
                quad::integrate_half_line(|x| f(x) * rate * (-rate * x).exp(), &[scale, 10.0 * scale], TOL)
            }
            Self::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| {
                    let scale = 1.0 / r;
                    w * quad::integrate_half_line(|x| f(x) * r * (-r * x).exp(), &[scale, 10.0 * scale], TOL)
                })
                .sum(),
        }
    }

    /// Equal-probability discretization into `n` atoms of mass `1/n`, each
    /// placed at the conditional mean of its quantile bin so the mean is
    /// preserved. Atomic laws are returned unchanged.
    pub fn discretize(&self, n: usize) -> AtomicMeasure {
        assert!(n > 0);
        match self {
            Self::Deterministic { value } => return AtomicMeasure::dirac(*value),
            Self::Empirical(m) => return m.clone(),
            _ => {}
        }
        let mass = 1.0 / n as f64;
        let mut pairs = Vec::with_capacity(n);
        let mut lo_pe = 0.0;
        for k in 0..n {
            let hi = if k + 1 == n { f64::INFINITY } else { self.quantile((k + 1) as f64 / n as f64) };
            let hi_pe = self.partial_expectation(hi);
            let lo = pairs.last().map(|&(x, _)| x).unwrap_or(0.0);
            // Clamp guards against rounding making a bin's mean non-monotone.
            let x = ((hi_pe - lo_pe) / mass).max(lo).max(f64::MIN_POSITIVE);
            pairs.push((x, mass));
            lo_pe = hi_pe;
        }
        AtomicMeasure::from_sorted_pairs(pairs)
    }
}

/// Smallest `x` in `[lo, hi]` with `g(x) >= target` for nondecreasing `g`,
/// to relative precision near machine epsilon.
pub(crate) fn bisect_increasing(g: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    while g(hi) < target {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
