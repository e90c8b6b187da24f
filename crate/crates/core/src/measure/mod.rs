//! Finite nonnegative measures on the half-line.
//!
//! States are carried as purely atomic measures ([`AtomicMeasure`]);
//! document-size laws are parametric ([`DistributionSpec`]) and can be
//! discretized to atoms on demand. The weak topology is measured with a
//! Lévy-type CDF metric, with an exact Prohorov computation for small
//! measures kept as an oracle.

mod distribution;
mod excess;
mod metric;
pub(crate) mod quad;

pub use distribution::DistributionSpec;
pub use excess::ExcessLifetime;
pub use metric::{levy_distance, prohorov_exact, vector_distance, Metric, PROHOROV_MAX_ATOMS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Atoms closer than this are merged into one.
pub const MERGE_EPS: f64 = 1e-12;

/// Default number of atoms used when discretizing a continuous law.
pub const DEFAULT_DISCRETIZATION: usize = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("atom location {0} is negative or not finite")]
    BadLocation(f64),
    #[error("atom mass {0} is negative or not finite")]
    BadMass(f64),
    #[error("locations and masses have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("measure has {0} atoms, exact Prohorov distance supports at most {max}", max = PROHOROV_MAX_ATOMS)]
    TooManyAtoms(usize),
    #[error("measure vectors have lengths {0} and {1}")]
    DimensionMismatch(usize, usize),
}

/// A finite, purely atomic measure on `[0, inf)`.
///
/// Atoms are sorted by strictly increasing location and carry positive mass.
/// The zero measure has no atoms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure", into = "RawMeasure")]
pub struct AtomicMeasure {
    locations: Vec<f64>,
    masses: Vec<f64>,
}

/// Wire form of an [`AtomicMeasure`]: paired arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMeasure {
    pub locations: Vec<f64>,
    pub masses: Vec<f64>,
}

impl TryFrom<RawMeasure> for AtomicMeasure {
    type Error = MeasureError;

    fn try_from(raw: RawMeasure) -> Result<Self, Self::Error> {
        if raw.locations.len() != raw.masses.len() {
            return Err(MeasureError::LengthMismatch(raw.locations.len(), raw.masses.len()));
        }
        AtomicMeasure::new(raw.locations.into_iter().zip(raw.masses))
    }
}

impl From<AtomicMeasure> for RawMeasure {
    fn from(m: AtomicMeasure) -> Self {
        RawMeasure { locations: m.locations, masses: m.masses }
    }
}

impl AtomicMeasure {
    /// Builds a measure from `(location, mass)` pairs in any order.
    /// Zero masses are dropped and atoms within [`MERGE_EPS`] are merged.
    pub fn new(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, MeasureError> {
        let mut pairs = Vec::new();
        for (x, m) in atoms {
            if !(x.is_finite() && x >= 0.0) {
                return Err(MeasureError::BadLocation(x));
            }
            if !(m.is_finite() && m >= 0.0) {
                return Err(MeasureError::BadMass(m));
            }
            if m > 0.0 {
                pairs.push((x, m));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self::from_sorted_pairs(pairs))
    }

    /// Caller guarantees sorted, finite, nonnegative locations and positive masses.
    pub(crate) fn from_sorted_pairs(pairs: Vec<(f64, f64)>) -> Self {
        let mut locations: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut masses: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, m) in pairs {
            match locations.last() {
                Some(&last) if x - last <= MERGE_EPS => *masses.last_mut().unwrap() += m,
                _ => {
                    locations.push(x);
                    masses.push(m);
                }
            }
        }
        Self { locations, masses }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn dirac(x: f64) -> Self {
        Self::weighted_dirac(x, 1.0)
    }

    pub fn weighted_dirac(x: f64, mass: f64) -> Self {
        assert!(x.is_finite() && x >= 0.0 && mass.is_finite() && mass >= 0.0);
        if mass == 0.0 {
            return Self::zero();
        }
        Self { locations: vec![x], masses: vec![mass] }
    }

    /// Dirac mass at `x` when `x > 0`, zero measure when `x == 0`.
    pub fn dirac_plus(x: f64) -> Self {
        if x > 0.0 {
            Self::dirac(x)
        } else {
            Self::zero()
        }
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_zero(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.is_zero()
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.locations.iter().copied().zip(self.masses.iter().copied())
    }

    /// `<f, xi>`: the sum of `mass * f(location)` over atoms.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms().map(|(x, m)| m * f(x)).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn first_moment(&self) -> f64 {
        self.integrate(|x| x)
    }

    /// Mass of `[0, x]`.
    pub fn cdf(&self, x: f64) -> f64 {
        let k = self.locations.partition_point(|&l| l <= x);
        self.masses[..k].iter().sum()
    }

    pub fn max_location(&self) -> Option<f64> {
        self.locations.last().copied()
    }

    pub fn has_atom_at_zero(&self) -> bool {
        self.locations.first() == Some(&0.0)
    }

    /// Pushforward under `y -> (y - x)^+` with the mass landing on 0 removed.
    pub fn shift_left(&self, x: f64) -> Self {
        assert!(x >= 0.0, "shift must be nonnegative");
        if x == 0.0 {
            return self.clone();
        }
        let k = self.locations.partition_point(|&l| l <= x);
        Self {
            locations: self.locations[k..].iter().map(|&l| l - x).collect(),
            masses: self.masses[k..].to_vec(),
        }
    }

    /// Multiplies every mass by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Self {
        assert!(c.is_finite() && c >= 0.0);
        if c == 0.0 {
            return Self::zero();
        }
        Self { locations: self.locations.clone(), masses: self.masses.iter().map(|m| m * c).collect() }
    }

    /// Sum of two measures.
    pub fn plus(&self, other: &Self) -> Self {
        let mut pairs = Vec::with_capacity(self.len() + other.len());
        let (mut a, mut b) = (self.atoms().peekable(), other.atoms().peekable());
        loop {
            let next = match (a.peek(), b.peek()) {
                (Some(p), Some(q)) => {
                    if p.0 <= q.0 {
                        a.next()
                    } else {
                        b.next()
                    }
                }
                (Some(_), None) => a.next(),
                (None, Some(_)) => b.next(),
                (None, None) => break,
            };
            pairs.push(next.unwrap());
        }
        Self::from_sorted_pairs(pairs)
    }

    /// Merges runs of atoms lying within `resolution` of the run's first atom
    /// into a single atom at the run's mass-weighted mean location. Total
    /// mass and first moment are preserved.
    pub fn coarsen(&mut self, resolution: f64) {
        if self.len() < 2 || resolution <= 0.0 {
            return;
        }
        let mut locations = Vec::with_capacity(self.len());
        let mut masses = Vec::with_capacity(self.len());
        let mut anchor = self.locations[0];
        let mut mass = 0.0;
        let mut moment = 0.0;
        for (x, m) in self.atoms() {
            if x - anchor >= resolution {
                locations.push(moment / mass);
                masses.push(mass);
                anchor = x;
                mass = 0.0;
                moment = 0.0;
            }
            mass += m;
            moment += m * x;
        }
        locations.push(moment / mass);
        masses.push(mass);
        self.locations = locations;
        self.masses = masses;
    }

    /// Drops the prefix of atoms at or below `x` and moves every other atom
    /// left by `x`, in place. Returns `(mass_removed, served)` where `served`
    /// is the sum of `mass * min(location, x)` over all atoms.
    pub(crate) fn shift_left_in_place(&mut self, x: f64) -> (f64, f64) {
        if x <= 0.0 || self.is_zero() {
            return (0.0, 0.0);
        }
        let k = self.locations.partition_point(|&l| l <= x);
        let removed_mass: f64 = self.masses[..k].iter().sum();
        let removed_work: f64 = self.locations[..k].iter().zip(&self.masses[..k]).map(|(l, m)| l * m).sum();
        self.locations.drain(..k);
        self.masses.drain(..k);
        let remaining: f64 = self.masses.iter().sum();
        for l in &mut self.locations {
            *l -= x;
        }
        (removed_mass, removed_work + remaining * x)
    }
}

/// Test functions `f(x) = 1 - (1 + theta x) e^{-theta x}`: smooth, bounded,
/// with `f(0) = f'(0) = 0` and bounded derivative `theta^2 x e^{-theta x}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothStep {
    pub theta: f64,
}

impl SmoothStep {
    pub fn value(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let t = self.theta * x;
        // -expm1(-t) - t e^{-t}, accurate for small t
        -(-t).exp_m1() - t * (-t).exp()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        self.theta * self.theta * x * (-self.theta * x).exp()
    }

    /// The default battery used by the fluid verifier.
    pub fn battery() -> Vec<SmoothStep> {
        [0.5, 1.0, 2.0, 4.0].into_iter().map(|theta| SmoothStep { theta }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(atoms: &[(f64, f64)]) -> AtomicMeasure {
        AtomicMeasure::new(atoms.iter().copied()).unwrap()
    }

    #[test]
    fn integrate_examples() {
        let xi = m(&[(2.0, 1.0), (5.0, 3.0)]);
        assert_eq!(xi.integrate(|_| 1.0), 4.0);
        assert_eq!(xi.integrate(|x| x), 17.0);
        assert_eq!(AtomicMeasure::zero().integrate(|x| x.sin() + 3.0), 0.0);
    }

    #[test]
    fn shift_left_examples() {
        assert_eq!(AtomicMeasure::dirac(3.0).shift_left(1.0), AtomicMeasure::dirac(2.0));
        assert_eq!(m(&[(1.0, 1.0), (3.0, 1.0)]).shift_left(1.0), AtomicMeasure::dirac(2.0));
        let xi = m(&[(0.5, 2.0), (4.0, 1.0)]);
        assert_eq!(xi.shift_left(0.0), xi);
    }

    #[test]
    fn construction_normalizes() {
        let xi = m(&[(5.0, 1.0), (2.0, 1.0), (2.0 + 1e-13, 0.5), (7.0, 0.0)]);
        assert_eq!(xi.locations(), &[2.0, 5.0]);
        assert_eq!(xi.masses(), &[1.5, 1.0]);
        assert!(AtomicMeasure::new([(-1.0, 1.0)]).is_err());
        assert!(AtomicMeasure::new([(1.0, -1.0)]).is_err());
        assert!(AtomicMeasure::new([(f64::NAN, 1.0)]).is_err());
    }

    #[test]
    fn dirac_plus_at_zero_is_zero() {
        assert!(AtomicMeasure::dirac_plus(0.0).is_zero());
        assert_eq!(AtomicMeasure::dirac_plus(0.25), AtomicMeasure::dirac(0.25));
    }

    #[test]
    fn serde_uses_paired_arrays() {
        let xi = m(&[(1.5, 1.0), (2.5, 2.0)]);
        let s = serde_json::to_string(&xi).unwrap();
        assert_eq!(s, r#"{"locations":[1.5,2.5],"masses":[1.0,2.0]}"#);
        let back: AtomicMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(back, xi);
        assert!(serde_json::from_str::<AtomicMeasure>(r#"{"locations":[1.0],"masses":[]}"#).is_err());
        assert!(serde_json::from_str::<AtomicMeasure>(r#"{"locations":[1.0],"masses":[1.0],"x":1}"#).is_err());
    }

    #[test]
    fn coarsen_preserves_mass_and_moment() {
        let mut xi = m(&[(1.0, 1.0), (1.001, 2.0), (1.002, 1.0), (3.0, 1.0)]);
        let (mass, moment) = (xi.total_mass(), xi.first_moment());
        xi.coarsen(0.01);
        assert_eq!(xi.len(), 2);
        assert!((xi.total_mass() - mass).abs() < 1e-15);
        assert!((xi.first_moment() - moment).abs() < 1e-14);
    }

    #[test]
    fn in_place_shift_reports_served_work() {
        let mut xi = m(&[(0.5, 2.0), (2.0, 1.0)]);
        let (gone, served) = xi.shift_left_in_place(1.0);
        assert_eq!(gone, 2.0);
        assert_eq!(served, 2.0 * 0.5 + 1.0 * 1.0);
        assert_eq!(xi, AtomicMeasure::dirac(1.0));
    }

    #[test]
    fn bounded_support_has_no_tail_moment() {
        let d = DistributionSpec::Uniform { a: 0.5, b: 2.0 };
        let xi = d.discretize(256).scaled(3.0);
        for x in [2.0 + 1e-9, 2.5, 10.0] {
            assert_eq!(xi.integrate(|y| if y >= x { y } else { 0.0 }), 0.0);
        }
        let e = ExcessLifetime::new(&DistributionSpec::Deterministic { value: 1.5 }).unwrap();
        let xi = e.discretize(256);
        assert_eq!(xi.integrate(|y| if y > 1.5 { y } else { 0.0 }), 0.0);
    }

    #[test]
    fn smooth_step_is_in_test_class() {
        for f in SmoothStep::battery() {
            assert_eq!(f.value(0.0), 0.0);
            assert_eq!(f.derivative(0.0), 0.0);
            let h = 1e-6;
            for x in [0.1, 1.0, 3.0] {
                let fd = (f.value(x + h) - f.value(x - h)) / (2.0 * h);
                assert!((fd - f.derivative(x)).abs() < 1e-8);
            }
        }
    }

    /// Atoms on a dyadic grid so that subtraction is exact in f64.
    fn dyadic_measure() -> impl Strategy<Value = AtomicMeasure> {
        proptest::collection::vec((0u32..4096, 1u32..16), 0..12).prop_map(|v| {
            AtomicMeasure::new(v.into_iter().map(|(k, w)| (k as f64 / 256.0, w as f64 / 8.0))).unwrap()
        })
    }

    proptest! {
        #[test]
        fn shifts_compose_exactly(xi in dyadic_measure(), a in 0u32..2048, b in 0u32..2048) {
            let (a, b) = (a as f64 / 256.0, b as f64 / 256.0);
            prop_assert_eq!(xi.shift_left(a).shift_left(b), xi.shift_left(a + b));
        }

        #[test]
        fn shifts_compose_to_rounding(
            atoms in proptest::collection::vec((0.0f64..20.0, 0.1f64..3.0), 0..12),
            a in 0.0f64..5.0,
            b in 0.0f64..5.0,
        ) {
            let xi = AtomicMeasure::new(atoms).unwrap();
            let lhs = xi.shift_left(a).shift_left(b);
            let rhs = xi.shift_left(a + b);
            // Atoms within rounding of the cut may legitimately differ.
            let near_cut = xi.locations().iter().any(|&l| (l - a - b).abs() < 1e-9 || (l - a).abs() < 1e-9);
            if !near_cut {
                prop_assert_eq!(lhs.len(), rhs.len());
                for ((x, m), (y, n)) in lhs.atoms().zip(rhs.atoms()) {
                    prop_assert!((x - y).abs() < 1e-12);
                    prop_assert_eq!(m, n);
                }
            }
        }
    }
}
