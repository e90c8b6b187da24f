//! Distances metrizing weak convergence of finite measures on the half-line.

use serde::{Deserialize, Serialize};

use super::{AtomicMeasure, MeasureError};

/// Largest atom count accepted by [`prohorov_exact`].
pub const PROHOROV_MAX_ATOMS: usize = 12;

const LEVY_TOL: f64 = 1e-10;
const PROHOROV_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Levy,
    Prohorov,
}

struct Cumulative<'a> {
    locations: &'a [f64],
    cum: Vec<f64>,
}

impl<'a> Cumulative<'a> {
    fn new(m: &'a AtomicMeasure) -> Self {
        let mut acc = 0.0;
        let cum = m
            .masses()
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self { locations: m.locations(), cum }
    }

    /// Mass of `[0, x]`.
    fn at(&self, x: f64) -> f64 {
        match self.locations.partition_point(|&l| l <= x) {
            0 => 0.0,
            k => self.cum[k - 1],
        }
    }

    fn total(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }
}

/// `F_a(x) <= F_b(x + eps) + eps` for all `x`; the supremum of the left side
/// minus the right side is attained at atoms of `a`.
fn dominated(a: &Cumulative, b: &Cumulative, eps: f64) -> bool {
    a.locations.iter().zip(&a.cum).all(|(&x, &fa)| fa <= b.at(x + eps) + eps)
}

/// Lévy-type distance between finite measures with unnormalized cumulative
/// mass functions, computed by bisection to absolute tolerance 1e-10.
pub fn levy_distance(xi: &AtomicMeasure, zeta: &AtomicMeasure) -> f64 {
    let (a, b) = (Cumulative::new(xi), Cumulative::new(zeta));
    let feasible = |eps: f64| dominated(&a, &b, eps) && dominated(&b, &a, eps);
    if feasible(0.0) {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = a.total().max(b.total());
    while hi - lo > LEVY_TOL {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// For every subset `S` of `a`'s atoms, `a(S) <= b(S^eps) + eps`, where
/// `S^eps` is the open `eps`-neighbourhood of `S`.
fn prohorov_one_side(a: &AtomicMeasure, b: &AtomicMeasure, eps: f64) -> bool {
    let n = a.len();
    // near[k]: bitmask of a-atoms within distance < eps of b-atom k
    let near: Vec<u32> = b
        .locations()
        .iter()
        .map(|&y| {
            a.locations()
                .iter()
                .enumerate()
                .filter(|(_, &x)| (x - y).abs() < eps)
                .fold(0u32, |acc, (i, _)| acc | (1 << i))
        })
        .collect();
    (1u32..(1 << n)).all(|set| {
        let lhs: f64 = (0..n).filter(|i| set & (1 << i) != 0).map(|i| a.masses()[i]).sum();
        let rhs: f64 = near.iter().zip(b.masses()).filter(|(m, _)| *m & set != 0).map(|(_, w)| w).sum();
        lhs <= rhs + eps
    })
}

/// Exact Prohorov-type distance for measures with at most
/// [`PROHOROV_MAX_ATOMS`] atoms each, by enumerating every union of atoms.
///
/// Restricting the closed sets to unions of atoms loses nothing: for any
/// closed `B`, `a(B) = a(B ∩ supp a)` while `(B ∩ supp a)^eps ⊂ B^eps`.
pub fn prohorov_exact(xi: &AtomicMeasure, zeta: &AtomicMeasure) -> Result<f64, MeasureError> {
    for m in [xi, zeta] {
        if m.len() > PROHOROV_MAX_ATOMS {
            return Err(MeasureError::TooManyAtoms(m.len()));
        }
    }
    if xi == zeta {
        return Ok(0.0);
    }
    let feasible = |eps: f64| prohorov_one_side(xi, zeta, eps) && prohorov_one_side(zeta, xi, eps);
    let mut lo = 0.0;
    let mut hi = xi.total_mass().max(zeta.total_mass()) + PROHOROV_TOL;
    while hi - lo > PROHOROV_TOL {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Componentwise maximum of the chosen scalar metric.
pub fn vector_distance(xi: &[AtomicMeasure], zeta: &[AtomicMeasure], metric: Metric) -> Result<f64, MeasureError> {
    if xi.len() != zeta.len() {
        return Err(MeasureError::DimensionMismatch(xi.len(), zeta.len()));
    }
    let mut worst = 0.0f64;
    for (a, b) in xi.iter().zip(zeta) {
        let d = match metric {
            Metric::Levy => levy_distance(a, b),
            Metric::Prohorov => prohorov_exact(a, b)?,
        };
        worst = worst.max(d);
    }
    Ok(worst)
}
