//! Projected Newton method for separable dual programs
//!
//! ```text
//!   minimize  D(p) = sum_i phi_i((A^T p)_i) + c . p   over p >= 0
//! ```
//!
//! with each `phi_i` convex and twice differentiable on the interior of its
//! domain. Both the alpha-fair allocation and the invariant-state lifting map
//! reduce to this form. The active-set rule and Armijo test along the
//! projection arc follow Bertsekas' projected Newton method; the free block is
//! solved with a regularized Cholesky factorization.

use nalgebra::{DMatrix, DVector};

pub(crate) trait SeparableDual {
    /// `phi_i(s)`, `+inf` outside the domain.
    fn phi(&self, i: usize, s: f64) -> f64;
    fn dphi(&self, i: usize, s: f64) -> f64;
    fn d2phi(&self, i: usize, s: f64) -> f64;
}

/// Sparse 0/1 coupling between dual variables (rows) and primal terms (cols).
pub(crate) struct Coupling {
    /// primal terms touched by each dual variable
    pub rows: Vec<Vec<usize>>,
    /// dual variables touching each primal term
    pub cols: Vec<Vec<usize>>,
}

impl Coupling {
    pub fn transpose_apply(&self, p: &[f64]) -> Vec<f64> {
        self.cols.iter().map(|js| js.iter().map(|&j| p[j]).sum()).collect()
    }
}

pub(crate) struct DualOutcome {
    pub prices: Vec<f64>,
    pub iterations: usize,
}

const ARMIJO_SIGMA: f64 = 1e-4;
const ACTIVE_EPS: f64 = 1e-3;

fn objective<P: SeparableDual>(prob: &P, coupling: &Coupling, c: &[f64], p: &[f64]) -> f64 {
    let s = coupling.transpose_apply(p);
    let mut v: f64 = c.iter().zip(p).map(|(a, b)| a * b).sum();
    for (i, &si) in s.iter().enumerate() {
        v += prob.phi(i, si);
        if !v.is_finite() {
            return f64::INFINITY;
        }
    }
    v
}

/// Solves `(H + delta I) x = g` with `delta` at least `shift`, raising it
/// until the factorization succeeds.
fn solve_regularized(mut h: DMatrix<f64>, g: &DVector<f64>, shift: f64) -> DVector<f64> {
    let n = h.nrows();
    let scale = (0..n).map(|k| h[(k, k)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for k in 0..n {
        h[(k, k)] += shift;
    }
    let mut delta = 1e-13 * scale;
    for _ in 0..12 {
        if let Some(ch) = h.clone().cholesky() {
            let x = ch.solve(g);
            if x.iter().all(|v| v.is_finite()) {
                return x;
            }
        }
        for k in 0..n {
            h[(k, k)] += delta;
        }
        delta *= 100.0;
    }
    // Fall back to a diagonally scaled gradient step.
    DVector::from_iterator(n, (0..n).map(|k| g[k] / h[(k, k)].abs().max(f64::MIN_POSITIVE)))
}

/// Runs projected Newton from `p0` until `kkt(p) <= target`, the iteration
/// cap is hit, or the line search can no longer make progress. The caller
/// judges convergence from its own residual.
pub(crate) fn minimize<P: SeparableDual>(
    prob: &P,
    coupling: &Coupling,
    c: &[f64],
    p0: Vec<f64>,
    target: f64,
    max_iter: usize,
    kkt: impl Fn(&[f64]) -> f64,
) -> DualOutcome {
    let m = c.len();
    let mut p = p0;
    let mut value = objective(prob, coupling, c, &p);
    let mut residual = kkt(&p);
    let mut best = (residual, p.clone());
    let mut iterations = 0;
    while iterations < max_iter && residual > target {
        iterations += 1;
        let s = coupling.transpose_apply(&p);
        let d1: Vec<f64> = s.iter().enumerate().map(|(i, &si)| prob.dphi(i, si)).collect();
        let d2: Vec<f64> = s.iter().enumerate().map(|(i, &si)| prob.d2phi(i, si)).collect();
        let grad: Vec<f64> = (0..m).map(|j| c[j] + coupling.rows[j].iter().map(|&i| d1[i]).sum::<f64>()).collect();

        let proj_len = (0..m).map(|j| (p[j] - (p[j] - grad[j]).max(0.0)).abs()).fold(0.0, f64::max);
        let eps = ACTIVE_EPS.min(proj_len);
        let active: Vec<bool> = (0..m).map(|j| p[j] <= eps && grad[j] > 0.0).collect();
        let free: Vec<usize> = (0..m).filter(|&j| !active[j]).collect();

        let hess = |j: usize, k: usize| -> f64 {
            let (a, b) = (&coupling.rows[j], &coupling.rows[k]);
            a.iter().filter(|i| b.contains(i)).map(|&i| d2[i]).sum()
        };

        let mut dir = vec![0.0; m];
        if !free.is_empty() {
            let n = free.len();
            let h = DMatrix::from_fn(n, n, |a, b| hess(free[a], free[b]));
            let g = DVector::from_iterator(n, free.iter().map(|&j| grad[j]));
            // Levenberg shift proportional to the gradient keeps the step
            // bounded when the prices are not unique, and vanishes at the optimum.
            let shift = g.amax().min(1e-2 * h.diagonal().amax());
            let x = solve_regularized(h, &g, shift);
            for (a, &j) in free.iter().enumerate() {
                dir[j] = x[a];
            }
        }
        for j in (0..m).filter(|&j| active[j]) {
            dir[j] = grad[j] / hess(j, j).max(f64::MIN_POSITIVE);
        }
        let scaled: Vec<f64> = (0..m).map(|j| grad[j] / hess(j, j).max(f64::MIN_POSITIVE)).collect();

        // Decreases below this are rounding noise in the dual value.
        let noise = 64.0 * f64::EPSILON * value.abs().max(1.0);
        let step = |dir: &[f64], beta: f64| -> Vec<f64> { (0..m).map(|j| (p[j] - beta * dir[j]).max(0.0)).collect() };
        let armijo = |dir: &[f64], arc: &dyn Fn(usize) -> bool| {
            let mut beta = 1.0;
            for _ in 0..60 {
                let cand = step(dir, beta);
                let v = objective(prob, coupling, c, &cand);
                if v.is_finite() {
                    let predicted: f64 = (0..m)
                        .map(|j| if arc(j) { grad[j] * (p[j] - cand[j]) } else { beta * grad[j] * dir[j] })
                        .sum();
                    if value - v > noise && value - v >= ARMIJO_SIGMA * predicted {
                        return Some((cand, v));
                    }
                }
                beta *= 0.5;
            }
            None
        };
        // Once the dual value cannot resolve progress, the caller's residual
        // serves as the merit function instead.
        let by_residual = |dir: &[f64]| {
            let mut beta = 1.0;
            for _ in 0..40 {
                let cand = step(dir, beta);
                let v = objective(prob, coupling, c, &cand);
                if v.is_finite() && kkt(&cand) < residual {
                    return Some((cand, v));
                }
                beta *= 0.5;
            }
            None
        };
        let accepted = armijo(&dir, &|j| active[j])
            .or_else(|| by_residual(&dir))
            .or_else(|| armijo(&scaled, &|_| true))
            .or_else(|| by_residual(&scaled))
            // Curvature can blow up at the boundary; plain gradient escapes it.
            .or_else(|| armijo(&grad, &|_| true));
        match accepted {
            Some((cand, v)) if cand != p => {
                p = cand;
                value = v;
                residual = kkt(&p);
                if residual < best.0 {
                    best = (residual, p.clone());
                }
            }
            _ => break,
        }
    }
    let p = best.1;
    DualOutcome { prices: p, iterations }
}
