//! Box-constrained Levenberg–Marquardt on weighted residuals.
//!
//! Parameters at a bound whose gradient points outward are held fixed for the
//! step (projected gradient), so the method converges onto active bounds
//! instead of stalling against them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient falls below this fraction of its
    /// initial norm.
    pub grad_rel_tol: f64,
    /// Stop when a step changes the cost by less than this relative amount
    /// and parameters by less than `step_tol` (floating-point floor).
    pub cost_rel_tol: f64,
    /// Stop when a full Gauss–Newton step would lower the cost by less than
    /// this fraction of it. Ends crawls along flat valleys whose remaining
    /// decrease is far below any statistical relevance.
    pub decrement_rel_tol: f64,
    pub step_tol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_rel_tol: 1e-10, cost_rel_tol: 1e-15, decrement_rel_tol: 1e-9, step_tol: 1e-12, initial_damping: 1e-3 }
    }
}

/// Weighted residual vector and its Jacobian at a parameter point.
pub trait Problem {
    fn n_params(&self) -> usize;
    fn evaluate(&self, params: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: DVector<f64>,
    /// `Σ r²` at the solution.
    pub cost: f64,
    pub initial_cost: f64,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    /// Indices held on a bound at the solution.
    pub active: Vec<usize>,
}

fn active_set(x: &DVector<f64>, grad: &DVector<f64>, bounds: &[(f64, f64)]) -> Vec<bool> {
    (0..x.len())
        .map(|i| {
            let (lo, hi) = bounds[i];
            (x[i] <= lo && grad[i] > 0.0) || (x[i] >= hi && grad[i] < 0.0)
        })
        .collect()
}

fn projected_norm(grad: &DVector<f64>, active: &[bool]) -> f64 {
    grad.iter().zip(active).filter(|(_, a)| !**a).map(|(g, _)| g * g).sum::<f64>().sqrt()
}

pub fn minimize(
    problem: &impl Problem,
    x0: DVector<f64>,
    bounds: &[(f64, f64)],
    opts: &LmOptions,
    what: &'static str,
) -> Result<LmOutcome> {
    let n = problem.n_params();
    assert_eq!(bounds.len(), n);
    let clamp = |x: &mut DVector<f64>| {
        for i in 0..n {
            x[i] = x[i].clamp(bounds[i].0, bounds[i].1);
        }
    };
    let mut x = x0;
    clamp(&mut x);
    let (mut r, mut j) = problem.evaluate(&x);
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::NonConvergence { what, detail: "non-finite residual at the initial guess".into() });
    }
    let initial_cost = cost;
    let mut grad = j.tr_mul(&r);
    let mut active = active_set(&x, &grad, bounds);
    let g0 = projected_norm(&grad, &active).max(f64::MIN_POSITIVE);
    let mut lambda = opts.initial_damping;
    for iter in 0..opts.max_iter {
        if projected_norm(&grad, &active) <= opts.grad_rel_tol * g0 {
            return Ok(outcome(x, cost, initial_cost, j, iter, &active));
        }
        let jtj = j.tr_mul(&j);
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        if gauss_newton_decrement(&jtj, &grad, &free) <= opts.decrement_rel_tol * cost {
            return Ok(outcome(x, cost, initial_cost, j, iter, &active));
        }
        let mut accepted = false;
        let mut stalled = false;
        for _ in 0..60 {
            let m = free.len();
            let mut a = DMatrix::<f64>::zeros(m, m);
            let mut b = DVector::<f64>::zeros(m);
            for (p, &i) in free.iter().enumerate() {
                b[p] = -grad[i];
                for (q, &k) in free.iter().enumerate() {
                    a[(p, q)] = jtj[(i, k)];
                }
                a[(p, p)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&b)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = x.clone();
            for (p, &i) in free.iter().enumerate() {
                trial[i] += step[p];
            }
            clamp(&mut trial);
            let (tr, tj) = problem.evaluate(&trial);
            let tcost = tr.norm_squared();
            let dx = (&trial - &x).amax() / (1.0 + x.amax());
            if tcost.is_finite() && tcost <= cost {
                stalled = (cost - tcost) <= opts.cost_rel_tol * cost && dx <= opts.step_tol;
                let (mut trial, mut tr, mut tj, mut tcost) = (trial, tr, tj, tcost);
                if !stalled {
                    // extend along the step while it keeps paying off; Gauss–Newton
                    // steps are short in long curved valleys of sloppy models
                    let step = &trial - &x;
                    let mut scale = 2.0;
                    while scale <= 64.0 {
                        let mut ext = &x + &step * scale;
                        clamp(&mut ext);
                        let (er, ej) = problem.evaluate(&ext);
                        let ecost = er.norm_squared();
                        if !(ecost.is_finite() && ecost < tcost) {
                            break;
                        }
                        (trial, tr, tj, tcost) = (ext, er, ej, ecost);
                        scale *= 2.0;
                    }
                }
                x = trial;
                r = tr;
                j = tj;
                cost = tcost;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            if dx <= opts.step_tol {
                stalled = true;
                break;
            }
            lambda *= 4.0;
        }
        grad = j.tr_mul(&r);
        active = active_set(&x, &grad, bounds);
        if stalled || !accepted {
            // no representable improvement left: at the floating-point minimum
            return Ok(outcome(x, cost, initial_cost, j, iter + 1, &active));
        }
    }
    Err(Error::NonConvergence {
        what,
        detail: format!("{} iterations, projected gradient {:.3e} of initial", opts.max_iter, projected_norm(&grad, &active) / g0),
    })
}

/// `gᵀ(JᵀJ)⁻¹g` over the free parameters: the cost reduction an undamped
/// Gauss–Newton step predicts.
fn gauss_newton_decrement(jtj: &DMatrix<f64>, grad: &DVector<f64>, free: &[usize]) -> f64 {
    let m = free.len();
    if m == 0 {
        return 0.0;
    }
    let a = DMatrix::from_fn(m, m, |p, q| jtj[(free[p], free[q])]);
    let g = DVector::from_fn(m, |p, _| grad[free[p]]);
    match a.cholesky() {
        Some(c) => g.dot(&c.solve(&g)),
        None => f64::INFINITY,
    }
}

fn outcome(x: DVector<f64>, cost: f64, initial_cost: f64, j: DMatrix<f64>, iterations: usize, active: &[bool]) -> LmOutcome {
    LmOutcome {
        params: x,
        cost,
        initial_cost,
        jacobian: j,
        iterations,
        active: active.iter().enumerate().filter(|(_, a)| **a).map(|(i, _)| i).collect(),
    }
}

/// Relative eigenvalue floor of the column-scaled normal matrix.
const CONDITION_FLOOR: f64 = 1e-14;

/// `(JᵀJ)⁻¹` restricted to the free parameters; rows and columns of active
/// parameters are zero.
///
/// Directions the data do not constrain (scaled eigenvalues below
/// `CONDITION_FLOOR`) get a correspondingly huge variance rather than the
/// zero a pseudo-inverse would assign.
pub fn covariance(j: &DMatrix<f64>, active: &[usize]) -> DMatrix<f64> {
    let n = j.ncols();
    let free: Vec<usize> = (0..n).filter(|i| !active.contains(i)).collect();
    let m = free.len();
    let mut out = DMatrix::<f64>::zeros(n, n);
    if m == 0 {
        return out;
    }
    let cols: Vec<f64> = free
        .iter()
        .map(|&i| {
            let s = j.column(i).norm();
            if s > 0.0 && s.is_finite() { s } else { 1.0 }
        })
        .collect();
    let scaled = DMatrix::from_fn(j.nrows(), m, |r, p| j[(r, free[p])] / cols[p]);
    let eig = scaled.tr_mul(&scaled).symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let floor = if top > 0.0 { top * CONDITION_FLOOR } else { CONDITION_FLOOR };
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    for (p, &i) in free.iter().enumerate() {
        for (q, &k) in free.iter().enumerate() {
            out[(i, k)] = inv[(p, q)] / (cols[p] * cols[q]);
        }
    }
    // symmetrize against round-off
    (&out + out.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rosenbrock as residuals: (1 − x, 10(y − x²)).
    struct Rosenbrock;

    impl Problem for Rosenbrock {
        fn n_params(&self) -> usize {
            2
        }
        fn evaluate(&self, p: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
            let r = DVector::from_vec(vec![1.0 - p[0], 10.0 * (p[1] - p[0] * p[0])]);
            let j = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, -20.0 * p[0], 10.0]);
            (r, j)
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let inf = f64::INFINITY;
        let out = minimize(&Rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), &[(-inf, inf); 2], &LmOptions::default(), "test").unwrap();
        // the gradient test stops near 1e-8 from the optimum
        assert!((out.params[0] - 1.0).abs() < 1e-7 && (out.params[1] - 1.0).abs() < 1e-7);
        assert!(out.cost < 1e-14 && out.cost <= out.initial_cost);
        assert!(out.active.is_empty());
    }

    #[test]
    fn stops_on_active_bound() {
        let inf = f64::INFINITY;
        // exact optimum wanted: no early stop on a small decrement
        let opts = LmOptions { decrement_rel_tol: 0.0, ..Default::default() };
        let out = minimize(&Rosenbrock, DVector::from_vec(vec![0.0, 0.0]), &[(-inf, 0.5), (-inf, inf)], &opts, "test").unwrap();
        assert_eq!(out.params[0], 0.5);
        assert!((out.params[1] - 0.25).abs() < 1e-10);
        assert_eq!(out.active, vec![0]);
        let cov = covariance(&out.jacobian, &out.active);
        assert_eq!(cov[(0, 0)], 0.0);
        assert!(cov[(1, 1)] > 0.0);
    }

    #[test]
    fn covariance_matches_inverse_and_flags_flat_directions() {
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1e-6, 1.0, 2e-6]);
        let cov = covariance(&j, &[]);
        let direct = j.tr_mul(&j).try_inverse().unwrap();
        assert!((&cov - &direct).amax() <= 1e-8 * direct.amax());
        // second column carries no information
        let flat = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let cov = covariance(&flat, &[]);
        assert!((cov[(0, 0)] - 1.0 / 3.0).abs() < 1e-12);
        assert!(cov[(1, 1)] > 1e12);
    }

    #[test]
    fn iteration_cap_reports_nonconvergence() {
        let inf = f64::INFINITY;
        let opts = LmOptions { max_iter: 2, ..Default::default() };
        let err = minimize(&Rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), &[(-inf, inf); 2], &opts, "test");
        assert!(matches!(err, Err(Error::NonConvergence { .. })));
    }
}
