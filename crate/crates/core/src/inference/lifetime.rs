//! Zero-power lifetime from the antibunching time: `1/τ₁` is modelled as a
//! straight line `a + b·P` in pump power and the intercept taken as `1/τ_tot`.
//!
//! Residuals are taken in τ₁ itself, where the g² fits report their errors;
//! inverting noisy τ₁ values first biases the line towards short outliers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{covariance, minimize, LmOptions, Problem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimePoint {
    pub power_mw: f64,
    /// s
    pub tau1: f64,
    /// s; zero means unknown, and all points are then weighted equally.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LifetimeOptions {
    /// Ignore points above this power; `1/τ₁` is only linear at low pump.
    pub max_power_mw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeExtrapolation {
    /// s
    pub tau_tot: f64,
    pub sigma_tau_tot: f64,
    /// 1/s
    pub intercept: f64,
    pub sigma_intercept: f64,
    /// 1/s per mW
    pub slope: f64,
    pub sigma_slope: f64,
    /// `(intercept, slope)`
    pub covariance: Vec<Vec<f64>>,
    /// Weighted residual norm.
    pub residual_norm: f64,
    pub n_points: usize,
}

pub fn extrapolate_lifetime(series: &[LifetimePoint], opts: &LifetimeOptions) -> Result<LifetimeExtrapolation> {
    for p in series {
        if !(p.power_mw >= 0.0 && p.tau1 > 0.0 && p.sigma >= 0.0 && p.tau1.is_finite() && p.sigma.is_finite()) {
            return Err(Error::validation(format!("invalid lifetime point {p:?}")));
        }
    }
    let pts: Vec<&LifetimePoint> = series.iter().filter(|p| opts.max_power_mw.is_none_or(|m| p.power_mw <= m)).collect();
    if let [only] = pts[..] {
        if only.power_mw == 0.0 {
            let inv = 1.0 / only.tau1;
            let s_inv = only.sigma / (only.tau1 * only.tau1);
            return Ok(LifetimeExtrapolation {
                tau_tot: only.tau1,
                sigma_tau_tot: only.sigma,
                intercept: inv,
                sigma_intercept: s_inv,
                slope: 0.0,
                sigma_slope: 0.0,
                covariance: vec![vec![s_inv * s_inv, 0.0], vec![0.0, 0.0]],
                residual_norm: 0.0,
                n_points: 1,
            });
        }
    }
    let mut powers: Vec<f64> = pts.iter().map(|p| p.power_mw).collect();
    powers.sort_by(f64::total_cmp);
    powers.dedup();
    if powers.len() < 2 {
        return Err(Error::DegenerateDesign("lifetime extrapolation needs two distinct powers or a single zero-power point".into()));
    }
    let weighted = pts.iter().all(|p| p.sigma > 0.0);
    let data: Vec<(f64, f64, f64)> = pts.iter().map(|p| (p.power_mw, p.tau1, if weighted { p.sigma } else { 1.0 })).collect();
    let (a0, b0) = inverse_line(&data);
    let problem = InverseLine { data: &data };
    let inf = f64::INFINITY;
    let out = minimize(&problem, DVector::from_vec(vec![a0, b0]), &[(-inf, inf); 2], &LmOptions::default(), "lifetime extrapolation")?;
    let (intercept, slope) = (out.params[0], out.params[1]);
    if intercept <= 0.0 {
        return Err(Error::NegativeIntercept { intercept });
    }
    let chi2 = out.cost;
    let dof = data.len() - 2;
    // absolute sigmas, inflated when the scatter exceeds them; unweighted
    // data take their scale from the scatter alone
    let scale = match (weighted, dof) {
        (true, 0) => 1.0,
        (true, d) => (chi2 / d as f64).max(1.0),
        (false, 0) => 0.0,
        (false, d) => chi2 / d as f64,
    };
    let cov = covariance(&out.jacobian, &[]) * scale;
    let (var_a, var_b, cov_ab) = (cov[(0, 0)], cov[(1, 1)], cov[(0, 1)]);
    Ok(LifetimeExtrapolation {
        tau_tot: 1.0 / intercept,
        sigma_tau_tot: var_a.sqrt() / (intercept * intercept),
        intercept,
        sigma_intercept: var_a.sqrt(),
        slope,
        sigma_slope: var_b.sqrt(),
        covariance: vec![vec![var_a, cov_ab], vec![cov_ab, var_b]],
        residual_norm: chi2.sqrt(),
        n_points: data.len(),
    })
}

/// `(P, τ₁, σ)` against `τ₁ = 1/(a + bP)`.
struct InverseLine<'a> {
    data: &'a [(f64, f64, f64)],
}

impl Problem for InverseLine<'_> {
    fn n_params(&self) -> usize {
        2
    }

    fn evaluate(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.data.len();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 2);
        for (i, &(p, tau, s)) in self.data.iter().enumerate() {
            let rate = x[0] + x[1] * p;
            r[i] = (tau - 1.0 / rate) / s;
            let d = 1.0 / (rate * rate * s);
            j[(i, 0)] = d;
            j[(i, 1)] = d * p;
        }
        (r, j)
    }
}

/// Unweighted straight line through `(P, 1/τ₁)`; the starting point.
fn inverse_line(data: &[(f64, f64, f64)]) -> (f64, f64) {
    let n = data.len() as f64;
    let (sx, sy) = data.iter().fold((0.0, 0.0), |a, &(x, t, _)| (a.0 + x, a.1 + 1.0 / t));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = data.iter().map(|&(x, _, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = data.iter().map(|&(x, t, _)| (x - mx) * (1.0 / t - my)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}
