//! Count rate vs pump power: `kP/(P + P_sat)` (confocal) and
//! `k′P/(P + P_sat) + mP` with `P_sat` held fixed (fiber).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{covariance, minimize, LmOptions, Problem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationFit {
    /// Count rate for P → ∞ (counts/s).
    pub k: f64,
    /// mW
    pub p_sat: f64,
    /// Linear background slope (counts/s per mW); zero for the confocal form.
    pub m: f64,
    pub sigma_k: f64,
    pub sigma_p_sat: f64,
    pub sigma_m: f64,
    /// `(k, P_sat)` for the confocal fit, `(k′, m)` for the fiber fit.
    pub covariance: Vec<Vec<f64>>,
    pub residual_norm: f64,
    pub n_points: usize,
    /// True for the fiber form, where `P_sat` is an input.
    pub p_sat_fixed: bool,
    pub bounds_active: Vec<String>,
}

impl SaturationFit {
    pub fn eval(&self, power_mw: f64) -> f64 {
        saturation_model(self.k, self.p_sat, self.m, power_mw)
    }
}

pub fn saturation_model(k: f64, p_sat: f64, m: f64, power_mw: f64) -> f64 {
    k * power_mw / (power_mw + p_sat) + m * power_mw
}

fn check_points(points: &[(f64, f64)]) -> Result<()> {
    if let Some(p) = points.iter().find(|(p, c)| !(p.is_finite() && c.is_finite() && *p >= 0.0)) {
        return Err(Error::validation(format!("invalid saturation point {p:?}")));
    }
    Ok(())
}

fn distinct_positive_powers(points: &[(f64, f64)]) -> usize {
    let mut ps: Vec<f64> = points.iter().map(|p| p.0).filter(|&p| p > 0.0).collect();
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    ps.len()
}

struct Confocal<'a> {
    points: &'a [(f64, f64)],
}

impl Problem for Confocal<'_> {
    fn n_params(&self) -> usize {
        2
    }

    fn evaluate(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (k, ps) = (theta[0].exp(), theta[1].exp());
        let n = self.points.len();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 2);
        for (i, &(p, c)) in self.points.iter().enumerate() {
            let f = k * p / (p + ps);
            r[i] = c - f;
            j[(i, 0)] = -f;
            j[(i, 1)] = k * p * ps / ((p + ps) * (p + ps));
        }
        (r, j)
    }
}

/// Start from the straight line `1/C = 1/k + (P_sat/k)(1/P)`.
fn linearized_start(points: &[(f64, f64)]) -> (f64, f64) {
    let usable: Vec<(f64, f64)> = points.iter().filter(|(p, c)| *p > 0.0 && *c > 0.0).map(|(p, c)| (1.0 / p, 1.0 / c)).collect();
    let c_max = points.iter().map(|p| p.1).fold(0.0, f64::max);
    let p_mid = {
        let mut ps: Vec<f64> = points.iter().map(|p| p.0).filter(|&p| p > 0.0).collect();
        ps.sort_by(f64::total_cmp);
        ps.get(ps.len() / 2).copied().unwrap_or(1.0)
    };
    let fallback = ((2.0 * c_max).max(1e-300), p_mid);
    if usable.len() < 2 {
        return fallback;
    }
    let n = usable.len() as f64;
    let (sx, sy) = usable.iter().fold((0.0, 0.0), |a, (x, y)| (a.0 + x, a.1 + y));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = usable.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return fallback;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if slope > 0.0 && intercept > 0.0 {
        (1.0 / intercept, slope / intercept)
    } else {
        fallback
    }
}

pub fn fit_saturation_confocal(points: &[(f64, f64)]) -> Result<SaturationFit> {
    check_points(points)?;
    if distinct_positive_powers(points) < 2 {
        return Err(Error::DegenerateDesign("saturation fit needs at least two distinct non-zero powers".into()));
    }
    if points.len() < 3 {
        return Err(Error::validation("saturation fit needs at least three points"));
    }
    let (k0, ps0) = linearized_start(points);
    let bounds = [(-700.0, 700.0), ((1e-9f64).ln(), (1e9f64).ln())];
    let problem = Confocal { points };
    let out = minimize(&problem, DVector::from_vec(vec![k0.ln(), ps0.ln()]), &bounds, &LmOptions::default(), "confocal saturation fit")?;
    let (k, p_sat) = (out.params[0].exp(), out.params[1].exp());
    let dof = points.len().saturating_sub(2).max(1) as f64;
    let s2 = out.cost / dof;
    let g = DMatrix::from_diagonal(&DVector::from_vec(vec![k, p_sat]));
    let cov = &g * covariance(&out.jacobian, &out.active) * &g * s2;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(SaturationFit {
        k,
        p_sat,
        m: 0.0,
        sigma_k: cov[(0, 0)].max(0.0).sqrt(),
        sigma_p_sat: cov[(1, 1)].max(0.0).sqrt(),
        sigma_m: 0.0,
        covariance: vec![vec![cov[(0, 0)], cov[(0, 1)]], vec![cov[(1, 0)], cov[(1, 1)]]],
        residual_norm: out.cost.sqrt(),
        n_points: points.len(),
        p_sat_fixed: false,
        bounds_active: out.active.iter().map(|&i| ["k", "p_sat"][i].to_string()).collect(),
    })
}

/// Linear in `(k′, m)` once `P_sat` is fixed, so solved directly. A negative
/// background slope is unphysical; the fit then falls back to `m = 0`.
pub fn fit_saturation_fiber(points: &[(f64, f64)], p_sat_fixed: f64) -> Result<SaturationFit> {
    check_points(points)?;
    if !(p_sat_fixed > 0.0 && p_sat_fixed.is_finite()) {
        return Err(Error::validation(format!("fixed saturation power must be positive, got {p_sat_fixed}")));
    }
    let n = points.len();
    let a = DMatrix::from_fn(n, 2, |i, col| {
        let p = points[i].0;
        if col == 0 {
            p / (p + p_sat_fixed)
        } else {
            p
        }
    });
    let y = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if n < 2 || smax == 0.0 || smin <= 1e-10 * smax {
        return Err(Error::DegenerateDesign("fiber saturation design is rank deficient; need two distinct non-zero powers".into()));
    }
    let ata = a.tr_mul(&a);
    let inv = ata.clone().try_inverse().ok_or_else(|| Error::DegenerateDesign("singular normal equations".into()))?;
    let mut coef = &inv * a.tr_mul(&y);
    let mut bounds_active = Vec::new();
    let mut cov;
    let rss;
    if coef[1] < 0.0 {
        let col = a.column(0);
        let saa = col.dot(&col);
        coef = DVector::from_vec(vec![col.dot(&y) / saa, 0.0]);
        rss = (&y - &a * &coef).norm_squared();
        let s2 = rss / n.saturating_sub(1).max(1) as f64;
        cov = DMatrix::zeros(2, 2);
        cov[(0, 0)] = s2 / saa;
        bounds_active.push("m".to_string());
    } else {
        rss = (&y - &a * &coef).norm_squared();
        let s2 = rss / n.saturating_sub(2).max(1) as f64;
        cov = inv * s2;
        cov = (&cov + cov.transpose()) * 0.5;
    }
    Ok(SaturationFit {
        k: coef[0],
        p_sat: p_sat_fixed,
        m: coef[1],
        sigma_k: cov[(0, 0)].max(0.0).sqrt(),
        sigma_p_sat: 0.0,
        sigma_m: cov[(1, 1)].max(0.0).sqrt(),
        covariance: vec![vec![cov[(0, 0)], cov[(0, 1)]], vec![cov[(1, 0)], cov[(1, 1)]]],
        residual_norm: rss.sqrt(),
        n_points: n,
        p_sat_fixed: true,
        bounds_active,
    })
}
