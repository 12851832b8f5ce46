//! Least-squares fit of `g²(τ) = B·(1 + p_f²[c e^{−|τ|/τ₂} − (1+c) e^{−|τ|/τ₁}])`.
//!
//! Internally the parameters are `(logit p_f, ln τ₁, ln(τ₂/τ₁ − 1), ln c, ln B)`,
//! which keeps `0 < p_f < 1`, `0 < τ₁ < τ₂` and `c > 0` without constraints.

/// ln 1.5
const LN_1_5: f64 = 0.405_465_108_108_164_4;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{covariance, minimize, LmOptions, Problem};
use crate::correlation::G2Histogram;
use crate::error::{Error, Result};

/// Per-bin variance used by the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `max(counts, 1)`, mapped through the normalization.
    RawCounts,
    /// Variance from the fitted model, refined iteratively; the fixed point is
    /// the Poisson maximum-likelihood estimate.
    #[default]
    ModelIrls,
}

/// How the model is compared to a bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BinModel {
    /// Value at the bin center.
    Center,
    /// Average over the bin.
    #[default]
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Init {
    pub p_f: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2FitOptions {
    pub init: Option<G2Init>,
    pub weights: WeightScheme,
    pub bin_model: BinModel,
    /// Fit the overall level `B` instead of fixing it to 1; absorbs the
    /// statistical error of the normalization window.
    pub free_baseline: bool,
    /// Restrict the fit to bins with |τ| ≤ this (ns).
    pub tau_range_ns: Option<f64>,
    pub irls_passes: usize,
    pub lm: LmOptions,
}

impl Default for G2FitOptions {
    fn default() -> Self {
        Self {
            init: None,
            weights: WeightScheme::default(),
            bin_model: BinModel::default(),
            free_baseline: true,
            tau_range_ns: None,
            irls_passes: 4,
            lm: LmOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Sigmas {
    pub p_f: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub c: f64,
    pub baseline: f64,
    pub g2_zero: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Fit {
    pub p_f: f64,
    /// Antibunching time (s).
    pub tau1: f64,
    /// Bunching time (s).
    pub tau2: f64,
    pub c: f64,
    pub baseline: f64,
    /// `1 − p_f²`
    pub g2_zero: f64,
    pub sigmas: G2Sigmas,
    /// Order `(p_f, τ₁, τ₂, c[, B])`.
    pub covariance: Vec<Vec<f64>>,
    /// `√Σ r²` of the weighted residuals.
    pub residual_norm: f64,
    pub chi2_reduced: f64,
    pub n_points: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Parameters resting on a bound. Their sigma still comes from the full
    /// curvature, so it is indicative only.
    pub bounds_active: Vec<String>,
    pub weights: WeightScheme,
    pub bin_model: BinModel,
}

impl G2Fit {
    pub fn eval(&self, tau: f64) -> f64 {
        let e = |t: f64| (-tau.abs() / t).exp();
        self.baseline * (1.0 + self.p_f.powi(2) * (self.c * e(self.tau2) - (1.0 + self.c) * e(self.tau1)))
    }
}

const NAMES: [&str; 5] = ["p_f", "tau1", "tau2", "c", "baseline"];

fn theta_bounds(n: usize) -> Vec<(f64, f64)> {
    // τ₂/τ₁ ≤ 1000: beyond that the bunching decay is indistinguishable from the baseline
    // and the baseline stays within a factor 1.5 of the normalization; further
    // out a long bunching decay and the baseline trade off freely
    let all = [(-20.0, 20.0), ((1e-12f64).ln(), (1e-3f64).ln()), (-15.0, (999.0f64).ln()), (-25.0, 5.0), (-LN_1_5, LN_1_5)];
    all[..n].to_vec()
}

/// Mean of `e^{−|t|/T}` over `[center − w/2, center + w/2]` and its T-derivative.
fn exp_average(center: f64, width: f64, t: f64) -> (f64, f64) {
    // ∫_{x0}^{x1} e^{−x/T} dx and its T-derivative, 0 ≤ x0 ≤ x1
    let seg = |x0: f64, x1: f64| -> (f64, f64) {
        let e0 = (-x0 / t).exp();
        let e1 = (-x1 / t).exp();
        let integral = t * e0 * -(-(x1 - x0) / t).exp_m1();
        let deriv = e0 * (1.0 + x0 / t) - e1 * (1.0 + x1 / t);
        (integral, deriv)
    };
    let (a, b) = (center - 0.5 * width, center + 0.5 * width);
    let (i, d) = if a >= 0.0 {
        seg(a, b)
    } else if b <= 0.0 {
        seg(-b, -a)
    } else {
        let (i1, d1) = seg(0.0, -a);
        let (i2, d2) = seg(0.0, b);
        (i1 + i2, d1 + d2)
    };
    (i / width, d / width)
}

fn exp_center(center: f64, t: f64) -> (f64, f64) {
    let x = center.abs();
    let e = (-x / t).exp();
    (e, x / (t * t) * e)
}

struct Natural {
    p: f64,
    tau1: f64,
    tau2: f64,
    c: f64,
    b: f64,
}

fn natural(theta: &DVector<f64>) -> Natural {
    let p = 1.0 / (1.0 + (-theta[0]).exp());
    let tau1 = theta[1].exp();
    let tau2 = tau1 * (1.0 + theta[2].exp());
    let c = theta[3].exp();
    let b = if theta.len() > 4 { theta[4].exp() } else { 1.0 };
    Natural { p, tau1, tau2, c, b }
}

/// `∂(p, τ₁, τ₂, c, B)/∂θ`.
fn natural_jacobian(theta: &DVector<f64>) -> DMatrix<f64> {
    let n = theta.len();
    let v = natural(theta);
    let mut g = DMatrix::<f64>::zeros(n, n);
    g[(0, 0)] = v.p * (1.0 - v.p);
    g[(1, 1)] = v.tau1;
    g[(2, 1)] = v.tau2;
    g[(2, 2)] = v.tau2 - v.tau1;
    g[(3, 3)] = v.c;
    if n > 4 {
        g[(4, 4)] = v.b;
    }
    g
}

struct G2Problem<'a> {
    taus: &'a [f64],
    width: f64,
    y: &'a [f64],
    sigma: Vec<f64>,
    bin_model: BinModel,
    n: usize,
}

impl G2Problem<'_> {
    /// Model values and derivatives with respect to `(p, τ₁, τ₂, c, B)`.
    fn model(&self, theta: &DVector<f64>) -> (Vec<f64>, DMatrix<f64>) {
        let v = natural(theta);
        let mut f = vec![0.0; self.taus.len()];
        let mut d = DMatrix::<f64>::zeros(self.taus.len(), self.n);
        let p2 = v.p * v.p;
        for (i, &t) in self.taus.iter().enumerate() {
            let ((e1, de1), (e2, de2)) = match self.bin_model {
                BinModel::Center => (exp_center(t, v.tau1), exp_center(t, v.tau2)),
                BinModel::Average => (exp_average(t, self.width, v.tau1), exp_average(t, self.width, v.tau2)),
            };
            let shape = v.c * e2 - (1.0 + v.c) * e1;
            let val = v.b * (1.0 + p2 * shape);
            f[i] = val;
            let df_dp = v.b * 2.0 * v.p * shape;
            let df_dt1 = -v.b * p2 * (1.0 + v.c) * de1;
            let df_dt2 = v.b * p2 * v.c * de2;
            let df_dc = v.b * p2 * (e2 - e1);
            d[(i, 0)] = df_dp;
            d[(i, 1)] = df_dt1;
            d[(i, 2)] = df_dt2;
            d[(i, 3)] = df_dc;
            if self.n > 4 {
                d[(i, 4)] = val / v.b;
            }
        }
        (f, d)
    }
}

impl Problem for G2Problem<'_> {
    fn n_params(&self) -> usize {
        self.n
    }

    fn evaluate(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (f, d) = self.model(theta);
        let mut d = d * natural_jacobian(theta);
        let r = DVector::from_iterator(f.len(), f.iter().zip(self.y).zip(&self.sigma).map(|((f, y), s)| (y - f) / s));
        for (i, s) in self.sigma.iter().enumerate() {
            d.row_mut(i).scale_mut(-1.0 / s);
        }
        (r, d)
    }
}

/// Automatic start: depth of the dip, its half-depth width, and the bunching peak.
pub fn initial_guess(hist: &G2Histogram) -> Result<G2Init> {
    if hist.g2.len() != hist.len() {
        return Err(Error::validation("histogram is not normalized"));
    }
    let n = hist.half_bins;
    let w = hist.bin_width_s();
    let sym: Vec<f64> = (0..=n).map(|k| 0.5 * (hist.g2[n + k] + hist.g2[n - k])).collect();
    let smooth = |k: usize| {
        let lo = k.saturating_sub(2);
        let hi = (k + 2).min(n);
        sym[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
    };
    let g0 = smooth(0).min(0.999);
    let p_f = (1.0 - g0).clamp(0.05, 0.98).sqrt();
    let level = 0.5 * (g0 + 1.0);
    let k_half = (1..=n).find(|&k| smooth(k) >= level).unwrap_or(n / 4).max(1);
    let tau1 = (k_half as f64 * w / std::f64::consts::LN_2).max(w);
    let k_tau = ((tau1 / w).ceil() as usize).min(n);
    let peak = (k_tau..=n).map(smooth).fold(f64::NEG_INFINITY, f64::max);
    let c = ((peak - 1.0) / (p_f * p_f)).clamp(0.01, 10.0);
    Ok(G2Init { p_f, tau1, tau2: 10.0 * tau1, c })
}

fn theta_from(init: &G2Init, baseline: Option<f64>) -> Result<DVector<f64>> {
    if !(init.p_f > 0.0 && init.p_f < 1.0 && init.tau1 > 0.0 && init.tau2 > init.tau1 && init.c > 0.0) {
        return Err(Error::validation(format!("initial guess out of range: {init:?}")));
    }
    let mut v = vec![
        (init.p_f / (1.0 - init.p_f)).ln(),
        init.tau1.ln(),
        (init.tau2 / init.tau1 - 1.0).ln(),
        init.c.ln(),
    ];
    if let Some(b) = baseline {
        v.push(b.ln());
    }
    Ok(DVector::from_vec(v))
}

pub fn fit_g2(hist: &G2Histogram, opts: &G2FitOptions) -> Result<G2Fit> {
    let norm = hist.norm_value.ok_or_else(|| Error::validation("histogram is not normalized"))?;
    let range_ns = opts.tau_range_ns.unwrap_or(f64::INFINITY);
    let idx: Vec<usize> = (0..hist.len()).filter(|&i| hist.tau_ns(i).abs() <= range_ns + 1e-9).collect();
    if idx.len() < 50 {
        return Err(Error::validation(format!("need at least 50 bins to fit g2, have {}", idx.len())));
    }
    let taus: Vec<f64> = idx.iter().map(|&i| hist.tau_ns(i) * 1e-9).collect();
    let y: Vec<f64> = idx.iter().map(|&i| hist.g2[i]).collect();
    let counts: Vec<f64> = idx.iter().map(|&i| hist.counts[i] as f64).collect();
    let raw_sigma: Vec<f64> = counts.iter().map(|c| c.max(1.0).sqrt() / norm).collect();
    let n = if opts.free_baseline { 5 } else { 4 };
    let init = match opts.init {
        Some(i) => i,
        None => initial_guess(hist)?,
    };
    let theta0 = theta_from(&init, opts.free_baseline.then_some(1.0))?;
    let bounds = theta_bounds(n);
    let mut problem = G2Problem { taus: &taus, width: hist.bin_width_s(), y: &y, sigma: raw_sigma, bin_model: opts.bin_model, n };
    // expected counts, floored so an empty dip cannot get infinite weight
    let model_sigma = |p: &G2Problem, theta: &DVector<f64>| -> Vec<f64> {
        p.model(theta).0.iter().map(|m| (m * norm).max(0.5).sqrt() / norm).collect()
    };
    let out = match opts.weights {
        WeightScheme::RawCounts => minimize(&problem, theta0, &bounds, &opts.lm, "g2 fit")?,
        WeightScheme::ModelIrls => {
            // weights from the starting model; the raw-count fit is biased
            // when bins hold only a few counts
            problem.sigma = model_sigma(&problem, &theta0);
            let mut out = minimize(&problem, theta0, &bounds, &opts.lm, "g2 fit")?;
            for _ in 0..opts.irls_passes {
                let theta = out.params.clone();
                problem.sigma = model_sigma(&problem, &theta);
                let iterations = out.iterations;
                out = minimize(&problem, theta.clone(), &bounds, &opts.lm, "g2 fit")?;
                out.iterations += iterations;
                if (&out.params - &theta).amax() < 1e-9 {
                    break;
                }
            }
            out
        }
    };
    let iterations = out.iterations;
    // Curvature in natural coordinates over all parameters, including any on
    // a bound: a bound reached along a flat direction must not read as zero
    // uncertainty, and the log/logit chain rule collapses near the bounds.
    let (_, mut j_nat) = problem.model(&out.params);
    for (i, s) in problem.sigma.iter().enumerate() {
        j_nat.row_mut(i).scale_mut(1.0 / s);
    }
    let cov = covariance(&j_nat, &[]);
    let v = natural(&out.params);
    let sd = |i: usize| if i < n { cov[(i, i)].max(0.0).sqrt() } else { 0.0 };
    let dof = (idx.len() - n).max(1) as f64;
    Ok(G2Fit {
        p_f: v.p,
        tau1: v.tau1,
        tau2: v.tau2,
        c: v.c,
        baseline: v.b,
        g2_zero: 1.0 - v.p * v.p,
        sigmas: G2Sigmas { p_f: sd(0), tau1: sd(1), tau2: sd(2), c: sd(3), baseline: sd(4), g2_zero: 2.0 * v.p * sd(0) },
        covariance: (0..n).map(|i| (0..n).map(|k| cov[(i, k)]).collect()).collect(),
        residual_norm: out.cost.sqrt(),
        chi2_reduced: out.cost / dof,
        n_points: idx.len(),
        iterations,
        converged: true,
        bounds_active: out.active.iter().map(|&i| NAMES[i].to_string()).collect(),
        weights: opts.weights,
        bin_model: opts.bin_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model_hist(p: f64, t1: f64, t2: f64, c: f64, norm: f64, bin_model: BinModel) -> G2Histogram {
        let half = 400;
        let w_ps = 924;
        let w = w_ps as f64 * 1e-12;
        let g2: Vec<f64> = (0..=2 * half)
            .map(|i| {
                let t = (i as f64 - half as f64) * w;
                let (e1, e2) = match bin_model {
                    BinModel::Center => (exp_center(t, t1).0, exp_center(t, t2).0),
                    BinModel::Average => (exp_average(t, w, t1).0, exp_average(t, w, t2).0),
                };
                1.0 + p * p * (c * e2 - (1.0 + c) * e1)
            })
            .collect();
        G2Histogram {
            bin_width_ps: w_ps,
            half_bins: half,
            counts: g2.iter().map(|g| (g * norm).round() as u64).collect(),
            norm_window_ns: Some((300.0, 369.0)),
            norm_value: Some(norm),
            g2,
            totals: [0, 0],
            duration_ps: 0,
            empty_input: false,
        }
    }

    #[test]
    fn exp_average_matches_quadrature() {
        for &(center, t) in &[(0.0, 20e-9), (5e-9, 20e-9), (-3e-9, 7e-9), (0.2e-9, 200e-9)] {
            let w = 0.924e-9;
            let n = 20_000;
            let mean: f64 = (0..n)
                .map(|k| {
                    let x = center - 0.5 * w + (k as f64 + 0.5) * w / n as f64;
                    (-x.abs() / t).exp()
                })
                .sum::<f64>()
                / n as f64;
            let (v, d) = exp_average(center, w, t);
            assert!((v - mean).abs() < 1e-9, "{center} {t}");
            let h = t * 1e-6;
            let fd = (exp_average(center, w, t + h).0 - exp_average(center, w, t - h).0) / (2.0 * h);
            assert!((d - fd).abs() < 1e-6 * fd.abs().max(1e-3 / t), "{d} vs {fd}");
        }
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let hist = model_hist(0.8, 15e-9, 150e-9, 0.4, 50.0, BinModel::Average);
        let taus: Vec<f64> = (0..hist.len()).map(|i| hist.tau_ns(i) * 1e-9).collect();
        for bin_model in [BinModel::Center, BinModel::Average] {
            let p = G2Problem { taus: &taus, width: hist.bin_width_s(), y: &hist.g2, sigma: vec![1.0; taus.len()], bin_model, n: 5 };
            let theta = DVector::from_vec(vec![0.7, (18e-9f64).ln(), 1.9, -0.8, 0.02]);
            let (_, d) = p.evaluate(&theta);
            for k in 0..5 {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[k] += 1e-6;
                minus[k] -= 1e-6;
                let (fp, _) = p.evaluate(&plus);
                let (fm, _) = p.evaluate(&minus);
                for i in (0..taus.len()).step_by(37) {
                    let fd = (fp[i] - fm[i]) / 2e-6;
                    assert!((fd - d[(i, k)]).abs() < 1e-6, "param {k} bin {i}: {fd} vs {}", d[(i, k)]);
                }
            }
        }
    }

    #[test]
    fn noiseless_self_fit() {
        for bin_model in [BinModel::Center, BinModel::Average] {
            for weights in [WeightScheme::RawCounts, WeightScheme::ModelIrls] {
                for free_baseline in [false, true] {
                    let hist = model_hist(0.9, 20e-9, 200e-9, 0.5, 1e4, bin_model);
                    let opts = G2FitOptions { bin_model, weights, free_baseline, ..Default::default() };
                    let fit = fit_g2(&hist, &opts).unwrap();
                    let rel = |a: f64, b: f64| ((a - b) / b).abs();
                    assert!(rel(fit.p_f, 0.9) < 1e-6, "{fit:?}");
                    assert!(rel(fit.tau1, 20e-9) < 1e-6);
                    assert!(rel(fit.tau2, 200e-9) < 1e-6);
                    assert!(rel(fit.c, 0.5) < 1e-6);
                    assert!((fit.baseline - 1.0).abs() < 1e-6);
                    assert!(fit.bounds_active.is_empty());
                }
            }
        }
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let hist = model_hist(0.7, 10e-9, 120e-9, 0.3, 40.0, BinModel::Average);
        let fit = fit_g2(&hist, &G2FitOptions::default()).unwrap();
        let n = fit.covariance.len();
        let m = DMatrix::from_fn(n, n, |i, k| fit.covariance[i][k]);
        assert!((&m - m.transpose()).amax() <= 1e-12 * m.amax());
        let eig = m.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-12 * m.amax()));
    }

    #[test]
    fn joint_rescaling_leaves_parameters_unchanged() {
        let mut rng_state = 12345u64;
        let mut noise = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        let base = model_hist(0.8, 12e-9, 150e-9, 0.6, 200.0, BinModel::Average);
        let mut a = base.clone();
        for (c, g) in a.counts.iter_mut().zip(a.g2.iter_mut()) {
            let v = ((*c as f64) + 14.0 * noise()).round().max(0.0);
            *c = v as u64;
            *g = v / 200.0;
        }
        let mut b = a.clone();
        b.counts.iter_mut().for_each(|c| *c *= 3);
        b.norm_value = Some(600.0);
        let opts = G2FitOptions { weights: WeightScheme::RawCounts, ..Default::default() };
        let fa = fit_g2(&a, &opts).unwrap();
        let fb = fit_g2(&b, &opts).unwrap();
        for (x, y) in [(fa.p_f, fb.p_f), (fa.tau1, fb.tau1), (fa.tau2, fb.tau2), (fa.c, fb.c)] {
            assert!(((x - y) / x).abs() < 1e-6);
        }
    }

    #[test]
    fn two_level_data_puts_c_on_its_bound() {
        let hist = model_hist(0.95, 10e-9, 100e-9, 0.0, 1e4, BinModel::Average);
        let init = G2Init { p_f: 0.9, tau1: 8e-9, tau2: 80e-9, c: 0.1 };
        let fit = fit_g2(&hist, &G2FitOptions { init: Some(init), ..Default::default() }).unwrap();
        assert!(fit.c < 1e-6);
        assert!((fit.tau1 - 10e-9).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let mut hist = model_hist(0.9, 20e-9, 200e-9, 0.5, 1e4, BinModel::Average);
        let opts = G2FitOptions { tau_range_ns: Some(10.0), ..Default::default() };
        assert!(fit_g2(&hist, &opts).is_err());
        hist.norm_value = None;
        assert!(fit_g2(&hist, &G2FitOptions::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn residual_never_increases(p in 0.3f64..0.97, t1 in 3e-9f64..40e-9, ratio in 2.0f64..20.0, c in 0.05f64..2.0) {
            let hist = model_hist(p, t1, t1 * ratio, c, 30.0, BinModel::Average);
            let fit = fit_g2(&hist, &G2FitOptions { weights: WeightScheme::RawCounts, ..Default::default() }).unwrap();
            prop_assert!(fit.tau1 < fit.tau2);
            prop_assert!((0.0..=1.0).contains(&fit.g2_zero));
            let init = initial_guess(&hist).unwrap();
            let start = G2Fit { p_f: init.p_f, tau1: init.tau1, tau2: init.tau2, c: init.c, baseline: 1.0, ..fit.clone() };
            let norm = hist.norm_value.unwrap();
            let cost = |f: &G2Fit| -> f64 {
                (0..hist.len()).map(|i| {
                    let t = hist.tau_ns(i) * 1e-9;
                    let w = hist.bin_width_s();
                    let (e1, e2) = (exp_average(t, w, f.tau1).0, exp_average(t, w, f.tau2).0);
                    let m = f.baseline * (1.0 + f.p_f.powi(2) * (f.c * e2 - (1.0 + f.c) * e1));
                    ((hist.g2[i] - m) * norm).powi(2) / (hist.counts[i] as f64).max(1.0)
                }).sum()
            };
            prop_assert!(cost(&fit) <= cost(&start) * (1.0 + 1e-12));
            prop_assert!((fit.residual_norm.powi(2) - cost(&fit)).abs() <= 1e-8 * cost(&fit).max(1.0));
        }
    }
}
