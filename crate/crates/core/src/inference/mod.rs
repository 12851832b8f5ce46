//! Least-squares fits: the g² model, both saturation curves and the
//! low-power lifetime extrapolation.

mod g2fit;
mod lifetime;
pub mod lm;
mod saturation;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use g2fit::{fit_g2, initial_guess, BinModel, G2Fit, G2FitOptions, G2Init, G2Sigmas, WeightScheme};
pub use lifetime::{extrapolate_lifetime, LifetimeExtrapolation, LifetimeOptions, LifetimePoint};
pub use saturation::{fit_saturation_confocal, fit_saturation_fiber, saturation_model, SaturationFit};

/// Uniform JSON report for any of the fits. `covariance` rows and columns
/// follow the key order of `params`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    pub params: Map<String, Value>,
    pub sigmas: Map<String, Value>,
    pub covariance: Vec<Vec<f64>>,
    pub residual_norm: f64,
    pub n_points: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bounds_active: Vec<String>,
}

fn named(pairs: &[(&str, f64)]) -> Map<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), Value::from(*v))).collect()
}

impl From<&G2Fit> for FitReport {
    fn from(f: &G2Fit) -> Self {
        let mut params = vec![("p_f", f.p_f), ("tau1_s", f.tau1), ("tau2_s", f.tau2), ("c", f.c)];
        let mut sigmas = vec![("p_f", f.sigmas.p_f), ("tau1_s", f.sigmas.tau1), ("tau2_s", f.sigmas.tau2), ("c", f.sigmas.c)];
        if f.covariance.len() > 4 {
            params.push(("baseline", f.baseline));
            sigmas.push(("baseline", f.sigmas.baseline));
        }
        let mut params = named(&params);
        params.insert("g2_zero".into(), Value::from(f.g2_zero));
        let mut sigmas = named(&sigmas);
        sigmas.insert("g2_zero".into(), Value::from(f.sigmas.g2_zero));
        FitReport {
            model: "g2_three_level".into(),
            params,
            sigmas,
            covariance: f.covariance.clone(),
            residual_norm: f.residual_norm,
            n_points: f.n_points,
            converged: f.converged,
            bounds_active: f.bounds_active.clone(),
        }
    }
}

impl From<&SaturationFit> for FitReport {
    fn from(f: &SaturationFit) -> Self {
        let (model, params, sigmas) = if f.p_sat_fixed {
            (
                "saturation_fiber",
                named(&[("k_per_s", f.k), ("m_per_s_per_mw", f.m), ("p_sat_mw", f.p_sat)]),
                named(&[("k_per_s", f.sigma_k), ("m_per_s_per_mw", f.sigma_m), ("p_sat_mw", 0.0)]),
            )
        } else {
            (
                "saturation_confocal",
                named(&[("k_per_s", f.k), ("p_sat_mw", f.p_sat)]),
                named(&[("k_per_s", f.sigma_k), ("p_sat_mw", f.sigma_p_sat)]),
            )
        };
        FitReport {
            model: model.into(),
            params,
            sigmas,
            covariance: f.covariance.clone(),
            residual_norm: f.residual_norm,
            n_points: f.n_points,
            converged: true,
            bounds_active: f.bounds_active.clone(),
        }
    }
}

impl From<&LifetimeExtrapolation> for FitReport {
    fn from(f: &LifetimeExtrapolation) -> Self {
        FitReport {
            model: "inverse_lifetime_linear".into(),
            params: named(&[("intercept_per_s", f.intercept), ("slope_per_s_per_mw", f.slope), ("tau_tot_s", f.tau_tot)]),
            sigmas: named(&[("intercept_per_s", f.sigma_intercept), ("slope_per_s_per_mw", f.sigma_slope), ("tau_tot_s", f.sigma_tau_tot)]),
            covariance: f.covariance.clone(),
            residual_norm: f.residual_norm,
            n_points: f.n_points,
            converged: true,
            bounds_active: Vec::new(),
        }
    }
}
