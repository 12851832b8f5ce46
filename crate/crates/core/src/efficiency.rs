//! From fitted saturation count rates to decay rates, the fiber coupling
//! efficiency β and the quantum efficiency, with error propagation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emitter::derive_seed;
use crate::error::{Error, Result};

/// Fraction of an isotropic emitter's light inside a cone of numerical
/// aperture `na`.
pub fn collection_fraction(na: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&na) {
        return Err(Error::validation(format!("numerical aperture must lie in [0, 1], got {na}")));
    }
    Ok(0.5 * (1.0 - (1.0 - na * na).sqrt()))
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("{name} must lie in (0, 1], got {v}")))
    }
}

/// `C_free / (fraction · T_path · η)`.
pub fn free_space_rate(c_free: f64, fraction: f64, t_path: f64, eta: f64) -> Result<f64> {
    if !(c_free > 0.0 && c_free.is_finite()) {
        return Err(Error::validation(format!("confocal count rate must be > 0, got {c_free}")));
    }
    unit_interval("collection fraction", fraction)?;
    unit_interval("path transmission", t_path)?;
    unit_interval("detector efficiency", eta)?;
    Ok(c_free / (fraction * t_path * eta))
}

/// `C_nf / (η √T_ges)`: each fiber end sees `√T_ges` of the guided light and
/// `C_nf` sums both ends.
pub fn fiber_rate(c_nf: f64, t_ges: f64, eta: f64) -> Result<f64> {
    if !(c_nf >= 0.0 && c_nf.is_finite()) {
        return Err(Error::validation(format!("fiber count rate must be >= 0, got {c_nf}")));
    }
    unit_interval("fiber transmission", t_ges)?;
    unit_interval("detector efficiency", eta)?;
    Ok(c_nf / (eta * t_ges.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaBounds {
    pub beta_low: f64,
    pub beta_high: f64,
}

fn beta(gamma_nf: f64, gamma_free: f64) -> f64 {
    gamma_nf / (gamma_nf + gamma_free)
}

/// The low bound pairs with the high free-space rate and vice versa.
pub fn coupling_efficiency(gamma_nf: f64, gamma_free_low: f64, gamma_free_high: f64) -> Result<BetaBounds> {
    if !(gamma_nf >= 0.0 && gamma_free_low >= 0.0 && gamma_free_high >= gamma_free_low) {
        return Err(Error::validation(format!(
            "need rates >= 0 and free-space bounds low <= high, got {gamma_nf}, {gamma_free_low}, {gamma_free_high}"
        )));
    }
    if gamma_nf + gamma_free_low <= 0.0 {
        return Err(Error::validation("coupling efficiency undefined when all rates vanish"));
    }
    Ok(BetaBounds { beta_low: beta(gamma_nf, gamma_free_high), beta_high: beta(gamma_nf, gamma_free_low) })
}

/// `Γ_rad · τ_tot`; values above one are returned as is and flagged by the
/// report.
pub fn quantum_efficiency(gamma_rad: f64, tau_tot: f64) -> Result<f64> {
    if !(gamma_rad > 0.0 && tau_tot > 0.0) {
        return Err(Error::validation(format!("need radiative rate and lifetime > 0, got {gamma_rad}, {tau_tot}")));
    }
    Ok(gamma_rad * tau_tot)
}

/// Externally determined free-space rate bounds, used instead of the
/// geometric collection model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeSpaceBounds {
    pub low_per_s: f64,
    pub high_per_s: f64,
    #[serde(default)]
    pub sigma_low_per_s: f64,
    #[serde(default)]
    pub sigma_high_per_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencyInputs {
    /// Confocal saturation count rate.
    pub c_free_per_s: f64,
    #[serde(default)]
    pub sigma_c_free_per_s: f64,
    /// Fiber saturation count rate, summed over both ends.
    pub c_nf_per_s: f64,
    #[serde(default)]
    pub sigma_c_nf_per_s: f64,
    /// Effective numerical aperture of the confocal objective.
    pub na_eff: f64,
    #[serde(default)]
    pub sigma_na_eff: f64,
    /// Confocal transmission from focus to detectors.
    pub t_path: f64,
    #[serde(default)]
    pub sigma_t_path: f64,
    /// Overall transmission of the tapered fiber.
    pub t_ges: f64,
    #[serde(default)]
    pub sigma_t_ges: f64,
    /// Detector quantum efficiency.
    pub eta: f64,
    #[serde(default)]
    pub sigma_eta: f64,
    pub tau_tot_s: f64,
    #[serde(default)]
    pub sigma_tau_tot_s: f64,
    #[serde(default)]
    pub free_space_bounds: Option<FreeSpaceBounds>,
}

/// Inputs as a flat vector for propagation; the last two entries are the
/// injected bounds (zero when unused).
const N_IN: usize = 9;

impl EfficiencyInputs {
    pub fn validate(&self) -> Result<()> {
        let sig = [
            self.sigma_c_free_per_s,
            self.sigma_c_nf_per_s,
            self.sigma_na_eff,
            self.sigma_t_path,
            self.sigma_t_ges,
            self.sigma_eta,
            self.sigma_tau_tot_s,
        ];
        if sig.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::validation("uncertainties must be finite and >= 0"));
        }
        if !(self.tau_tot_s > 0.0) {
            return Err(Error::validation(format!("lifetime must be > 0, got {}", self.tau_tot_s)));
        }
        if let Some(b) = self.free_space_bounds {
            if !(b.low_per_s > 0.0 && b.high_per_s >= b.low_per_s && b.sigma_low_per_s >= 0.0 && b.sigma_high_per_s >= 0.0) {
                return Err(Error::validation("free-space bounds need 0 < low <= high and sigmas >= 0"));
            }
        }
        evaluate(&self.values(), self.free_space_bounds.is_some()).map(|_| ())
    }

    fn values(&self) -> [f64; N_IN] {
        let b = self.free_space_bounds;
        [
            self.c_free_per_s,
            self.c_nf_per_s,
            self.na_eff,
            self.t_path,
            self.t_ges,
            self.eta,
            self.tau_tot_s,
            b.map_or(0.0, |b| b.low_per_s),
            b.map_or(0.0, |b| b.high_per_s),
        ]
    }

    fn sigmas(&self) -> [f64; N_IN] {
        let b = self.free_space_bounds;
        [
            self.sigma_c_free_per_s,
            self.sigma_c_nf_per_s,
            self.sigma_na_eff,
            self.sigma_t_path,
            self.sigma_t_ges,
            self.sigma_eta,
            self.sigma_tau_tot_s,
            b.map_or(0.0, |b| b.sigma_low_per_s),
            b.map_or(0.0, |b| b.sigma_high_per_s),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeSpaceSource {
    /// Collection fraction of the objective's numerical aperture.
    Geometric,
    /// Supplied bounds.
    Injected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloCheck {
    pub draws: usize,
    pub seed: u64,
    /// Sample standard deviations in the order of `OUTPUT_NAMES`.
    pub sigmas: Vec<f64>,
    /// Largest relative difference to the first-order sigmas.
    pub max_rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub free_space_source: FreeSpaceSource,
    pub collection_fraction: f64,
    pub gamma_free_low_per_s: Estimate,
    pub gamma_free_high_per_s: Estimate,
    pub gamma_nf_per_s: Estimate,
    pub gamma_rad_low_per_s: Estimate,
    pub gamma_rad_high_per_s: Estimate,
    pub gamma_tot_per_s: Estimate,
    pub gamma_nrad_low_per_s: Estimate,
    pub gamma_nrad_high_per_s: Estimate,
    pub beta_low: Estimate,
    pub beta_high: Estimate,
    pub qe_low: Estimate,
    pub qe_high: Estimate,
    /// `qe_above_unity`, `negative_nonradiative_rate`.
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloCheck>,
}

pub const OUTPUT_NAMES: [&str; 12] = [
    "gamma_free_low_per_s",
    "gamma_free_high_per_s",
    "gamma_nf_per_s",
    "gamma_rad_low_per_s",
    "gamma_rad_high_per_s",
    "gamma_tot_per_s",
    "gamma_nrad_low_per_s",
    "gamma_nrad_high_per_s",
    "beta_low",
    "beta_high",
    "qe_low",
    "qe_high",
];

/// The whole chain as a function of the flat input vector.
fn evaluate(x: &[f64; N_IN], injected: bool) -> Result<[f64; 12]> {
    let [c_free, c_nf, na, t_path, t_ges, eta, tau_tot, inj_low, inj_high] = *x;
    let (free_low, free_high) = if injected {
        (inj_low, inj_high)
    } else {
        let g = free_space_rate(c_free, collection_fraction(na)?, t_path, eta)?;
        (g, g)
    };
    let nf = fiber_rate(c_nf, t_ges, eta)?;
    let b = coupling_efficiency(nf, free_low, free_high.max(free_low))?;
    let (rad_low, rad_high) = (nf + free_low, nf + free_high);
    let tot = 1.0 / tau_tot;
    Ok([
        free_low,
        free_high,
        nf,
        rad_low,
        rad_high,
        tot,
        tot - rad_high,
        tot - rad_low,
        b.beta_low,
        b.beta_high,
        quantum_efficiency(rad_low, tau_tot)?,
        quantum_efficiency(rad_high, tau_tot)?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloOptions {
    pub draws: usize,
    pub seed: u64,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self { draws: 100_000, seed: 0 }
    }
}

/// First-order (linearized, independent inputs) propagation through the whole
/// chain, optionally cross-checked by Monte Carlo.
pub fn propagate_errors(inputs: &EfficiencyInputs, monte_carlo: Option<MonteCarloOptions>) -> Result<EfficiencyReport> {
    inputs.validate()?;
    let injected = inputs.free_space_bounds.is_some();
    let x = inputs.values();
    let s = inputs.sigmas();
    let y = evaluate(&x, injected)?;
    let mut var = [0.0; 12];
    for i in 0..N_IN {
        if s[i] == 0.0 {
            continue;
        }
        // central difference; every output is smooth in every input
        let h = 1e-6 * x[i].abs().max(s[i]);
        let mut plus = x;
        let mut minus = x;
        plus[i] += h;
        minus[i] -= h;
        let (yp, ym) = match (evaluate(&plus, injected), evaluate(&minus, injected)) {
            (Ok(p), Ok(m)) => (p, m),
            // one-sided at the edge of the domain (e.g. NA = 1)
            (Ok(p), Err(_)) => (p, y),
            (Err(_), Ok(m)) => (y, m),
            (Err(e), Err(_)) => return Err(e),
        };
        let span = if evaluate(&plus, injected).is_ok() && evaluate(&minus, injected).is_ok() { 2.0 * h } else { h };
        for k in 0..12 {
            let d = (yp[k] - ym[k]) / span;
            var[k] += (d * s[i]).powi(2);
        }
    }
    let est = |k: usize| Estimate { value: y[k], sigma: var[k].sqrt() };
    let mut flags = Vec::new();
    if y[10] > 1.0 || y[11] > 1.0 {
        flags.push("qe_above_unity".to_string());
    }
    if y[6] < 0.0 || y[7] < 0.0 {
        flags.push("negative_nonradiative_rate".to_string());
    }
    let mc = match monte_carlo {
        Some(opts) => Some(monte_carlo_sigmas(&x, &s, injected, opts, &var)?),
        None => None,
    };
    Ok(EfficiencyReport {
        free_space_source: if injected { FreeSpaceSource::Injected } else { FreeSpaceSource::Geometric },
        collection_fraction: collection_fraction(inputs.na_eff)?,
        gamma_free_low_per_s: est(0),
        gamma_free_high_per_s: est(1),
        gamma_nf_per_s: est(2),
        gamma_rad_low_per_s: est(3),
        gamma_rad_high_per_s: est(4),
        gamma_tot_per_s: est(5),
        gamma_nrad_low_per_s: est(6),
        gamma_nrad_high_per_s: est(7),
        beta_low: est(8),
        beta_high: est(9),
        qe_low: est(10),
        qe_high: est(11),
        flags,
        monte_carlo: mc,
    })
}

const MC_CHUNK: usize = 4096;

/// Gaussian draws of every input; draws outside the physical domain are
/// redrawn. Chunks have their own seeds so the result does not depend on
/// the thread count.
fn monte_carlo_sigmas(
    x: &[f64; N_IN],
    s: &[f64; N_IN],
    injected: bool,
    opts: MonteCarloOptions,
    first_order_var: &[f64; 12],
) -> Result<MonteCarloCheck> {
    if opts.draws < 2 {
        return Err(Error::validation("Monte Carlo needs at least 2 draws"));
    }
    let chunks = opts.draws.div_ceil(MC_CHUNK);
    // per chunk: count, sums and sums of squares around the central value
    let y0 = evaluate(x, injected)?;
    let partial: Vec<(usize, [f64; 12], [f64; 12])> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = MC_CHUNK.min(opts.draws - c * MC_CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, c as u64));
            let mut sum = [0.0; 12];
            let mut sq = [0.0; 12];
            let mut done = 0;
            let mut attempts = 0;
            while done < n {
                attempts += 1;
                if attempts > 100 * n {
                    break;
                }
                let mut draw = *x;
                for i in 0..N_IN {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    draw[i] += s[i] * z;
                }
                if injected && draw[8] < draw[7] {
                    continue;
                }
                let Ok(y) = evaluate(&draw, injected) else { continue };
                for k in 0..12 {
                    let d = y[k] - y0[k];
                    sum[k] += d;
                    sq[k] += d * d;
                }
                done += 1;
            }
            (done, sum, sq)
        })
        .collect();
    let n: usize = partial.iter().map(|p| p.0).sum();
    if n < 2 {
        return Err(Error::validation("Monte Carlo draws fell outside the input domain"));
    }
    let mut sigmas = vec![0.0; 12];
    for (k, sigma) in sigmas.iter_mut().enumerate() {
        let sum: f64 = partial.iter().map(|p| p.1[k]).sum();
        let sq: f64 = partial.iter().map(|p| p.2[k]).sum();
        let mean = sum / n as f64;
        *sigma = ((sq - n as f64 * mean * mean) / (n - 1) as f64).max(0.0).sqrt();
    }
    let max_rel_diff = sigmas
        .iter()
        .zip(first_order_var)
        .filter(|(_, v)| **v > 0.0)
        .map(|(m, v)| (m - v.sqrt()).abs() / v.sqrt())
        .fold(0.0, f64::max);
    Ok(MonteCarloCheck { draws: n, seed: opts.seed, sigmas, max_rel_diff })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inputs() -> EfficiencyInputs {
        EfficiencyInputs {
            c_free_per_s: 7.70e3,
            sigma_c_free_per_s: 0.0,
            c_nf_per_s: 19.6e3,
            sigma_c_nf_per_s: 0.0,
            na_eff: 0.32,
            sigma_na_eff: 0.01,
            t_path: 0.257,
            sigma_t_path: 0.0,
            t_ges: 0.0241,
            sigma_t_ges: 0.0003,
            eta: 0.65,
            sigma_eta: 0.0,
            tau_tot_s: 63e-9,
            sigma_tau_tot_s: 9e-9,
            free_space_bounds: None,
        }
    }

    fn injected() -> EfficiencyInputs {
        EfficiencyInputs {
            free_space_bounds: Some(FreeSpaceBounds { low_per_s: 1.7e6, high_per_s: 1.8e6, sigma_low_per_s: 0.1e6, sigma_high_per_s: 0.1e6 }),
            ..inputs()
        }
    }

    #[test]
    fn collection_fraction_values() {
        assert_eq!(collection_fraction(0.0).unwrap(), 0.0);
        assert_eq!(collection_fraction(1.0).unwrap(), 0.5);
        // (1 − √(1 − 0.1024))/2
        assert!((collection_fraction(0.32).unwrap() - 0.026_291_228_707).abs() < 1e-12);
        assert!(collection_fraction(1.1).is_err());
    }

    #[test]
    fn free_space_rate_values() {
        assert_eq!(free_space_rate(7.7e3, 1.0, 1.0, 1.0).unwrap(), 7.7e3);
        let g = free_space_rate(7.70e3, collection_fraction(0.32).unwrap(), 0.257, 0.65).unwrap();
        assert!((1.7e6..=1.8e6).contains(&g), "{g}");
        let half = free_space_rate(7.70e3, 0.02629, 0.257 / 2.0, 0.65).unwrap();
        assert!((half / free_space_rate(7.70e3, 0.02629, 0.257, 0.65).unwrap() - 2.0).abs() < 1e-12);
        assert!(free_space_rate(7.7e3, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn fiber_rate_values() {
        let g = fiber_rate(19.6e3, 0.0241, 0.65).unwrap();
        assert!((g / 1.942e5 - 1.0).abs() < 5e-4, "{g}");
        assert_eq!(fiber_rate(19.6e3, 1.0, 1.0).unwrap(), 19.6e3);
        let r = fiber_rate(19.6e3, 0.4, 0.65).unwrap() / fiber_rate(19.6e3, 0.1, 0.65).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
        // inverting the formula recovers the count rate
        let back = g * 0.65 * 0.0241f64.sqrt();
        assert!((back / 19.6e3 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coupling_efficiency_pairing_and_limits() {
        let b = coupling_efficiency(1.94e5, 1.7e6, 1.8e6).unwrap();
        assert!((b.beta_low - 0.0973).abs() < 5e-4 && (b.beta_high - 0.1024).abs() < 5e-4, "{b:?}");
        assert_eq!(coupling_efficiency(1.0, 0.0, 0.0).unwrap().beta_low, 1.0);
        assert_eq!(coupling_efficiency(0.0, 1.0, 2.0).unwrap().beta_high, 0.0);
        assert!(coupling_efficiency(1.0, 2.0, 1.0).is_err());
        assert!(coupling_efficiency(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn quantum_efficiency_values() {
        assert!((quantum_efficiency(1.894e6, 63e-9).unwrap() - 0.1193).abs() < 5e-4);
        assert!((quantum_efficiency(1.994e6, 63e-9).unwrap() - 0.1256).abs() < 5e-4);
        assert!((quantum_efficiency(1.0 / 63e-9, 63e-9).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn injected_bounds_reproduce_reference_chain() {
        let r = propagate_errors(&injected(), None).unwrap();
        assert_eq!(r.free_space_source, FreeSpaceSource::Injected);
        assert!((r.gamma_nf_per_s.value / 1.94e5 - 1.0).abs() < 0.01);
        assert!((r.beta_low.value - 0.095).abs() < 0.003 && (r.beta_high.value - 0.104).abs() < 0.003);
        assert!((r.beta_low.sigma - 0.006).abs() < 0.002 && (r.beta_high.sigma - 0.007).abs() < 0.002, "{r:?}");
        assert!((r.qe_low.value - 0.118).abs() < 0.015 && (r.qe_high.value - 0.129).abs() < 0.015);
        assert!(r.flags.is_empty());
    }

    #[test]
    fn zero_sigmas_give_zero_sigmas() {
        let mut i = injected();
        i.sigma_na_eff = 0.0;
        i.sigma_t_ges = 0.0;
        i.sigma_tau_tot_s = 0.0;
        i.free_space_bounds = Some(FreeSpaceBounds { low_per_s: 1.7e6, high_per_s: 1.8e6, sigma_low_per_s: 0.0, sigma_high_per_s: 0.0 });
        let r = propagate_errors(&i, Some(MonteCarloOptions { draws: 1000, seed: 1 })).unwrap();
        for e in [r.beta_low, r.beta_high, r.qe_low, r.qe_high, r.gamma_nf_per_s] {
            assert_eq!(e.sigma, 0.0);
        }
        assert!(r.monte_carlo.unwrap().sigmas.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn first_order_matches_closed_form() {
        // β = n/(n+f) with n = C/(η√T): only T and f carry errors here
        let r = propagate_errors(&injected(), None).unwrap();
        let n = r.gamma_nf_per_s.value;
        let f = 1.8e6;
        let dn = n * 0.5 * 0.0003 / 0.0241;
        let db_dn = f / (n + f).powi(2);
        let db_df = -n / (n + f).powi(2);
        let expect = ((db_dn * dn).powi(2) + (db_df * 0.1e6).powi(2)).sqrt();
        assert!((r.beta_low.sigma / expect - 1.0).abs() < 1e-6);
        assert!((r.gamma_nf_per_s.sigma / dn - 1.0).abs() < 1e-6);
        // QE = (n + f)τ
        let q = (((n + 1.7e6) * 9e-9).powi(2) + (63e-9f64 * 0.1e6).powi(2) + (63e-9 * dn).powi(2)).sqrt();
        assert!((r.qe_low.sigma / q - 1.0).abs() < 1e-6);
    }

    #[test]
    fn monte_carlo_agrees_with_first_order() {
        for i in [inputs(), injected()] {
            let r = propagate_errors(&i, Some(MonteCarloOptions::default())).unwrap();
            let mc = r.monte_carlo.unwrap();
            assert_eq!(mc.draws, 100_000);
            assert!(mc.max_rel_diff < 0.15, "{mc:?}");
        }
    }

    #[test]
    fn monte_carlo_is_thread_count_independent() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| propagate_errors(&injected(), Some(MonteCarloOptions { draws: 20_000, seed: 9 })).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn flags_unphysical_results() {
        let mut i = injected();
        i.tau_tot_s = 1e-6;
        let r = propagate_errors(&i, None).unwrap();
        assert!(r.flags.contains(&"qe_above_unity".to_string()));
        assert!(r.flags.contains(&"negative_nonradiative_rate".to_string()));
    }

    #[test]
    fn geometric_route_gives_equal_bounds() {
        let r = propagate_errors(&inputs(), None).unwrap();
        assert_eq!(r.free_space_source, FreeSpaceSource::Geometric);
        assert_eq!(r.gamma_free_low_per_s, r.gamma_free_high_per_s);
        assert_eq!(r.beta_low, r.beta_high);
        assert!((r.gamma_free_low_per_s.value / 1.7532e6 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn serialized_keys_carry_units() {
        let v = serde_json::to_value(propagate_errors(&injected(), None).unwrap()).unwrap();
        assert!(v.get("gamma_nf_per_s").is_some() && v.get("beta_low").is_some());
        let text = serde_json::to_string(&injected()).unwrap();
        let back: EfficiencyInputs = serde_json::from_str(&text).unwrap();
        assert_eq!(back, injected());
        assert!(serde_json::from_str::<EfficiencyInputs>(&text.replace("\"eta\"", "\"etaa\"")).is_err());
    }

    proptest! {
        #[test]
        fn beta_scale_invariant_and_monotone(n in 1e2f64..1e7, f in 1e2f64..1e8, k in 1e-3f64..1e3) {
            prop_assert!((beta(n * k, f * k) - beta(n, f)).abs() < 1e-12);
            prop_assert!(beta(n * 1.01, f) > beta(n, f));
            prop_assert!(beta(n, f * 1.01) < beta(n, f));
        }

        #[test]
        fn bound_ordering(low in 1e5f64..1e7, extra in 0.0f64..1e7, n in 1e3f64..1e6, tau in 1e-9f64..1e-6) {
            let mut i = injected();
            i.free_space_bounds = Some(FreeSpaceBounds { low_per_s: low, high_per_s: low + extra, sigma_low_per_s: 0.0, sigma_high_per_s: 0.0 });
            i.c_nf_per_s = n;
            i.tau_tot_s = tau;
            let r = propagate_errors(&i, None).unwrap();
            prop_assert!(r.beta_low.value <= r.beta_high.value);
            prop_assert!(r.qe_low.value <= r.qe_high.value);
            prop_assert!((0.0..=1.0).contains(&r.beta_low.value));
        }
    }
}
