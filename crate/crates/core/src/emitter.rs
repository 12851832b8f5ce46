//! Three-level rate model (ground 1, excited 2, shelving 3) with cw pumping.
//!
//! `g²(τ) = ρ₂(τ | ground at 0) / ρ₂(∞) = 1 − (1+c)e^{−τ/τ₁} + c e^{−τ/τ₂}`
//! where τ₁ is the antibunching and τ₂ the bunching timescale.
//!
//! The simulator is exact but aggregated: between two detected photons the
//! number of undetected excitation cycles is geometric, the number of those
//! that went through the shelving state is binomial, and the elapsed time is a
//! sum of Gamma variates. This costs O(detected photons) regardless of how many
//! cycles are lost, and has the same law as stepping every jump.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Gamma, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timetag::{TagSet, TimeTagStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelRates {
    /// Pump 1→2 (1/s).
    pub k12: f64,
    /// Decay 2→1 (1/s).
    pub k21: f64,
    /// Shelving 2→3 (1/s).
    pub k23: f64,
    /// Deshelving 3→1 (1/s).
    pub k31: f64,
    /// Radiative share of `k21`.
    pub radiative_fraction: f64,
}

impl ThreeLevelRates {
    pub fn validate(&self) -> Result<()> {
        let all = [self.k12, self.k21, self.k23, self.k31];
        if all.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(Error::validation(format!("rates must be finite and >= 0: {all:?}")));
        }
        if !(self.k21 > 0.0) {
            return Err(Error::validation("k21 must be > 0"));
        }
        // a metastable state that never empties has no steady state
        if !(self.k31 > 0.0) {
            return Err(Error::validation("k31 must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.radiative_fraction) {
            return Err(Error::validation("radiative_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Total decay rate of the excited state, `k21 + k23`.
    pub fn excited_decay(&self) -> f64 {
        self.k21 + self.k23
    }

    /// `dρ/dt = M ρ` for `ρ = (ρ₁, ρ₂, ρ₃)`.
    pub fn rate_matrix(&self) -> Matrix3<f64> {
        let m = Matrix3::new(
            -self.k12, self.k21, self.k31,
            self.k12, -(self.k21 + self.k23), 0.0,
            0.0, self.k23, -self.k31,
        );
        debug_assert!(m.row_sum().iter().all(|s| s.abs() <= 1e-9 * m.abs().max()));
        m
    }

    /// Steady-state populations.
    pub fn steady_state(&self) -> [f64; 3] {
        let shelf = self.k23 / self.k31;
        let rho2 = self.k12 / (self.k12 * (1.0 + shelf) + self.k21 + self.k23);
        let rho3 = shelf * rho2;
        [1.0 - rho2 - rho3, rho2, rho3]
    }

    /// Emitted photons per second.
    pub fn emission_rate(&self) -> f64 {
        self.radiative_fraction * self.k21 * self.steady_state()[1]
    }

    /// Sum and product of the two nonzero eigenvalue magnitudes.
    fn characteristic(&self) -> (f64, f64) {
        let s = self.k12 + self.k21 + self.k23 + self.k31;
        let p = self.k12 * (self.k23 + self.k31) + (self.k21 + self.k23) * self.k31;
        (s, p)
    }
}

/// Shape of the pure-emitter g² curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticG2 {
    /// Antibunching timescale (s).
    pub tau1: f64,
    /// Bunching timescale (s).
    pub tau2: f64,
    /// Bunching amplitude.
    pub c: f64,
    /// Set when the eigenvalues coincide; the curve is then
    /// `1 − (1 − slope·τ)e^{−τ/τ₁}` and `c` is not meaningful.
    pub degenerate_slope: Option<f64>,
}

impl AnalyticG2 {
    pub fn eval(&self, tau: f64) -> f64 {
        let t = tau.abs();
        match self.degenerate_slope {
            Some(slope) => 1.0 - (1.0 - slope * t) * (-t / self.tau1).exp(),
            None => 1.0 - (1.0 + self.c) * (-t / self.tau1).exp() + self.c * (-t / self.tau2).exp(),
        }
    }

    /// Curve with uncorrelated background: `1 + p_f²(g²_pure − 1)`.
    pub fn eval_mixed(&self, tau: f64, signal_fraction: f64) -> f64 {
        1.0 + signal_fraction.powi(2) * (self.eval(tau) - 1.0)
    }
}

/// Relative eigenvalue gap below which the limit branch is used.
const DEGENERATE_GAP: f64 = 1e-9;

pub fn analytic_g2(rates: &ThreeLevelRates) -> Result<AnalyticG2> {
    rates.validate()?;
    if !(rates.k12 > 0.0) {
        return Err(Error::validation("g2 needs a nonzero pump rate"));
    }
    let (s, p) = rates.characteristic();
    let disc = s * s - 4.0 * p;
    if disc < -DEGENERATE_GAP * s * s {
        return Err(Error::OscillatoryDynamics);
    }
    let rho = rates.steady_state()[1];
    let root = disc.max(0.0).sqrt();
    if root <= DEGENERATE_GAP.sqrt() * s {
        let lambda = -0.5 * s;
        return Ok(AnalyticG2 {
            tau1: -1.0 / lambda,
            tau2: -1.0 / lambda,
            c: 0.0,
            degenerate_slope: Some((rates.k12 + lambda * rho) / rho),
        });
    }
    // λ_fast is the more negative root; the product form avoids cancellation
    let fast = -0.5 * (s + root);
    let slow = p / fast;
    // ρ₂(0) = 0 and ρ₂'(0) = k12 fix the two amplitudes
    let a_fast = (rates.k12 + slow * rho) / (fast - slow);
    let a_slow = -rho - a_fast;
    Ok(AnalyticG2 { tau1: -1.0 / fast, tau2: -1.0 / slow, c: a_slow / rho, degenerate_slope: None })
}

/// One detector channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionChannel {
    /// Probability that an emitted photon is registered here.
    pub det_eff: f64,
    /// Dark counts (1/s).
    pub dark_rate: f64,
    /// Pump-proportional background (counts/s per mW).
    pub bg_coeff: f64,
}

impl DetectionChannel {
    pub fn background_rate(&self, power_mw: f64) -> f64 {
        self.dark_rate + self.bg_coeff * power_mw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionModel {
    pub k21: f64,
    pub k23: f64,
    pub k31: f64,
    pub radiative_fraction: f64,
    /// `k12 = pump_coeff · P` (1/s per mW).
    pub pump_coeff: f64,
    pub channels: Vec<DetectionChannel>,
    #[serde(default = "default_resolution")]
    pub resolution_ps: u64,
}

fn default_resolution() -> u64 {
    77
}

impl EmissionModel {
    pub fn validate(&self) -> Result<()> {
        self.rates_at_unchecked(0.0).validate()?;
        if !(self.pump_coeff.is_finite() && self.pump_coeff >= 0.0) {
            return Err(Error::validation("pump_coeff must be >= 0"));
        }
        if self.channels.is_empty() || self.channels.len() > 256 {
            return Err(Error::validation("need 1..=256 detection channels"));
        }
        for (i, ch) in self.channels.iter().enumerate() {
            if !(0.0..=1.0).contains(&ch.det_eff) {
                return Err(Error::validation(format!("channel {i}: det_eff must lie in [0, 1]")));
            }
            if !(ch.dark_rate >= 0.0 && ch.bg_coeff >= 0.0 && ch.dark_rate.is_finite() && ch.bg_coeff.is_finite()) {
                return Err(Error::validation(format!("channel {i}: dark_rate and bg_coeff must be >= 0")));
            }
        }
        if self.total_det_eff() > 1.0 + 1e-12 {
            return Err(Error::validation("detection efficiencies sum above 1"));
        }
        if self.resolution_ps == 0 {
            return Err(Error::validation("resolution must be > 0 ps"));
        }
        Ok(())
    }

    fn rates_at_unchecked(&self, power_mw: f64) -> ThreeLevelRates {
        ThreeLevelRates {
            k12: self.pump_coeff * power_mw,
            k21: self.k21,
            k23: self.k23,
            k31: self.k31,
            radiative_fraction: self.radiative_fraction,
        }
    }

    pub fn total_det_eff(&self) -> f64 {
        self.channels.iter().map(|c| c.det_eff).sum()
    }

    /// Saturation power of the emission rate, `(k21+k23) / (σ_P (1 + k23/k31))`.
    pub fn saturation_power(&self) -> f64 {
        (self.k21 + self.k23) / (self.pump_coeff * (1.0 + self.k23 / self.k31))
    }
}

/// Pump coefficient that puts the emission-rate saturation at `p_sat` (mW).
pub fn pump_coeff_for_saturation(k21: f64, k23: f64, k31: f64, p_sat: f64) -> f64 {
    (k21 + k23) / (p_sat * (1.0 + k23 / k31))
}

pub fn rates_from_power(model: &EmissionModel, power_mw: f64) -> Result<ThreeLevelRates> {
    if !(power_mw.is_finite() && power_mw >= 0.0) {
        return Err(Error::validation(format!("power must be >= 0 mW, got {power_mw}")));
    }
    let r = model.rates_at_unchecked(power_mw);
    r.validate()?;
    Ok(r)
}

/// Mean detected counts/s on one channel, signal plus background.
pub fn steady_state_rate(rates: &ThreeLevelRates, channel: &DetectionChannel, power_mw: f64) -> f64 {
    channel.det_eff * rates.emission_rate() + channel.background_rate(power_mw)
}

/// Expected signal fraction `S/(S+B)` of one channel.
pub fn signal_fraction(rates: &ThreeLevelRates, channel: &DetectionChannel, power_mw: f64) -> f64 {
    let s = channel.det_eff * rates.emission_rate();
    let total = s + channel.background_rate(power_mw);
    if total > 0.0 {
        s / total
    } else {
        0.0
    }
}

/// SplitMix64 step; decorrelates per-task seeds derived from one master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn seconds_to_ps(t: f64) -> u64 {
    (t * 1e12).floor() as u64
}

/// Detected signal photons as `(time s, channel)`, in time order.
fn emit_signal(rng: &mut ChaCha8Rng, rates: &ThreeLevelRates, channels: &[DetectionChannel], duration: f64) -> Vec<(f64, u8)> {
    let total_det: f64 = channels.iter().map(|c| c.det_eff).sum();
    let gamma = rates.excited_decay();
    let p_detect = rates.k21 / gamma * rates.radiative_fraction * total_det;
    if rates.k12 <= 0.0 || p_detect <= 0.0 {
        return Vec::new();
    }
    let p_shelf = rates.k23 / gamma / (1.0 - p_detect);
    let geometric = (p_detect < 1.0).then(|| Geometric::new(p_detect).expect("probability in (0,1)"));
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        let lost = geometric.as_ref().map_or(0, |g| g.sample(rng));
        let cycles = lost as f64 + 1.0;
        t += Gamma::new(cycles, 1.0 / rates.k12).unwrap().sample(rng);
        t += Gamma::new(cycles, 1.0 / gamma).unwrap().sample(rng);
        if lost > 0 && p_shelf > 0.0 {
            let shelved = Binomial::new(lost, p_shelf.min(1.0)).unwrap().sample(rng);
            if shelved > 0 {
                t += Gamma::new(shelved as f64, 1.0 / rates.k31).unwrap().sample(rng);
            }
        }
        if t > duration {
            break;
        }
        let mut pick = rng.random::<f64>() * total_det;
        let mut ch = channels.len() - 1;
        for (i, c) in channels.iter().enumerate() {
            if pick < c.det_eff {
                ch = i;
                break;
            }
            pick -= c.det_eff;
        }
        out.push((t, ch as u8));
    }
    out
}

fn poisson_times(rng: &mut ChaCha8Rng, rate: f64, duration: f64) -> Vec<f64> {
    if rate <= 0.0 {
        return Vec::new();
    }
    let exp = Exp::new(rate).unwrap();
    let mut out = Vec::new();
    let mut t = exp.sample(rng);
    while t <= duration {
        out.push(t);
        t += exp.sample(rng);
    }
    out
}

/// Simulate all channels for `duration` seconds at pump power `power_mw`.
/// Tags are floored to the resolution grid; two events landing in the same
/// quantum of one channel register once.
pub fn simulate_time_tags(model: &EmissionModel, power_mw: f64, duration: f64, seed: u64) -> Result<TagSet> {
    model.validate()?;
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::validation(format!("duration must be > 0 s, got {duration}")));
    }
    let duration_ps = seconds_to_ps(duration);
    let rates = rates_from_power(model, power_mw)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_channel: Vec<Vec<u64>> = vec![Vec::new(); model.channels.len()];
    let res = model.resolution_ps;
    let quantize = |t: f64| (seconds_to_ps(t) / res * res).min(duration_ps / res * res);
    for (t, ch) in emit_signal(&mut rng, &rates, &model.channels, duration) {
        per_channel[ch as usize].push(quantize(t));
    }
    for (i, ch) in model.channels.iter().enumerate() {
        per_channel[i].extend(poisson_times(&mut rng, ch.background_rate(power_mw), duration).into_iter().map(quantize));
    }
    let streams = per_channel
        .into_iter()
        .enumerate()
        .map(|(i, mut tags)| {
            tags.sort_unstable();
            tags.dedup();
            TimeTagStream { channel: i as u8, tags }
        })
        .collect();
    Ok(TagSet { resolution_ps: res, duration_ps, streams })
}
