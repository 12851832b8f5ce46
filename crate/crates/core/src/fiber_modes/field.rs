use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Cylindrical, ModeSolution, EPS0, MU0};
use crate::special::{j_set, k_scaled_set};

/// Complex vector in the local cylindrical basis `(r̂, φ̂, ẑ)`.
pub type CVec3 = [Complex64; 3];

const ZERO: CVec3 = [Complex64::new(0.0, 0.0); 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Polarization state within the degenerate HE₁₁ pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Polarization {
    /// Field ∝ exp(±iφ).
    Circular { plus: bool },
    /// `(E₊ e^{-iφ₀} + E₋ e^{iφ₀}) / √2`; the transverse field points along
    /// `φ₀` on the fiber axis.
    QuasiLinear { phi0: f64 },
}

impl Default for Polarization {
    fn default() -> Self {
        Polarization::QuasiLinear { phi0: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPoint {
    pub position: Cylindrical,
    pub e: CVec3,
    pub h: CVec3,
}

/// Forward-propagating quasi-linear mode polarized along `φ₀ = 0`.
pub fn mode_field(mode: &ModeSolution, position: Cylindrical) -> FieldPoint {
    evaluate(mode, position, Polarization::default(), Direction::Forward)
}

pub(super) fn evaluate(
    mode: &ModeSolution,
    pos: Cylindrical,
    pol: Polarization,
    dir: Direction,
) -> FieldPoint {
    let profile = RadialProfile::at(mode, pos.r, dir);
    let z_phase = Complex64::from_polar(1.0, dir.sign() * mode.prop_const * pos.z);
    let (e, h) = match pol {
        Polarization::Circular { plus } => {
            let l = if plus { 1.0 } else { -1.0 };
            let (e, h) = profile.circular(l);
            let ph = z_phase * Complex64::from_polar(1.0, l * pos.phi);
            (scale(e, ph), scale(h, ph))
        }
        Polarization::QuasiLinear { phi0 } => {
            let (ep, hp) = profile.circular(1.0);
            let (em, hm) = profile.circular(-1.0);
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let a = z_phase * Complex64::from_polar(s, pos.phi - phi0);
            let b = z_phase * Complex64::from_polar(s, -(pos.phi - phi0));
            (add(scale(ep, a), scale(em, b)), add(scale(hp, a), scale(hm, b)))
        }
    };
    FieldPoint { position: pos, e, h }
}

fn scale(v: CVec3, s: Complex64) -> CVec3 {
    [v[0] * s, v[1] * s, v[2] * s]
}

fn add(a: CVec3, b: CVec3) -> CVec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Bessel factors at one radius, shared by both circulations.
pub(super) struct RadialProfile {
    inside: bool,
    r: f64,
    beta: f64,
    omega: f64,
    eps: f64,
    /// h inside, q outside
    kt: f64,
    /// H_z/(i E_z) for l = +1 in this direction
    b: f64,
    /// E_z/l-independent radial factor: A J₁(hr) or A' K₁(qr)
    z1: f64,
    /// d/d(kt·r) of the same factor
    z1p: f64,
    /// z1 / r (finite on axis)
    z1_over_r: f64,
}

impl RadialProfile {
    pub(super) fn at(mode: &ModeSolution, r: f64, dir: Direction) -> Self {
        let c = &mode.coeffs;
        let spec = &mode.spec;
        let beta = dir.sign() * mode.prop_const;
        let b = dir.sign() * c.hz_ratio;
        let omega = spec.angular_frequency();
        if r < spec.radius {
            let x = c.h * r;
            let j = j_set(x);
            let z1_over_r = if x < 1e-8 { 0.5 * c.h } else { j[1] / r };
            RadialProfile {
                inside: true,
                r,
                beta,
                omega,
                eps: EPS0 * spec.n_core.powi(2),
                kt: c.h,
                b,
                z1: c.amplitude * j[1],
                z1p: c.amplitude * 0.5 * (j[0] - j[2]),
                z1_over_r: c.amplitude * z1_over_r,
            }
        } else {
            // A' K₁(qr) = A J₁(u) K₁(qr)/K₁(w), evaluated with scaled K to avoid underflow
            let x = c.q * r;
            let k = k_scaled_set(x);
            let k1w = crate::special::bessel_k_scaled(1, c.w);
            let outer = c.amplitude * crate::special::bessel_j(1, c.u) / k1w * (-(x - c.w)).exp();
            RadialProfile {
                inside: false,
                r,
                beta,
                omega,
                eps: EPS0 * spec.n_clad.powi(2),
                kt: c.q,
                b,
                z1: outer * k[1],
                z1p: -outer * 0.5 * (k[0] + k[2]),
                z1_over_r: outer * k[1] / r,
            }
        }
    }

    /// Cylindrical components of E and H for circulation `l = ±1`, without the
    /// `exp(i(lφ + βz))` phase.
    pub(super) fn circular(&self, l: f64) -> (CVec3, CVec3) {
        if !self.z1.is_finite() || (self.z1 == 0.0 && self.z1p == 0.0 && self.r > 0.0) {
            return (ZERO, ZERO);
        }
        let i = Complex64::i();
        let (beta, wmu, weps, kt) = (self.beta, self.omega * MU0, self.omega * self.eps, self.kt);
        let b = l * self.b;
        let (z1, z1p, zr) = (self.z1, self.z1p, self.z1_over_r);
        // κ² = +h² inside, −q² outside
        let inv = if self.inside { 1.0 / (kt * kt) } else { -1.0 / (kt * kt) };
        let er = i * inv * (beta * kt * z1p - wmu * l * b * zr);
        let ephi = Complex64::new(-inv * (beta * l * zr - wmu * kt * b * z1p), 0.0);
        let ez = Complex64::new(z1, 0.0);
        let hr = Complex64::new(-inv * (beta * kt * b * z1p - weps * l * zr), 0.0);
        let hphi = i * inv * (-beta * l * b * zr + weps * kt * z1p);
        let hz = i * b * z1;
        ([er, ephi, ez], [hr, hphi, hz])
    }
}
