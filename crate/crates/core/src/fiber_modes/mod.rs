//! Fundamental HE₁₁ mode of a two-layer step-index cylinder.
//!
//! The solver works on the exact full-vector eigenvalue equation for azimuthal
//! order `l = 1`; fields are built from the longitudinal components
//! (`J₁` inside the core, `K₁` outside) so that every component is available in
//! closed form. Modes carry density-of-states normalization: the amplitude is
//! fixed so that `∫ n²(r) |E|² d²r = n_g`, which makes the guided emission
//! rate of a dipole `(3λ²/8π)·|û·E|²` per propagation direction.

mod area;
mod dispersion;
mod field;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use area::{
    effective_mode_area, effective_mode_area_with, geometric_mode_area, AreaProjection,
    QuadratureOptions,
};
pub use dispersion::{dispersion_residual, DispersionValue};
pub use field::{mode_field, CVec3, Direction, FieldPoint, Polarization};

#[cfg(test)]
use area::integrate_cross_section;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Vacuum permeability (H/m), pre-2019 exact value; the difference is irrelevant here.
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;
/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 1.0 / (MU0 * SPEED_OF_LIGHT * SPEED_OF_LIGHT);

/// Cylindrical coordinates `(r, φ, z)` in metres and radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cylindrical {
    pub r: f64,
    pub phi: f64,
    pub z: f64,
}

impl Cylindrical {
    pub fn new(r: f64, phi: f64, z: f64) -> Self {
        Self { r, phi, z }
    }
}

/// Refractive index of fused silica (three-term Sellmeier, Malitson 1965).
pub fn fused_silica_index(wavelength: f64) -> f64 {
    const B: [f64; 3] = [0.696_166_3, 0.407_942_6, 0.897_479_4];
    const C: [f64; 3] = [0.068_404_3, 0.116_241_4, 9.896_161];
    let l2 = (wavelength * 1e6).powi(2);
    let n2 = 1.0 + B.iter().zip(C).map(|(b, c)| b * l2 / (l2 - c * c)).sum::<f64>();
    n2.sqrt()
}

/// Geometry and materials of a vacuum- (or otherwise-) clad step-index fiber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberSpec {
    /// Core radius (m).
    pub radius: f64,
    /// Vacuum wavelength (m).
    pub wavelength: f64,
    pub n_core: f64,
    pub n_clad: f64,
}

impl FiberSpec {
    pub fn new(radius: f64, wavelength: f64, n_core: f64, n_clad: f64) -> Result<Self> {
        let spec = Self { radius, wavelength, n_core, n_clad };
        spec.validate()?;
        Ok(spec)
    }

    /// Fused-silica core in vacuum, index from the Sellmeier formula.
    pub fn fused_silica(radius: f64, wavelength: f64) -> Result<Self> {
        Self::new(radius, wavelength, fused_silica_index(wavelength), 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::validation(format!("fiber radius must be > 0, got {}", self.radius)));
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(Error::validation(format!(
                "wavelength must be > 0, got {}",
                self.wavelength
            )));
        }
        if !(self.n_clad >= 1.0 && self.n_core > self.n_clad && self.n_core.is_finite()) {
            return Err(Error::validation(format!(
                "indices must satisfy n_core > n_clad >= 1, got {} / {}",
                self.n_core, self.n_clad
            )));
        }
        Ok(())
    }

    /// Vacuum wavenumber (rad/m).
    pub fn k0(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength
    }

    pub fn angular_frequency(&self) -> f64 {
        SPEED_OF_LIGHT * self.k0()
    }

    /// Normalized frequency `V = k a √(n_core² − n_clad²)`.
    pub fn v_number(&self) -> f64 {
        self.k0() * self.radius * (self.n_core.powi(2) - self.n_clad.powi(2)).sqrt()
    }

    /// `V` below the first zero of `J₀`: only HE₁₁ is guided.
    pub fn is_single_mode(&self) -> bool {
        self.v_number() < 2.404_825_557_695_773
    }

    pub fn index_at(&self, r: f64) -> f64 {
        if r < self.radius {
            self.n_core
        } else {
            self.n_clad
        }
    }

    fn with_wavelength(&self, wavelength: f64) -> Self {
        Self { wavelength, ..*self }
    }
}

/// Root-finder settings for the eigenvalue equation.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Samples of the coarse bracketing scan over `(n_clad, n_core)`.
    pub scan_points: usize,
    /// Normalized residual above which a sign change is rejected as spurious.
    pub max_residual: f64,
    pub quadrature: QuadratureOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            scan_points: 10_000,
            max_residual: 1e-8,
            quadrature: QuadratureOptions::default(),
        }
    }
}

/// Bessel-expansion data for the field components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeCoefficients {
    /// Transverse wavenumber in the core (1/m).
    pub h: f64,
    /// Decay constant in the cladding (1/m).
    pub q: f64,
    /// `h·a`
    pub u: f64,
    /// `q·a`
    pub w: f64,
    /// `H_z/(i·E_z)` for the `l = +1`, forward mode (S).
    pub hz_ratio: f64,
    /// `E_z` amplitude in the core; the cladding amplitude is `amplitude·J₁(u)/K₁(w)`.
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalizationKind {
    /// `∫ n² |E|² d²r = n_g`.
    DensityOfStates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub kind: NormalizationKind,
    /// `(1/n_g) ∫ n² |E|² d²r` of the stored mode; 1 up to quadrature error.
    pub integral: f64,
}

/// A solved HE₁₁ mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSolution {
    pub spec: FiberSpec,
    pub n_eff: f64,
    /// Propagation constant β (rad/m).
    pub prop_const: f64,
    pub n_group: f64,
    pub coeffs: ModeCoefficients,
    pub norm: Normalization,
}

impl ModeSolution {
    /// 1/e decay length of the field amplitude outside the core (m).
    pub fn decay_length(&self) -> f64 {
        1.0 / self.coeffs.q
    }

    /// Field at `pos` for the given polarization state and direction.
    pub fn field(&self, pos: Cylindrical, pol: Polarization, dir: Direction) -> FieldPoint {
        field::evaluate(self, pos, pol, dir)
    }
}

/// Solve the HE₁₁ mode with default solver and quadrature settings.
pub fn solve_he11(spec: FiberSpec) -> Result<ModeSolution> {
    solve_he11_with(spec, &SolverOptions::default())
}

pub fn solve_he11_with(spec: FiberSpec, opts: &SolverOptions) -> Result<ModeSolution> {
    spec.validate()?;
    let n_eff = dispersion::find_fundamental(&spec, opts)?;
    let n_group = group_index(&spec, n_eff, opts)?;
    let mut mode = ModeSolution {
        spec,
        n_eff,
        prop_const: spec.k0() * n_eff,
        n_group,
        coeffs: dispersion::coefficients(&spec, n_eff),
        norm: Normalization { kind: NormalizationKind::DensityOfStates, integral: 1.0 },
    };
    // ∫ n²|E|² over the raw (unit-amplitude) quasi-linear mode
    let raw = area::energy_integral(&mode, Polarization::default(), &opts.quadrature)?;
    mode.coeffs.amplitude = (n_group / raw).sqrt();
    let check = area::energy_integral(&mode, Polarization::default(), &opts.quadrature)?;
    mode.norm.integral = check / n_group;
    Ok(mode)
}

/// `n_g = dβ/dk` at fixed material indices, central differences with one
/// Richardson step.
fn group_index(spec: &FiberSpec, n_eff: f64, opts: &SolverOptions) -> Result<f64> {
    let diff = |delta: f64| -> Result<f64> {
        let long = spec.with_wavelength(spec.wavelength * (1.0 + delta));
        let short = spec.with_wavelength(spec.wavelength * (1.0 - delta));
        let b_long = long.k0() * dispersion::refine_near(&long, n_eff, opts)?;
        let b_short = short.k0() * dispersion::refine_near(&short, n_eff, opts)?;
        Ok((b_short - b_long) / (short.k0() - long.k0()))
    };
    let coarse = diff(2e-4)?;
    let fine = diff(1e-4)?;
    Ok((4.0 * fine - coarse) / 3.0)
}
