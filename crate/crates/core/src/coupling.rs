//! Emission of a point dipole into the guided HE₁₁ modes, and the resulting
//! coupling efficiency β = Γ_nf / (Γ_nf + Γ_free).
//!
//! Two independent routes give the guided rate: the effective-area route
//! `σ/(2A)` (a fresh cross-section integral per call) and a direct overlap
//! with the stored density-of-states normalization, which is what parameter
//! sweeps use. Orientations are given in the local `(r̂, φ̂, ẑ)` frame at the
//! dipole; [`local_from_cartesian`] converts lab-frame vectors.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiber_modes::{
    effective_mode_area_with, solve_he11_with, AreaProjection, Cylindrical, Direction, FiberSpec,
    ModeSolution, Polarization, QuadratureOptions, SolverOptions,
};

/// Radiative cross-section of a two-level dipole, `3λ²/2π`.
pub fn radiative_cross_section(wavelength: f64) -> f64 {
    3.0 * wavelength * wavelength / (2.0 * PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DipoleModel {
    /// Single linear dipole.
    Oriented { orientation: [f64; 3] },
    /// Two incoherent orthogonal dipoles in the plane perpendicular to the axis.
    TwoDipole { nv_axis: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleEmitter {
    pub position: Cylindrical,
    pub model: DipoleModel,
    /// Emission wavelength (m); must match the mode's.
    pub wavelength: f64,
    /// Free-space decay rate (1/s); only scales absolute rates.
    #[serde(default = "one")]
    pub gamma0: f64,
    /// Permit positions inside the core. The overlap is then weighted by
    /// `n²(r)` like the area definition, without local-field corrections.
    #[serde(default)]
    pub allow_inside: bool,
}

fn one() -> f64 {
    1.0
}

impl DipoleEmitter {
    pub fn oriented(position: Cylindrical, orientation: [f64; 3], wavelength: f64) -> Self {
        Self {
            position,
            model: DipoleModel::Oriented { orientation },
            wavelength,
            gamma0: 1.0,
            allow_inside: false,
        }
    }

    pub fn two_dipole(position: Cylindrical, nv_axis: [f64; 3], wavelength: f64) -> Self {
        Self { model: DipoleModel::TwoDipole { nv_axis }, ..Self::oriented(position, [1.0, 0.0, 0.0], wavelength) }
    }

    fn validate(&self, mode: &ModeSolution) -> Result<()> {
        let p = self.position;
        if !(p.r.is_finite() && p.phi.is_finite() && p.z.is_finite() && p.r >= 0.0) {
            return Err(Error::validation(format!("dipole position must be finite with r >= 0: {p:?}")));
        }
        if p.r < mode.spec.radius && !self.allow_inside {
            return Err(Error::validation(format!(
                "dipole at r = {} m lies inside the fiber (radius {} m)",
                p.r, mode.spec.radius
            )));
        }
        if (self.wavelength - mode.spec.wavelength).abs() > 1e-12 * mode.spec.wavelength {
            return Err(Error::validation(format!(
                "dipole wavelength {} m differs from mode wavelength {} m",
                self.wavelength, mode.spec.wavelength
            )));
        }
        if !(self.gamma0.is_finite() && self.gamma0 > 0.0) {
            return Err(Error::validation("gamma0 must be > 0"));
        }
        let v = match self.model {
            DipoleModel::Oriented { orientation } => orientation,
            DipoleModel::TwoDipole { nv_axis } => nv_axis,
        };
        check_unit(v)
    }
}

fn check_unit(v: [f64; 3]) -> Result<()> {
    let n = dot(v, v).sqrt();
    if !((n - 1.0).abs() <= 1e-12) {
        return Err(Error::validation(format!("orientation {v:?} is not unit-norm (|v| = {n})")));
    }
    Ok(())
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalized(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Lab-frame `(x, y, z)` vector expressed in `(r̂, φ̂, ẑ)` at azimuth `phi`.
pub fn local_from_cartesian(v: [f64; 3], phi: f64) -> [f64; 3] {
    let (s, c) = phi.sin_cos();
    [c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]]
}

/// How the degenerate HE₁₁ polarization pair is populated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolarizationChoice {
    /// Incoherent sum over both quasi-linear modes: total guided emission.
    #[default]
    Both,
    /// Only the quasi-linear mode whose orientation maximizes the rate.
    Aligned,
    /// Only the quasi-linear mode with this lab-frame axis angle (rad).
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CouplingOptions {
    pub polarization: PolarizationChoice,
    pub quadrature: QuadratureOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingResult {
    /// Γ_nf / Γ₀
    pub gamma_nf_rel: f64,
    /// Γ_free / Γ₀
    pub gamma_free_rel: f64,
    pub beta: f64,
    pub forward: f64,
    pub backward: f64,
}

impl CouplingResult {
    fn from_rates(gamma_nf_rel: f64, gamma_free_rel: f64) -> Self {
        Self {
            gamma_nf_rel,
            gamma_free_rel,
            beta: beta_from_rates(gamma_nf_rel, gamma_free_rel),
            forward: 0.5 * gamma_nf_rel,
            backward: 0.5 * gamma_nf_rel,
        }
    }

    /// Absolute `(Γ_nf, Γ_free)` in 1/s.
    pub fn absolute(&self, gamma0: f64) -> (f64, f64) {
        (self.gamma_nf_rel * gamma0, self.gamma_free_rel * gamma0)
    }
}

pub fn beta_from_rates(gamma_nf: f64, gamma_free: f64) -> f64 {
    if gamma_nf == 0.0 {
        0.0
    } else {
        gamma_nf / (gamma_nf + gamma_free)
    }
}

/// `f(φ₀) = a + b cos2φ₀ + c sin2φ₀` from samples at 0, π/4, π/2; returns
/// the maximizing angle.
fn best_angle(f: impl Fn(f64) -> f64) -> f64 {
    let (f0, f1, f2) = (f(0.0), f(FRAC_PI_4), f(FRAC_PI_2));
    let mean = 0.5 * (f0 + f2);
    let (b, c) = (0.5 * (f0 - f2), f1 - mean);
    0.5 * c.atan2(b)
}

fn polarization_angles(choice: PolarizationChoice, phi: f64, rate: impl Fn(f64) -> f64) -> Vec<f64> {
    match choice {
        PolarizationChoice::Both => vec![phi, phi + FRAC_PI_2],
        PolarizationChoice::Aligned => vec![best_angle(rate)],
        PolarizationChoice::Fixed(angle) => vec![angle],
    }
}

/// Per-direction guided rate of one quasi-linear mode by direct overlap,
/// `(3λ²/8π)·n²|û·E|²` with the stored normalization.
fn overlap_rate(mode: &ModeSolution, pos: Cylindrical, u: [f64; 3], phi0: f64, dir: Direction) -> f64 {
    let f = mode.field(pos, Polarization::QuasiLinear { phi0 }, dir);
    let lambda = mode.spec.wavelength;
    3.0 * lambda * lambda / (8.0 * PI) * mode.spec.index_at(pos.r).powi(2)
        * AreaProjection::Along(u).intensity(&f.e)
        / mode.norm.integral
}

/// `(forward, backward)` guided rates (units of Γ₀) of a single linear dipole
/// by direct field overlap.
pub fn directional_rates(
    mode: &ModeSolution,
    position: Cylindrical,
    orientation: [f64; 3],
    choice: PolarizationChoice,
) -> (f64, f64) {
    let both = |phi0| {
        overlap_rate(mode, position, orientation, phi0, Direction::Forward)
            + overlap_rate(mode, position, orientation, phi0, Direction::Backward)
    };
    polarization_angles(choice, position.phi, both).into_iter().fold((0.0, 0.0), |(f, b), phi0| {
        (
            f + overlap_rate(mode, position, orientation, phi0, Direction::Forward),
            b + overlap_rate(mode, position, orientation, phi0, Direction::Backward),
        )
    })
}

fn two_dipole_basis(axis: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let axis = normalized(axis);
    // any vector not parallel to the axis seeds the in-plane basis
    let seed = if axis[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let e1 = normalized(cross(axis, seed));
    let e2 = cross(axis, e1);
    (e1, e2)
}

fn rotated_pair(axis: [f64; 3], psi: f64) -> [[f64; 3]; 2] {
    let (e1, e2) = two_dipole_basis(axis);
    let (s, c) = psi.sin_cos();
    [
        [c * e1[0] + s * e2[0], c * e1[1] + s * e2[1], c * e1[2] + s * e2[2]],
        [-s * e1[0] + c * e2[0], -s * e1[1] + c * e2[1], -s * e1[2] + c * e2[2]],
    ]
}

/// Γ_nf/Γ₀ by the effective-area route: `σ/(2A_pol)` summed over the selected
/// polarization modes, each covering both propagation directions.
pub fn guided_emission_rate(mode: &ModeSolution, dipole: &DipoleEmitter) -> Result<f64> {
    guided_emission_rate_with(mode, dipole, &CouplingOptions::default())
}

pub fn guided_emission_rate_with(
    mode: &ModeSolution,
    dipole: &DipoleEmitter,
    opts: &CouplingOptions,
) -> Result<f64> {
    dipole.validate(mode)?;
    let sigma = radiative_cross_section(mode.spec.wavelength);
    let single = |u: [f64; 3], phi0: f64| -> Result<f64> {
        let area = effective_mode_area_with(
            mode,
            dipole.position,
            AreaProjection::Along(u),
            Polarization::QuasiLinear { phi0 },
            &opts.quadrature,
        );
        match area {
            Ok(area) => Ok(sigma / (2.0 * area)),
            // the projected field vanishes: no coupling to this mode
            Err(Error::Validation(_)) => Ok(0.0),
            Err(e) => Err(e),
        }
    };
    let for_orientation = |u: [f64; 3]| -> Result<f64> {
        let overlap = |phi0| {
            overlap_rate(mode, dipole.position, u, phi0, Direction::Forward)
                + overlap_rate(mode, dipole.position, u, phi0, Direction::Backward)
        };
        polarization_angles(opts.polarization, dipole.position.phi, overlap)
            .into_iter()
            .map(|phi0| single(u, phi0))
            .sum()
    };
    match dipole.model {
        DipoleModel::Oriented { orientation } => for_orientation(orientation),
        DipoleModel::TwoDipole { nv_axis } => {
            let [d1, d2] = rotated_pair(nv_axis, 0.0);
            Ok(0.5 * (for_orientation(d1)? + for_orientation(d2)?))
        }
    }
}

/// Full coupling result; `free_space_factor` is Γ_free/Γ₀.
pub fn beta_factor(mode: &ModeSolution, dipole: &DipoleEmitter, free_space_factor: f64) -> Result<CouplingResult> {
    beta_factor_with(mode, dipole, free_space_factor, &CouplingOptions::default())
}

pub fn beta_factor_with(
    mode: &ModeSolution,
    dipole: &DipoleEmitter,
    free_space_factor: f64,
    opts: &CouplingOptions,
) -> Result<CouplingResult> {
    if !(free_space_factor.is_finite() && free_space_factor > 0.0) {
        return Err(Error::validation(format!("free_space_factor must be > 0, got {free_space_factor}")));
    }
    let gamma = guided_emission_rate_with(mode, dipole, opts)?;
    Ok(CouplingResult::from_rates(gamma, free_space_factor))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NvBetaBounds {
    pub beta_low: f64,
    pub beta_high: f64,
    /// Rotation of the dipole pair about the axis at the two extremes (rad).
    pub psi_low: f64,
    pub psi_high: f64,
}

/// Two-dipole β over the rotation of the dipole pair about `nv_axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvSweep {
    pub free_space_factor: f64,
    pub polarization: PolarizationChoice,
    /// Samples of the pair rotation on `[0, π/2)`; the pair is symmetric under
    /// a quarter turn.
    pub samples: usize,
}

impl Default for NvSweep {
    fn default() -> Self {
        Self { free_space_factor: 1.0, polarization: PolarizationChoice::Both, samples: 90 }
    }
}

/// Γ_nf/Γ₀ averaged over two orthogonal dipoles perpendicular to `nv_axis`,
/// with the pair rotated by `psi`.
pub fn two_dipole_rate(
    mode: &ModeSolution,
    nv_axis: [f64; 3],
    position: Cylindrical,
    psi: f64,
    choice: PolarizationChoice,
) -> f64 {
    rotated_pair(nv_axis, psi)
        .iter()
        .map(|&d| {
            let (f, b) = directional_rates(mode, position, d, choice);
            0.5 * (f + b)
        })
        .sum()
}

pub fn nv_average_beta(
    mode: &ModeSolution,
    nv_axis: [f64; 3],
    position: Cylindrical,
    wavelength: f64,
    sweep: &NvSweep,
) -> Result<NvBetaBounds> {
    DipoleEmitter::two_dipole(position, nv_axis, wavelength).validate(mode)?;
    if sweep.samples == 0 || !(sweep.free_space_factor > 0.0) {
        return Err(Error::validation("NV sweep needs samples >= 1 and free_space_factor > 0"));
    }
    let betas: Vec<(f64, f64)> = (0..sweep.samples)
        .into_par_iter()
        .map(|k| {
            let psi = FRAC_PI_2 * k as f64 / sweep.samples as f64;
            let g = two_dipole_rate(mode, nv_axis, position, psi, sweep.polarization);
            (psi, beta_from_rates(g, sweep.free_space_factor))
        })
        .collect();
    let low = betas.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let high = betas.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    Ok(NvBetaBounds { beta_low: low.1, beta_high: high.1, psi_low: low.0, psi_high: high.0 })
}

/// β(λ) of a dipole held at fixed distance from the surface of a fused-silica
/// fiber; each wavelength gets its own mode solution. Output follows the input order.
pub fn beta_spectrum(
    radius: f64,
    model: DipoleModel,
    position: Cylindrical,
    wavelengths: &[f64],
    free_space_factor: f64,
    polarization: PolarizationChoice,
) -> Result<Vec<(f64, f64)>> {
    wavelengths
        .par_iter()
        .map(|&lambda| {
            let mode = solve_he11_with(FiberSpec::fused_silica(radius, lambda)?, &SolverOptions::default())?;
            let dipole = DipoleEmitter { model, ..DipoleEmitter::oriented(position, [1.0, 0.0, 0.0], lambda) };
            dipole.validate(&mode)?;
            if !(free_space_factor > 0.0) {
                return Err(Error::validation("free_space_factor must be > 0"));
            }
            let gamma = match model {
                DipoleModel::Oriented { orientation } => {
                    let (f, b) = directional_rates(&mode, position, orientation, polarization);
                    f + b
                }
                DipoleModel::TwoDipole { nv_axis } => two_dipole_rate(&mode, nv_axis, position, 0.0, polarization),
            };
            Ok((lambda, beta_from_rates(gamma, free_space_factor)))
        })
        .collect()
}

fn interpolate(curve: &[(f64, f64)], x: f64) -> f64 {
    let i = curve.partition_point(|p| p.0 < x);
    if i == 0 {
        return curve[0].1;
    }
    if i == curve.len() {
        return curve[curve.len() - 1].1;
    }
    let (x0, y0) = curve[i - 1];
    let (x1, y1) = curve[i];
    if x1 == x0 {
        y0
    } else {
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

fn strictly_increasing(points: &[(f64, f64)]) -> bool {
    points.windows(2).all(|w| w[1].0 > w[0].0)
}

/// Intensity-weighted mean `∫Sβ dλ / ∫S dλ` (trapezoid on the spectrum grid,
/// β linearly interpolated). Both inputs are `(λ, value)` with increasing λ
/// in the same unit, and the β curve must cover the spectrum.
pub fn spectral_average(beta_of_lambda: &[(f64, f64)], spectrum: &[(f64, f64)]) -> Result<f64> {
    if beta_of_lambda.is_empty() || !strictly_increasing(beta_of_lambda) {
        return Err(Error::validation("beta curve must be non-empty with increasing wavelength"));
    }
    if spectrum.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    if !strictly_increasing(spectrum) {
        return Err(Error::validation("spectrum wavelengths must be strictly increasing"));
    }
    if spectrum.iter().any(|p| !(p.1 >= 0.0 && p.1.is_finite())) {
        return Err(Error::validation("spectrum intensities must be finite and >= 0"));
    }
    let (lo, hi) = (beta_of_lambda[0].0, beta_of_lambda[beta_of_lambda.len() - 1].0);
    let span = (hi - lo).abs().max(lo.abs()) * 1e-12;
    let (s_lo, s_hi) = (spectrum[0].0, spectrum[spectrum.len() - 1].0);
    if s_lo < lo - span || s_hi > hi + span {
        return Err(Error::validation(format!(
            "beta curve [{lo}, {hi}] does not cover the spectrum [{s_lo}, {s_hi}]"
        )));
    }
    let (mut weighted, mut total) = (0.0, 0.0);
    if spectrum.len() == 1 {
        weighted = spectrum[0].1 * interpolate(beta_of_lambda, spectrum[0].0);
        total = spectrum[0].1;
    }
    for w in spectrum.windows(2) {
        let dl = w[1].0 - w[0].0;
        let b0 = interpolate(beta_of_lambda, w[0].0);
        let b1 = interpolate(beta_of_lambda, w[1].0);
        weighted += 0.5 * dl * (w[0].1 * b0 + w[1].1 * b1);
        total += 0.5 * dl * (w[0].1 + w[1].1);
    }
    if !(total > 0.0) {
        return Err(Error::EmptySpectrum);
    }
    Ok(weighted / total)
}

/// Spectrum CSV with header `lambda_nm,intensity`; returns `(λ in m, intensity)`.
pub fn read_spectrum_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    parse_spectrum_csv(&std::fs::read_to_string(path)?)
}

pub fn parse_spectrum_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut offset = 0u64;
    match lines.next() {
        Some((_, h)) if h.trim().replace(' ', "") == "lambda_nm,intensity" => offset += h.len() as u64 + 1,
        _ => return Err(Error::Format { offset: 0, message: "expected header `lambda_nm,intensity`".into() }),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let mut parts = line.split(',').map(str::trim);
        let parsed = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => a.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
            _ => None,
        };
        let Some((nm, intensity)) = parsed else {
            return Err(Error::Format { offset, message: format!("line {}: expected `lambda_nm,intensity`", n + 1) });
        };
        out.push((nm * 1e-9, intensity));
        offset += line.len() as u64 + 1;
    }
    if !strictly_increasing(&out) {
        return Err(Error::validation("spectrum wavelengths must be strictly increasing"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::TAU;
    use std::sync::OnceLock;

    use proptest::prelude::*;

    use super::*;
    use crate::fiber_modes::solve_he11;

    const RADIUS: f64 = 130e-9;
    const LAMBDA: f64 = 666e-9;
    const RADIAL: [f64; 3] = [1.0, 0.0, 0.0];
    const TANGENTIAL: [f64; 3] = [0.0, 1.0, 0.0];
    const AXIAL: [f64; 3] = [0.0, 0.0, 1.0];

    fn mode() -> &'static ModeSolution {
        static MODE: OnceLock<ModeSolution> = OnceLock::new();
        MODE.get_or_init(|| solve_he11(FiberSpec::fused_silica(RADIUS, LAMBDA).unwrap()).unwrap())
    }

    fn at(d: f64, phi: f64) -> Cylindrical {
        Cylindrical::new(RADIUS + d, phi, 0.0)
    }

    fn unit(v: [f64; 3]) -> [f64; 3] {
        normalized(v)
    }

    #[test]
    fn area_and_overlap_routes_agree() {
        for u in [RADIAL, TANGENTIAL, AXIAL, unit([1.0, 1.0, 0.0]), unit([0.3, -0.2, 0.9])] {
            for choice in [PolarizationChoice::Both, PolarizationChoice::Aligned, PolarizationChoice::Fixed(0.4)] {
                let dipole = DipoleEmitter::oriented(at(10e-9, 0.7), u, LAMBDA);
                let opts = CouplingOptions { polarization: choice, ..Default::default() };
                let area = guided_emission_rate_with(mode(), &dipole, &opts).unwrap();
                let (f, b) = directional_rates(mode(), dipole.position, u, choice);
                assert!(((f + b) - area).abs() <= 1e-10 * area, "{u:?} {choice:?}: {} vs {area}", f + b);
                assert!((f - b).abs() <= 1e-12 * area);
            }
        }
    }

    #[test]
    fn canonical_orientations_are_ordered() {
        let r = |u| beta_factor(mode(), &DipoleEmitter::oriented(at(10e-9, 0.0), u, LAMBDA), 1.0).unwrap();
        let (radial, tangential, axial) = (r(RADIAL), r(TANGENTIAL), r(AXIAL));
        assert!(radial.beta > tangential.beta && tangential.beta > axial.beta);
        for res in [radial, tangential, axial] {
            assert!((res.forward + res.backward - res.gamma_nf_rel).abs() <= 1e-12 * res.gamma_nf_rel);
            assert!((res.beta - res.gamma_nf_rel / (res.gamma_nf_rel + res.gamma_free_rel)).abs() < 1e-15);
        }
    }

    #[test]
    fn aligned_polarization_is_the_best_single_mode() {
        let pos = at(20e-9, 1.1);
        let u = unit([0.5, 0.5, 0.7]);
        let (af, ab) = directional_rates(mode(), pos, u, PolarizationChoice::Aligned);
        for k in 0..90 {
            let (f, b) = directional_rates(mode(), pos, u, PolarizationChoice::Fixed(k as f64 * PI / 90.0));
            assert!(f + b <= (af + ab) * (1.0 + 1e-12));
        }
        // the pair sum equals any two orthogonal fixed angles
        let (bf, bb) = directional_rates(mode(), pos, u, PolarizationChoice::Both);
        let (f1, b1) = directional_rates(mode(), pos, u, PolarizationChoice::Fixed(0.3));
        let (f2, b2) = directional_rates(mode(), pos, u, PolarizationChoice::Fixed(0.3 + FRAC_PI_2));
        assert!(((bf + bb) - (f1 + b1 + f2 + b2)).abs() < 1e-12 * (bf + bb));
    }

    #[test]
    fn rate_vanishes_far_from_fiber() {
        let far = DipoleEmitter::oriented(at(15e-6, 0.0), RADIAL, LAMBDA);
        assert!(guided_emission_rate(mode(), &far).unwrap() < 1e-12);
    }

    #[test]
    fn beta_limits() {
        assert_eq!(beta_from_rates(0.0, 1.0), 0.0);
        assert!(beta_from_rates(0.3, 1e-12) > 1.0 - 1e-10);
        let d = DipoleEmitter::oriented(at(10e-9, 0.0), RADIAL, LAMBDA);
        let r = beta_factor(mode(), &d, 1e-9).unwrap();
        assert!(r.beta > 1.0 - 1e-8 && r.beta < 1.0);
        assert!(beta_factor(mode(), &d, 0.0).is_err());
    }

    #[test]
    fn invalid_dipoles_are_rejected() {
        let inside = DipoleEmitter::oriented(Cylindrical::new(0.5 * RADIUS, 0.0, 0.0), RADIAL, LAMBDA);
        assert!(guided_emission_rate(mode(), &inside).is_err());
        let allowed = DipoleEmitter { allow_inside: true, ..inside };
        assert!(guided_emission_rate(mode(), &allowed).unwrap() > 0.0);
        let not_unit = DipoleEmitter::oriented(at(10e-9, 0.0), [1.0, 1e-5, 0.0], LAMBDA);
        assert!(guided_emission_rate(mode(), &not_unit).is_err());
        let wrong_lambda = DipoleEmitter::oriented(at(10e-9, 0.0), RADIAL, 700e-9);
        assert!(guided_emission_rate(mode(), &wrong_lambda).is_err());
    }

    #[test]
    fn two_dipole_average_is_bounded_by_in_plane_extremes() {
        let pos = at(10e-9, 0.0);
        for axis in [AXIAL, RADIAL, unit([0.4, 0.1, 0.8])] {
            for choice in [PolarizationChoice::Both, PolarizationChoice::Aligned] {
                let sweep = NvSweep { polarization: choice, ..Default::default() };
                let bounds = nv_average_beta(mode(), axis, pos, LAMBDA, &sweep).unwrap();
                let (e1, e2) = two_dipole_basis(axis);
                let single: Vec<f64> = (0..360)
                    .map(|k| {
                        let t = k as f64 * PI / 180.0;
                        let d = [0, 1, 2].map(|i| t.cos() * e1[i] + t.sin() * e2[i]);
                        let (f, b) = directional_rates(mode(), pos, d, choice);
                        beta_from_rates(f + b, 1.0)
                    })
                    .collect();
                let lo = single.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = single.iter().copied().fold(0.0, f64::max);
                assert!(bounds.beta_low >= lo - 1e-12 && bounds.beta_high <= hi + 1e-12);
                assert!(bounds.beta_low <= bounds.beta_high);
            }
        }
    }

    #[test]
    fn radial_axis_pair_is_rotation_invariant() {
        let bounds = nv_average_beta(mode(), RADIAL, at(10e-9, 0.3), LAMBDA, &NvSweep::default()).unwrap();
        assert!(bounds.beta_high - bounds.beta_low < 1e-10);
    }

    #[test]
    fn two_dipole_rate_matches_area_route() {
        let d = DipoleEmitter::two_dipole(at(10e-9, 0.0), AXIAL, LAMBDA);
        let area = guided_emission_rate(mode(), &d).unwrap();
        let direct = two_dipole_rate(mode(), AXIAL, d.position, 0.0, PolarizationChoice::Both);
        assert!((area - direct).abs() < 1e-10 * area);
    }

    #[test]
    fn rate_decreases_with_distance() {
        // the azimuthal field component peaks a few nm outside the surface, so
        // the tangential dipole is monotone only beyond that hump
        for (u, start) in [(RADIAL, 0), (AXIAL, 0), (TANGENTIAL, 10)] {
            let mut last = f64::INFINITY;
            for k in (start..=300).step_by(10) {
                let (f, b) = directional_rates(mode(), at(k as f64 * 1e-9, 0.0), u, PolarizationChoice::Both);
                assert!(f + b < last, "{u:?} at {k} nm: {} vs {last}", f + b);
                last = f + b;
            }
        }
    }

    #[test]
    fn tangential_rate_near_surface_matches_reference() {
        // independent scipy evaluation of the same mode
        for (d, want) in [(0.0, 0.16136530014081765), (5e-9, 0.162151133155909), (20e-9, 0.15985228599711282)] {
            let (f, b) = directional_rates(mode(), at(d, 0.0), TANGENTIAL, PolarizationChoice::Both);
            assert!(((f + b) - want).abs() < 1e-7 * want, "{d}: {}", f + b);
        }
    }

    #[test]
    fn spectral_average_cases() {
        let curve: Vec<(f64, f64)> = (0..=32).map(|k| (650.0 + k as f64, 0.3 - 0.001 * k as f64)).collect();
        // delta-like spectrum picks out one sample
        let delta = [(665.0, 0.0), (666.0, 1.0), (667.0, 0.0)];
        assert!((spectral_average(&curve, &delta).unwrap() - interpolate(&curve, 666.0)).abs() < 1e-15);
        // flat spectrum: plain trapezoid mean of a linear curve
        let flat: Vec<(f64, f64)> = curve.iter().map(|p| (p.0, 2.0)).collect();
        let mean = curve.iter().map(|p| p.1).sum::<f64>() / curve.len() as f64;
        assert!((spectral_average(&curve, &flat).unwrap() - mean).abs() < 1e-14);
        assert!(matches!(spectral_average(&curve, &[]), Err(Error::EmptySpectrum)));
        assert!(matches!(spectral_average(&curve, &[(660.0, 0.0), (661.0, 0.0)]), Err(Error::EmptySpectrum)));
        assert!(spectral_average(&curve, &[(600.0, 1.0), (700.0, 1.0)]).is_err());
    }

    #[test]
    fn spectrum_csv_round_trip() {
        let s = parse_spectrum_csv("lambda_nm,intensity\n650,0.5\n660, 1.0\n").unwrap();
        assert_eq!(s.len(), 2);
        assert!((s[1].0 - 660e-9).abs() < 1e-20);
        assert!(matches!(parse_spectrum_csv("wl,i\n1,2\n"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(parse_spectrum_csv("lambda_nm,intensity\n650,x\n"), Err(Error::Format { offset: 20, .. })));
        assert!(parse_spectrum_csv("lambda_nm,intensity\n660,1\n650,1\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn beta_is_scale_invariant(g in 1e-3f64..10.0, f in 1e-3f64..10.0, s in 1e-3f64..1e3) {
            let a = beta_from_rates(g, f);
            let b = beta_from_rates(g * s, f * s);
            prop_assert!((a - b).abs() < 1e-14);
            prop_assert!((0.0..1.0).contains(&a));
        }

        #[test]
        fn cylindrical_symmetry(phi in 0.0..TAU, rot in 0.0..TAU, th in 0.0..PI, az in 0.0..TAU) {
            let lab = [th.sin() * az.cos(), th.sin() * az.sin(), th.cos()];
            let rotated = [
                lab[0] * rot.cos() - lab[1] * rot.sin(),
                lab[0] * rot.sin() + lab[1] * rot.cos(),
                lab[2],
            ];
            let a = directional_rates(mode(), at(15e-9, phi), local_from_cartesian(lab, phi), PolarizationChoice::Both);
            let b = directional_rates(
                mode(),
                at(15e-9, phi + rot),
                local_from_cartesian(rotated, phi + rot),
                PolarizationChoice::Both,
            );
            prop_assert!(((a.0 + a.1) - (b.0 + b.1)).abs() < 1e-12 * (a.0 + a.1));
        }

        #[test]
        fn overlap_rate_is_direction_symmetric(th in 0.0..PI, az in 0.0..TAU, d in 0.0f64..200e-9) {
            let u = [th.sin() * az.cos(), th.sin() * az.sin(), th.cos()];
            let (f, b) = directional_rates(mode(), at(d, 0.2), u, PolarizationChoice::Both);
            prop_assert!((f - b).abs() <= 1e-12 * (f + b));
        }
    }
}
