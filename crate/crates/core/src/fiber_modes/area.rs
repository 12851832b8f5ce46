use serde::{Deserialize, Serialize};

use super::field::{evaluate, CVec3, Direction, Polarization};
use super::{Cylindrical, ModeSolution};
use crate::error::{Error, Result};
use crate::special::gauss_legendre;

/// Cross-section quadrature: composite Gauss–Legendre in `r` (separately on the
/// core and on a truncated cladding annulus), periodic trapezoid in `φ`.
/// Panels are doubled until two successive estimates agree to `rel_tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOptions {
    pub rel_tol: f64,
    pub order: usize,
    pub initial_panels: usize,
    /// Cladding is integrated out to `a + outer_decay_lengths / q`.
    pub outer_decay_lengths: f64,
    pub azimuth_points: usize,
    pub max_refinements: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-11,
            order: 12,
            initial_panels: 4,
            // |E|² ∝ e^{-2qr}: e^{-36} is below double precision
            outer_decay_lengths: 18.0,
            azimuth_points: 16,
            max_refinements: 10,
        }
    }
}

impl QuadratureOptions {
    fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || self.order < 2 || self.initial_panels == 0 {
            return Err(Error::validation("quadrature needs rel_tol > 0, order >= 2, panels >= 1"));
        }
        if !(self.outer_decay_lengths > 0.0) || self.azimuth_points < 4 {
            return Err(Error::validation(
                "quadrature needs outer_decay_lengths > 0 and at least 4 azimuth points",
            ));
        }
        Ok(())
    }
}

/// Which part of the field enters the effective area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AreaProjection {
    /// `|E|²`
    Total,
    /// `|û·E|²` for a real direction in the local `(r̂, φ̂, ẑ)` frame.
    Along([f64; 3]),
}

impl AreaProjection {
    pub(crate) fn intensity(&self, e: &CVec3) -> f64 {
        match self {
            AreaProjection::Total => e.iter().map(|c| c.norm_sqr()).sum(),
            AreaProjection::Along(u) => {
                let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
                let p = e[0] * u[0] + e[1] * u[1] + e[2] * u[2];
                p.norm_sqr() / (norm * norm)
            }
        }
    }
}

fn radial_pass(
    lo: f64,
    hi: f64,
    panels: usize,
    nodes: &[f64],
    weights: &[f64],
    phis: &[f64],
    f: &(impl Fn(f64, f64) -> f64 + ?Sized),
) -> f64 {
    let width = (hi - lo) / panels as f64;
    let dphi = 2.0 * std::f64::consts::PI / phis.len() as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * width;
        for (x, w) in nodes.iter().zip(weights) {
            let r = mid + 0.5 * width * x;
            let ring: f64 = phis.iter().map(|&phi| f(r, phi)).sum();
            total += w * 0.5 * width * r * ring * dphi;
        }
    }
    total
}

/// `∫∫ f(r, φ) r dr dφ` over the fiber cross-section and the evanescent tail.
pub(crate) fn integrate_cross_section(
    mode: &ModeSolution,
    opts: &QuadratureOptions,
    f: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    opts.validate()?;
    let a = mode.spec.radius;
    let outer = a + opts.outer_decay_lengths / mode.coeffs.q;
    let (nodes, weights) = gauss_legendre(opts.order);
    let phis: Vec<f64> = (0..opts.azimuth_points)
        .map(|k| 2.0 * std::f64::consts::PI * k as f64 / opts.azimuth_points as f64)
        .collect();
    let estimate = |panels: usize| {
        radial_pass(0.0, a, panels, &nodes, &weights, &phis, &f)
            + radial_pass(a, outer, 2 * panels, &nodes, &weights, &phis, &f)
    };
    let mut panels = opts.initial_panels;
    let mut prev = estimate(panels);
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_refinements {
        panels *= 2;
        let next = estimate(panels);
        change = (next - prev).abs() / next.abs().max(f64::MIN_POSITIVE);
        if change <= opts.rel_tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureNotConverged { last_change: change, tolerance: opts.rel_tol })
}

/// `∫ n²(r) |E|² d²r` for one polarization state.
pub(super) fn energy_integral(
    mode: &ModeSolution,
    pol: Polarization,
    opts: &QuadratureOptions,
) -> Result<f64> {
    integrate_cross_section(mode, opts, |r, phi| {
        let fp = evaluate(mode, Cylindrical::new(r, phi, 0.0), pol, Direction::Forward);
        mode.spec.index_at(r).powi(2) * AreaProjection::Total.intensity(&fp.e)
    })
}

/// Density-of-states effective mode area at `probe`, for the quasi-linear mode
/// polarized along the probe azimuth:
/// `∫ n²|E|² / (n_g · n²(probe) · |û·E(probe)|²)`.
///
/// With this definition the guided rate summed over both directions is
/// `σ/(2·area)` with `σ = 3λ²/2π`. The purely geometric ratio is `n_g` times
/// larger, see [`geometric_mode_area`].
pub fn effective_mode_area(
    mode: &ModeSolution,
    probe: Cylindrical,
    projection: AreaProjection,
) -> Result<f64> {
    effective_mode_area_with(
        mode,
        probe,
        projection,
        Polarization::QuasiLinear { phi0: probe.phi },
        &QuadratureOptions::default(),
    )
}

pub fn effective_mode_area_with(
    mode: &ModeSolution,
    probe: Cylindrical,
    projection: AreaProjection,
    pol: Polarization,
    opts: &QuadratureOptions,
) -> Result<f64> {
    if !(probe.r.is_finite() && probe.r >= 0.0) {
        return Err(Error::validation(format!("probe radius must be >= 0, got {}", probe.r)));
    }
    if let AreaProjection::Along(u) = projection {
        if !u.iter().all(|c| c.is_finite()) || u.iter().all(|c| *c == 0.0) {
            return Err(Error::validation("projection direction must be finite and non-zero"));
        }
    }
    let energy = energy_integral(mode, pol, opts)?;
    let local = evaluate(mode, probe, pol, Direction::Forward);
    let peak = mode.spec.index_at(probe.r).powi(2) * projection.intensity(&local.e);
    if !(peak > 0.0) {
        return Err(Error::validation("projected field vanishes at the probe point"));
    }
    Ok(energy / (mode.n_group * peak))
}

/// `∫ n²|E|² / (n²(probe)|û·E(probe)|²)`, the plain geometric area.
pub fn geometric_mode_area(
    mode: &ModeSolution,
    probe: Cylindrical,
    projection: AreaProjection,
) -> Result<f64> {
    Ok(mode.n_group * effective_mode_area(mode, probe, projection)?)
}
