use super::{FiberSpec, ModeCoefficients, SolverOptions, MU0};
use crate::error::{Error, Result};
use crate::special::{j_set, k_scaled_set};

/// Value of the HE/EH eigenvalue function at one trial index.
#[derive(Debug, Clone, Copy)]
pub struct DispersionValue {
    /// `(J + K)(n₁²J + n₂²K) − n_eff² (1/u² + 1/w²)²`
    pub value: f64,
    /// Magnitude of the largest term, for a scale-free residual.
    pub scale: f64,
}

impl DispersionValue {
    pub fn normalized(&self) -> f64 {
        self.value / self.scale
    }
}

struct Terms {
    u: f64,
    w: f64,
    /// J₁'(u) / (u J₁(u))
    jh: f64,
    /// K₁'(w) / (w K₁(w))
    kq: f64,
    /// 1/u² + 1/w²
    recip: f64,
}

fn terms(spec: &FiberSpec, n_eff: f64) -> Terms {
    let ka = spec.k0() * spec.radius;
    let u = ka * (spec.n_core.powi(2) - n_eff * n_eff).sqrt();
    let w = ka * (n_eff * n_eff - spec.n_clad.powi(2)).sqrt();
    let j = j_set(u);
    let k = k_scaled_set(w);
    let jh = 0.5 * (j[0] - j[2]) / (u * j[1]);
    let kq = -0.5 * (k[0] + k[2]) / (w * k[1]);
    Terms { u, w, jh, kq, recip: 1.0 / (u * u) + 1.0 / (w * w) }
}

/// Eigenvalue function for azimuthal order 1; zero at guided HE₁ₘ/EH₁ₘ indices.
pub fn dispersion_residual(spec: &FiberSpec, n_eff: f64) -> DispersionValue {
    let t = terms(spec, n_eff);
    let (n1s, n2s) = (spec.n_core.powi(2), spec.n_clad.powi(2));
    let lhs = (t.jh + t.kq) * (n1s * t.jh + n2s * t.kq);
    let rhs = (n_eff * t.recip).powi(2);
    DispersionValue { value: lhs - rhs, scale: lhs.abs() + rhs }
}

/// Bisection down to adjacent floating-point values.
fn bisect(spec: &FiberSpec, mut lo: f64, mut hi: f64) -> f64 {
    let mut f_lo = dispersion_residual(spec, lo).value;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = dispersion_residual(spec, mid).value;
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let r_lo = dispersion_residual(spec, lo).normalized().abs();
    let r_hi = dispersion_residual(spec, hi).normalized().abs();
    if r_lo <= r_hi {
        lo
    } else {
        hi
    }
}

/// All accepted roots inside `(lo, hi)` found by a uniform sign-change scan.
fn scan_roots(spec: &FiberSpec, lo: f64, hi: f64, samples: usize, opts: &SolverOptions) -> Vec<f64> {
    let step = (hi - lo) / (samples + 1) as f64;
    let mut roots = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for i in 1..=samples {
        let x = lo + step * i as f64;
        let f = dispersion_residual(spec, x).value;
        if !f.is_finite() {
            prev = None;
            continue;
        }
        if let Some((xp, fp)) = prev {
            if (fp > 0.0) != (f > 0.0) {
                let root = bisect(spec, xp, x);
                if dispersion_residual(spec, root).normalized().abs() < opts.max_residual {
                    roots.push(root);
                }
            }
        }
        prev = Some((x, f));
    }
    roots
}

/// Largest guided index of the order-1 eigenvalue equation, i.e. HE₁₁.
pub(super) fn find_fundamental(spec: &FiberSpec, opts: &SolverOptions) -> Result<f64> {
    if opts.scan_points < 2 {
        return Err(Error::validation("scan_points must be at least 2"));
    }
    let roots = scan_roots(spec, spec.n_clad, spec.n_core, opts.scan_points, opts);
    roots
        .into_iter()
        .reduce(f64::max)
        .ok_or(Error::NoGuidedMode { n_clad: spec.n_clad, n_core: spec.n_core })
}

/// Re-solve after a small parameter change, bracketing around a known root.
pub(super) fn refine_near(spec: &FiberSpec, guess: f64, opts: &SolverOptions) -> Result<f64> {
    let span = spec.n_core - spec.n_clad;
    let mut half = 1e-3 * span;
    for _ in 0..6 {
        let lo = (guess - half).max(spec.n_clad + 1e-12 * span);
        let hi = (guess + half).min(spec.n_core - 1e-12 * span);
        if let Some(best) = scan_roots(spec, lo, hi, 200, opts)
            .into_iter()
            .min_by(|a, b| (a - guess).abs().total_cmp(&(b - guess).abs()))
        {
            return Ok(best);
        }
        half *= 4.0;
    }
    Err(Error::NonConvergence {
        what: "HE11 root refinement",
        detail: format!("no root near n_eff = {guess}"),
    })
}

pub(super) fn coefficients(spec: &FiberSpec, n_eff: f64) -> ModeCoefficients {
    let t = terms(spec, n_eff);
    let beta = spec.k0() * n_eff;
    let omega = spec.angular_frequency();
    ModeCoefficients {
        h: t.u / spec.radius,
        q: t.w / spec.radius,
        u: t.u,
        w: t.w,
        hz_ratio: beta * t.recip / (omega * MU0 * (t.jh + t.kq)),
        amplitude: 1.0,
    }
}
