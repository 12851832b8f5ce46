//! Integer-order Bessel functions and Gauss–Legendre rules.
//!
//! `J_n` uses the power series for small arguments and the periodic-trapezoid
//! evaluation of Bessel's integral otherwise; the trapezoid rule is spectrally
//! accurate on a full period, so a grid a little wider than the argument is
//! enough for double precision. `K_n` uses the trapezoid rule on
//! `∫₀^∞ exp(-x cosh t) cosh(nt) dt`, which converges just as fast because the
//! integrand is analytic in a strip around the real axis.

use std::f64::consts::PI;

const SERIES_LIMIT: f64 = 2.0;

/// Bessel function of the first kind `J_n(x)` for integer order.
pub fn bessel_j(n: i32, x: f64) -> f64 {
    if n < 0 {
        let v = bessel_j(-n, x);
        return if n % 2 == 0 { v } else { -v };
    }
    if x < 0.0 {
        let v = bessel_j(n, -x);
        return if n % 2 == 0 { v } else { -v };
    }
    if x <= SERIES_LIMIT {
        return j_series(n as u32, x);
    }
    // (1/π) ∫₀^π cos(nθ − x sinθ) dθ, trapezoid with half-weighted ends
    let m = (x.ceil() as usize) + 60;
    let h = PI / m as f64;
    let nf = n as f64;
    let mut sum = 0.5 * (1.0 + (nf * PI).cos());
    for i in 1..m {
        let th = i as f64 * h;
        sum += (nf * th - x * th.sin()).cos();
    }
    sum * h / PI
}

fn j_series(n: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = 1.0;
    for k in 1..=n {
        term *= half / k as f64;
    }
    let q = -half * half;
    let mut sum = term;
    let mut k = 1u32;
    loop {
        term *= q / (k as f64 * (k + n) as f64);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() || k > 60 {
            break;
        }
        k += 1;
    }
    sum
}

/// Exponentially scaled modified Bessel function `K_n(x)·eˣ`, `x > 0`.
pub fn bessel_k_scaled(n: i32, x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k requires a positive argument, got {x}");
    let nf = n.abs() as f64;
    let h = if x > 25.0 { 0.5 / x.sqrt() } else { 0.1 };
    // t = 0 carries half weight
    let mut sum = 0.5;
    let mut i = 1usize;
    loop {
        let t = i as f64 * h;
        let ch = t.cosh();
        let expo = -x * (ch - 1.0);
        let term = (expo + nf * t).exp() * 0.5 * (1.0 + (-2.0 * nf * t).exp());
        sum += term;
        // past the peak of e^{nt - x cosh t} and negligible
        if x * t.sinh() > nf && term < 1e-18 * sum {
            break;
        }
        i += 1;
    }
    sum * h
}

/// Modified Bessel function of the second kind `K_n(x)`, `x > 0`.
pub fn bessel_k(n: i32, x: f64) -> f64 {
    bessel_k_scaled(n, x) * (-x).exp()
}

/// `J_0..=J_3` at one argument.
pub(crate) fn j_set(x: f64) -> [f64; 4] {
    [bessel_j(0, x), bessel_j(1, x), bessel_j(2, x), bessel_j(3, x)]
}

/// Scaled `K_0..=K_3` at one argument (each multiplied by `eˣ`).
pub(crate) fn k_scaled_set(x: f64) -> [f64; 4] {
    [
        bessel_k_scaled(0, x),
        bessel_k_scaled(1, x),
        bessel_k_scaled(2, x),
        bessel_k_scaled(3, x),
    ]
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = nf * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
