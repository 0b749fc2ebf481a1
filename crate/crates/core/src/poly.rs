//! Scalar root finding: bisection on increasing functions and closed-form
//! cubic roots.

use crate::math;

/// Evaluates `Σ coeffs[k] s^k` by Horner's rule (coefficients lowest first).
pub fn horner(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
}

/// Root of a strictly increasing function on `[lo, hi]` with `f(lo) < 0 < f(hi)`.
///
/// Bisects until the bracket cannot shrink further in double precision and
/// returns whichever endpoint has the smaller residual.
pub fn bisect_increasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    debug_assert!(f(lo) <= 0.0 && f(hi) >= 0.0, "bracket does not straddle a root");
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if math::abs(f(lo)) <= math::abs(f(hi)) {
        lo
    } else {
        hi
    }
}

/// A (possibly complex) root `re + i·im`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Root {
    pub re: f64,
    pub im: f64,
}

/// Roots of the monic cubic `λ³ + a2 λ² + a1 λ + a0` via the depressed cubic
/// `t³ + p t + q` with `λ = t − a2/3` (Cardano for one real root, the
/// trigonometric form for three).
pub fn cubic_roots(a2: f64, a1: f64, a0: f64) -> [Root; 3] {
    let shift = a2 / 3.0;
    let p = a1 - a2 * a2 / 3.0;
    let q = 2.0 * a2 * a2 * a2 / 27.0 - a2 * a1 / 3.0 + a0;
    let real = |t: f64| Root { re: t - shift, im: 0.0 };

    if p == 0.0 && q == 0.0 {
        return [real(0.0), real(0.0), real(0.0)];
    }
    let half_q = q / 2.0;
    let third_p = p / 3.0;
    let disc = half_q * half_q + third_p * third_p * third_p;
    if disc > 0.0 {
        // one real root, one conjugate pair
        let sq = math::sqrt(disc);
        let w = if half_q >= 0.0 { -half_q - sq } else { -half_q + sq };
        let u = math::cbrt(w);
        let v = if u == 0.0 { 0.0 } else { -third_p / u };
        let t0 = u + v;
        let re = -t0 / 2.0;
        let im = math::sqrt(3.0) / 2.0 * math::abs(u - v);
        [real(t0), Root { re: re - shift, im }, Root { re: re - shift, im: -im }]
    } else {
        // three real roots; p < 0 here
        let r = math::sqrt(-third_p);
        let arg = (half_q / (third_p * r)).clamp(-1.0, 1.0);
        let phi = math::acos(arg);
        let two_pi_3 = 2.0 * core::f64::consts::PI / 3.0;
        let t = |k: f64| 2.0 * r * math::cos(phi / 3.0 - two_pi_3 * k);
        [real(t(0.0)), real(t(1.0)), real(t(2.0))]
    }
}

/// Largest real part among the cubic's roots.
pub fn cubic_abscissa(a2: f64, a1: f64, a0: f64) -> f64 {
    cubic_roots(a2, a1, a0).iter().map(|r| r.re).fold(f64::NEG_INFINITY, f64::max)
}
