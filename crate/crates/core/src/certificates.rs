//! Mean-square stability certificates.
//!
//! For scalar closed loops the second moments `(p, r₀, q) = E[(z₁², z₁z₂, z₂²)]`
//! obey `d/dt (p, r₀, q) = Q (p, r₀, q)` and mean-square stability is exactly
//! Hurwitz stability of the 3×3 matrix `Q`, decided here by Routh–Hurwitz on
//! its characteristic polynomial. For general `n` a quadratic Lyapunov
//! function is constructed explicitly.

use alloc::vec::Vec;

use crate::error::Error;
use crate::linalg::{self, Matrix};
use crate::model::{closed_loop, derived_scalars, validate_linear_plant, Bounds, Gains, LinearPlant};
use crate::regions::{membership, omega0_slacks, Membership, RegionId};

/// Generator of the reduced scalar second-moment system.
pub fn q_matrix(a0: f64, b0: f64, c0: f64, d0: f64) -> Matrix {
    Matrix::from_row_major(
        3,
        3,
        alloc::vec![0.0, 2.0, 0.0, a0, b0, 1.0, c0 * c0, 2.0 * (a0 + c0 * d0), 2.0 * b0 + d0 * d0],
    )
    .expect("3×3")
}

/// Coefficients of `det(λI − Q) = λ³ + α₂λ² + α₁λ + α₀`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaTriple {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

pub fn alpha_coeffs(a0: f64, b0: f64, c0: f64, d0: f64) -> AlphaTriple {
    let d2 = d0 * d0;
    AlphaTriple {
        alpha0: 2.0 * (2.0 * a0 * b0 + a0 * d2 - c0 * c0),
        alpha1: b0 * d2 + 2.0 * b0 * b0 - 4.0 * a0 - 2.0 * c0 * d0,
        alpha2: -(3.0 * b0 + d2),
    }
}

/// Third-order Routh–Hurwitz: `α₂ > 0`, `α₀ > 0`, `α₁α₂ > α₀`.
pub fn routh_hurwitz(alphas: &AlphaTriple) -> bool {
    alphas.alpha2 > 0.0 && alphas.alpha0 > 0.0 && alphas.alpha1 * alphas.alpha2 > alphas.alpha0
}

/// Width of the band around a Routh–Hurwitz boundary classified as marginal.
pub const MARGINAL_BAND: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Marginal => "marginal",
        }
    }
}

/// Verdict from the three Routh–Hurwitz quantities. Any quantity below
/// `−MARGINAL_BAND` makes the loop unstable; otherwise any quantity within the
/// band makes it marginal.
pub fn classify(alphas: &AlphaTriple) -> Verdict {
    let qs = [alphas.alpha2, alphas.alpha0, alphas.alpha1 * alphas.alpha2 - alphas.alpha0];
    if qs.iter().any(|&q| q < -MARGINAL_BAND) {
        Verdict::Unstable
    } else if qs.iter().any(|&q| q <= MARGINAL_BAND) {
        Verdict::Marginal
    } else {
        Verdict::Stable
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarVerdict {
    pub verdict: Verdict,
    pub alphas: AlphaTriple,
}

pub fn ms_stable_scalar(plant: &LinearPlant, gains: &Gains) -> Result<ScalarVerdict, Error> {
    if plant.n() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, found: plant.n() });
    }
    let (a0, b0, c0, d0) = closed_loop(plant, gains)?.scalars().expect("n = 1");
    let alphas = alpha_coeffs(a0, b0, c0, d0);
    Ok(ScalarVerdict { verdict: classify(&alphas), alphas })
}

/// The scalar plants tried by [`worst_case_search`], in search order: the two
/// plants the necessity argument uses, then all 2⁵ sign corners.
pub fn worst_case_plants(bounds: &Bounds) -> Vec<LinearPlant> {
    let mut plants = alloc::vec![
        LinearPlant::scalar(bounds.l1, bounds.l2, 0.0, 0.0, 0.0),
        LinearPlant::scalar(bounds.l1, bounds.l2, -bounds.n1, -bounds.n2, bounds.m),
    ];
    let mags = [bounds.l1, bounds.l2, bounds.n1, bounds.n2, bounds.m];
    for mask in 0u32..32 {
        let v: Vec<f64> =
            mags.iter().enumerate().map(|(k, &x)| if mask & (1 << k) != 0 { -x } else { x }).collect();
        plants.push(LinearPlant::scalar(v[0], v[1], v[2], v[3], v[4]));
    }
    plants
}

#[derive(Clone, Debug, PartialEq)]
pub struct Counterexample {
    pub plant: LinearPlant,
    pub verdict: Verdict,
    pub alphas: AlphaTriple,
}

/// First plant in [`worst_case_plants`] that the gains fail to stabilize
/// strictly (unstable or marginal), if any.
pub fn worst_case_search(bounds: &Bounds, gains: &Gains) -> Option<Counterexample> {
    worst_case_plants(bounds).into_iter().find_map(|plant| {
        let sv = ms_stable_scalar(&plant, gains).expect("scalar plant");
        (sv.verdict != Verdict::Stable).then_some(Counterexample { plant, verdict: sv.verdict, alphas: sv.alphas })
    })
}

/// Quadratic certificate `V(X) = XᵀPX` for the linear closed loop with
///
/// ```text
/// P = [[m, rI], [rI, I]],   m = −r b₀ − a₀ᵀ − c₀ᵀ d₀,
/// r = (2k̄₁k̄₂ + T₁² − k̄₁T₂²) / (4k̄₁).
/// ```
///
/// `m` need not be symmetric. `lv = PA + AᵀP + BᵀPB` is formed with this `P`,
/// so its upper-right block vanishes identically; definiteness is decided on
/// the symmetric parts, which carry the same quadratic forms.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovCertificate {
    pub p: Matrix,
    pub r: f64,
    pub m: Matrix,
    pub lv: Matrix,
    pub lambda_min_p: f64,
    pub lambda_max_lv: f64,
    /// `‖upper-right block of lv‖_F / ‖lv‖_F`.
    pub offdiag_residual: f64,
    /// Whether the plant respects the bounds the certificate was built for.
    pub plant_in_bounds: bool,
    pub valid: bool,
}

pub fn lyapunov_linear(bounds: &Bounds, gains: &Gains, plant: &LinearPlant) -> Result<LyapunovCertificate, Error> {
    let d = derived_scalars(bounds, gains);
    if !(d.kbar1 > 0.0) {
        return Err(Error::NonPositiveKbar1(d.kbar1));
    }
    let n = plant.n();
    let cl = closed_loop(plant, gains)?;
    let r = (2.0 * d.kbar1 * d.kbar2 + d.t1 * d.t1 - d.kbar1 * d.t2 * d.t2) / (4.0 * d.kbar1);
    let m = cl.b0.scale(-r).sub(&cl.a0.transpose()).sub(&cl.c0.transpose().mul(&cl.d0));
    let ri = Matrix::scalar(n, r);
    let p = Matrix::block2(&m, &ri, &ri, &Matrix::identity(n));
    let (a, b) = (&cl.drift, &cl.diffusion);
    let lv = p.mul(a).add(&a.transpose().mul(&p)).add(&b.transpose().mul(&p).mul(b));
    let lambda_min_p = linalg::lambda_min(&p);
    let lambda_max_lv = linalg::lambda_max(&lv);
    let total = lv.frobenius();
    let offdiag = lv.block(0, n, n, n).frobenius();
    let offdiag_residual = if total > 0.0 { offdiag / total } else { 0.0 };
    Ok(LyapunovCertificate {
        p,
        r,
        m,
        lv,
        lambda_min_p,
        lambda_max_lv,
        offdiag_residual,
        plant_in_bounds: validate_linear_plant(plant, bounds).pass,
        valid: lambda_min_p > 0.0 && lambda_max_lv < 0.0,
    })
}

/// `η = min(k_p² − k̄ − k_d T₁², k_d² − k_p − k̄ − k_d T₂²)`, the decay margin
/// of the nonlinear Lyapunov bound `LV ≤ −η|z|²`.
pub fn eta_margin(bounds: &Bounds, gains: &Gains) -> f64 {
    let (s1, s2) = omega0_slacks(bounds, gains);
    s1.min(s2)
}

/// `V(z) = k_p k_d z₁ᵀz₁ + k_p z₁ᵀz₂ + (k_d/2) z₂ᵀz₂`, positive definite when
/// `k_d² > k_p`.
pub fn nonlinear_lyapunov_value(gains: &Gains, z1: &[f64], z2: &[f64]) -> f64 {
    let (kp, kd) = (gains.kp, gains.kd);
    kp * kd * linalg::dot(z1, z1) + kp * linalg::dot(z1, z2) + 0.5 * kd * linalg::dot(z2, z2)
}

/// State-dependent coefficients of a nonlinear plant at one point, written
/// in the linear-like form `f = a z₁ + b z₂ + θ u`, `g = c z₁ + d z₂ + e u`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub a: Matrix,
    pub b: Matrix,
    pub theta: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub e: Matrix,
}

/// Generator `LV(z)` of [`nonlinear_lyapunov_value`] along the closed loop
/// with `u = −k_p z₁ − k_d z₂` and the given decomposition.
pub fn nonlinear_generator_value(gains: &Gains, dec: &Decomposition, z1: &[f64], z2: &[f64]) -> f64 {
    let (kp, kd) = (gains.kp, gains.kd);
    let u: Vec<f64> = z1.iter().zip(z2).map(|(x, y)| -kp * x - kd * y).collect();
    let add3 = |p: Vec<f64>, q: Vec<f64>, s: Vec<f64>| -> Vec<f64> {
        p.iter().zip(&q).zip(&s).map(|((x, y), z)| x + y + z).collect()
    };
    let drift = add3(dec.a.mul_vec(z1), dec.b.mul_vec(z2), dec.theta.mul_vec(&u));
    let noise = add3(dec.c.mul_vec(z1), dec.d.mul_vec(z2), dec.e.mul_vec(&u));
    // ∇V = (2k_p k_d z₁ + k_p z₂, k_p z₁ + k_d z₂), dz₁ = z₂ dt, dz₂ = drift dt + noise dB
    let grad1: Vec<f64> = z1.iter().zip(z2).map(|(x, y)| 2.0 * kp * kd * x + kp * y).collect();
    let grad2: Vec<f64> = z1.iter().zip(z2).map(|(x, y)| kp * x + kd * y).collect();
    linalg::dot(&grad1, z2) + linalg::dot(&grad2, &drift) + 0.5 * kd * linalg::dot(&noise, &noise)
}

/// Everything the `certify` report carries for one gain pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Certification {
    pub gains: Gains,
    pub memberships: Vec<(RegionId, Membership)>,
    pub eta: f64,
    /// Characteristic coefficients for the scalar corner plant.
    pub alphas: AlphaTriple,
    /// Routh–Hurwitz verdict for the scalar corner plant.
    pub rh_verdict: bool,
    /// Lyapunov construction on the scalar corner plant (absent when k̄₁ ≤ 0).
    pub lyapunov: Option<LyapunovCertificate>,
    pub counterexample: Option<Counterexample>,
    pub uncertainty: f64,
}

pub fn certify(bounds: &Bounds, gains: &Gains) -> Certification {
    let corner = LinearPlant::corner(bounds, 1);
    let alphas = ms_stable_scalar(&corner, gains).expect("scalar corner").alphas;
    Certification {
        gains: *gains,
        memberships: RegionId::ALL.iter().map(|&r| (r, membership(r, bounds, gains))).collect(),
        eta: eta_margin(bounds, gains),
        alphas,
        rh_verdict: routh_hurwitz(&alphas),
        lyapunov: lyapunov_linear(bounds, gains, &corner).ok(),
        counterexample: worst_case_search(bounds, gains),
        uncertainty: bounds.uncertainty(),
    }
}
