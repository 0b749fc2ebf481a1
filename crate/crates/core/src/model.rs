//! Domain types for the PD-controlled second-order stochastic system
//!
//! ```text
//! dx₁ = x₂ dt
//! dx₂ = f(x₁, x₂, u) dt + g(x₁, x₂, u) dB_t,    u = k_p e + k_d ė,  e = y* − x₁
//! ```
//!
//! with `B_t` a scalar Brownian motion and `f`, `g` uncertain maps whose
//! Jacobians are bounded by the quintuple [`Bounds`].

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::linalg::{self, Matrix};
use crate::math;

/// Spectral-norm bounds on the partial derivatives of the drift and diffusion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    /// `‖∂f/∂x₁‖ ≤ L1`
    pub l1: f64,
    /// `‖∂f/∂x₂‖ ≤ L2`
    pub l2: f64,
    /// `‖∂g/∂x₁‖ ≤ N1`
    pub n1: f64,
    /// `‖∂g/∂x₂‖ ≤ N2`
    pub n2: f64,
    /// `‖∂g/∂u‖ ≤ M`
    pub m: f64,
}

impl Bounds {
    pub fn new(l1: f64, l2: f64, n1: f64, n2: f64, m: f64) -> Result<Self, Error> {
        let b = Self { l1, l2, n1, n2, m };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), Error> {
        for (name, v) in [("l1", self.l1), ("l2", self.l2), ("n1", self.n1), ("n2", self.n2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.m.is_finite() && self.m >= 0.0) {
            return Err(Error::InvalidInput(format!("m must be nonnegative and finite, got {}", self.m)));
        }
        Ok(())
    }

    /// Same drift/diffusion state bounds with a different control-diffusion bound.
    pub fn with_m(&self, m: f64) -> Self {
        Self { m, ..*self }
    }

    /// The uncertainty measure `U = 4L₁M⁴ + 4N₁M³ + 2L₂M² + 2N₂M`.
    pub fn uncertainty(&self) -> f64 {
        uncertainty_poly(self, self.m)
    }
}

/// `4L₁s⁴ + 4N₁s³ + 2L₂s² + 2N₂s`
pub(crate) fn uncertainty_poly(b: &Bounds, s: f64) -> f64 {
    s * (2.0 * b.n2 + s * (2.0 * b.l2 + s * (4.0 * b.n1 + s * 4.0 * b.l1)))
}

/// `16L₁s⁴ + 16N₁s³ + 4L₂s² + 4N₂s`
pub(crate) fn omega_prime_poly(b: &Bounds, s: f64) -> f64 {
    s * (4.0 * b.n2 + s * (4.0 * b.l2 + s * (16.0 * b.n1 + s * 16.0 * b.l1)))
}

/// PD parameters `(k_p, k_d)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gains {
    pub kp: f64,
    pub kd: f64,
}

impl Gains {
    pub fn new(kp: f64, kd: f64) -> Result<Self, Error> {
        if !(kp.is_finite() && kd.is_finite()) {
            return Err(Error::InvalidInput(format!("gains must be finite, got ({kp}, {kd})")));
        }
        Ok(Self { kp, kd })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedScalars {
    /// `k̄ = (L₁ + L₂)(k_p + k_d)`
    pub kbar: f64,
    /// `k̄₁ = k_p − L₁`
    pub kbar1: f64,
    /// `k̄₂ = k_d − L₂`
    pub kbar2: f64,
    /// `T₁ = N₁ + M k_p`
    pub t1: f64,
    /// `T₂ = N₂ + M k_d`
    pub t2: f64,
    /// `U`, depends on the bounds only
    pub u: f64,
}

pub fn derived_scalars(bounds: &Bounds, gains: &Gains) -> DerivedScalars {
    DerivedScalars {
        kbar: (bounds.l1 + bounds.l2) * (gains.kp + gains.kd),
        kbar1: gains.kp - bounds.l1,
        kbar2: gains.kd - bounds.l2,
        t1: bounds.n1 + bounds.m * gains.kp,
        t2: bounds.n2 + bounds.m * gains.kd,
        u: bounds.uncertainty(),
    }
}

/// `dx₂ = (a x₁ + b x₂ + u) dt + (c x₁ + d x₂ + e u) dB_t` with `n×n` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPlant {
    n: usize,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub e: Matrix,
}

impl LinearPlant {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix, e: Matrix) -> Result<Self, Error> {
        let n = a.rows();
        if n == 0 {
            return Err(Error::InvalidInput("plant dimension must be positive".to_string()));
        }
        for m in [&a, &b, &c, &d, &e] {
            if m.rows() != n || m.cols() != n {
                return Err(Error::DimensionMismatch { expected: n, found: if m.rows() != n { m.rows() } else { m.cols() } });
            }
            if !m.is_finite() {
                return Err(Error::NonFinite);
            }
        }
        Ok(Self { n, a, b, c, d, e })
    }

    /// Scalar plant (`n = 1`).
    pub fn scalar(a: f64, b: f64, c: f64, d: f64, e: f64) -> Self {
        let s = |v| Matrix::scalar(1, v);
        Self { n: 1, a: s(a), b: s(b), c: s(c), d: s(d), e: s(e) }
    }

    pub fn zero(n: usize) -> Self {
        let z = Matrix::zeros(n, n);
        Self { n, a: z.clone(), b: z.clone(), c: z.clone(), d: z.clone(), e: z }
    }

    /// The adversarial plant `a = L₁I, b = L₂I, c = −N₁I, d = −N₂I, e = M I`.
    pub fn corner(bounds: &Bounds, n: usize) -> Self {
        let s = |v| Matrix::scalar(n, v);
        Self { n, a: s(bounds.l1), b: s(bounds.l2), c: s(-bounds.n1), d: s(-bounds.n2), e: s(bounds.m) }
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Closed loop of a [`LinearPlant`] under `u = −k_p x₁ − k_d x₂`:
/// `dX = A X dt + B X dB_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopLinear {
    n: usize,
    pub a0: Matrix,
    pub b0: Matrix,
    pub c0: Matrix,
    pub d0: Matrix,
    /// `[[0, I], [a0, b0]]`
    pub drift: Matrix,
    /// `[[0, 0], [c0, d0]]`
    pub diffusion: Matrix,
}

impl ClosedLoopLinear {
    /// Assembles the block matrices from `a0…d0`.
    pub fn from_blocks(a0: Matrix, b0: Matrix, c0: Matrix, d0: Matrix) -> Result<Self, Error> {
        let n = a0.rows();
        for m in [&a0, &b0, &c0, &d0] {
            if m.rows() != n || m.cols() != n {
                return Err(Error::DimensionMismatch { expected: n, found: m.rows().max(m.cols()) });
            }
        }
        let z = Matrix::zeros(n, n);
        let drift = Matrix::block2(&z, &Matrix::identity(n), &a0, &b0);
        let diffusion = Matrix::block2(&z, &z, &c0, &d0);
        Ok(Self { n, a0, b0, c0, d0, drift, diffusion })
    }

    /// Scalar closed loop from `(a0, b0, c0, d0)`.
    pub fn scalar(a0: f64, b0: f64, c0: f64, d0: f64) -> Self {
        let s = |v| Matrix::scalar(1, v);
        Self::from_blocks(s(a0), s(b0), s(c0), s(d0)).expect("1×1 blocks")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `(a0, b0, c0, d0)` when `n = 1`.
    pub fn scalars(&self) -> Option<(f64, f64, f64, f64)> {
        (self.n == 1).then(|| (self.a0[(0, 0)], self.b0[(0, 0)], self.c0[(0, 0)], self.d0[(0, 0)]))
    }
}

/// `a0 = a − k_p I`, `b0 = b − k_d I`, `c0 = c − k_p e`, `d0 = d − k_d e`.
pub fn closed_loop(plant: &LinearPlant, gains: &Gains) -> Result<ClosedLoopLinear, Error> {
    let n = plant.n;
    let a0 = plant.a.sub(&Matrix::scalar(n, gains.kp));
    let b0 = plant.b.sub(&Matrix::scalar(n, gains.kd));
    let c0 = plant.c.sub(&plant.e.scale(gains.kp));
    let d0 = plant.d.sub(&plant.e.scale(gains.kd));
    ClosedLoopLinear::from_blocks(a0, b0, c0, d0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormCheck {
    pub name: &'static str,
    pub norm: f64,
    pub bound: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantValidation {
    pub checks: [NormCheck; 5],
    pub pass: bool,
}

/// Relative slack allowed when comparing a computed norm to its bound, so that
/// a matrix scaled to sit exactly on its bound is not rejected for round-off.
const NORM_REL_TOL: f64 = 1e-12;

pub fn validate_linear_plant(plant: &LinearPlant, bounds: &Bounds) -> PlantValidation {
    let check = |name, m: &Matrix, bound: f64| {
        let norm = linalg::spectral_norm(m);
        NormCheck { name, norm, bound, ok: norm <= bound * (1.0 + NORM_REL_TOL) }
    };
    let checks = [
        check("a", &plant.a, bounds.l1),
        check("b", &plant.b, bounds.l2),
        check("c", &plant.c, bounds.n1),
        check("d", &plant.d, bounds.n2),
        check("e", &plant.e, bounds.m),
    ];
    let pass = checks.iter().all(|c| c.ok);
    PlantValidation { checks, pass }
}

/// Drift and diffusion of a controlled plant, evaluated in place.
pub trait Dynamics {
    fn dim(&self) -> usize;
    /// The regulation target `y*`.
    fn setpoint(&self) -> Vec<f64>;
    fn drift(&self, x1: &[f64], x2: &[f64], u: &[f64], out: &mut [f64]);
    fn diffusion(&self, x1: &[f64], x2: &[f64], u: &[f64], out: &mut [f64]);
}

impl Dynamics for LinearPlant {
    fn dim(&self) -> usize {
        self.n
    }

    fn setpoint(&self) -> Vec<f64> {
        vec![0.0; self.n]
    }

    fn drift(&self, x1: &[f64], x2: &[f64], u: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = linalg::dot(self.a.row(i), x1) + linalg::dot(self.b.row(i), x2) + u[i];
        }
    }

    fn diffusion(&self, x1: &[f64], x2: &[f64], u: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = linalg::dot(self.c.row(i), x1) + linalg::dot(self.d.row(i), x2) + linalg::dot(self.e.row(i), u);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BenchmarkKind {
    Sine,
    NonaffineSine,
    CornerLinear,
    OffsetEquilibrium,
}

impl FromStr for BenchmarkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "sine" => Ok(Self::Sine),
            "nonaffine_sine" => Ok(Self::NonaffineSine),
            "corner_linear" => Ok(Self::CornerLinear),
            "offset_equilibrium" => Ok(Self::OffsetEquilibrium),
            other => Err(Error::UnknownPlantKind(other.to_string())),
        }
    }
}

impl BenchmarkKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Sine => "sine",
            Self::NonaffineSine => "nonaffine_sine",
            Self::CornerLinear => "corner_linear",
            Self::OffsetEquilibrium => "offset_equilibrium",
        }
    }
}

/// Family-specific parameters for [`benchmark_plant`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchmarkExtra {
    /// Non-affine strength ε (defaults to 0.1).
    pub epsilon: Option<f64>,
    /// Equilibrium offset δ for `offset_equilibrium`.
    pub delta: Option<Vec<f64>>,
}

pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
enum PlantForm {
    Sine,
    NonaffineSine { epsilon: f64 },
    CornerLinear,
    Offset { delta: Vec<f64> },
}

/// A built-in nonlinear plant family. All maps act componentwise.
#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearPlant {
    n: usize,
    ystar: Vec<f64>,
    form: PlantForm,
    pub declared_bounds: Bounds,
}

pub fn benchmark_plant(
    kind: BenchmarkKind,
    bounds: &Bounds,
    n: usize,
    ystar: &[f64],
    extra: &BenchmarkExtra,
) -> Result<NonlinearPlant, Error> {
    bounds.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("plant dimension must be positive".to_string()));
    }
    if ystar.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: ystar.len() });
    }
    let form = match kind {
        BenchmarkKind::Sine => PlantForm::Sine,
        BenchmarkKind::NonaffineSine => {
            let epsilon = extra.epsilon.unwrap_or(DEFAULT_EPSILON);
            if !(epsilon.is_finite() && epsilon >= 0.0) {
                return Err(Error::InvalidInput(format!("epsilon must be nonnegative, got {epsilon}")));
            }
            PlantForm::NonaffineSine { epsilon }
        }
        BenchmarkKind::CornerLinear => PlantForm::CornerLinear,
        BenchmarkKind::OffsetEquilibrium => {
            let delta = extra
                .delta
                .clone()
                .ok_or_else(|| Error::InvalidInput("offset_equilibrium needs delta".to_string()))?;
            if delta.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: delta.len() });
            }
            PlantForm::Offset { delta }
        }
    };
    Ok(NonlinearPlant { n, ystar: ystar.to_vec(), form, declared_bounds: *bounds })
}

impl NonlinearPlant {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ystar(&self) -> &[f64] {
        &self.ystar
    }

    pub fn kind(&self) -> BenchmarkKind {
        match self.form {
            PlantForm::Sine => BenchmarkKind::Sine,
            PlantForm::NonaffineSine { .. } => BenchmarkKind::NonaffineSine,
            PlantForm::CornerLinear => BenchmarkKind::CornerLinear,
            PlantForm::Offset { .. } => BenchmarkKind::OffsetEquilibrium,
        }
    }
}

impl Dynamics for NonlinearPlant {
    fn dim(&self) -> usize {
        self.n
    }

    fn setpoint(&self) -> Vec<f64> {
        self.ystar.clone()
    }

    fn drift(&self, x1: &[f64], x2: &[f64], u: &[f64], out: &mut [f64]) {
        let b = &self.declared_bounds;
        for i in 0..self.n {
            let z1 = x1[i] - self.ystar[i];
            out[i] = match &self.form {
                PlantForm::Sine => b.l1 * math::sin(z1) + b.l2 * math::sin(x2[i]) + u[i],
                PlantForm::NonaffineSine { epsilon } => {
                    b.l1 * math::sin(z1) + b.l2 * math::sin(x2[i]) + u[i] + epsilon * (u[i] + math::sin(u[i]))
                }
                PlantForm::CornerLinear => b.l1 * z1 + b.l2 * x2[i] + u[i],
                PlantForm::Offset { delta } => delta[i] + u[i],
            };
        }
    }

    fn diffusion(&self, x1: &[f64], x2: &[f64], u: &[f64], out: &mut [f64]) {
        let b = &self.declared_bounds;
        for i in 0..self.n {
            let z1 = x1[i] - self.ystar[i];
            out[i] = match &self.form {
                PlantForm::Sine | PlantForm::NonaffineSine { .. } => {
                    b.n1 * math::sin(z1) + b.n2 * math::sin(x2[i]) + b.m * math::sin(u[i])
                }
                PlantForm::CornerLinear => -b.n1 * z1 - b.n2 * x2[i] + b.m * u[i],
                PlantForm::Offset { .. } => 0.0,
            };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquilibriumCheck {
    /// `‖f(y*, 0, 0)‖`
    pub drift_norm: f64,
    /// `‖g(y*, 0, 0)‖`
    pub diffusion_norm: f64,
    pub holds: bool,
}

/// Checks that `y*` is an equilibrium of the uncontrolled system.
pub fn check_equilibrium<P: Dynamics + ?Sized>(plant: &P, tol: f64) -> EquilibriumCheck {
    let n = plant.dim();
    let ystar = plant.setpoint();
    let zero = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    plant.drift(&ystar, &zero, &zero, &mut f);
    plant.diffusion(&ystar, &zero, &zero, &mut g);
    let norm = |v: &[f64]| math::sqrt(linalg::dot(v, v));
    let (drift_norm, diffusion_norm) = (norm(&f), norm(&g));
    EquilibriumCheck { drift_norm, diffusion_norm, holds: drift_norm <= tol && diffusion_norm <= tol }
}

/// Worst observed Jacobian quantities over the sampled points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianReport {
    pub samples: usize,
    pub max_df_dx1: f64,
    pub max_df_dx2: f64,
    pub max_dg_dx1: f64,
    pub max_dg_dx2: f64,
    pub max_dg_du: f64,
    /// Smallest eigenvalue of `sym(∂f/∂u)` seen.
    pub min_df_du_eig: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianSampling {
    pub samples: usize,
    /// Central-difference step.
    pub step: f64,
    pub tol: f64,
    /// Points are drawn uniformly from `[-radius, radius]³ⁿ` around `(y*, 0, 0)`.
    pub radius: f64,
    pub seed: u64,
}

impl Default for JacobianSampling {
    fn default() -> Self {
        Self { samples: 1000, step: 1e-5, tol: 1e-4, radius: 10.0, seed: 0 }
    }
}

/// Sampled central-difference check of the declared derivative bounds.
/// This is evidence, not a certificate: uniform bounds cannot be verified
/// from finitely many points.
pub fn check_jacobian_bounds<P: Dynamics + ?Sized>(plant: &P, bounds: &Bounds, cfg: &JacobianSampling) -> JacobianReport {
    let n = plant.dim();
    let ystar = plant.setpoint();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = JacobianReport {
        samples: cfg.samples,
        max_df_dx1: 0.0,
        max_df_dx2: 0.0,
        max_dg_dx1: 0.0,
        max_dg_dx2: 0.0,
        max_dg_du: 0.0,
        min_df_du_eig: f64::INFINITY,
        pass: true,
    };
    let mut point = vec![0.0; 3 * n];
    for _ in 0..cfg.samples {
        for (k, p) in point.iter_mut().enumerate() {
            let offset = if k < n { ystar[k] } else { 0.0 };
            *p = offset + rng.random_range(-cfg.radius..cfg.radius);
        }
        let jf = |block| jacobian_block(plant, &point, block, cfg.step, true);
        let jg = |block| jacobian_block(plant, &point, block, cfg.step, false);
        report.max_df_dx1 = report.max_df_dx1.max(linalg::spectral_norm(&jf(0)));
        report.max_df_dx2 = report.max_df_dx2.max(linalg::spectral_norm(&jf(1)));
        report.min_df_du_eig = report.min_df_du_eig.min(linalg::lambda_min(&jf(2)));
        report.max_dg_dx1 = report.max_dg_dx1.max(linalg::spectral_norm(&jg(0)));
        report.max_dg_dx2 = report.max_dg_dx2.max(linalg::spectral_norm(&jg(1)));
        report.max_dg_du = report.max_dg_du.max(linalg::spectral_norm(&jg(2)));
    }
    let t = cfg.tol;
    report.pass = report.max_df_dx1 <= bounds.l1 + t
        && report.max_df_dx2 <= bounds.l2 + t
        && report.max_dg_dx1 <= bounds.n1 + t
        && report.max_dg_dx2 <= bounds.n2 + t
        && report.max_dg_du <= bounds.m + t
        && report.min_df_du_eig >= 1.0 - t;
    report
}

/// Central-difference Jacobian of f (or g) with respect to block 0 (x₁),
/// 1 (x₂) or 2 (u) at `point = (x₁, x₂, u)`.
fn jacobian_block<P: Dynamics + ?Sized>(plant: &P, point: &[f64], block: usize, h: f64, drift: bool) -> Matrix {
    let n = plant.dim();
    let mut jac = Matrix::zeros(n, n);
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut p = point.to_vec();
    let eval = |p: &[f64], out: &mut [f64]| {
        let (x1, rest) = p.split_at(n);
        let (x2, u) = rest.split_at(n);
        if drift {
            plant.drift(x1, x2, u, out)
        } else {
            plant.diffusion(x1, x2, u, out)
        }
    };
    for j in 0..n {
        let k = block * n + j;
        let orig = p[k];
        p[k] = orig + h;
        eval(&p, &mut plus);
        p[k] = orig - h;
        eval(&p, &mut minus);
        p[k] = orig;
        for i in 0..n {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}
