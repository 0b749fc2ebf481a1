//! Second-moment dynamics of the linear closed loop.
//!
//! For `dX = AX dt + BX dB_t`, `P(t) = E[X Xᵀ]` solves the linear matrix ODE
//! `dP/dt = AP + PAᵀ + BPBᵀ`. In vectorised (column-major) form the generator
//! is `I⊗A + A⊗I + B⊗B`.

use alloc::vec::Vec;

use crate::certificates::{alpha_coeffs, q_matrix};
use crate::error::Error;
use crate::linalg::{self, Matrix};
use crate::math;
use crate::model::ClosedLoopLinear;
use crate::poly;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Classical fourth-order Runge–Kutta.
    Rk4,
    /// Exact one-step propagator `exp(G·dt)` of the vectorised ODE.
    Expm,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::Expm => "expm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rk4" => Some(Method::Rk4),
            "expm" => Some(Method::Expm),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentState {
    pub t: f64,
    /// `E[z zᵀ]`
    pub p: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentTrajectory {
    pub states: Vec<MomentState>,
    pub dt: f64,
    pub method: Method,
    /// Set when the integration stopped because the trace exceeded
    /// `BLOWUP_FACTOR · trace(P0)` or became non-finite.
    pub blowup_time: Option<f64>,
}

impl MomentTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn traces(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.p.trace()).collect()
    }
}

pub const BLOWUP_FACTOR: f64 = 1e12;
const SYMMETRY_TOL: f64 = 1e-10;

/// `min(1e−3, 0.01/‖A‖)`.
pub fn default_dt(cl: &ClosedLoopLinear) -> f64 {
    let norm = linalg::spectral_norm(&cl.drift);
    if norm > 0.0 {
        (0.01 / norm).min(1e-3)
    } else {
        1e-3
    }
}

/// `AP + PAᵀ + BPBᵀ`
pub fn moment_rhs(cl: &ClosedLoopLinear, p: &Matrix) -> Matrix {
    let (a, b) = (&cl.drift, &cl.diffusion);
    let ap = a.mul(p);
    ap.add(&ap.transpose()).add(&b.mul(p).mul(&b.transpose()))
}

/// `I⊗A + A⊗I + B⊗B`, acting on column-major `vec(P)`.
pub fn moment_generator(cl: &ClosedLoopLinear) -> Matrix {
    let (a, b) = (&cl.drift, &cl.diffusion);
    let i = Matrix::identity(a.rows());
    i.kron(a).add(&a.kron(&i)).add(&b.kron(b))
}

fn step_count(horizon: f64, dt: f64) -> Result<usize, Error> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(alloc::format!("dt must be positive, got {dt}")));
    }
    if !(horizon.is_finite() && horizon >= dt) {
        return Err(Error::InvalidInput(alloc::format!("horizon {horizon} must be at least dt = {dt}")));
    }
    Ok(libm::floor(horizon / dt + 1e-9) as usize)
}

fn check_initial(p0: &Matrix, dim: usize) -> Result<(), Error> {
    if p0.rows() != dim || p0.cols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: p0.rows() });
    }
    let asym = p0.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    if !p0.is_finite() {
        return Err(Error::NonFinite);
    }
    let min_eig = linalg::lambda_min(p0);
    if min_eig < -SYMMETRY_TOL * math::abs(p0.trace()).max(1.0) {
        return Err(Error::InvalidInput(alloc::format!("initial moment matrix is not PSD (λ_min = {min_eig})")));
    }
    Ok(())
}

fn rk4_step(cl: &ClosedLoopLinear, p: &Matrix, dt: f64) -> Matrix {
    let k1 = moment_rhs(cl, p);
    let k2 = moment_rhs(cl, &p.add(&k1.scale(dt / 2.0)));
    let k3 = moment_rhs(cl, &p.add(&k2.scale(dt / 2.0)));
    let k4 = moment_rhs(cl, &p.add(&k3.scale(dt)));
    p.add(&k1.add(&k2.scale(2.0)).add(&k3.scale(2.0)).add(&k4).scale(dt / 6.0))
}

fn exceeded(trace: f64, trace0: f64, x: &Matrix) -> bool {
    !x.is_finite() || (trace0 > 0.0 && trace > BLOWUP_FACTOR * trace0)
}

pub fn propagate(
    cl: &ClosedLoopLinear,
    p0: &Matrix,
    horizon: f64,
    dt: f64,
    method: Method,
) -> Result<MomentTrajectory, Error> {
    let dim = 2 * cl.n();
    check_initial(p0, dim)?;
    let steps = step_count(horizon, dt)?;
    let trace0 = p0.trace();
    let propagator = match method {
        Method::Expm => Some(linalg::expm(&moment_generator(cl).scale(dt))?),
        Method::Rk4 => None,
    };
    let mut states = Vec::with_capacity(steps + 1);
    let mut p = p0.sym();
    states.push(MomentState { t: 0.0, p: p.clone() });
    let mut blowup_time = None;
    for k in 1..=steps {
        let next = match &propagator {
            None => rk4_step(cl, &p, dt),
            Some(e) => Matrix::from_vec_col_major(dim, dim, &e.mul_vec(&p.vec_col_major())),
        };
        p = next.sym();
        let t = k as f64 * dt;
        if exceeded(p.trace(), trace0, &p) {
            blowup_time = Some(t);
            break;
        }
        states.push(MomentState { t, p: p.clone() });
    }
    Ok(MomentTrajectory { states, dt, method, blowup_time })
}

/// Moments `(p, r₀, q) = (E z₁², E z₁z₂, E z₂²)` of a scalar loop over time.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarTrajectory {
    pub times: Vec<f64>,
    pub triples: Vec<[f64; 3]>,
    pub blowup_time: Option<f64>,
}

impl ScalarTrajectory {
    pub fn traces(&self) -> Vec<f64> {
        self.triples.iter().map(|t| t[0] + t[2]).collect()
    }
}

/// Integrates `d/dt (p, r₀, q) = Q (p, r₀, q)`.
pub fn propagate_scalar(
    a0: f64,
    b0: f64,
    c0: f64,
    d0: f64,
    triple0: [f64; 3],
    horizon: f64,
    dt: f64,
    method: Method,
) -> Result<ScalarTrajectory, Error> {
    let steps = step_count(horizon, dt)?;
    let q = q_matrix(a0, b0, c0, d0);
    let propagator = match method {
        Method::Expm => Some(linalg::expm(&q.scale(dt))?),
        Method::Rk4 => None,
    };
    let trace0 = triple0[0] + triple0[2];
    let mut y = triple0;
    let mut times = Vec::with_capacity(steps + 1);
    let mut triples = Vec::with_capacity(steps + 1);
    times.push(0.0);
    triples.push(y);
    let mut blowup_time = None;
    let apply = |m: &Matrix, v: &[f64; 3]| -> [f64; 3] {
        let mut out = [0.0; 3];
        m.mul_vec_into(v, &mut out);
        out
    };
    let axpy = |a: &[f64; 3], s: f64, b: &[f64; 3]| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    for k in 1..=steps {
        y = match &propagator {
            Some(e) => apply(e, &y),
            None => {
                let k1 = apply(&q, &y);
                let k2 = apply(&q, &axpy(&y, dt / 2.0, &k1));
                let k3 = apply(&q, &axpy(&y, dt / 2.0, &k2));
                let k4 = apply(&q, &axpy(&y, dt, &k3));
                let mut out = y;
                for i in 0..3 {
                    out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                out
            }
        };
        let t = k as f64 * dt;
        let trace = y[0] + y[2];
        if !y.iter().all(|v| v.is_finite()) || (trace0 > 0.0 && trace > BLOWUP_FACTOR * trace0) {
            blowup_time = Some(t);
            break;
        }
        times.push(t);
        triples.push(y);
    }
    Ok(ScalarTrajectory { times, triples, blowup_time })
}

/// Largest real part of the spectrum of `Q`, from the roots of its
/// characteristic cubic.
pub fn spectral_abscissa_scalar(a0: f64, b0: f64, c0: f64, d0: f64) -> f64 {
    let a = alpha_coeffs(a0, b0, c0, d0);
    poly::cubic_abscissa(a.alpha2, a.alpha1, a.alpha0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    /// Least-squares slope of `ln trace P(t)`.
    pub rate: f64,
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    pub samples: usize,
}

/// Exponential rate of `trace P(t)` over the trailing `window` fraction.
pub fn decay_rate(traj: &MomentTrajectory, window: f64) -> Result<DecayFit, Error> {
    decay_rate_series(&traj.times(), &traj.traces(), window)
}

pub fn decay_rate_series(times: &[f64], traces: &[f64], window: f64) -> Result<DecayFit, Error> {
    if times.len() < 10 || times.len() != traces.len() {
        return Err(Error::InvalidInput(alloc::format!("need at least 10 samples, got {}", times.len())));
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::InvalidInput(alloc::format!("window must lie in (0, 1], got {window}")));
    }
    let t_end = times[times.len() - 1];
    let t_start = t_end - window * (t_end - times[0]);
    let idx: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= t_start).collect();
    if idx.len() < 2 {
        return Err(Error::InvalidInput("fit window holds fewer than 2 samples".into()));
    }
    if idx.iter().any(|&i| !(traces[i] > 0.0)) {
        return Err(Error::NonPositiveTrace);
    }
    let n = idx.len() as f64;
    let xs: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| math::ln(traces[i])).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let rate = sxy / sxx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| {
        let e = y - my - rate * (x - mx);
        e * e
    }).sum();
    Ok(DecayFit { rate, residual: math::sqrt(sse / n), samples: idx.len() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilizationVerdict {
    pub decayed: bool,
    pub initial_trace: f64,
    pub final_trace: f64,
}

/// `decayed` iff `trace P(T) < threshold · trace P(0)` and the run did not blow up.
pub fn stabilization_verdict(traj: &MomentTrajectory, threshold: f64) -> StabilizationVerdict {
    let initial_trace = traj.states.first().map_or(0.0, |s| s.p.trace());
    let final_trace = traj.states.last().map_or(0.0, |s| s.p.trace());
    StabilizationVerdict {
        decayed: traj.blowup_time.is_none() && final_trace < threshold * initial_trace,
        initial_trace,
        final_trace,
    }
}
