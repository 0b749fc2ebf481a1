//! Euler–Maruyama simulation of the closed loop and Monte Carlo estimation of
//! the mean-square regulation error.
//!
//! Each trial draws its Gaussian increments from its own ChaCha8 stream,
//! keyed by `(master_seed, trial_index)` and consumed in step order, so any
//! trial can be replayed in isolation. Trials are grouped into fixed blocks of
//! [`TRIAL_BLOCK`] and the per-block accumulators are merged in a fixed
//! pairwise tree, which makes the estimate independent of how blocks are
//! scheduled.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::certificates::{alpha_coeffs, routh_hurwitz};
use crate::error::Error;
use crate::math;
use crate::model::{benchmark_plant, BenchmarkExtra, BenchmarkKind, Bounds, Dynamics, Gains, NonlinearPlant};

/// A path is truncated once `‖(x₁, x₂)‖` exceeds this.
pub const BLOWUP_NORM: f64 = 1e8;
/// Trials per leaf of the reduction tree.
pub const TRIAL_BLOCK: usize = 64;
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub x1_0: Vec<f64>,
    pub x2_0: Vec<f64>,
    /// Record every `record_stride`-th step (1 keeps the full grid).
    pub record_stride: usize,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, trials: usize, master_seed: u64, x1_0: Vec<f64>, x2_0: Vec<f64>) -> Self {
        SimConfig { horizon, dt, trials, master_seed, x1_0, x2_0, record_stride: 1 }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self, n: usize) -> Result<(), Error> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return Err(Error::InvalidInput(format!("horizon {} shorter than dt {}", self.horizon, self.dt)));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".to_string()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidInput("record_stride must be at least 1".to_string()));
        }
        if self.x1_0.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.x1_0.len() });
        }
        if self.x2_0.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.x2_0.len() });
        }
        if !self.x1_0.iter().chain(&self.x2_0).all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        libm::floor(self.horizon / self.dt + 1e-9) as usize
    }

    /// Number of recorded grid points, including `t = 0`.
    pub fn points(&self) -> usize {
        self.steps() / self.record_stride + 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.points()).map(|k| (k * self.record_stride) as f64 * self.dt).collect()
    }
}

/// The Gaussian stream of one trial.
pub fn trial_rng(master_seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial_index);
    rng
}

fn pd_law(gains: &Gains, ystar: &[f64], x1: &[f64], x2: &[f64], u: &mut [f64]) {
    for i in 0..u.len() {
        u[i] = gains.kp * (ystar[i] - x1[i]) - gains.kd * x2[i];
    }
}

/// Runs one trial, calling `record(point, x1, x2, u)` at every recorded grid
/// point. Returns the blow-up time, if any; the offending state is not recorded.
fn run_trial<P: Dynamics + ?Sized>(
    plant: &P,
    gains: &Gains,
    cfg: &SimConfig,
    trial_index: u64,
    mut record: impl FnMut(usize, &[f64], &[f64], &[f64]),
) -> Option<f64> {
    let n = plant.dim();
    let ystar = plant.setpoint();
    let mut rng = trial_rng(cfg.master_seed, trial_index);
    let sqrt_dt = math::sqrt(cfg.dt);
    let mut x1 = cfg.x1_0.clone();
    let mut x2 = cfg.x2_0.clone();
    let mut u = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];

    let steps = cfg.steps();
    for k in 0..=steps {
        pd_law(gains, &ystar, &x1, &x2, &mut u);
        let norm_sq: f64 = x1.iter().chain(&x2).map(|v| v * v).sum();
        if !(norm_sq.is_finite() && norm_sq <= BLOWUP_NORM * BLOWUP_NORM) {
            return Some(k as f64 * cfg.dt);
        }
        if k % cfg.record_stride == 0 {
            record(k / cfg.record_stride, &x1, &x2, &u);
        }
        if k == steps {
            break;
        }
        plant.drift(&x1, &x2, &u, &mut f);
        plant.diffusion(&x1, &x2, &u, &mut g);
        let z: f64 = rng.sample(StandardNormal);
        let db = sqrt_dt * z;
        for i in 0..n {
            x1[i] += x2[i] * cfg.dt;
            x2[i] += f[i] * cfg.dt + g[i] * db;
        }
    }
    None
}

/// One simulated trajectory on the recorded grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub x1: Vec<Vec<f64>>,
    pub x2: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    /// Time at which the path left the ball of radius [`BLOWUP_NORM`].
    pub blowup: Option<f64>,
}

pub fn simulate_path<P: Dynamics + ?Sized>(
    plant: &P,
    gains: &Gains,
    cfg: &SimConfig,
    trial_index: u64,
) -> Result<Path, Error> {
    cfg.validate(plant.dim())?;
    let all_times = cfg.times();
    let mut path = Path { times: Vec::new(), x1: Vec::new(), x2: Vec::new(), u: Vec::new(), blowup: None };
    path.blowup = run_trial(plant, gains, cfg, trial_index, |k, x1, x2, u| {
        path.times.push(all_times[k]);
        path.x1.push(x1.to_vec());
        path.x2.push(x2.to_vec());
        path.u.push(u.to_vec());
    });
    Ok(path)
}

/// Which per-trial quantity is averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observable {
    /// `‖e‖² + ‖ė‖²`
    ErrorAndRate,
    /// `‖e‖²`
    Error,
}

impl Observable {
    fn eval(self, ystar: &[f64], x1: &[f64], x2: &[f64]) -> f64 {
        let e: f64 = ystar.iter().zip(x1).map(|(y, x)| (y - x) * (y - x)).sum();
        match self {
            Observable::Error => e,
            Observable::ErrorAndRate => e + x2.iter().map(|v| v * v).sum::<f64>(),
        }
    }
}

/// Per-grid-point running mean and sum of squared deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct Accumulator {
    pub count: Vec<u64>,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub trials: usize,
    pub blowups: usize,
    pub first_blowup: Option<f64>,
}

impl Accumulator {
    pub fn new(points: usize) -> Self {
        Accumulator {
            count: vec![0; points],
            mean: vec![0.0; points],
            m2: vec![0.0; points],
            trials: 0,
            blowups: 0,
            first_blowup: None,
        }
    }

    fn push(&mut self, k: usize, v: f64) {
        self.count[k] += 1;
        let delta = v - self.mean[k];
        self.mean[k] += delta / self.count[k] as f64;
        self.m2[k] += delta * (v - self.mean[k]);
    }

    fn note_blowup(&mut self, t: f64) {
        self.blowups += 1;
        self.first_blowup = Some(self.first_blowup.map_or(t, |b| b.min(t)));
    }

    /// Combines two disjoint sets of trials.
    pub fn merge(mut self, other: &Accumulator) -> Accumulator {
        for k in 0..self.count.len() {
            let (na, nb) = (self.count[k], other.count[k]);
            if nb == 0 {
                continue;
            }
            if na == 0 {
                self.count[k] = nb;
                self.mean[k] = other.mean[k];
                self.m2[k] = other.m2[k];
                continue;
            }
            let n = na + nb;
            let delta = other.mean[k] - self.mean[k];
            let w = nb as f64 / n as f64;
            self.mean[k] += delta * w;
            self.m2[k] += other.m2[k] + delta * delta * na as f64 * w;
            self.count[k] = n;
        }
        self.trials += other.trials;
        self.blowups += other.blowups;
        self.first_blowup = match (self.first_blowup, other.first_blowup) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self
    }
}

/// Number of leaf blocks for `cfg.trials`.
pub fn block_count(cfg: &SimConfig) -> usize {
    cfg.trials.div_ceil(TRIAL_BLOCK)
}

pub fn block_range(cfg: &SimConfig, block: usize) -> Range<usize> {
    let lo = block * TRIAL_BLOCK;
    lo..cfg.trials.min(lo + TRIAL_BLOCK)
}

/// Simulates the trials of one leaf block, in trial order.
pub fn simulate_block<P: Dynamics + ?Sized>(
    plant: &P,
    gains: &Gains,
    cfg: &SimConfig,
    observable: Observable,
    block: usize,
) -> Accumulator {
    let ystar = plant.setpoint();
    let mut acc = Accumulator::new(cfg.points());
    for trial in block_range(cfg, block) {
        acc.trials += 1;
        let blowup = run_trial(plant, gains, cfg, trial as u64, |k, x1, x2, _| {
            let v = observable.eval(&ystar, x1, x2);
            acc.push(k, v);
        });
        if let Some(t) = blowup {
            acc.note_blowup(t);
        }
    }
    acc
}

/// Merges leaf accumulators pairwise, level by level, in index order.
pub fn reduce_pairwise(mut level: Vec<Accumulator>) -> Option<Accumulator> {
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => a.merge(&b),
                None => a,
            });
        }
        level = next;
    }
    level.pop()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MsEstimate {
    pub times: Vec<f64>,
    pub mean_sq: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Trials still inside the blow-up ball at each grid time.
    pub n_alive: Vec<u64>,
    pub trials: usize,
    pub blowups: usize,
    pub first_blowup_time: Option<f64>,
    /// Set when a single trial makes the standard error meaningless.
    pub degenerate: bool,
}

/// Turns a reduced accumulator into an estimate.
pub fn finish(cfg: &SimConfig, acc: Accumulator) -> Result<MsEstimate, Error> {
    if acc.blowups == acc.trials {
        return Err(Error::AllTrialsBlewUp {
            trials: acc.trials,
            first_blowup_time: acc.first_blowup.unwrap_or(0.0),
        });
    }
    let stderr = acc
        .count
        .iter()
        .zip(&acc.m2)
        .map(|(&c, &m2)| if c > 1 { math::sqrt(m2.max(0.0) / (c - 1) as f64 / c as f64) } else { 0.0 })
        .collect();
    let mean_sq = acc.mean.iter().map(|&m| m.max(0.0)).collect();
    Ok(MsEstimate {
        times: cfg.times(),
        mean_sq,
        stderr,
        n_alive: acc.count,
        trials: acc.trials,
        blowups: acc.blowups,
        first_blowup_time: acc.first_blowup,
        degenerate: acc.trials == 1,
    })
}

pub fn estimate_observable<P: Dynamics + ?Sized>(
    plant: &P,
    gains: &Gains,
    cfg: &SimConfig,
    observable: Observable,
) -> Result<MsEstimate, Error> {
    cfg.validate(plant.dim())?;
    let leaves = (0..block_count(cfg)).map(|b| simulate_block(plant, gains, cfg, observable, b)).collect();
    let acc = reduce_pairwise(leaves).expect("at least one trial");
    finish(cfg, acc)
}

/// Monte Carlo estimate of `E[‖e(t)‖² + ‖ė(t)‖²]` on the recorded grid.
pub fn estimate_ms<P: Dynamics + ?Sized>(plant: &P, gains: &Gains, cfg: &SimConfig) -> Result<MsEstimate, Error> {
    estimate_observable(plant, gains, cfg, Observable::ErrorAndRate)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceVerdict {
    pub converged: bool,
    pub tail_mean: f64,
    pub initial: f64,
    /// The value `tail_mean` was compared against.
    pub reference: f64,
}

/// Mean of `mean_sq` over the trailing `tail` fraction of the horizon.
pub fn tail_mean(est: &MsEstimate, tail: f64) -> f64 {
    let t_end = est.times.last().copied().unwrap_or(0.0);
    let t0 = est.times.first().copied().unwrap_or(0.0);
    let cut = t_end - tail.clamp(0.0, 1.0) * (t_end - t0);
    let (mut sum, mut cnt) = (0.0, 0usize);
    for (t, v) in est.times.iter().zip(&est.mean_sq) {
        if *t >= cut - 1e-12 {
            sum += v;
            cnt += 1;
        }
    }
    if cnt == 0 {
        est.mean_sq.last().copied().unwrap_or(0.0)
    } else {
        sum / cnt as f64
    }
}

/// Converged iff no trial blew up and the tail average is below
/// `threshold · mean_sq(0)` (or below `threshold` when `mean_sq(0) = 0`).
pub fn convergence_verdict(est: &MsEstimate, threshold: f64, tail: f64) -> ConvergenceVerdict {
    let initial = est.mean_sq.first().copied().unwrap_or(0.0);
    let tail_mean = tail_mean(est, tail);
    let reference = if initial == 0.0 { threshold } else { threshold * initial };
    let converged = est.blowups == 0 && tail_mean < reference;
    ConvergenceVerdict { converged, tail_mean, initial, reference }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OffsetReport {
    /// Estimate of `‖e‖²` on the grid.
    pub error_sq: MsEstimate,
    pub tail_error_sq: f64,
    /// `‖δ‖² / k_p²`, the squared offset of the deterministic equilibrium.
    pub expected_error_sq: f64,
    pub relative_error: f64,
}

/// Errors unless the gains stabilize the unperturbed loop `ẍ = −k_p x₁ − k_d x₂`.
pub fn offset_precondition(gains: &Gains) -> Result<(), Error> {
    if routh_hurwitz(&alpha_coeffs(-gains.kp, -gains.kd, 0.0, 0.0)) {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "gains (kp = {}, kd = {}) do not stabilize the unperturbed loop",
            gains.kp, gains.kd
        )))
    }
}

/// Declared bounds for the offset plant. Its Jacobians in `x` vanish, so any
/// positive bounds hold; the smallest positive double is used.
pub fn offset_bounds() -> Bounds {
    let tiny = f64::MIN_POSITIVE;
    Bounds { l1: tiny, l2: tiny, n1: tiny, n2: tiny, m: 0.0 }
}

/// The plant `f = δ + u, g = 0` with target `y* = 0`.
pub fn offset_plant(delta: &[f64]) -> Result<NonlinearPlant, Error> {
    let n = delta.len();
    let bounds = offset_bounds();
    let extra = BenchmarkExtra { epsilon: None, delta: Some(delta.to_vec()) };
    benchmark_plant(BenchmarkKind::OffsetEquilibrium, &bounds, n, &vec![0.0; n], &extra)
}

/// Compares the late-time `‖e‖²` of an offset run with `‖δ‖²/k_p²`.
pub fn offset_report(delta: &[f64], gains: &Gains, error_sq: MsEstimate, tail: f64) -> OffsetReport {
    let tail_error_sq = tail_mean(&error_sq, tail);
    let expected_error_sq = delta.iter().map(|d| d * d).sum::<f64>() / (gains.kp * gains.kp);
    let relative_error = if expected_error_sq == 0.0 {
        tail_error_sq
    } else {
        math::abs(tail_error_sq - expected_error_sq) / expected_error_sq
    };
    OffsetReport { error_sq, tail_error_sq, expected_error_sq, relative_error }
}

/// Simulates the offset-equilibrium plant `f = δ + u, g = 0` and compares the
/// late-time regulation error with `‖δ‖²/k_p²`.
pub fn proposition1_demo(delta: &[f64], gains: &Gains, cfg: &SimConfig, tail: f64) -> Result<OffsetReport, Error> {
    offset_precondition(gains)?;
    let plant = offset_plant(delta)?;
    let error_sq = estimate_observable(&plant, gains, cfg, Observable::Error)?;
    Ok(offset_report(delta, gains, error_sq, tail))
}
