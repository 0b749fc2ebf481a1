//! Subcommand dispatch. Everything here is deterministic given the merged
//! settings; `--threads` only sizes the worker pool.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use pdstab_core::certificates::certify;
use pdstab_core::linalg::Matrix;
use pdstab_core::model::{benchmark_plant, closed_loop, BenchmarkExtra, BenchmarkKind, Dynamics};
use pdstab_core::moments::{self, Method};
use pdstab_core::montecarlo::{self, convergence_verdict, Observable, SimConfig};
use pdstab_core::regions::{self, GainBox, Grid, RegionId};
use pdstab_core::{Error, LinearPlant, NonlinearPlant};

use crate::config::Settings;
use crate::output::{self, *};
use crate::parallel;

#[derive(Parser, Debug)]
#[command(name = "pdstab", version, about = "Mean-square PD stabilizability analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML file with sections bounds, gains, plant, sim, output, analysis.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Subcommand, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    /// Critical diffusion gains M₀*, M₁* (bracket) and M₂*.
    Thresholds,
    /// Membership and slack of a grid of gains (CSV point cloud).
    Region,
    /// Region memberships, slacks and margin of given gains.
    Check,
    /// Routh–Hurwitz, Lyapunov and corner-plant certificates for given gains.
    Certify,
    /// Second-moment propagation for a linear plant.
    Moments,
    /// Monte Carlo mean-square estimate for a linear or benchmark plant.
    Simulate,
    /// Gains maximizing a region margin.
    Synth,
}

/// A failed run and its exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Failure { code: 1, kind: "validation", message: message.into() }
    }

    fn doc(&self) -> String {
        output::json(&ErrorDoc { error: ErrorBody { code: self.code, kind: self.kind, message: self.message.clone() } })
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::RegionEmpty => (2, "region_empty"),
            Error::SynthesisFailed { .. } => (2, "synthesis_failed"),
            Error::AllTrialsBlewUp { .. } => (3, "blowup"),
            Error::NonFinite => (3, "non_finite"),
            Error::Singular => (3, "singular"),
            _ => (1, "validation"),
        };
        Failure { code, kind, message: e.to_string() }
    }
}

impl From<String> for Failure {
    fn from(message: String) -> Self {
        Failure::validation(message)
    }
}

/// What a run produced: stdout text, files to write, and the exit status.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub files: Vec<(PathBuf, String)>,
    pub code: i32,
}

impl Outcome {
    fn flag(mut self, f: Failure) -> Self {
        self.code = f.code;
        self.stderr = f.doc();
        self
    }
}

/// Loads the config file, applies flag overrides, runs and writes files.
pub fn execute(cli: Cli) -> Outcome {
    let fail = |f: Failure| Outcome { stderr: f.doc(), code: f.code, ..Outcome::default() };
    let file = match &cli.config {
        Some(p) => match Settings::load(p) {
            Ok(s) => s,
            Err(e) => return fail(Failure::validation(e)),
        },
        None => Settings::default(),
    };
    let settings = cli.settings.over(file);
    let outcome = match run(cli.command, &settings) {
        Ok(o) => o,
        Err(f) => return fail(f),
    };
    for (path, text) in &outcome.files {
        if let Err(e) = std::fs::write(path, text) {
            return fail(Failure::validation(format!("{}: {e}", path.display())));
        }
    }
    outcome
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

fn emit(s: &Settings, default: Format, csv: Option<String>, json: String) -> Result<Outcome, Failure> {
    let format = match s.output.format.as_deref() {
        None => default,
        Some("csv") => Format::Csv,
        Some("json") => Format::Json,
        Some(other) => return Err(Failure::validation(format!("unknown output.format `{other}`"))),
    };
    let mut files = Vec::new();
    if let Some(p) = &s.output.csv {
        let text = csv.clone().ok_or_else(|| Failure::validation("this subcommand has no CSV output"))?;
        files.push((p.clone(), text));
    }
    if let Some(p) = &s.output.json {
        files.push((p.clone(), json.clone()));
    }
    let stdout = match format {
        Format::Json => json,
        Format::Csv => csv.ok_or_else(|| Failure::validation("this subcommand has no CSV output"))?,
    };
    Ok(Outcome { stdout, files, ..Outcome::default() })
}

pub fn run(command: Command, s: &Settings) -> Result<Outcome, Failure> {
    match command {
        Command::Thresholds => thresholds(s),
        Command::Region => region(s),
        Command::Check => check(s),
        Command::Certify => certify_cmd(s),
        Command::Moments => moments_cmd(s),
        Command::Simulate => simulate(s),
        Command::Synth => synth(s),
    }
}

const WITNESS_COARSE: usize = 64;
const WITNESS_ROUNDS: usize = 40;

fn thresholds(s: &Settings) -> Result<Outcome, Failure> {
    let bounds = s.bounds()?;
    let m0 = regions::m0_star(&bounds);
    let m2 = regions::m2_star(&bounds);
    let m1 = regions::m1_star(&bounds, s.analysis.m1_tol.unwrap_or(1e-6))?;
    let omega0_nonempty_at_m =
        bounds.m == 0.0 || regions::omega0_witness(&bounds, WITNESS_COARSE, WITNESS_ROUNDS).is_some();
    let doc = ThresholdsDoc {
        m0: m0.value,
        m1_lower: m1.lower,
        m1_upper: m1.upper,
        m1_exhausted: m1.exhausted,
        m2: m2.value,
        u: bounds.uncertainty(),
        omega_nonempty: regions::omega_nonempty(&bounds),
        omega_prime_nonempty: regions::omega_prime_nonempty(&bounds),
        omega0_nonempty_at_m,
        classification: regions::classify_nonlinear(&bounds, &m1).as_str(),
        residuals: ResidualsDoc { m0: m0.residual, m2: m2.residual },
    };
    emit(s, Format::Json, None, output::json(&doc))
}

fn region_id(s: &Settings) -> Result<RegionId, Failure> {
    let name = s.analysis.region.as_deref().unwrap_or("omega");
    RegionId::parse(name).ok_or_else(|| Failure::validation(format!("unknown region `{name}`")))
}

#[derive(Serialize)]
struct RegionPointDoc {
    kp: f64,
    kd: f64,
    min_slack: f64,
    member: bool,
}

#[derive(Serialize)]
struct RegionDoc {
    region: &'static str,
    nx: usize,
    ny: usize,
    points: Vec<RegionPointDoc>,
}

fn region(s: &Settings) -> Result<Outcome, Failure> {
    let bounds = s.bounds()?;
    let id = region_id(s)?;
    let a = &s.analysis;
    let region_box = match (a.kp_min, a.kp_max, a.kd_min, a.kd_max) {
        (None, None, None, None) => None,
        (Some(p0), Some(p1), Some(d0), Some(d1)) => Some(GainBox::new(p0, p1, d0, d1)?),
        _ => return Err(Failure::validation("a gain box needs all of kp_min, kp_max, kd_min, kd_max")),
    };
    let grid = Grid { nx: a.nx.unwrap_or(200), ny: a.ny.unwrap_or(200), region_box };
    let pool = parallel::pool(s.threads)?;
    let points = parallel::sample_region(&pool, id, &bounds, &grid)?;
    let csv = output::region_csv(&points)?;
    let doc = RegionDoc {
        region: id.as_str(),
        nx: grid.nx,
        ny: grid.ny,
        points: points
            .iter()
            .map(|p| RegionPointDoc { kp: p.kp, kd: p.kd, min_slack: p.min_slack, member: p.member })
            .collect(),
    };
    emit(s, Format::Csv, Some(csv), output::json(&doc))
}

fn check(s: &Settings) -> Result<Outcome, Failure> {
    let bounds = s.bounds()?;
    let gains = s.gains()?;
    let doc = CheckDoc {
        gains: (&gains).into(),
        u: bounds.uncertainty(),
        region_memberships: RegionId::ALL
            .iter()
            .map(|&r| MembershipDoc::new(r, &regions::membership(r, &bounds, &gains)))
            .collect(),
        eta: pdstab_core::certificates::eta_margin(&bounds, &gains),
    };
    emit(s, Format::Json, None, output::json(&doc))
}

fn counterexample_failure() -> Failure {
    Failure {
        code: 2,
        kind: "not_stabilizable",
        message: "a corner plant within the bounds is not mean-square stable under these gains".into(),
    }
}

fn certify_cmd(s: &Settings) -> Result<Outcome, Failure> {
    let bounds = s.bounds()?;
    let gains = s.gains()?;
    let cert = certify(&bounds, &gains);
    let out = emit(s, Format::Json, None, output::json(&CertifyDoc::from(&cert)))?;
    Ok(if cert.counterexample.is_some() { out.flag(counterexample_failure()) } else { out })
}

fn synth(s: &Settings) -> Result<Outcome, Failure> {
    let bounds = s.bounds()?;
    let id = region_id(s)?;
    let syn = regions::synth_gains(&bounds, id, s.analysis.budget.unwrap_or(regions::DEFAULT_SYNTH_BUDGET))?;
    let cert = s.analysis.certify.unwrap_or(false).then(|| certify(&bounds, &syn.gains));
    let doc = SynthDoc {
        region: id.as_str(),
        gains: (&syn.gains).into(),
        margin: syn.margin,
        certification: cert.as_ref().map(Into::into),
    };
    let out = emit(s, Format::Json, None, output::json(&doc))?;
    Ok(match cert {
        Some(c) if c.counterexample.is_some() => out.flag(counterexample_failure()),
        _ => out,
    })
}

/// Plant dimension: explicit `plant.n`, else inferred from vector keys, else 1.
fn dimension(s: &Settings) -> usize {
    let p = &s.plant;
    p.n.or(p.ystar.as_ref().map(Vec::len))
        .or(p.delta.as_ref().map(Vec::len))
        .or(s.sim.x1_0.as_ref().map(Vec::len))
        .or([&p.a, &p.b, &p.c, &p.d, &p.e].iter().find_map(|m| match m {
            Some(crate::config::MatrixSpec::Rows(r)) => Some(r.len()),
            _ => None,
        }))
        .unwrap_or(1)
}

fn kind(s: &Settings) -> &str {
    s.plant.kind.as_deref().unwrap_or("linear")
}

fn linear_plant(s: &Settings, n: usize) -> Result<LinearPlant, Failure> {
    match kind(s) {
        "linear" => {
            let p = &s.plant;
            let m = |spec: &Option<crate::config::MatrixSpec>, key: &str| -> Result<Matrix, Failure> {
                match spec {
                    None => Ok(Matrix::zeros(n, n)),
                    Some(spec) => spec.to_matrix(n).map_err(|e| Failure::validation(format!("plant.{key}: {e}"))),
                }
            };
            Ok(LinearPlant::new(m(&p.a, "a")?, m(&p.b, "b")?, m(&p.c, "c")?, m(&p.d, "d")?, m(&p.e, "e")?)?)
        }
        "corner" | "corner_linear" => Ok(LinearPlant::corner(&s.bounds()?, n)),
        other => Err(Failure::validation(format!("plant.kind `{other}` is not a linear plant"))),
    }
}

enum SimPlant {
    Linear(LinearPlant),
    Nonlinear(NonlinearPlant),
}

impl Dynamics for SimPlant {
    fn dim(&self) -> usize {
        match self {
            SimPlant::Linear(p) => p.dim(),
            SimPlant::Nonlinear(p) => p.dim(),
        }
    }

    fn setpoint(&self) -> Vec<f64> {
        match self {
            SimPlant::Linear(p) => p.setpoint(),
            SimPlant::Nonlinear(p) => p.setpoint(),
        }
    }

    fn drift(&self, x1: &[f64], x2: &[f64], u: &[f64], out: &mut [f64]) {
        match self {
            SimPlant::Linear(p) => p.drift(x1, x2, u, out),
            SimPlant::Nonlinear(p) => p.drift(x1, x2, u, out),
        }
    }

    fn diffusion(&self, x1: &[f64], x2: &[f64], u: &[f64], out: &mut [f64]) {
        match self {
            SimPlant::Linear(p) => p.diffusion(x1, x2, u, out),
            SimPlant::Nonlinear(p) => p.diffusion(x1, x2, u, out),
        }
    }
}

fn sim_plant(s: &Settings, n: usize) -> Result<SimPlant, Failure> {
    match kind(s) {
        "linear" | "corner" => Ok(SimPlant::Linear(linear_plant(s, n)?)),
        name => {
            let k: BenchmarkKind = name.parse()?;
            let bounds = if k == BenchmarkKind::OffsetEquilibrium && !s.has_bounds() {
                montecarlo::offset_bounds()
            } else {
                s.bounds()?
            };
            let ystar = s.plant.ystar.clone().unwrap_or_else(|| vec![0.0; n]);
            let extra = BenchmarkExtra { epsilon: s.plant.epsilon, delta: s.plant.delta.clone() };
            Ok(SimPlant::Nonlinear(benchmark_plant(k, &bounds, n, &ystar, &extra)?))
        }
    }
}

fn initial_state(s: &Settings, n: usize) -> (Vec<f64>, Vec<f64>) {
    (s.sim.x1_0.clone().unwrap_or_else(|| vec![1.0; n]), s.sim.x2_0.clone().unwrap_or_else(|| vec![1.0; n]))
}

fn moments_cmd(s: &Settings) -> Result<Outcome, Failure> {
    let gains = s.gains()?;
    let n = dimension(s);
    let plant = linear_plant(s, n)?;
    let cl = closed_loop(&plant, &gains)?;
    let p0 = match &s.sim.p0 {
        Some(spec) => spec.to_matrix(2 * n).map_err(|e| Failure::validation(format!("sim.p0: {e}")))?,
        None => {
            let (x1, x2) = initial_state(s, n);
            if x1.len() != n || x2.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: x1.len().min(x2.len()) }.into());
            }
            let z: Vec<f64> = x1.into_iter().chain(x2).collect();
            let mut p = Matrix::zeros(2 * n, 2 * n);
            for i in 0..2 * n {
                for j in 0..2 * n {
                    p[(i, j)] = z[i] * z[j];
                }
            }
            p
        }
    };
    let method_name = s.sim.method.as_deref().unwrap_or("rk4");
    let method =
        Method::parse(method_name).ok_or_else(|| Failure::validation(format!("unknown sim.method `{method_name}`")))?;
    let horizon = s.sim.horizon.unwrap_or(10.0);
    let dt = s.sim.dt.unwrap_or_else(|| moments::default_dt(&cl));
    let traj = moments::propagate(&cl, &p0, horizon, dt, method)?;
    let fit = moments::decay_rate(&traj, s.sim.window.unwrap_or(0.5)).ok();
    let verdict = moments::stabilization_verdict(&traj, s.sim.threshold.unwrap_or(1e-2));
    let doc = MomentsDoc {
        method: method.as_str(),
        dt,
        horizon,
        abscissa: cl.scalars().map(|(a0, b0, c0, d0)| moments::spectral_abscissa_scalar(a0, b0, c0, d0)),
        rate: fit.map(|f| f.rate),
        fit_residual: fit.map(|f| f.residual),
        verdict: if verdict.decayed { "decayed" } else { "not_decayed" },
        initial_trace: verdict.initial_trace,
        final_trace: verdict.final_trace,
        blowup_time: traj.blowup_time,
    };
    let csv = output::moments_csv(&traj, s.sim.record_stride.unwrap_or(10))?;
    let out = emit(s, Format::Csv, Some(csv), output::json(&doc))?;
    Ok(match traj.blowup_time {
        Some(t) => out.flag(Failure {
            code: 3,
            kind: "blowup",
            message: format!("second moments exceeded the blow-up bound at t = {t}"),
        }),
        None => out,
    })
}

fn simulate(s: &Settings) -> Result<Outcome, Failure> {
    let gains = s.gains()?;
    let n = dimension(s);
    let plant = sim_plant(s, n)?;
    let (x1_0, x2_0) = initial_state(s, n);
    let cfg = SimConfig {
        horizon: s.sim.horizon.unwrap_or(5.0),
        dt: s.sim.dt.unwrap_or(montecarlo::DEFAULT_DT),
        trials: s.sim.trials.unwrap_or(1000),
        master_seed: s.sim.seed.unwrap_or(0),
        x1_0,
        x2_0,
        record_stride: s.sim.record_stride.unwrap_or(10),
    };
    let tail = s.sim.tail.unwrap_or(0.1);
    let pool = parallel::pool(s.threads)?;
    let offset = match (&plant, kind(s)) {
        (SimPlant::Nonlinear(p), "offset_equilibrium") => {
            montecarlo::offset_precondition(&gains)?;
            let delta = s.plant.delta.clone().unwrap_or_default();
            let err = parallel::estimate(&pool, p, &gains, &cfg, Observable::Error)?;
            let r = montecarlo::offset_report(&delta, &gains, err, tail);
            Some(OffsetDoc {
                tail_error_sq: r.tail_error_sq,
                expected_error_sq: r.expected_error_sq,
                relative_error: r.relative_error,
            })
        }
        _ => None,
    };
    let est = parallel::estimate(&pool, &plant, &gains, &cfg, Observable::ErrorAndRate)?;
    let v = convergence_verdict(&est, s.sim.threshold.unwrap_or(1e-2), tail);
    let doc = SimulateDoc {
        verdict: if v.converged { "converged" } else { "not_converged" },
        tail_mean: v.tail_mean,
        blowups: est.blowups,
        trials: est.trials,
        initial_mean_sq: v.initial,
        reference: v.reference,
        first_blowup_time: est.first_blowup_time,
        degenerate: est.degenerate,
        evidence: "sampled_plant",
        offset,
    };
    emit(s, Format::Csv, Some(output::simulate_csv(&est)?), output::json(&doc))
}
