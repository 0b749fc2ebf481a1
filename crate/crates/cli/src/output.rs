//! CSV and JSON documents emitted by the subcommands.

use serde::Serialize;

use pdstab_core::certificates::{AlphaTriple, Certification, Counterexample, LyapunovCertificate};
use pdstab_core::moments::MomentTrajectory;
use pdstab_core::montecarlo::MsEstimate;
use pdstab_core::regions::{Membership, RegionId, RegionPoint};
use pdstab_core::{Gains, LinearPlant};

/// Writes `header` then `rows`, formatting floats with Rust's shortest
/// round-trip representation.
pub fn csv_table<I, R>(header: &[&str], rows: I) -> Result<String, String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| e.to_string())?;
    for row in rows {
        w.write_record(row).map_err(|e| e.to_string())?;
    }
    let bytes = w.into_inner().map_err(|e| e.to_string())?;
    String::from_utf8(bytes).map_err(|e| e.to_string())
}

pub fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn region_csv(points: &[RegionPoint]) -> Result<String, String> {
    csv_table(
        &["kp", "kd", "min_slack", "member"],
        points.iter().map(|p| [p.kp.to_string(), p.kd.to_string(), p.min_slack.to_string(), p.member.to_string()]),
    )
}

/// `t,trace,p11,p12,…,p22,…` with the upper triangle in row-major order.
pub fn moments_csv(traj: &MomentTrajectory, stride: usize) -> Result<String, String> {
    let dim = traj.states.first().map_or(0, |s| s.p.rows());
    let mut header = vec!["t".to_string(), "trace".to_string()];
    for i in 0..dim {
        for j in i..dim {
            header.push(format!("p{}{}", i + 1, j + 1));
        }
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = traj.states.iter().step_by(stride.max(1)).map(|s| {
        let mut row = vec![s.t.to_string(), s.p.trace().to_string()];
        for i in 0..dim {
            for j in i..dim {
                row.push(s.p[(i, j)].to_string());
            }
        }
        row
    });
    csv_table(&header, rows)
}

pub fn simulate_csv(est: &MsEstimate) -> Result<String, String> {
    csv_table(
        &["t", "mean_sq", "stderr", "n_alive"],
        (0..est.times.len()).map(|k| {
            [est.times[k].to_string(), est.mean_sq[k].to_string(), est.stderr[k].to_string(), est.n_alive[k].to_string()]
        }),
    )
}

#[derive(Serialize)]
pub struct GainsDoc {
    pub kp: f64,
    pub kd: f64,
}

impl From<&Gains> for GainsDoc {
    fn from(g: &Gains) -> Self {
        GainsDoc { kp: g.kp, kd: g.kd }
    }
}

#[derive(Serialize)]
pub struct SlackDoc {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Serialize)]
pub struct MembershipDoc {
    pub region: &'static str,
    pub member: bool,
    pub min_slack: f64,
    pub slacks: Vec<SlackDoc>,
}

impl MembershipDoc {
    pub fn new(region: RegionId, m: &Membership) -> Self {
        MembershipDoc {
            region: region.as_str(),
            member: m.member,
            min_slack: m.min_slack(),
            slacks: m.slacks.iter().map(|s| SlackDoc { name: s.name, value: s.value }).collect(),
        }
    }
}

#[derive(Serialize)]
pub struct ResidualsDoc {
    pub m0: f64,
    pub m2: f64,
}

#[derive(Serialize)]
pub struct ThresholdsDoc {
    pub m0: f64,
    pub m1_lower: f64,
    pub m1_upper: f64,
    pub m1_exhausted: bool,
    pub m2: f64,
    pub u: f64,
    pub omega_nonempty: bool,
    pub omega_prime_nonempty: bool,
    pub omega0_nonempty_at_m: bool,
    pub classification: &'static str,
    pub residuals: ResidualsDoc,
}

#[derive(Serialize)]
pub struct CheckDoc {
    pub gains: GainsDoc,
    pub u: f64,
    pub region_memberships: Vec<MembershipDoc>,
    pub eta: f64,
}

#[derive(Serialize)]
pub struct AlphaDoc {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl From<&AlphaTriple> for AlphaDoc {
    fn from(a: &AlphaTriple) -> Self {
        AlphaDoc { a0: a.alpha0, a1: a.alpha1, a2: a.alpha2 }
    }
}

#[derive(Serialize)]
pub struct LyapunovDoc {
    pub r: f64,
    pub lambda_min_p: f64,
    pub lambda_max_lv: f64,
    pub offdiag_residual: f64,
    pub valid: bool,
}

impl From<&LyapunovCertificate> for LyapunovDoc {
    fn from(c: &LyapunovCertificate) -> Self {
        LyapunovDoc {
            r: c.r,
            lambda_min_p: c.lambda_min_p,
            lambda_max_lv: c.lambda_max_lv,
            offdiag_residual: c.offdiag_residual,
            valid: c.valid,
        }
    }
}

#[derive(Serialize)]
pub struct ScalarPlantDoc {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl From<&LinearPlant> for ScalarPlantDoc {
    fn from(p: &LinearPlant) -> Self {
        ScalarPlantDoc { a: p.a[(0, 0)], b: p.b[(0, 0)], c: p.c[(0, 0)], d: p.d[(0, 0)], e: p.e[(0, 0)] }
    }
}

#[derive(Serialize)]
pub struct CounterexampleDoc {
    pub plant: ScalarPlantDoc,
    pub verdict: &'static str,
    pub alpha: AlphaDoc,
}

impl From<&Counterexample> for CounterexampleDoc {
    fn from(c: &Counterexample) -> Self {
        CounterexampleDoc { plant: (&c.plant).into(), verdict: c.verdict.as_str(), alpha: (&c.alphas).into() }
    }
}

#[derive(Serialize)]
pub struct CertifyDoc {
    pub gains: GainsDoc,
    pub u: f64,
    pub region_memberships: Vec<MembershipDoc>,
    pub eta: f64,
    pub alpha: AlphaDoc,
    pub rh_verdict: bool,
    /// Absent when `k_p ≤ L₁`, where the certificate is undefined.
    pub lyapunov: Option<LyapunovDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexampleDoc>,
}

impl From<&Certification> for CertifyDoc {
    fn from(c: &Certification) -> Self {
        CertifyDoc {
            gains: (&c.gains).into(),
            u: c.uncertainty,
            region_memberships: c.memberships.iter().map(|(r, m)| MembershipDoc::new(*r, m)).collect(),
            eta: c.eta,
            alpha: (&c.alphas).into(),
            rh_verdict: c.rh_verdict,
            lyapunov: c.lyapunov.as_ref().map(Into::into),
            counterexample: c.counterexample.as_ref().map(Into::into),
        }
    }
}

#[derive(Serialize)]
pub struct MomentsDoc {
    pub method: &'static str,
    pub dt: f64,
    pub horizon: f64,
    /// Spectral abscissa of the reduced generator (scalar loops only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abscissa: Option<f64>,
    /// `None` when the trace is not positive throughout the fit window.
    pub rate: Option<f64>,
    pub fit_residual: Option<f64>,
    pub verdict: &'static str,
    pub initial_trace: f64,
    pub final_trace: f64,
    pub blowup_time: Option<f64>,
}

#[derive(Serialize)]
pub struct OffsetDoc {
    pub tail_error_sq: f64,
    pub expected_error_sq: f64,
    pub relative_error: f64,
}

#[derive(Serialize)]
pub struct SimulateDoc {
    pub verdict: &'static str,
    pub tail_mean: f64,
    pub blowups: usize,
    pub trials: usize,
    pub initial_mean_sq: f64,
    pub reference: f64,
    pub first_blowup_time: Option<f64>,
    pub degenerate: bool,
    /// Monte Carlo samples one plant, so a verdict is evidence about the
    /// class, not a proof.
    pub evidence: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<OffsetDoc>,
}

#[derive(Serialize)]
pub struct SynthDoc {
    pub region: &'static str,
    pub gains: GainsDoc,
    pub margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certification: Option<CertifyDoc>,
}

#[derive(Serialize)]
pub struct ErrorBody {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

#[derive(Serialize)]
pub struct ErrorDoc {
    pub error: ErrorBody,
}
