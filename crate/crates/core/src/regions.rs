//! Stabilizing PD gain regions and critical uncertainty thresholds.
//!
//! Three nested open sets of gain pairs are tracked:
//!
//! * `Omega0`: gains for which the quadratic Lyapunov function
//!   `V = k_p k_d |z₁|² + k_p z₁ᵀz₂ + (k_d/2)|z₂|²` decreases for every
//!   nonlinear plant in the class,
//! * `OmegaPrime`: an intermediate relaxation,
//! * `Omega`: exactly the gains that stabilize every linear plant in the class.
//!
//! `Omega0 ⊆ OmegaPrime ⊆ Omega`. For `M > 0` the sets are bounded and fit in
//! the rectangle returned by [`bounding_box`].

use alloc::vec::Vec;

use crate::error::Error;
use crate::model::{derived_scalars, omega_prime_poly, uncertainty_poly, Bounds, Gains};
use crate::poly;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegionId {
    Omega0,
    OmegaPrime,
    Omega,
}

impl RegionId {
    pub const ALL: [RegionId; 3] = [RegionId::Omega0, RegionId::OmegaPrime, RegionId::Omega];

    pub fn as_str(&self) -> &'static str {
        match self {
            RegionId::Omega0 => "omega0",
            RegionId::OmegaPrime => "omega_prime",
            RegionId::Omega => "omega",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "omega0" | "Omega0" => Some(RegionId::Omega0),
            "omega_prime" | "OmegaPrime" => Some(RegionId::OmegaPrime),
            "omega" | "Omega" => Some(RegionId::Omega),
            _ => None,
        }
    }
}

/// Left-minus-right value of one defining inequality; positive means satisfied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slack {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Membership {
    pub member: bool,
    pub slacks: Vec<Slack>,
}

impl Membership {
    fn from_slacks(slacks: Vec<Slack>) -> Self {
        let member = slacks.iter().all(|s| s.value > 0.0);
        Self { member, slacks }
    }

    pub fn min_slack(&self) -> f64 {
        self.slacks.iter().map(|s| s.value).fold(f64::INFINITY, f64::min)
    }
}

/// The two `Omega0` quadratic slacks
/// `(k_p² − k̄ − k_d T₁², k_d² − k_p − k̄ − k_d T₂²)`.
pub fn omega0_slacks(bounds: &Bounds, gains: &Gains) -> (f64, f64) {
    let d = derived_scalars(bounds, gains);
    let (kp, kd) = (gains.kp, gains.kd);
    (kp * kp - d.kbar - kd * d.t1 * d.t1, kd * kd - kp - d.kbar - kd * d.t2 * d.t2)
}

/// `2k̄₁k̄₂ − T₁² − k̄₁T₂²`, positive on `Omega` (together with `k̄₁ > 0`).
pub fn omega_quadratic(bounds: &Bounds, gains: &Gains) -> f64 {
    let d = derived_scalars(bounds, gains);
    2.0 * d.kbar1 * d.kbar2 - d.t1 * d.t1 - d.kbar1 * d.t2 * d.t2
}

pub fn membership(region: RegionId, bounds: &Bounds, gains: &Gains) -> Membership {
    let d = derived_scalars(bounds, gains);
    let slacks = match region {
        RegionId::Omega0 => {
            let (s1, s2) = omega0_slacks(bounds, gains);
            alloc::vec![
                Slack { name: "kp_positive", value: gains.kp },
                Slack { name: "kd_positive", value: gains.kd },
                Slack { name: "position_decay", value: s1 },
                Slack { name: "velocity_decay", value: s2 },
            ]
        }
        RegionId::OmegaPrime => alloc::vec![
            Slack { name: "kp_above_l1", value: d.kbar1 },
            Slack { name: "quadratic", value: d.kbar1 * d.kbar2 - d.t1 * d.t1 - d.kbar1 * d.t2 * d.t2 },
        ],
        RegionId::Omega => alloc::vec![
            Slack { name: "kp_above_l1", value: d.kbar1 },
            Slack { name: "quadratic", value: omega_quadratic(bounds, gains) },
        ],
    };
    Membership::from_slacks(slacks)
}

/// `Omega` is nonempty iff `U < 1`.
pub fn omega_nonempty(bounds: &Bounds) -> bool {
    bounds.uncertainty() < 1.0
}

/// `OmegaPrime` is nonempty iff `16L₁M⁴ + 16N₁M³ + 4L₂M² + 4N₂M < 1`.
pub fn omega_prime_nonempty(bounds: &Bounds) -> bool {
    omega_prime_poly(bounds, bounds.m) < 1.0
}

/// A root of one of the threshold quartics along with `|LHS − 1|` at it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuarticRoot {
    pub value: f64,
    pub residual: f64,
}

fn monotone_quartic_root(bounds: &Bounds, lhs: fn(&Bounds, f64) -> f64) -> QuarticRoot {
    // LHS(hi) ≥ 2N₂·hi > 1 for both quartics.
    let hi = 1.0 + 1.0 / (2.0 * bounds.n2);
    let f = |s: f64| lhs(bounds, s) - 1.0;
    let value = poly::bisect_increasing(f, 0.0, hi);
    QuarticRoot { value, residual: libm::fabs(f(value)) }
}

/// `M₀*`: above it `Omega0` (and `OmegaPrime`) is empty. Ignores `bounds.m`.
pub fn m0_star(bounds: &Bounds) -> QuarticRoot {
    monotone_quartic_root(bounds, omega_prime_poly)
}

/// `M₂*`: the positive root of `U(s) = 1`; above it no PD gains stabilize the
/// whole class. Ignores `bounds.m`.
pub fn m2_star(bounds: &Bounds) -> QuarticRoot {
    monotone_quartic_root(bounds, uncertainty_poly)
}

/// Numeric bracket on `M₁* = sup{M > 0 : Omega0(M) ≠ ∅}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct M1Bracket {
    /// Largest `M` at which a positive-margin `Omega0` point was found
    /// (0 when none was needed: `Omega0(0)` is unbounded and nonempty).
    pub lower: f64,
    /// Smallest `M` at which the grid search found no `Omega0` point. Limited
    /// by the search resolution, so it is an estimate, not a certificate.
    pub upper: f64,
    /// Witness gains and their margin η at `lower`.
    pub witness: Option<(Gains, f64)>,
    pub iterations: usize,
    /// The bisection hit its iteration cap before the bracket shrank to `tol`.
    pub exhausted: bool,
}

const M1_COARSE: usize = 64;
const M1_REFINE_ROUNDS: usize = 40;
const M1_MAX_ITERATIONS: usize = 200;

/// Bisection on `M` (valid because `Omega0(M)` shrinks as `M` grows), deciding
/// nonemptiness at each `M` by maximizing the `Omega0` margin over the
/// bounding box.
pub fn m1_star(bounds: &Bounds, tol: f64) -> Result<M1Bracket, Error> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidInput(alloc::format!("tol must be positive, got {tol}")));
    }
    let mut lo = 0.0;
    let mut hi = m0_star(bounds).value;
    let mut witness = None;
    let mut iterations = 0;
    while hi - lo > tol && iterations < M1_MAX_ITERATIONS {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        match omega0_witness(&bounds.with_m(mid), M1_COARSE, M1_REFINE_ROUNDS) {
            Some(w) => {
                lo = mid;
                witness = Some(w);
            }
            None => hi = mid,
        }
    }
    Ok(M1Bracket { lower: lo, upper: hi, witness, iterations, exhausted: hi - lo > tol })
}

/// Best `Omega0` point at `bounds.m > 0` if its margin is positive.
pub fn omega0_witness(bounds: &Bounds, coarse: usize, rounds: usize) -> Option<(Gains, f64)> {
    let bx = bounding_box(bounds).ok()?;
    let (g, eta) = maximize_on_box(|g| region_objective(RegionId::Omega0, bounds, g), &bx, coarse, coarse, rounds, &[]);
    (eta > 0.0).then_some((g, eta))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub m0: f64,
    pub m1_lower: f64,
    pub m1_upper: f64,
    pub m2: f64,
    pub residual_m0: f64,
    pub residual_m2: f64,
}

pub fn thresholds(bounds: &Bounds, m1_tol: f64) -> Result<Thresholds, Error> {
    let m0 = m0_star(bounds);
    let m2 = m2_star(bounds);
    let m1 = m1_star(bounds, m1_tol)?;
    Ok(Thresholds {
        m0: m0.value,
        m1_lower: m1.lower,
        m1_upper: m1.upper,
        m2: m2.value,
        residual_m0: m0.residual,
        residual_m2: m2.residual,
    })
}

/// What the threshold theorems say about the nonlinear class at `bounds.m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stabilizability {
    /// `M` below the certified lower bracket of `M₁*`: gains in `Omega0` work.
    Stabilizable,
    /// Between `M₁*` and `M₂*`; no conclusion is available.
    Indeterminate,
    /// `U ≥ 1`: not stabilizable by any PD gains.
    NotStabilizable,
}

impl Stabilizability {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Stabilizable => "stabilizable",
            Self::Indeterminate => "indeterminate",
            Self::NotStabilizable => "not_stabilizable",
        }
    }
}

pub fn classify_nonlinear(bounds: &Bounds, m1: &M1Bracket) -> Stabilizability {
    if !omega_nonempty(bounds) {
        Stabilizability::NotStabilizable
    } else if bounds.m == 0.0 || bounds.m < m1.lower {
        Stabilizability::Stabilizable
    } else {
        Stabilizability::Indeterminate
    }
}

/// The maximizer of the `Omega` quadratic slack,
/// `k_p* = (1 − 2N₂M − 2L₂M² − 2N₁M³)/(2M⁴)`, `k_d* = (1 − N₂M)/M²`.
pub fn candidate_gains(bounds: &Bounds) -> Result<Gains, Error> {
    let m = bounds.m;
    if m == 0.0 {
        return Err(Error::UnboundedRegion("use synth_gains"));
    }
    if !omega_nonempty(bounds) {
        return Err(Error::RegionEmpty);
    }
    let (m2, m3, m4) = (m * m, m * m * m, m * m * m * m);
    let kp = (1.0 - 2.0 * bounds.n2 * m - 2.0 * bounds.l2 * m2 - 2.0 * bounds.n1 * m3) / (2.0 * m4);
    let kd = (1.0 - bounds.n2 * m) / m2;
    Ok(Gains { kp, kd })
}

/// Axis-aligned rectangle of gain pairs (open bounds).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainBox {
    pub kp_min: f64,
    pub kp_max: f64,
    pub kd_min: f64,
    pub kd_max: f64,
}

impl GainBox {
    pub fn new(kp_min: f64, kp_max: f64, kd_min: f64, kd_max: f64) -> Result<Self, Error> {
        let ok = [kp_min, kp_max, kd_min, kd_max].iter().all(|v| v.is_finite()) && kp_min < kp_max && kd_min < kd_max;
        if !ok {
            return Err(Error::InvalidInput(alloc::format!(
                "degenerate gain box kp ∈ ({kp_min}, {kp_max}), kd ∈ ({kd_min}, {kd_max})"
            )));
        }
        Ok(Self { kp_min, kp_max, kd_min, kd_max })
    }

    pub fn contains(&self, g: &Gains) -> bool {
        g.kp > self.kp_min && g.kp < self.kp_max && g.kd > self.kd_min && g.kd < self.kd_max
    }

    fn clamp(&self, kp: f64, kd: f64) -> Gains {
        Gains { kp: kp.clamp(self.kp_min, self.kp_max), kd: kd.clamp(self.kd_min, self.kd_max) }
    }
}

/// `kp ∈ (L₁, 4/M⁴)`, `kd ∈ (L₂, 2/M²)`, containing the closure of `Omega`.
pub fn bounding_box(bounds: &Bounds) -> Result<GainBox, Error> {
    let m = bounds.m;
    if m == 0.0 {
        return Err(Error::UnboundedRegion("region unbounded"));
    }
    GainBox::new(bounds.l1, 4.0 / (m * m * m * m), bounds.l2, 2.0 / (m * m))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    /// Defaults to [`bounding_box`] when `M > 0`.
    pub region_box: Option<GainBox>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionPoint {
    pub kp: f64,
    pub kd: f64,
    pub min_slack: f64,
    pub member: bool,
}

/// Node coordinates of an `nx × ny` grid spanning the box edges inclusive,
/// ordered row-major: `kd` indexes rows, `kp` varies fastest.
pub fn grid_nodes(bx: &GainBox, nx: usize, ny: usize) -> impl Iterator<Item = Gains> + Clone + '_ {
    let hx = (bx.kp_max - bx.kp_min) / (nx - 1) as f64;
    let hy = (bx.kd_max - bx.kd_min) / (ny - 1) as f64;
    (0..ny).flat_map(move |j| {
        (0..nx).map(move |i| Gains { kp: bx.kp_min + hx * i as f64, kd: bx.kd_min + hy * j as f64 })
    })
}

/// Resolves the box a sample should cover and validates the grid size.
pub fn resolve_grid(bounds: &Bounds, grid: &Grid) -> Result<GainBox, Error> {
    if grid.nx < 2 || grid.ny < 2 {
        return Err(Error::InvalidInput(alloc::format!("grid needs nx, ny ≥ 2, got {}×{}", grid.nx, grid.ny)));
    }
    match grid.region_box {
        Some(b) => Ok(b),
        None => bounding_box(bounds).map_err(|_| Error::UnboundedRegion("region unbounded: supply a box")),
    }
}

pub fn evaluate_point(region: RegionId, bounds: &Bounds, g: Gains) -> RegionPoint {
    let m = membership(region, bounds, &g);
    RegionPoint { kp: g.kp, kd: g.kd, min_slack: m.min_slack(), member: m.member }
}

pub fn sample_region(region: RegionId, bounds: &Bounds, grid: &Grid) -> Result<Vec<RegionPoint>, Error> {
    let bx = resolve_grid(bounds, grid)?;
    Ok(grid_nodes(&bx, grid.nx, grid.ny).map(|g| evaluate_point(region, bounds, g)).collect())
}

/// The quantity [`synth_gains`] maximizes: the margin η for `Omega0` (the
/// positivity constraints are enforced by the search box), otherwise the
/// smallest constraint slack.
pub fn region_objective(region: RegionId, bounds: &Bounds, g: &Gains) -> f64 {
    match region {
        RegionId::Omega0 if g.kp > 0.0 && g.kd > 0.0 => {
            let (s1, s2) = omega0_slacks(bounds, g);
            s1.min(s2)
        }
        _ => membership(region, bounds, g).min_slack(),
    }
}

fn improves(candidate: (Gains, f64), best: (Gains, f64)) -> bool {
    let ((g, v), (bg, bv)) = (candidate, best);
    v > bv || (v == bv && (g.kp, g.kd) < (bg.kp, bg.kd))
}

/// Grid search plus stencil refinement in coordinates `(u, v)` on a rectangle,
/// with `to_gain` mapping coordinates to gains. Seeds are given in coordinates.
fn search_coords(
    objective: &impl Fn(&Gains) -> f64,
    to_gain: impl Fn(f64, f64) -> Gains,
    (u0, u1, v0, v1): (f64, f64, f64, f64),
    nx: usize,
    ny: usize,
    rounds: usize,
    seeds: &[(f64, f64)],
) -> (Gains, f64) {
    let mut best = (to_gain(u0, v0), f64::NEG_INFINITY);
    let mut best_uv = (u0, v0);
    let mut hx = (u1 - u0) / (nx - 1) as f64;
    let mut hy = (v1 - v0) / (ny - 1) as f64;
    for j in 0..ny {
        for i in 0..nx {
            let (u, v) = (u0 + hx * i as f64, v0 + hy * j as f64);
            let g = to_gain(u, v);
            let val = objective(&g);
            if !val.is_nan() && improves((g, val), best) {
                best = (g, val);
                best_uv = (u, v);
            }
        }
    }
    for &(u, v) in seeds {
        let g = to_gain(u, v);
        let val = objective(&g);
        if !val.is_nan() && improves((g, val), best) {
            best = (g, val);
            best_uv = (u, v);
        }
    }
    for _ in 0..rounds {
        hx *= 0.5;
        hy *= 0.5;
        let (cu, cv) = best_uv;
        for j in -2i32..=2 {
            for i in -2i32..=2 {
                let u = (cu + hx * i as f64).clamp(u0, u1);
                let v = (cv + hy * j as f64).clamp(v0, v1);
                let g = to_gain(u, v);
                let val = objective(&g);
                if !val.is_nan() && improves((g, val), best) {
                    best = (g, val);
                    best_uv = (u, v);
                }
            }
        }
    }
    best
}

/// Coarse grid search followed by `rounds` of local 5×5 stencil refinement,
/// halving the stencil spacing every round. The search runs once on a
/// uniform grid and, when the box reaches positive gains, once more on a
/// logarithmic one (the regions can be thin compared with the box); the
/// better result wins. Ties go to the lexicographically smallest `(kp, kd)`.
pub fn maximize_on_box(
    objective: impl Fn(&Gains) -> f64,
    bx: &GainBox,
    nx: usize,
    ny: usize,
    rounds: usize,
    seeds: &[Gains],
) -> (Gains, f64) {
    let seeds: Vec<(f64, f64)> = seeds.iter().map(|g| (g.kp, g.kd)).collect();
    let linear = search_coords(
        &objective,
        |kp, kd| Gains { kp, kd },
        (bx.kp_min, bx.kp_max, bx.kd_min, bx.kd_max),
        nx,
        ny,
        rounds,
        &seeds,
    );
    if !(bx.kp_max > 0.0 && bx.kd_max > 0.0) {
        return linear;
    }
    let floor = |lo: f64, hi: f64| libm::log(lo.max(hi * LOG_FLOOR));
    let logarithmic = search_coords(
        &objective,
        |u, v| bx.clamp(libm::exp(u), libm::exp(v)),
        (floor(bx.kp_min, bx.kp_max), libm::log(bx.kp_max), floor(bx.kd_min, bx.kd_max), libm::log(bx.kd_max)),
        nx,
        ny,
        rounds,
        &[],
    );
    if improves(logarithmic, linear) {
        logarithmic
    } else {
        linear
    }
}

/// Smallest gain the logarithmic search reaches, relative to the box's upper edge.
const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Synthesis {
    pub gains: Gains,
    /// Achieved value of [`region_objective`] (η for `Omega0`).
    pub margin: f64,
}

pub const SYNTH_COARSE: usize = 64;
pub const DEFAULT_SYNTH_BUDGET: usize = 40;

/// Gains maximizing the region margin.
///
/// For `M > 0` the search runs over [`bounding_box`]; `budget` is the number
/// of refinement rounds. For `M = 0` the regions are unbounded and the margin
/// grows without limit, so the diagonal `k_p = k_d = k` is doubled from 1
/// until membership, at most `budget` times.
pub fn synth_gains(bounds: &Bounds, region: RegionId, budget: usize) -> Result<Synthesis, Error> {
    bounds.validate()?;
    let nonempty = match region {
        RegionId::Omega => omega_nonempty(bounds),
        RegionId::OmegaPrime => omega_prime_nonempty(bounds),
        // Omega0 ⊆ OmegaPrime; the exact boundary M₁* is only known numerically
        RegionId::Omega0 => omega_prime_nonempty(bounds),
    };
    if !nonempty {
        return Err(Error::RegionEmpty);
    }
    let objective = |g: &Gains| region_objective(region, bounds, g);

    if bounds.m == 0.0 {
        let mut k = 1.0;
        let mut best = (Gains { kp: k, kd: k }, objective(&Gains { kp: k, kd: k }));
        for _ in 0..=budget {
            let g = Gains { kp: k, kd: k };
            let v = objective(&g);
            best = (g, v);
            if membership(region, bounds, &g).member {
                return Ok(Synthesis { gains: g, margin: v });
            }
            k *= 2.0;
        }
        return Err(Error::SynthesisFailed { best: best.0, margin: best.1 });
    }

    let bx = bounding_box(bounds)?;
    let seeds: Vec<Gains> = match region {
        RegionId::Omega => candidate_gains(bounds).into_iter().collect(),
        _ => Vec::new(),
    };
    let (gains, margin) = maximize_on_box(objective, &bx, SYNTH_COARSE, SYNTH_COARSE, budget, &seeds);
    if margin > 0.0 && membership(region, bounds, &gains).member {
        Ok(Synthesis { gains, margin })
    } else {
        Err(Error::SynthesisFailed { best: gains, margin })
    }
}
