//! Acceptance criteria, one line of output per criterion. Run with
//! `cargo test -p pdstab-cli --test acceptance`.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use pdstab_cli::parallel;
use pdstab_core::certificates::{self, Verdict};
use pdstab_core::linalg::{self, Matrix};
use pdstab_core::model::{benchmark_plant, closed_loop, BenchmarkExtra, BenchmarkKind};
use pdstab_core::moments::{self, Method};
use pdstab_core::montecarlo::{self, Observable, SimConfig};
use pdstab_core::regions::{self, Grid, RegionId};
use pdstab_core::{Bounds, Gains, LinearPlant};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Option<f64>) -> Result<(), String> {
    match limit {
        Some(s) if elapsed.as_secs_f64() >= s => Err(format!("took {:.1}s, limit {s}s", elapsed.as_secs_f64())),
        _ => Ok(()),
    }
}

fn random_bounds(rng: &mut ChaCha8Rng, m_max: f64) -> Bounds {
    let mut v = || rng.random_range(0.01..2.0);
    let (l1, l2, n1, n2) = (v(), v(), v(), v());
    Bounds::new(l1, l2, n1, n2, rng.random_range(0.0..m_max)).unwrap()
}

fn member(region: RegionId, b: &Bounds, g: &Gains) -> bool {
    regions::membership(region, b, g).member
}

fn crit1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut hits0, mut hits) = (0, 0);
    for k in 0..10_000 {
        let b = random_bounds(&mut rng, 1.5);
        // half the gains from the bounding box, where members live
        let g = match regions::bounding_box(&b) {
            Ok(bx) if k % 2 == 0 => Gains {
                kp: rng.random_range(bx.kp_min..=bx.kp_max),
                kd: rng.random_range(bx.kd_min..=bx.kd_max),
            },
            _ => Gains { kp: rng.random_range(0.0..50.0), kd: rng.random_range(0.0..50.0) },
        };
        let (m0, mp, m) = (member(RegionId::Omega0, &b, &g), member(RegionId::OmegaPrime, &b, &g), member(RegionId::Omega, &b, &g));
        ensure(!m0 || mp, || format!("Ω₀ ⊄ Ω′ at {b:?}, {g:?}"))?;
        ensure(!mp || m, || format!("Ω′ ⊄ Ω at {b:?}, {g:?}"))?;
        let smaller = b.with_m(b.m * rng.random_range(0.0..1.0));
        ensure(!m0 || member(RegionId::Omega0, &smaller, &g), || format!("Ω₀ not monotone at {b:?}, {g:?}"))?;
        hits0 += m0 as usize;
        hits += m as usize;
    }

    let b = Bounds::new(0.1, 0.1, 0.1, 0.1, 0.5).unwrap();
    ensure(b.uncertainty() < 1.0, || "convexity bounds must have U < 1".into())?;
    let n = 200;
    let pts = regions::sample_region(RegionId::Omega, &b, &Grid { nx: n, ny: n, region_box: None }).map_err(|e| e.to_string())?;
    let at = |i: usize, j: usize| pts[j * n + i].member;
    let contiguous = |line: &mut dyn Iterator<Item = bool>| {
        let v: Vec<bool> = line.collect();
        let first = v.iter().position(|&x| x);
        let last = v.iter().rposition(|&x| x);
        match (first, last) {
            (Some(a), Some(z)) => v[a..=z].iter().all(|&x| x),
            _ => true,
        }
    };
    for j in 0..n {
        ensure(contiguous(&mut (0..n).map(|i| at(i, j))), || format!("row {j} not an interval"))?;
    }
    for i in 0..n {
        ensure(contiguous(&mut (0..n).map(|j| at(i, j))), || format!("column {i} not an interval"))?;
    }
    let members: Vec<(usize, usize)> = (0..n * n).filter(|&k| pts[k].member).map(|k| (k % n, k / n)).collect();
    ensure(members.len() > 100, || format!("only {} grid members", members.len()))?;
    let mut pairs = 0;
    while pairs < 100_000 {
        let p = members[rng.random_range(0..members.len())];
        let q = members[rng.random_range(0..members.len())];
        if (p.0 + q.0) % 2 != 0 || (p.1 + q.1) % 2 != 0 {
            continue;
        }
        pairs += 1;
        ensure(at((p.0 + q.0) / 2, (p.1 + q.1) / 2), || format!("midpoint of {p:?}, {q:?} left Ω"))?;
    }
    Ok(format!("1e4 samples ({hits0} in Ω₀, {hits} in Ω), {} grid members, {pairs} midpoint pairs", members.len()))
}

fn crit2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let b = random_bounds(&mut rng, 1.0);
        let t = regions::thresholds(&b, 1e-6).map_err(|e| e.to_string())?;
        worst = worst.max(t.residual_m0).max(t.residual_m2);
        ensure(t.residual_m0 <= 1e-12 && t.residual_m2 <= 1e-12, || format!("residuals {t:?}"))?;
        ensure(t.m1_lower <= t.m0 && t.m0 < t.m2, || format!("ordering {t:?} at {b:?}"))?;
    }
    // independent bisection on 4M⁴ + 4M³ + 2M² + 2M = 1
    let u = |s: f64| 4.0 * s.powi(4) + 4.0 * s.powi(3) + 2.0 * s * s + 2.0 * s - 1.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if u(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let m2 = regions::m2_star(&Bounds::new(1.0, 1.0, 1.0, 1.0, 0.5).unwrap()).value;
    ensure(lo > 0.30 && hi < 0.33, || format!("independent root {lo}"))?;
    ensure((m2 - lo).abs() <= 1e-12, || format!("m2 {m2} vs independent {lo}"))?;
    Ok(format!("max residual {worst:.1e}, m2(1,1,1,1) = {m2:.6}"))
}

fn crit3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut n = 0;
    while n < 100 {
        let b = random_bounds(&mut rng, 0.5);
        if b.m == 0.0 || b.uncertainty() >= 1.0 {
            continue;
        }
        n += 1;
        let g = regions::candidate_gains(&b).map_err(|e| e.to_string())?;
        let m = regions::membership(RegionId::Omega, &b, &g);
        ensure(m.member && m.slacks.iter().all(|s| s.value > 0.0), || format!("candidate {g:?} not in Ω at {b:?}"))?;
    }
    let mut tuples = Vec::new();
    while tuples.len() < 20 {
        // only tuples whose bounding box is a genuine rectangle give a sweep to run
        let b = random_bounds(&mut rng, 2.0);
        if b.m > 0.0 && b.uncertainty() >= 1.0 && regions::bounding_box(&b).is_ok() {
            tuples.push(b);
        }
    }
    let side = 400;
    let failures: Vec<String> = tuples
        .par_iter()
        .filter_map(|b| {
            let bx = regions::bounding_box(b).unwrap();
            for g in regions::grid_nodes(&bx, side, side) {
                if member(RegionId::Omega, b, &g) {
                    return Some(format!("Ω member {g:?} at {b:?}"));
                }
                if certificates::worst_case_search(b, &g).is_none() {
                    return Some(format!("no defeating corner for {g:?} at {b:?}"));
                }
            }
            None
        })
        .collect();
    ensure(failures.is_empty(), || failures[0].clone())?;
    Ok(format!("100 candidates in Ω; 20×{side}² nodes all defeated"))
}

fn abscissa(q: &Matrix) -> f64 {
    let q = DMatrix::from_row_slice(q.rows(), q.cols(), q.as_slice());
    q.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

fn crit4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut compared, mut stable) = (0, 0);
    while compared < 10_000 {
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-4.0..2.0)).collect();
        let s = abscissa(&certificates::q_matrix(v[0], v[1], v[2], v[3]));
        if s.abs() < 1e-8 {
            continue;
        }
        compared += 1;
        let rh = certificates::routh_hurwitz(&certificates::alpha_coeffs(v[0], v[1], v[2], v[3]));
        ensure(rh == (s < 0.0), || format!("{v:?}: RH {rh}, abscissa {s}"))?;
        stable += rh as usize;
    }
    Ok(format!("{compared} loops, {stable} stable, 0 mismatches"))
}

fn crit5() -> Check {
    let a = certificates::alpha_coeffs(-1.0, -2.0, 0.0, 0.0);
    ensure((a.alpha0, a.alpha1, a.alpha2) == (8.0, 12.0, 6.0), || format!("α = {a:?}"))?;
    let s = moments::spectral_abscissa_scalar(-1.0, -2.0, 0.0, 0.0);
    ensure((s + 2.0).abs() <= 1e-10, || format!("abscissa {s}"))?;
    let cl = pdstab_core::model::ClosedLoopLinear::scalar(-1.0, -2.0, 0.0, 0.0);
    let p0 = Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]).unwrap();
    let traj = moments::propagate(&cl, &p0, 10.0, 1e-3, Method::Rk4).map_err(|e| e.to_string())?;
    let rate = moments::decay_rate(&traj, 0.5).map_err(|e| e.to_string())?.rate;
    ensure((rate + 2.0).abs() <= 0.05 * 2.0, || format!("decay rate {rate}"))?;
    let id = moments::propagate(&cl, &Matrix::identity(2), 10.0, 1e-3, Method::Rk4).map_err(|e| e.to_string())?;
    let rate_id = moments::decay_rate(&id, 0.5).map_err(|e| e.to_string())?.rate;
    Ok(format!("α = (8, 12, 6), abscissa {s:.12}, rate {rate:.4} (P0 = I: {rate_id:.4})"))
}

fn random_in_bounds(rng: &mut ChaCha8Rng, b: &Bounds, n: usize) -> LinearPlant {
    let mut draw = |bound: f64| {
        let data: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = Matrix::from_row_major(n, n, data).unwrap();
        let norm = linalg::spectral_norm(&m);
        let target = bound * rng.random_range(0.0..1.0);
        if norm > 0.0 {
            m.scale(target / norm)
        } else {
            m
        }
    };
    LinearPlant::new(draw(b.l1), draw(b.l2), draw(b.n1), draw(b.n2), draw(b.m)).unwrap()
}

fn crit6() -> Check {
    let b = Bounds::new(0.1, 0.1, 0.1, 0.1, 0.5).unwrap();
    let g = Gains::new(6.6, 3.8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let (mut worst_res, mut worst_p, mut worst_lv) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..1000 {
        let plant = random_in_bounds(&mut rng, &b, 1 + k % 3);
        let c = certificates::lyapunov_linear(&b, &g, &plant).map_err(|e| e.to_string())?;
        ensure(c.plant_in_bounds, || format!("sampled plant {k} out of bounds"))?;
        ensure(c.valid && c.lambda_min_p > 0.0 && c.lambda_max_lv < 0.0, || {
            format!("plant {k}: λmin P = {}, λmax LV = {}", c.lambda_min_p, c.lambda_max_lv)
        })?;
        ensure(c.offdiag_residual <= 1e-10, || format!("plant {k}: off-diagonal {}", c.offdiag_residual))?;
        worst_res = worst_res.max(c.offdiag_residual);
        worst_p = worst_p.min(c.lambda_min_p);
        worst_lv = worst_lv.max(c.lambda_max_lv);
    }
    Ok(format!("1000 plants valid; min λ(P) {worst_p:.3}, max λ(LV) {worst_lv:.3}, off-diagonal {worst_res:.1e}"))
}

fn crit7(pool: &rayon::ThreadPool) -> Check {
    // a₀ = −1, b₀ = −2 with multiplicative noise c = d = 0.5 on x₁ and x₂
    let plant = LinearPlant::scalar(0.0, 0.0, 0.5, 0.5, 0.0);
    let g = Gains::new(1.0, 2.0).unwrap();
    let cl = closed_loop(&plant, &g).map_err(|e| e.to_string())?;
    ensure(certificates::ms_stable_scalar(&plant, &g).unwrap().verdict == Verdict::Stable, || "instance not stable".into())?;
    let (x1, x2) = (1.0, 1.0);
    let cfg = SimConfig::new(5.0, 1e-3, 10_000, 2024, vec![x1], vec![x2]);
    let est = parallel::estimate(pool, &plant, &g, &cfg, Observable::ErrorAndRate).map_err(|e| e.to_string())?;
    let p0 = Matrix::from_rows(&[[x1 * x1, x1 * x2], [x1 * x2, x2 * x2]]).unwrap();
    let traces = moments::propagate(&cl, &p0, 5.0, 1e-3, Method::Expm).map_err(|e| e.to_string())?.traces();
    ensure(traces.len() == est.times.len(), || format!("grids differ: {} vs {}", traces.len(), est.times.len()))?;
    let ok = (0..traces.len()).filter(|&k| (est.mean_sq[k] - traces[k]).abs() <= 3.0 * est.stderr[k] + 1e-12).count();
    let frac = ok as f64 / traces.len() as f64;
    ensure(frac >= 0.9, || format!("only {ok}/{} points within 3σ", traces.len()))?;
    Ok(format!("{ok}/{} grid points within 3·stderr ({:.1}%)", traces.len(), 100.0 * frac))
}

fn crit8(pool: &rayon::ThreadPool) -> Check {
    let b = Bounds::new(0.1, 0.1, 0.1, 0.1, 0.3).unwrap();
    let s = regions::synth_gains(&b, RegionId::Omega0, regions::DEFAULT_SYNTH_BUDGET).map_err(|e| e.to_string())?;
    let eta = certificates::eta_margin(&b, &s.gains);
    ensure(eta > 0.0, || format!("η = {eta}"))?;
    let mut parts = vec![format!("gains ({:.3}, {:.3}), η = {eta:.3}", s.gains.kp, s.gains.kd)];
    for n in [1usize, 2] {
        let ystar: Vec<f64> = (0..n).map(|i| 0.5 - i as f64).collect();
        let plant = benchmark_plant(BenchmarkKind::Sine, &b, n, &ystar, &BenchmarkExtra::default()).map_err(|e| e.to_string())?;
        let x1: Vec<f64> = ystar.iter().map(|y| y + 2.0).collect();
        let cfg = SimConfig::new(20.0, 1e-3, 2000, 8, x1, vec![0.0; n]).with_stride(100);
        let est = parallel::estimate(pool, &plant, &s.gains, &cfg, Observable::ErrorAndRate).map_err(|e| e.to_string())?;
        let v = montecarlo::convergence_verdict(&est, 1e-2, 0.1);
        ensure(v.converged, || format!("n = {n}: {v:?}, blowups {}", est.blowups))?;
        parts.push(format!("n={n} tail/initial {:.1e}", v.tail_mean / v.initial));
    }
    Ok(parts.join(", "))
}

fn crit9() -> Check {
    let g = Gains::new(1.0, 2.0).unwrap();
    let cfg = |x: f64| SimConfig::new(20.0, 1e-3, 1, 0, vec![x], vec![0.0]).with_stride(10);
    let r = montecarlo::proposition1_demo(&[1.0], &g, &cfg(0.0), 0.1).map_err(|e| e.to_string())?;
    ensure((r.tail_error_sq - 1.0).abs() <= 0.02, || format!("tail ‖e‖² = {}", r.tail_error_sq))?;
    let control = montecarlo::proposition1_demo(&[0.0], &g, &cfg(1.0), 0.1).map_err(|e| e.to_string())?;
    let v = montecarlo::convergence_verdict(&control.error_sq, 1e-2, 0.1);
    ensure(v.converged, || format!("δ = 0 control: {v:?}"))?;
    Ok(format!("tail ‖e‖² = {:.5} (expected {}), δ = 0 converged", r.tail_error_sq, r.expected_error_sq))
}

fn crit10() -> Check {
    let bin = env!("CARGO_BIN_EXE_pdstab");
    let small = ["--l1", "0.1", "--l2", "0.1", "--n1", "0.1", "--n2", "0.1", "--m", "0.5"];
    let cases: Vec<(&str, Vec<&str>, bool)> = vec![
        ("thresholds", small.to_vec(), false),
        ("region", [&small[..], &["--nx", "60", "--ny", "40"]].concat(), true),
        ("check", [&small[..], &["--kp", "6.6", "--kd", "3.8"]].concat(), false),
        ("certify", [&small[..], &["--kp", "6.6", "--kd", "3.8"]].concat(), false),
        ("moments", vec!["--kp", "1", "--kd", "2", "--c", "0.3", "--d", "0.2", "--horizon", "5"], true),
        (
            "simulate",
            [&small[..8], &["--m", "0.3", "--kind", "sine", "--kp", "5", "--kd", "6", "--trials", "700", "--horizon", "3", "--seed", "11"]].concat(),
            true,
        ),
        ("synth", [&small[..], &["--region", "omega", "--certify"]].concat(), false),
    ];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (cmd, args, writes_csv) in &cases {
        let mut runs = Vec::new();
        for (k, threads) in ["1", "1", "4"].iter().enumerate() {
            let csv = dir.path().join(format!("{cmd}{k}.csv"));
            let json = dir.path().join(format!("{cmd}{k}.json"));
            let mut c = Command::new(bin);
            c.arg(cmd).args(args).args(["--threads", threads, "--json", json.to_str().unwrap()]);
            if *writes_csv {
                c.args(["--csv", csv.to_str().unwrap()]);
            }
            let out = c.output().map_err(|e| e.to_string())?;
            ensure(out.status.code() == Some(0), || format!("{cmd} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))?;
            let files = (std::fs::read(&json).map_err(|e| e.to_string())?, std::fs::read(&csv).ok());
            runs.push((out.stdout, out.stderr, files));
        }
        ensure(runs[0] == runs[1], || format!("{cmd}: two runs differ"))?;
        ensure(runs[0] == runs[2], || format!("{cmd}: --threads 1 and 4 differ"))?;
    }
    Ok(format!("{} subcommands identical across 2 runs and --threads 1/4", cases.len()))
}

fn main() -> ExitCode {
    let pool = parallel::pool(None).expect("thread pool");
    let criteria: Vec<(&str, Option<f64>, Box<dyn Fn() -> Check + '_>)> = vec![
        ("region chain and convexity", Some(10.0), Box::new(crit1)),
        ("threshold correctness", Some(30.0), Box::new(crit2)),
        ("candidate gains and corner sweep", Some(120.0), Box::new(crit3)),
        ("Routh-Hurwitz vs spectrum", Some(5.0), Box::new(crit4)),
        ("known-spectrum instance", None, Box::new(crit5)),
        ("quadratic certificate", Some(60.0), Box::new(crit6)),
        ("Monte Carlo vs moments", Some(120.0), Box::new(|| crit7(&pool))),
        ("synthesized gains regulate the sine plant", None, Box::new(|| crit8(&pool))),
        ("offset equilibrium", None, Box::new(crit9)),
        ("CLI determinism", None, Box::new(crit10)),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let result = result.and_then(|msg| within(elapsed, *limit).map(|_| msg));
        match result {
            Ok(msg) => println!("criterion {}: PASS {name} [{:.2}s] {msg}", i + 1, elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("criterion {}: FAIL {name} [{:.2}s] {msg}", i + 1, elapsed.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
