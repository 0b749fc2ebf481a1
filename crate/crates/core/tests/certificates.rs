use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pdstab_core::certificates::{self, Decomposition, Verdict};
use pdstab_core::linalg::{self, Matrix};
use pdstab_core::moments;
use pdstab_core::regions::{self, RegionId};
use pdstab_core::{Bounds, Gains, LinearPlant};

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn abscissa(m: &Matrix) -> f64 {
    to_na(m).complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Characteristic coefficients via Faddeev–LeVerrier: det(λI − Q) = λ³ + c2 λ² + c1 λ + c0.
fn faddeev_leverrier(q: &Matrix) -> [f64; 3] {
    let q = to_na(q);
    let i = DMatrix::<f64>::identity(3, 3);
    let mut m = i.clone();
    let mut c = [0.0; 4];
    c[3] = 1.0;
    for k in 1..=3 {
        let aq = &q * &m;
        c[3 - k] = -aq.trace() / k as f64;
        m = aq + &i * c[3 - k];
    }
    [c[0], c[1], c[2]]
}

#[test]
fn alpha_coefficients_match_characteristic_polynomial() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..1000 {
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let a = certificates::alpha_coeffs(v[0], v[1], v[2], v[3]);
        let fl = faddeev_leverrier(&certificates::q_matrix(v[0], v[1], v[2], v[3]));
        let scale = 1.0 + fl.iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!((a.alpha0 - fl[0]).abs() <= 1e-10 * scale);
        assert!((a.alpha1 - fl[1]).abs() <= 1e-10 * scale);
        assert!((a.alpha2 - fl[2]).abs() <= 1e-10 * scale);
    }
}

#[test]
fn routh_hurwitz_matches_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut compared = 0;
    while compared < 5000 {
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-4.0..2.0)).collect();
        let q = certificates::q_matrix(v[0], v[1], v[2], v[3]);
        let s = abscissa(&q);
        if s.abs() < 1e-8 {
            continue;
        }
        compared += 1;
        let rh = certificates::routh_hurwitz(&certificates::alpha_coeffs(v[0], v[1], v[2], v[3]));
        assert_eq!(rh, s < 0.0, "{v:?}: abscissa {s}");
        let cubic = moments::spectral_abscissa_scalar(v[0], v[1], v[2], v[3]);
        assert!((cubic - s).abs() < 1e-6 * (1.0 + s.abs()), "{cubic} vs {s}");
    }
}

#[test]
fn corner_sweep_defeats_gains_when_u_at_least_one() {
    let b = Bounds::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let g = Gains { kp: rng.random_range(0.0..100.0), kd: rng.random_range(0.0..100.0) };
        let cx = certificates::worst_case_search(&b, &g).expect("a defeating corner");
        assert_ne!(cx.verdict, Verdict::Stable);
    }
}

#[test]
fn gains_in_omega_survive_every_corner() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut n = 0;
    while n < 200 {
        let m = |r: &mut ChaCha8Rng| r.random_range(0.0..0.5);
        let b = Bounds::new(m(&mut rng), m(&mut rng), m(&mut rng), m(&mut rng), rng.random_range(0.05..0.6)).unwrap();
        if b.uncertainty() >= 1.0 {
            continue;
        }
        n += 1;
        let g = regions::candidate_gains(&b).unwrap();
        assert!(certificates::worst_case_search(&b, &g).is_none(), "{b:?}");
    }
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

#[test]
fn spectral_norm_matches_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for n in 1..=4 {
        for _ in 0..50 {
            let data: Vec<f64> = (0..n * n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let m = Matrix::from_row_major(n, n, data).unwrap();
            let svd = to_na(&m).singular_values().max();
            assert!((linalg::spectral_norm(&m) - svd).abs() <= 1e-10 * (1.0 + svd));
        }
    }
}

#[test]
fn lyapunov_certificate_for_random_plants() {
    let b = Bounds::new(0.1, 0.1, 0.1, 0.1, 0.5).unwrap();
    let g = Gains { kp: 6.6, kd: 3.8 };
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for k in 0..300 {
        let plant = random_in_bounds(&mut rng, &b, 1 + k % 3);
        let cert = certificates::lyapunov_linear(&b, &g, &plant).unwrap();
        assert!(cert.plant_in_bounds);
        assert!(cert.valid, "λmin P = {}, λmax LV = {}", cert.lambda_min_p, cert.lambda_max_lv);
        assert!(cert.offdiag_residual <= 1e-10);
    }
}

#[test]
fn generator_bound_for_nonlinear_decompositions() {
    // worst-case decompositions: a, b, c, d, e at their norm bounds, θ = I + δ with sym(δ) ⪰ 0
    let b = Bounds::new(0.1, 0.1, 0.1, 0.1, 0.2).unwrap();
    let s = regions::synth_gains(&b, RegionId::Omega0, 40).unwrap();
    let eta = certificates::eta_margin(&b, &s.gains);
    assert!(eta > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for k in 0..2000 {
        let n = 1 + k % 3;
        let p = random_in_bounds(&mut rng, &b, n);
        let w: Vec<f64> = (0..n * n).map(|_| rng.random_range(-0.3..0.3)).collect();
        let w = Matrix::from_row_major(n, n, w).unwrap();
        let theta = Matrix::identity(n).add(&w.transpose().mul(&w));
        let dec = Decomposition { a: p.a, b: p.b, theta, c: p.c, d: p.d, e: p.e };
        let z1: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let z2: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let lv = certificates::nonlinear_generator_value(&s.gains, &dec, &z1, &z2);
        let norm2 = linalg::dot(&z1, &z1) + linalg::dot(&z2, &z2);
        assert!(lv <= -eta * norm2 + 1e-9 * (1.0 + norm2), "LV = {lv}, −η‖z‖² = {}", -eta * norm2);
        assert!(certificates::nonlinear_lyapunov_value(&s.gains, &z1, &z2) > 0.0 || norm2 == 0.0);
    }
}

#[test]
fn certify_report_for_stabilizing_gains() {
    let b = Bounds::new(0.1, 0.1, 0.1, 0.1, 0.5).unwrap();
    let c = certificates::certify(&b, &Gains { kp: 6.6, kd: 3.8 });
    assert!(c.rh_verdict);
    assert!(c.counterexample.is_none());
    assert!(c.lyapunov.unwrap().valid);
    assert_eq!(c.memberships.len(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn eta_positive_iff_omega0(l in 0.0..1.0f64, n in 0.0..1.0f64, m in 0.0..0.5f64, kp in 0.01..30.0f64, kd in 0.01..30.0f64) {
        let b = Bounds::new(l, l, n, n, m).unwrap();
        let g = Gains { kp, kd };
        prop_assert_eq!(certificates::eta_margin(&b, &g) > 0.0, regions::membership(RegionId::Omega0, &b, &g).member);
    }

    #[test]
    fn omega_membership_implies_rh_at_corner(l1 in 0.0..1.0f64, l2 in 0.0..1.0f64, n1 in 0.0..1.0f64, n2 in 0.0..1.0f64, m in 0.0..0.8f64, kp in 0.0..60.0f64, kd in 0.0..60.0f64) {
        let b = Bounds::new(l1, l2, n1, n2, m).unwrap();
        let g = Gains { kp, kd };
        let member = regions::membership(RegionId::Omega, &b, &g).member;
        let v = certificates::ms_stable_scalar(&LinearPlant::corner(&b, 1), &g).unwrap().verdict;
        if member {
            prop_assert_eq!(v, Verdict::Stable);
        }
    }
}
