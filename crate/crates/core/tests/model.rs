use proptest::prelude::*;

use pdstab_core::linalg::Matrix;
use pdstab_core::model::{
    benchmark_plant, check_equilibrium, check_jacobian_bounds, closed_loop, derived_scalars, validate_linear_plant,
    BenchmarkExtra, BenchmarkKind, Dynamics, JacobianSampling,
};
use pdstab_core::{Bounds, Gains, LinearPlant};

#[test]
fn benchmark_families_respect_declared_bounds() {
    let b = Bounds::new(0.3, 0.2, 0.4, 0.1, 0.25).unwrap();
    for n in 1..=3 {
        let ystar: Vec<f64> = (0..n).map(|i| i as f64 - 0.5).collect();
        for kind in [BenchmarkKind::Sine, BenchmarkKind::NonaffineSine, BenchmarkKind::CornerLinear] {
            let plant = benchmark_plant(kind, &b, n, &ystar, &BenchmarkExtra::default()).unwrap();
            let r = check_jacobian_bounds(&plant, &b, &JacobianSampling { samples: 300, ..Default::default() });
            assert!(r.pass, "{kind:?} n={n}: {r:?}");
            assert!(check_equilibrium(&plant, 0.0).holds);
        }
    }
}

#[test]
fn sampled_sine_jacobian_reaches_its_bound() {
    // ∂f/∂x₁ = L₁ cos(z₁), whose sup over the sample box is L₁
    let b = Bounds::new(0.7, 0.2, 0.4, 0.1, 0.25).unwrap();
    let plant = benchmark_plant(BenchmarkKind::Sine, &b, 1, &[0.0], &BenchmarkExtra::default()).unwrap();
    let r = check_jacobian_bounds(&plant, &b, &JacobianSampling { samples: 5000, ..Default::default() });
    assert!(r.max_df_dx1 > 0.99 * b.l1 && r.max_df_dx1 <= b.l1 + 1e-6);
    assert!((r.min_df_du_eig - 1.0).abs() < 1e-6);
}

#[test]
fn tighter_declared_bounds_fail_the_check() {
    let real = Bounds::new(0.7, 0.2, 0.4, 0.1, 0.25).unwrap();
    let plant = benchmark_plant(BenchmarkKind::Sine, &real, 2, &[0.0, 0.0], &BenchmarkExtra::default()).unwrap();
    let claimed = Bounds::new(0.35, 0.2, 0.4, 0.1, 0.25).unwrap();
    assert!(!check_jacobian_bounds(&plant, &claimed, &JacobianSampling::default()).pass);
}

#[test]
fn offset_plant_breaks_the_equilibrium() {
    let b = Bounds::new(0.1, 0.1, 0.1, 0.1, 0.0).unwrap();
    let extra = BenchmarkExtra { epsilon: None, delta: Some(vec![1.0, -2.0]) };
    let plant = benchmark_plant(BenchmarkKind::OffsetEquilibrium, &b, 2, &[0.0, 0.0], &extra).unwrap();
    let eq = check_equilibrium(&plant, 1e-12);
    assert!(!eq.holds);
    assert!((eq.drift_norm - 5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn closed_loop_drift_reproduces_plant_dynamics() {
    let a = Matrix::from_rows(&[[0.1, 0.2], [-0.3, 0.0]]).unwrap();
    let b = Matrix::from_rows(&[[0.0, 0.1], [0.1, -0.2]]).unwrap();
    let c = Matrix::from_rows(&[[0.2, 0.0], [0.0, 0.1]]).unwrap();
    let d = Matrix::from_rows(&[[0.05, 0.0], [0.3, 0.1]]).unwrap();
    let e = Matrix::from_rows(&[[0.1, 0.1], [0.0, 0.2]]).unwrap();
    let plant = LinearPlant::new(a, b, c, d, e).unwrap();
    let g = Gains::new(2.5, 1.5).unwrap();
    let cl = closed_loop(&plant, &g).unwrap();
    let (x1, x2) = ([0.3, -1.1], [0.7, 0.2]);
    let u: Vec<f64> = (0..2).map(|i| -g.kp * x1[i] - g.kd * x2[i]).collect();
    let (mut f, mut gg) = ([0.0; 2], [0.0; 2]);
    plant.drift(&x1, &x2, &u, &mut f);
    plant.diffusion(&x1, &x2, &u, &mut gg);
    let z = [x1[0], x1[1], x2[0], x2[1]];
    let dz = cl.drift.mul_vec(&z);
    let bz = cl.diffusion.mul_vec(&z);
    for i in 0..2 {
        assert!((dz[i] - x2[i]).abs() < 1e-14);
        assert!((dz[2 + i] - f[i]).abs() < 1e-14);
        assert!(bz[i].abs() < 1e-14);
        assert!((bz[2 + i] - gg[i]).abs() < 1e-14);
    }
}

#[test]
fn out_of_bounds_matrices_are_reported() {
    let b = Bounds::new(0.1, 0.1, 0.1, 0.1, 0.1).unwrap();
    let mut p = LinearPlant::corner(&b, 2);
    assert!(validate_linear_plant(&p, &b).pass);
    p.e = Matrix::scalar(2, 0.2);
    let v = validate_linear_plant(&p, &b);
    assert!(!v.pass);
    assert_eq!(v.checks.iter().filter(|c| !c.ok).count(), 1);
}

proptest! {
    #[test]
    fn uncertainty_grows_with_m(l1 in 0.01..2.0f64, l2 in 0.01..2.0f64, n1 in 0.01..2.0f64, n2 in 0.01..2.0f64, m in 0.0..2.0f64, dm in 0.0..1.0f64) {
        let b = Bounds::new(l1, l2, n1, n2, m).unwrap();
        prop_assert!(b.with_m(m + dm).uncertainty() >= b.uncertainty());
        let expected = 4.0 * l1 * m.powi(4) + 4.0 * n1 * m.powi(3) + 2.0 * l2 * m * m + 2.0 * n2 * m;
        prop_assert!((b.uncertainty() - expected).abs() <= 1e-12 * (1.0 + expected));
    }

    #[test]
    fn derived_scalars_definitions(kp in 0.0..50.0f64, kd in 0.0..50.0f64, m in 0.0..1.0f64) {
        let b = Bounds::new(0.3, 0.4, 0.5, 0.6, m).unwrap();
        let d = derived_scalars(&b, &Gains { kp, kd });
        prop_assert_eq!(d.kbar, 0.7 * (kp + kd));
        prop_assert_eq!(d.kbar1, kp - 0.3);
        prop_assert_eq!(d.t1, 0.5 + m * kp);
        prop_assert_eq!(d.t2, 0.6 + m * kd);
    }
}
