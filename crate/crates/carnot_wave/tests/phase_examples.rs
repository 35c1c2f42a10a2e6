//! Phase values at special points, positivity of the imaginary part and homogeneity.

mod common;

use carnot_wave::flow::flow_origin;
use carnot_wave::numerics::{max_abs_c, SeededRng, C64};
use carnot_wave::phase::{mixed_hessian, phase_value, phi0_finite_difference, stationarity_check};
use carnot_wave::verify::block_structure_error;
use carnot_wave::{Covector, Error, Group2Step};
use common::{metivier_groups, random_covector, random_point};
use nalgebra::{DMatrix, DVector};

#[test]
fn phase_at_time_zero() {
    let mut rng = SeededRng::new(31);
    for g in metivier_groups() {
        for _ in 0..10 {
            let cov = random_covector(&g, &mut rng);
            let p = random_point(&g, &mut rng);
            let pe = phase_value(&g, 0.0, &p, &cov).unwrap();
            let a = g.abs_j_mu(&cov.mu);
            let want = C64::new(p.x.dot(&cov.xi) + p.u.dot(&cov.mu), 0.25 * p.x.dot(&(a * &p.x)));
            assert!((pe.value - want).norm() <= 1e-12 * (1.0 + want.norm()));
        }
    }
}

#[test]
fn hessian_at_time_zero_is_the_identity() {
    let mut rng = SeededRng::new(32);
    for g in metivier_groups() {
        let cov = random_covector(&g, &mut rng);
        let h = mixed_hessian(&g, 0.0, &cov).unwrap();
        let id = DMatrix::<C64>::identity(g.d1(), g.d1());
        assert!(max_abs_c(&(&h.phi0 - id)) <= 1e-14);
        assert!((h.det_phi - 1.0).norm() <= 1e-14);
        assert!((h.density - 1.0).norm() <= 1e-14);
    }
}

#[test]
fn density_is_continuous_at_time_zero() {
    let g = Group2Step::nonisotropic_heisenberg();
    let cov = Covector::from_slices(&[0.4, -0.3, 0.8, 0.2], &[1.3]);
    let mut prev = f64::INFINITY;
    for k in 1..8 {
        let t = 10f64.powi(-k);
        let gap = (mixed_hessian(&g, t, &cov).unwrap().density - 1.0).norm();
        assert!(gap < prev);
        prev = gap;
    }
    assert!(prev < 1e-6);
}

#[test]
fn nonisotropic_determinant_matches_finite_differences() {
    let g = Group2Step::nonisotropic_heisenberg();
    let xi = DVector::from_column_slice(&[0.3, -0.5, 0.7, 0.4]);
    let mu = DVector::from_element(1, xi.norm());
    let cov = Covector::new(xi, mu);
    // theta = t |mu| / (2 |xi|) = 1/2
    let h = mixed_hessian(&g, 1.0, &cov).unwrap();
    let fd = phi0_finite_difference(&g, 1.0, &cov, 1e-5).unwrap();
    assert!((fd.determinant() - h.det_phi).norm() <= 1e-6);
    assert!((h.density * h.density - h.det_phi).norm() <= 1e-12);
}

#[test]
fn imaginary_part_is_nonnegative() {
    let mut rng = SeededRng::new(33);
    for g in metivier_groups() {
        for _ in 0..3400 {
            let cov = random_covector(&g, &mut rng);
            let t = rng.uniform(-4.0, 4.0);
            let p = random_point(&g, &mut rng);
            let geo = carnot_wave::phase::PhaseGeometry::new(&g, t, &cov).unwrap();
            let im = geo.value(&p).im;
            assert!(im >= -1e-14, "{}: Im phi = {im:e}", g.name());
            if im <= 1e-14 {
                let xt = flow_origin(&g, t, &cov).unwrap().x;
                assert!((&p.x - xt).norm() <= 1e-6);
            }
        }
    }
}

#[test]
fn stationarity_detects_vertical_displacement() {
    let mut rng = SeededRng::new(34);
    for g in metivier_groups() {
        let cov = random_covector(&g, &mut rng);
        let mut p = flow_origin(&g, 0.8, &cov).unwrap().point();
        p.u[0] += 0.1;
        assert!(!stationarity_check(&g, 0.8, &p, &cov, 1e-3).unwrap());
    }
}

#[test]
fn phase_is_one_homogeneous_in_frequency() {
    let mut rng = SeededRng::new(35);
    for g in metivier_groups() {
        for _ in 0..10 {
            let cov = random_covector(&g, &mut rng);
            let p = random_point(&g, &mut rng);
            let t = rng.uniform(-4.0, 4.0);
            let r = rng.uniform(0.2, 5.0);
            let a = phase_value(&g, t, &p, &cov).unwrap().value;
            let b = phase_value(&g, t, &p, &cov.scaled(r)).unwrap().value;
            assert!((a * r - b).norm() <= 1e-11 * (1.0 + b.norm()));
        }
    }
}

#[test]
fn full_hessian_has_identity_vertical_block() {
    let mut rng = SeededRng::new(36);
    for g in metivier_groups() {
        let cov = random_covector(&g, &mut rng);
        let p = random_point(&g, &mut rng);
        assert!(block_structure_error(&g, 1.2, &p, &cov).unwrap() <= 1e-7);
    }
}

#[test]
fn phase_rejects_degenerate_frequencies() {
    let g = Group2Step::heisenberg();
    let p = carnot_wave::Point::origin(2, 1);
    let flat = Covector::from_slices(&[0.0, 0.0], &[1.0]);
    assert_eq!(phase_value(&g, 1.0, &p, &flat).unwrap_err(), Error::ZeroFrequency);
    let outside = Covector::from_slices(&[1.0, 0.0], &[0.0]);
    assert!(matches!(mixed_hessian(&g, 1.0, &outside), Err(Error::OutsideOmega { .. })));
}
