//! Hamiltonian, base-point flow, the ODE oracle and geodesic sphere samples.

mod common;

use carnot_wave::flow::{flow_base, flow_ode_oracle, flow_origin, geodesic_sphere_sample, hamiltonian};
use carnot_wave::numerics::SeededRng;
use carnot_wave::{Covector, Error, Group2Step, Point};
use common::{max_diff, metivier_groups, random_covector, random_point};
use nalgebra::DVector;

#[test]
fn hamiltonian_reduces_to_the_euclidean_norm() {
    let mut rng = SeededRng::new(21);
    for g in metivier_groups() {
        let cov = random_covector(&g, &mut rng);
        let origin = Point::origin(g.d1(), g.d2());
        assert!((hamiltonian(&g, &origin, &cov) - cov.xi.norm()).abs() <= 1e-15);
        let flat = Covector::new(cov.xi.clone(), DVector::zeros(g.d2()));
        let p = random_point(&g, &mut rng);
        assert!((hamiltonian(&g, &p, &flat) - cov.xi.norm()).abs() <= 1e-15);
    }
}

#[test]
fn base_point_flow_trivial_cases() {
    let mut rng = SeededRng::new(22);
    for g in metivier_groups() {
        let cov = random_covector(&g, &mut rng);
        let y = random_point(&g, &mut rng);
        let at_origin = flow_base(&g, 0.7, &Point::origin(g.d1(), g.d2()), &cov).unwrap();
        let direct = flow_origin(&g, 0.7, &cov).unwrap();
        assert!(max_diff(&at_origin.x, &direct.x) <= 1e-14);
        assert!(max_diff(&at_origin.u, &direct.u) <= 1e-14);
        assert!(max_diff(&at_origin.xi, &direct.xi) <= 1e-14);
        let start = flow_base(&g, 0.0, &y, &cov).unwrap();
        assert!(max_diff(&start.x, &y.x) <= 1e-14);
        assert!(max_diff(&start.u, &y.u) <= 1e-14);
        assert!(max_diff(&start.xi, &cov.xi) <= 1e-14);
    }
}

#[test]
fn ode_oracle_is_reversible_and_conserves_energy() {
    let g = Group2Step::heisenberg();
    let p0 = Point::origin(2, 1);
    let cov = Covector::from_slices(&[1.0, 0.0], &[1.0]);
    let fwd = flow_ode_oracle(&g, 1.0, &p0, &cov, 1e-3).unwrap();
    let end = fwd.covector();
    let back = flow_ode_oracle(&g, -1.0, &fwd.point(), &end, 1e-3).unwrap();
    assert!(max_diff(&back.x, &p0.x) <= 1e-10);
    assert!(max_diff(&back.u, &p0.u) <= 1e-10);
    assert!(max_diff(&back.xi, &cov.xi) <= 1e-10);
    for k in 1..=10 {
        let t = k as f64 / 10.0;
        let f = flow_ode_oracle(&g, t, &p0, &cov, 1e-4).unwrap();
        assert!((hamiltonian(&g, &f.point(), &f.covector()) - 1.0).abs() <= 1e-10);
    }
    let still = flow_ode_oracle(&g, 0.0, &p0, &cov, 1e-4).unwrap();
    assert_eq!(still.xi, cov.xi);
    assert!(flow_ode_oracle(&g, 1.0, &p0, &cov, 0.0).is_err());
}

#[test]
fn ode_oracle_reports_characteristic_start() {
    let g = Group2Step::heisenberg();
    let cov = Covector::from_slices(&[0.0, 0.0], &[1.0]);
    let r = flow_ode_oracle(&g, 1.0, &Point::origin(2, 1), &cov, 1e-3);
    assert!(matches!(r, Err(Error::NearCharacteristic { .. })));
}

#[test]
fn sphere_at_time_zero_is_the_origin() {
    let g = Group2Step::heisenberg();
    let dirs: Vec<Covector> = (0..16)
        .map(|k| {
            let a = k as f64 * 0.4;
            Covector::from_slices(&[a.cos(), a.sin()], &[k as f64 - 8.0])
        })
        .collect();
    for p in geodesic_sphere_sample(&g, 0.0, &dirs) {
        let p = p.unwrap();
        assert_eq!(p.x.amax(), 0.0);
        assert_eq!(p.u.amax(), 0.0);
    }
}

#[test]
fn sphere_points_cluster_at_the_centre_for_large_mu() {
    let g = Group2Step::heisenberg();
    let mut prev = f64::INFINITY;
    for theta in [10.0, 100.0, 1000.0] {
        let cov = Covector::from_slices(&[1.0, 0.0], &[2.0 * theta]);
        let p = geodesic_sphere_sample(&g, 1.0, &[cov]).pop().unwrap().unwrap();
        let r = p.x.norm();
        assert!(r <= 2.0 / theta + 1e-12, "theta {theta}: |x| = {r}");
        assert!(r < prev);
        prev = r;
    }
}

#[test]
fn sphere_reports_zero_frequency_directions() {
    let g = Group2Step::heisenberg();
    let dirs = [
        Covector::from_slices(&[1.0, 0.0], &[0.5]),
        Covector::from_slices(&[0.0, 0.0], &[1.0]),
    ];
    let out = geodesic_sphere_sample(&g, 1.0, &dirs);
    assert!(out[0].is_ok());
    assert_eq!(out[1], Err(Error::ZeroFrequency));
}

#[test]
fn htype_sphere_heights_are_parallel_to_mu() {
    let g = Group2Step::quaternionic();
    let mut rng = SeededRng::new(23);
    let dirs: Vec<Covector> = (0..40).map(|_| random_covector(&g, &mut rng)).collect();
    for (c, p) in dirs.iter().zip(geodesic_sphere_sample(&g, 1.3, &dirs)) {
        let u = p.unwrap().u;
        let mu = &c.mu / c.mu.norm();
        let perp = &u - &mu * u.dot(&mu);
        assert!(perp.norm() <= 1e-12 * (1.0 + u.norm()));
    }
}

#[test]
fn flow_is_homogeneous_in_frequency() {
    let mut rng = SeededRng::new(24);
    for g in metivier_groups() {
        let cov = random_covector(&g, &mut rng);
        let r = rng.uniform(0.2, 5.0);
        let a = flow_origin(&g, 1.1, &cov).unwrap();
        let b = flow_origin(&g, 1.1, &cov.scaled(r)).unwrap();
        assert!(max_diff(&a.x, &b.x) <= 1e-11);
        assert!(max_diff(&a.u, &b.u) <= 1e-11);
        assert!(max_diff(&(&a.xi * r), &b.xi) <= 1e-11 * r);
    }
}
