//! Special values of the transport coefficients, the operators on symbols and the iterates.

mod common;

use carnot_wave::flow::flow_origin;
use carnot_wave::numerics::{richardson_d1, SeededRng, C64};
use carnot_wave::transport::{
    amplitude_iterates, apply_lambda, apply_lambda_i, apply_mho, apply_r_numeric, coeff_bundle,
    f_coeffs, k_value, lambda_coeffs, RConfig, Support, Symbol,
};
use carnot_wave::decompose::{interval_bump, smooth_step};
use carnot_wave::verify::{lambda_i_ftc_error, time_decay_growth};
use carnot_wave::{Covector, Group2Step, Point};
use common::{metivier_groups, random_covector, random_point};
use nalgebra::DVector;

const I: C64 = C64::new(0.0, 1.0);

fn constant_symbol(g: &Group2Step, value: f64) -> Symbol {
    let d = g.dim();
    let support = Support::boxed(g.d1(), DVector::from_element(d, -10.0), DVector::from_element(d, 10.0));
    Symbol::new(support, 0.0, 0.0, move |_, _| C64::new(value, 0.0))
}

#[test]
fn leading_coefficients_are_exactly_one() {
    let mut rng = SeededRng::new(41);
    for g in metivier_groups() {
        for _ in 0..20 {
            let cov = random_covector(&g, &mut rng);
            let p = random_point(&g, &mut rng);
            let t = rng.uniform(-8.0, 8.0);
            let b = coeff_bundle(&g, t, &p, &cov).unwrap();
            assert_eq!(b.f02, C64::new(1.0, 0.0));
            assert_eq!(b.lambda20, C64::new(1.0, 0.0));
        }
    }
}

#[test]
fn f01_at_time_zero_and_origin() {
    let mut rng = SeededRng::new(42);
    for g in metivier_groups() {
        let cov = random_covector(&g, &mut rng);
        let origin = Point::origin(g.d1(), g.d2());
        let f = f_coeffs(&g, 0.0, &origin, &cov).unwrap();
        let (xn, mn) = (cov.xi.norm(), cov.mu.norm());
        let abar = g.abs_j_mu(&(&cov.mu / mn));
        let xibar = &cov.xi / xn;
        let want = -I * (mn / (2.0 * xn)) * (abar.trace() - xibar.dot(&(&abar * &xibar)));
        assert!((f.f01 - want).norm() <= 1e-12 * (1.0 + want.norm()), "{}", g.name());
    }
    let h = Group2Step::heisenberg();
    let cov = Covector::from_slices(&[0.6, 0.8], &[0.5]);
    let f = f_coeffs(&h, 0.0, &Point::origin(2, 1), &cov).unwrap();
    assert!((f.f01 + I * 0.25).norm() <= 1e-14);
}

#[test]
fn k_vanishes_on_the_flow_and_is_linear_at_time_zero() {
    let mut rng = SeededRng::new(43);
    for g in metivier_groups() {
        let cov = random_covector(&g, &mut rng);
        let f = flow_origin(&g, 0.9, &cov).unwrap();
        assert!(k_value(&g, 0.9, &f.point(), &cov).unwrap().norm() <= 1e-6 * cov.xi.norm());

        let v = rng.unit_vec(g.d1());
        let at = |eps: f64| {
            let p = Point::new(&v * eps, DVector::zeros(g.d2()));
            k_value(&g, 0.0, &p, &cov).unwrap()
        };
        let (a, b) = (at(1e-2), at(5e-3));
        assert!(a.norm() > 0.0);
        assert!((a / b - 2.0).norm() <= 1e-9, "{}: ratio {}", g.name(), a / b);
    }
}

#[test]
fn r_oracle_special_cases() {
    let mut rng = SeededRng::new(44);
    for g in metivier_groups() {
        let cov = random_covector(&g, &mut rng);
        let t = rng.uniform(-2.0, 2.0);
        let p = random_point(&g, &mut rng);
        let constant = apply_r_numeric(&g, |_, _: &Point, c: &Covector| C64::new(c.xi.norm(), 0.0), t, &p, &cov, RConfig::default()).unwrap();
        assert!(constant.norm() <= 1e-12);

        let xt = flow_origin(&g, t, &cov).unwrap().point();
        let gg = g.clone();
        let rf11 = apply_r_numeric(&g, move |tt, pp: &Point, cc: &Covector| f_coeffs(&gg, tt, pp, cc).unwrap().f11, t, &xt, &cov, RConfig::default()).unwrap();
        let lc = lambda_coeffs(&g, t, &cov).unwrap();
        let f01 = f_coeffs(&g, t, &xt, &cov).unwrap().f01;
        let want = lc.lambda10 - f01;
        assert!((rf11 - want).norm() <= 1e-4 * want.norm().max(1.0), "{}: {rf11} vs {want}", g.name());

        let gg = g.clone();
        let rf20 = apply_r_numeric(&g, move |tt, pp: &Point, cc: &Covector| f_coeffs(&gg, tt, pp, cc).unwrap().f20, t, &xt, &cov, RConfig::default()).unwrap();
        let f10 = f_coeffs(&g, t, &xt, &cov).unwrap().f10;
        assert!((rf20 + f10).norm() <= 1e-4 * cov.norm(), "{}: {rf20} vs {}", g.name(), -f10);
    }
}

#[test]
fn htype_lambda10_at_time_zero() {
    let mut rng = SeededRng::new(45);
    for g in [Group2Step::heisenberg(), Group2Step::quaternionic()] {
        let cov = random_covector(&g, &mut rng);
        let lc = lambda_coeffs(&g, 0.0, &cov).unwrap();
        let want = I * (cov.mu.norm() / (2.0 * cov.xi.norm())) * (g.d1() as f64 - 1.0);
        assert!((lc.lambda10 - want).norm() <= 1e-12 * (1.0 + want.norm()));
    }
}

#[test]
fn operators_on_a_constant_symbol() {
    let mut rng = SeededRng::new(46);
    for g in metivier_groups() {
        let q = constant_symbol(&g, 1.7);
        for _ in 0..5 {
            let cov = random_covector(&g, &mut rng);
            let t = rng.uniform(-3.0, 3.0);
            let lc = lambda_coeffs(&g, t, &cov).unwrap();
            let l = apply_lambda(&g, &q, t, &cov).unwrap();
            assert!(l.in_support);
            assert!((l.value - lc.lambda00 * 1.7).norm() <= 1e-12 * (1.0 + l.value.norm()));
            let m = apply_mho(&g, &q, t, &cov).unwrap();
            assert!((m.value - lc.lambda10 * 0.85).norm() <= 1e-12 * (1.0 + m.value.norm()));
        }
        let far = Covector::new(DVector::from_element(g.d1(), 20.0), DVector::from_element(g.d2(), 1.0));
        let out = apply_lambda(&g, &q, 0.5, &far).unwrap();
        assert!(!out.in_support);
        assert_eq!(out.value, C64::new(0.0, 0.0));
    }
}

#[test]
fn lambda_i_vanishes_at_zero_and_satisfies_the_fundamental_theorem() {
    let mut rng = SeededRng::new(47);
    for g in metivier_groups() {
        let center = random_covector(&g, &mut rng);
        let q = Symbol::gaussian(g.d1(), &center, 0.1 * center.norm(), true);
        assert_eq!(apply_lambda_i(&g, &q, 0.0, &center, 8).unwrap(), C64::new(0.0, 0.0));
        assert!(apply_lambda_i(&g, &q, 1.0, &center, 4).is_err());
        let e = lambda_i_ftc_error(&g, &center).unwrap();
        assert!(e <= 1e-5, "{}: {e:e}", g.name());
    }
}

#[test]
fn lambda_i_converges_under_node_doubling() {
    let mut rng = SeededRng::new(48);
    for g in metivier_groups() {
        let center = random_covector(&g, &mut rng);
        let q = Symbol::gaussian(g.d1(), &center, 0.1 * center.norm(), true);
        for t in [1.0, 4.0, 8.0] {
            let a = apply_lambda_i(&g, &q, t, &center, 32).unwrap();
            let b = apply_lambda_i(&g, &q, t, &center, 64).unwrap();
            assert!((a - b).norm() < 1e-8, "{} t={t}: {:e}", g.name(), (a - b).norm());
        }
    }
}

#[test]
fn coefficients_decay_in_time() {
    let mut rng = SeededRng::new(49);
    for g in metivier_groups() {
        let cov = random_covector(&g, &mut rng);
        let growth = time_decay_growth(&g, &cov).unwrap();
        assert!(growth <= 2.0, "{}: growth {growth}", g.name());
    }
}

#[test]
fn iterates_vanish_at_time_zero_and_gain_decay() {
    let g = Group2Step::heisenberg();
    let support = Support::band(2, 1, 1.0, 1e3, 0.3, 3.0);
    let q0 = Symbol::new(support, 0.0, 0.0, |_, cov: &Covector| {
        let n = cov.xi.norm();
        C64::new(smooth_step(n - 1.0, 1.0) * interval_bump(cov.mu.norm() / n, 0.3, 3.0), 0.0)
    });
    let it = amplitude_iterates(&g, &q0, 1, 8, 3).unwrap();
    assert_eq!(it.symbols.len(), 2);
    let direction = Covector::from_slices(&[0.8, 0.6], &[1.1]);
    assert_eq!(it.symbols[1].eval(0.0, &direction.scaled(4.0)), C64::new(0.0, 0.0));
    let mut weighted = Vec::new();
    for s in [4.0, 8.0, 16.0, 32.0] {
        let cov = direction.scaled(s);
        let sup = [0.25, 0.5, 1.0]
            .iter()
            .map(|&t| it.symbols[1].eval(t, &cov).norm() * (1.0 + cov.xi.norm()))
            .fold(0.0, f64::max);
        weighted.push(sup);
    }
    let (lo, hi) = weighted.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(hi.is_finite() && hi <= 4.0 * lo, "weighted sups {weighted:?}");
    assert!(amplitude_iterates(&g, &q0, 4, 8, 3).is_err());
}

#[test]
fn parametrix_residual_identity() {
    let g = Group2Step::heisenberg();
    let center = Covector::from_slices(&[1.5, -0.5], &[2.0]);
    let q0 = Symbol::gaussian(2, &center, 0.3, false);
    let it = amplitude_iterates(&g, &q0, 1, 8, 3).unwrap();
    let h1 = it.symbols[1].clone();
    for t in [0.5, 1.0] {
        let cov = center.clone();
        let h = |s: f64| q0.eval(s, &cov) + h1.eval(s, &cov);
        let dt = richardson_d1(h, t, 1e-3);
        let lambda_h = apply_lambda(&g, &q0, t, &cov).unwrap().value + apply_lambda(&g, &h1, t, &cov).unwrap().value;
        let lhs = -2.0 * I * cov.xi.norm() * dt + lambda_h;
        let rhs = apply_lambda(&g, &h1, t, &cov).unwrap().value;
        assert!((lhs - rhs).norm() <= 1e-4 * rhs.norm().max(1.0), "t={t}: {lhs} vs {rhs}");
    }
}
