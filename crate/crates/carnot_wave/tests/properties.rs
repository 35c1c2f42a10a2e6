//! Randomized invariants over generated inputs.

use carnot_wave::decompose::make_cutoffs;
use carnot_wave::flow::{flow_origin, hamiltonian};
use carnot_wave::phase::phase_value;
use carnot_wave::{Covector, Group2Step, Point};
use proptest::prelude::*;

fn group() -> impl Strategy<Value = Group2Step> {
    prop::sample::select(Group2Step::builtin_names().to_vec()).prop_map(|n| Group2Step::builtin(n).unwrap())
}

fn metivier_group() -> impl Strategy<Value = Group2Step> {
    prop::sample::select(vec!["heisenberg", "nonisotropic", "quaternionic"]).prop_map(|n| Group2Step::builtin(n).unwrap())
}

fn coords(n: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, n)
}

fn point_in(g: &Group2Step) -> impl Strategy<Value = Point> {
    (coords(g.d1(), 3.0), coords(g.d2(), 3.0)).prop_map(|(x, u)| Point::from_slices(&x, &u))
}

fn covector_in(g: &Group2Step) -> impl Strategy<Value = Covector> {
    (coords(g.d1(), 3.0), coords(g.d2(), 3.0))
        .prop_filter("first layer away from zero", |(x, _)| x.iter().map(|v| v * v).sum::<f64>() > 0.05)
        .prop_map(|(x, u)| Covector::from_slices(&x, &u))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn left_translation_is_associative((g, a, b, c) in group().prop_flat_map(|g| {
        let (pa, pb, pc) = (point_in(&g), point_in(&g), point_in(&g));
        (Just(g), pa, pb, pc)
    })) {
        let left = g.multiply(&g.multiply(&a, &b), &c);
        let right = g.multiply(&a, &g.multiply(&b, &c));
        prop_assert!((left.to_vec() - right.to_vec()).amax() <= 1e-13);
    }

    #[test]
    fn cotangent_translation_round_trips((g, p, cov) in group().prop_flat_map(|g| {
        let (pp, pc) = (point_in(&g), covector_in(&g));
        (Just(g), pp, pc)
    })) {
        let back = g.cotangent_translate_inv(&p, &g.cotangent_translate(&p, &cov));
        prop_assert!((back.xi - &cov.xi).amax() <= 1e-13);
        prop_assert!((back.mu - &cov.mu).amax() == 0.0);
    }

    #[test]
    fn flow_preserves_the_hamiltonian((g, cov, t) in metivier_group().prop_flat_map(|g| {
        let pc = covector_in(&g);
        (Just(g), pc, -5.0..5.0f64)
    })) {
        let f = flow_origin(&g, t, &cov).unwrap();
        let h0 = cov.xi.norm();
        prop_assert!((hamiltonian(&g, &f.point(), &f.covector()) - h0).abs() <= 1e-11 * (1.0 + h0));
        prop_assert!(f.point().x.norm() <= t.abs() * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn phase_imaginary_part_is_nonnegative((g, p, cov, t) in metivier_group().prop_flat_map(|g| {
        let (pp, pc) = (point_in(&g), covector_in(&g));
        (Just(g), pp, pc, -4.0..4.0f64)
    })) {
        let v = phase_value(&g, t, &p, &cov).unwrap().value;
        prop_assert!(v.im >= -1e-12 * (1.0 + v.norm()));
    }

    #[test]
    fn dyadic_cutoffs_partition_unity(s in -1e5..1e5f64) {
        let c = make_cutoffs(1.0).unwrap();
        prop_assert!((c.partition_sum(s) - 1.0).abs() <= 1e-12);
    }
}
