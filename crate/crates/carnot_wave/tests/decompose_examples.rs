//! Dyadic cutoffs, direction sets, second-layer sectors and sheared symbols.

use carnot_wave::decompose::{
    cone_symbol, direction_count_study, kappa_cutoff, make_cutoffs, make_directions, mu_shear, mu_unshear,
    plus_cutoff, sector_count_study, sheared_symbol, MuSectorDecomposition,
};
use carnot_wave::numerics::SeededRng;
use carnot_wave::verify::sheared_support_violations;
use carnot_wave::{Covector, Error, Group2Step};
use nalgebra::DVector;

#[test]
fn dyadic_partition_of_unity() {
    let c = make_cutoffs(1.0).unwrap();
    let mut worst = 0.0f64;
    for i in 0..=20_000 {
        let s = -1e6 + 100.0 * i as f64;
        worst = worst.max((c.partition_sum(s) - 1.0).abs());
    }
    for i in 0..=4000 {
        let s = i as f64 * 1e-3;
        worst = worst.max((c.partition_sum(s) - 1.0).abs());
    }
    assert!(worst <= 1e-12, "{worst:e}");
}

#[test]
fn chi1_is_even_nonnegative_and_supported_in_the_annulus() {
    let c = make_cutoffs(1.0).unwrap();
    for i in 0..=6000 {
        let s = i as f64 * 1e-3;
        let v = c.chi1(s);
        assert!(v >= 0.0);
        assert_eq!(v, c.chi1(-s));
        if !(0.5..=2.0).contains(&s) {
            assert_eq!(v, 0.0, "s = {s}");
        }
        assert!((c.chi1_tilde(s) * v - v).abs() <= 1e-15);
        assert!(c.chi0(s) == 0.0 || s <= 1.0);
    }
    assert_eq!(c.chi1(3.0), 0.0);
    assert_eq!(c.chi0(1.0) + c.chi1(1.0), 1.0);
}

#[test]
fn only_adjacent_scales_overlap() {
    let c = make_cutoffs(1.0).unwrap();
    for i in 0..=200 {
        let s = 0.9 + i as f64 * 1e-3;
        let sum = c.chi1(s) + c.chi1(2.0 * s) + c.chi1(0.5 * s);
        assert!((sum - 1.0).abs() <= 1e-12, "s = {s}: {sum}");
    }
}

#[test]
fn plus_and_kappa_cutoffs() {
    for i in 0..=2000 {
        let s = -10.0 + i as f64 * 0.01;
        let sum: f64 = (-12..=12).map(|k| plus_cutoff(s - k as f64)).sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }
    let kappa = 1.1;
    assert_eq!(kappa_cutoff(kappa, 1.0), 1.0);
    assert_eq!(kappa_cutoff(kappa, 1.0 / kappa), 1.0);
    assert_eq!(kappa_cutoff(kappa, kappa), 1.0);
    assert_eq!(kappa_cutoff(kappa, 0.4), 0.0);
    assert_eq!(kappa_cutoff(kappa, 2.3), 0.0);
}

#[test]
fn coarse_circle_directions_sum_to_one() {
    let set = make_directions(2, 0, 0.25, 1).unwrap();
    assert!(!set.is_empty() && set.len() <= 64);
    for i in 0..720 {
        let a = i as f64 * std::f64::consts::PI / 360.0;
        let w: f64 = set.weights(&DVector::from_column_slice(&[a.cos(), a.sin()])).iter().map(|p| p.1).sum();
        assert!((w - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn direction_weights_are_local_and_sum_to_one() {
    let mut rng = SeededRng::new(51);
    for (d, m) in [(2, 4), (3, 3)] {
        let set = make_directions(d, m, 0.25, 2).unwrap();
        let dirs = set.directions();
        for _ in 0..500 {
            let xi = rng.unit_vec(d) * rng.uniform(0.1, 10.0);
            let xbar = &xi / xi.norm();
            let w = set.weights(&xi);
            let total: f64 = w.iter().map(|p| p.1).sum();
            assert!((total - 1.0).abs() <= 1e-10);
            for (i, v) in w {
                assert!(v > 0.0);
                assert!((&xbar - &dirs[i]).norm() <= set.support_radius() * (1.0 + 1e-12));
            }
        }
        for i in 0..dirs.len() {
            for j in 0..i {
                assert!((&dirs[i] - &dirs[j]).norm() >= set.separation * (1.0 - 1e-12));
            }
        }
    }
}

#[test]
fn direction_counts_double_per_scale_on_the_sphere() {
    let (rows, slope) = direction_count_study(3, &[2, 4, 6], 0.25, 3).unwrap();
    assert_eq!(rows.len(), 3);
    let slope = slope.unwrap();
    assert!((slope - 1.0).abs() <= 0.3, "slope {slope}, rows {rows:?}");
    let (_, circle) = direction_count_study(2, &[2, 4, 6, 8], 0.25, 3).unwrap();
    assert!((circle.unwrap() - 0.5).abs() <= 0.3);
}

#[test]
fn sector_partition_and_counts() {
    let mut rng = SeededRng::new(52);
    for d2 in 1..=3 {
        let dec = MuSectorDecomposition::new(d2, 20.0, 1.1, 0.25, 4).unwrap();
        for _ in 0..300 {
            let mu = rng.normal_vec(d2);
            let total: f64 = dec.weights(&mu).iter().map(|p| p.1).sum();
            assert!((total - 1.0).abs() <= 1e-10);
        }
    }
    assert_eq!(MuSectorDecomposition::new(1, 20.0, 1.1, 0.25, 4).unwrap().len(), 2);
    let k = 1.1f64 * 1.1;
    for d2 in [2, 3] {
        let (_, spread) = sector_count_study(d2, &[16.0 * k, 32.0 * k, 64.0 * k], 1.1, 0.25, 5).unwrap();
        assert!(spread <= 2.0, "d2 = {d2}: spread {spread}");
    }
    assert!(MuSectorDecomposition::new(2, 20.0, 1.0, 0.25, 4).is_err());
}

#[test]
fn shear_examples() {
    let v = DVector::from_column_slice(&[0.6, 0.8]);
    let cov = Covector::from_slices(&[0.3, -0.2, 0.9], &[0.4, -1.1]);
    assert_eq!(mu_shear(1.0, 0, &v, &cov).unwrap(), cov);
    let flat = Covector::from_slices(&[0.0, 1.0, 0.0], &[0.0, 0.0]);
    let s = mu_shear(6.0, 3, &v, &flat).unwrap();
    assert!((s.mu - &v).amax() <= 1e-15);
    let mut rng = SeededRng::new(53);
    for _ in 0..200 {
        let cov = Covector::new(rng.normal_vec(3), rng.normal_vec(2) * 3.0);
        let t = rng.uniform(1.0, 80.0) * if rng.uniform(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
        let k = rng.index(100) as i64;
        let w = rng.unit_vec(2);
        let back = mu_unshear(t, k, &w, &mu_shear(t, k, &w, &cov).unwrap()).unwrap();
        assert!((back.mu - &cov.mu).amax() <= 1e-14 * (1.0 + k as f64 * cov.xi.norm()));
    }
    let zero = Covector::from_slices(&[0.0, 0.0, 0.0], &[1.0, 0.0]);
    assert_eq!(mu_shear(2.0, 1, &v, &zero), Err(Error::ZeroFrequency));
}

#[test]
fn sheared_symbol_support() {
    let g = Group2Step::heisenberg();
    let kappa = 1.1;
    let q = cone_symbol(&g, (2.0, 8.0), (1.0 / kappa, kappa));
    let t = 20.0;
    let dec = MuSectorDecomposition::new(1, t, kappa, 0.25, 0).unwrap();
    let mut rng = SeededRng::new(54);
    for k in [1i64, 2, 23, 30] {
        for v in 0..2 {
            let s = sheared_symbol(&g, &q, k, v, &dec).unwrap();
            for _ in 0..300 {
                let xi = rng.unit_vec(2) * rng.uniform(2.0, 8.0);
                let mu = DVector::from_element(1, rng.uniform(-2.5, 2.5) * xi.norm());
                assert_eq!(s.eval(t, &Covector::new(xi, mu)).norm(), 0.0, "k = {k}");
            }
        }
    }
    assert_eq!(sheared_support_violations(&g, 7, 2000).unwrap(), 0.0);
}

#[test]
fn sheared_symbols_are_uniformly_bounded() {
    let g = Group2Step::heisenberg();
    let kappa = 1.1;
    let q = cone_symbol(&g, (2.0, 8.0), (1.0 / kappa, kappa));
    let mut rng = SeededRng::new(55);
    let mut sups = Vec::new();
    for t in [16.0 * kappa * kappa, 32.0 * kappa * kappa, 64.0 * kappa * kappa] {
        let dec = MuSectorDecomposition::new(1, t, kappa, 0.25, 0).unwrap();
        let mut sup = 0.0f64;
        for _ in 0..400 {
            let xi = rng.unit_vec(2) * rng.uniform(3.0, 7.0);
            let n = xi.norm();
            let v_index = rng.index(2);
            let sign = dec.sector(v_index)[0];
            let mu = DVector::from_element(1, sign * n * rng.uniform(0.95, 1.05));
            let k = (t * mu[0].abs() / (2.0 * n)).round() as i64;
            let sheared = mu_unshear(t, k, &dec.sector(v_index), &Covector::new(xi, mu)).unwrap();
            let s = sheared_symbol(&g, &q, k, v_index, &dec).unwrap();
            let value = s.eval(t, &sheared);
            assert!(value.norm().is_finite());
            sup = sup.max(value.norm());
        }
        assert!(sup > 0.0);
        sups.push(sup);
    }
    let hi = sups.iter().copied().fold(0.0, f64::max);
    let lo = sups.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(hi <= 4.0 * lo, "sups {sups:?}");
}
