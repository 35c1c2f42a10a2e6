//! Helpers shared by the integration tests.
#![allow(dead_code)]

use carnot_wave::numerics::SeededRng;
use carnot_wave::{Covector, Group2Step, Point};
use nalgebra::DVector;

/// The three Metivier built-ins.
pub fn metivier_groups() -> Vec<Group2Step> {
    vec![
        Group2Step::heisenberg(),
        Group2Step::nonisotropic_heisenberg(),
        Group2Step::quaternionic(),
    ]
}

/// Random covector with `|xi|` in `[0.5, 2]` and `|mu| / |xi|` in `[0.2, 3]`.
pub fn random_covector(g: &Group2Step, rng: &mut SeededRng) -> Covector {
    let xi = rng.unit_vec(g.d1()) * rng.uniform(0.5, 2.0);
    let ratio = rng.uniform(0.2, 3.0);
    let mu = rng.unit_vec(g.d2()) * (ratio * xi.norm());
    Covector::new(xi, mu)
}

/// Random point with entries in `[-1, 1]`.
pub fn random_point(g: &Group2Step, rng: &mut SeededRng) -> Point {
    let x = DVector::from_fn(g.d1(), |_, _| rng.uniform(-1.0, 1.0));
    let u = DVector::from_fn(g.d2(), |_, _| rng.uniform(-1.0, 1.0));
    Point::new(x, u)
}

pub fn max_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
