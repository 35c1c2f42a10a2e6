//! The sub-Riemannian geodesic flow generated by `H(x, xi) = |xi + J_mu x / 2|`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::carnot::{Covector, Group2Step, Point};
use crate::error::{Error, Result};
use crate::numerics::{expm1_over, gauss_legendre, jacobian, sinhc, SkewSpectrum, C64};

/// Below this value of `|mu| |t| / |xi|` the flow is taken to be a straight line.
pub const STRAIGHT_LINE_TOL: f64 = 1e-10;

/// Time-`t` values of the flow: `(x^t, u^t, xi^t, mu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPoint {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub xi: DVector<f64>,
    pub mu: DVector<f64>,
}

impl FlowPoint {
    /// The space component `(x^t, u^t)`.
    pub fn point(&self) -> Point {
        Point::new(self.x.clone(), self.u.clone())
    }

    /// The frequency component `(xi^t, mu)`.
    pub fn covector(&self) -> Covector {
        Covector::new(self.xi.clone(), self.mu.clone())
    }
}

/// The flow from the origin together with the spectral data it was computed from.
///
/// `spectrum` diagonalizes `J_{mu/|mu|}` and is absent only when `mu = 0`.
#[derive(Debug, Clone)]
pub struct FlowGeometry {
    pub t: f64,
    pub xi_norm: f64,
    pub mu_norm: f64,
    pub theta: f64,
    pub xibar: DVector<f64>,
    pub spectrum: Option<SkewSpectrum>,
    pub flow: FlowPoint,
}

impl FlowGeometry {
    /// Evaluates the closed-form flow from the origin.
    pub fn new(g: &Group2Step, t: f64, cov: &Covector) -> Result<Self> {
        let xi_norm = cov.xi.norm();
        if xi_norm == 0.0 {
            return Err(Error::ZeroFrequency);
        }
        let mu_norm = cov.mu.norm();
        let xibar = &cov.xi / xi_norm;
        let theta = t * mu_norm / (2.0 * xi_norm);
        let spectrum = (mu_norm > 0.0).then(|| SkewSpectrum::new(&g.j_mu(&(&cov.mu / mu_norm))));
        let straight = mu_norm * t.abs() / xi_norm < STRAIGHT_LINE_TOL;
        let flow = match (&spectrum, straight) {
            (Some(sp), false) => closed_form(g, t, theta, cov, &xibar, sp),
            _ => FlowPoint {
                x: &xibar * t,
                u: DVector::zeros(g.d2()),
                xi: cov.xi.clone(),
                mu: cov.mu.clone(),
            },
        };
        Ok(FlowGeometry {
            t,
            xi_norm,
            mu_norm,
            theta,
            xibar,
            spectrum,
            flow,
        })
    }
}

fn closed_form(
    g: &Group2Step,
    t: f64,
    theta: f64,
    cov: &Covector,
    xibar: &DVector<f64>,
    sp: &SkewSpectrum,
) -> FlowPoint {
    // theta J has eigenvalues -i theta lambda in the eigenbasis of the spectrum.
    let w = sp.coords(xibar);
    let lam = sp.lambda();
    let ev = |tau: f64, f: &dyn Fn(C64) -> C64| {
        let mut c = w.clone();
        for (j, cj) in c.iter_mut().enumerate() {
            *cj *= f(C64::new(0.0, -2.0 * tau * theta * lam[j]));
        }
        sp.from_coords(&c).map(|z| z.re)
    };
    let x = ev(1.0, &expm1_over) * t;
    let xi = (ev(1.0, &|z: C64| z.exp()) * cov.xi.norm() + &cov.xi) * 0.5;
    let n = 16usize.max(8 * (theta.abs() * sp.radius()).ceil() as usize);
    let rule = gauss_legendre(n);
    let mut u = DVector::zeros(g.d2());
    for (tau, wt) in rule.mapped(0.0, 1.0) {
        let a = ev(tau, &expm1_over) * (2.0 * tau);
        let b = ev(tau, &|z: C64| z.exp());
        u += g.bracket(&a, &b) * wt;
    }
    u *= t * t / 4.0;
    FlowPoint {
        x,
        u,
        xi,
        mu: cov.mu.clone(),
    }
}

/// `H(x, xi) = |xi + J_mu x / 2|`.
pub fn hamiltonian(g: &Group2Step, p: &Point, cov: &Covector) -> f64 {
    (&cov.xi + g.j_mu(&cov.mu) * &p.x * 0.5).norm()
}

/// Closed-form flow from the origin.
pub fn flow_origin(g: &Group2Step, t: f64, cov: &Covector) -> Result<FlowPoint> {
    FlowGeometry::new(g, t, cov).map(|geo| geo.flow)
}

/// Flow started at base point `y` with frequency `cov`, obtained by left translation.
pub fn flow_base(g: &Group2Step, t: f64, y: &Point, cov: &Covector) -> Result<FlowPoint> {
    let start = g.cotangent_translate_inv(y, cov);
    let f = flow_origin(g, t, &start)?;
    let p = g.multiply(y, &f.point());
    let out = g.cotangent_translate(y, &f.covector());
    Ok(FlowPoint {
        x: p.x,
        u: p.u,
        xi: out.xi,
        mu: out.mu,
    })
}

/// `mu . u^t` from its closed form `(t |xi| / 2)(1 - <sinh(2M)/(2M) xibar, xibar>)`, `M = theta J_{mubar}`.
pub fn mu_dot_u_closed(g: &Group2Step, t: f64, cov: &Covector) -> Result<f64> {
    let geo = FlowGeometry::new(g, t, cov)?;
    let Some(sp) = &geo.spectrum else {
        return Ok(0.0);
    };
    let w = sp.coords(&geo.xibar);
    let lam = sp.lambda();
    let quad: f64 = w
        .iter()
        .zip(lam)
        .map(|(c, &l)| c.norm_sqr() * sinhc(C64::new(0.0, -2.0 * geo.theta * l)).re)
        .sum();
    Ok(t * geo.xi_norm / 2.0 * (1.0 - quad))
}

/// H-type closed form of the flow from the origin (valid only when `J_mu^2 = -|mu|^2 I`).
pub fn flow_origin_htype(g: &Group2Step, t: f64, cov: &Covector) -> Result<FlowPoint> {
    let xi_norm = cov.xi.norm();
    if xi_norm == 0.0 {
        return Err(Error::ZeroFrequency);
    }
    let mu_norm = cov.mu.norm();
    let xibar = &cov.xi / xi_norm;
    if mu_norm == 0.0 || mu_norm * t.abs() / xi_norm < STRAIGHT_LINE_TOL {
        return Ok(FlowPoint {
            x: &xibar * t,
            u: DVector::zeros(g.d2()),
            xi: cov.xi.clone(),
            mu: cov.mu.clone(),
        });
    }
    let mubar = &cov.mu / mu_norm;
    let j = g.j_mu(&mubar);
    let theta = t * mu_norm / (2.0 * xi_norm);
    let (s, c) = theta.sin_cos();
    let rot = |v: &DVector<f64>| v * c + &j * v * s;
    let sinc = if theta.abs() < 1e-4 {
        1.0 - theta * theta / 6.0
    } else {
        s / theta
    };
    let x = rot(&xibar) * (t * sinc);
    let xi = rot(&cov.xi) * c;
    // (1 - sinc cos) / theta, with a Taylor branch for small theta.
    let ufac = if theta.abs() < 1e-4 {
        theta * 4.0 / 3.0
    } else {
        (1.0 - sinc * c) / theta
    };
    let u = &mubar * (t * t / 4.0 * ufac);
    Ok(FlowPoint {
        x,
        u,
        xi,
        mu: cov.mu.clone(),
    })
}

/// Right-hand side of the Hamilton equations in the state `(x, u, xi)` at fixed `mu`.
fn hamilton_rhs(g: &Group2Step, j: &DMatrix<f64>, state: &DVector<f64>) -> (DVector<f64>, f64) {
    let (d1, d2) = (g.d1(), g.d2());
    let x = state.rows(0, d1).into_owned();
    let xi = state.rows(d1 + d2, d1).into_owned();
    let zeta = &xi + j * &x * 0.5;
    let h = zeta.norm();
    let dx = &zeta / h;
    let du = g.bracket(&x, &zeta) / (2.0 * h);
    let dxi = j * &zeta / (2.0 * h);
    let mut out = DVector::zeros(2 * d1 + d2);
    out.rows_mut(0, d1).copy_from(&dx);
    out.rows_mut(d1, d2).copy_from(&du);
    out.rows_mut(d1 + d2, d1).copy_from(&dxi);
    (out, h)
}

/// Classical RK4 integration of the Hamilton equations from `(p0, cov0)`.
///
/// The number of steps is `ceil(|t| / step)`; intended as an independent check of the closed forms.
pub fn flow_ode_oracle(
    g: &Group2Step,
    t: f64,
    p0: &Point,
    cov0: &Covector,
    step: f64,
) -> Result<FlowPoint> {
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidInput("step must be positive".into()));
    }
    let (d1, d2) = (g.d1(), g.d2());
    let j = g.j_mu(&cov0.mu);
    let mut s = DVector::zeros(2 * d1 + d2);
    s.rows_mut(0, d1).copy_from(&p0.x);
    s.rows_mut(d1, d2).copy_from(&p0.u);
    s.rows_mut(d1 + d2, d1).copy_from(&cov0.xi);
    let n = (t.abs() / step).ceil() as usize;
    if n > 0 {
        let h = t / n as f64;
        let guard = |v: f64| {
            if v < 1e-8 {
                Err(Error::NearCharacteristic { value: v })
            } else {
                Ok(())
            }
        };
        for _ in 0..n {
            let (k1, h1) = hamilton_rhs(g, &j, &s);
            guard(h1)?;
            let (k2, h2) = hamilton_rhs(g, &j, &(&s + &k1 * (h / 2.0)));
            guard(h2)?;
            let (k3, h3) = hamilton_rhs(g, &j, &(&s + &k2 * (h / 2.0)));
            guard(h3)?;
            let (k4, h4) = hamilton_rhs(g, &j, &(&s + &k3 * h));
            guard(h4)?;
            s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        guard(hamilton_rhs(g, &j, &s).1)?;
    }
    Ok(FlowPoint {
        x: s.rows(0, d1).into_owned(),
        u: s.rows(d1, d2).into_owned(),
        xi: s.rows(d1 + d2, d1).into_owned(),
        mu: cov0.mu.clone(),
    })
}

/// Default RK4 step for a flow to time `t`.
pub fn default_ode_step(t: f64) -> f64 {
    1e-4 * t.abs().max(1.0)
}

/// Points `(x^t, u^t)` of the flow from the origin for each direction, in input order.
pub fn geodesic_sphere_sample(g: &Group2Step, t: f64, directions: &[Covector]) -> Vec<Result<Point>> {
    directions
        .par_iter()
        .map(|c| flow_origin(g, t, c).map(|f| f.point()))
        .collect()
}

/// Jacobians of `(x^t, u^t)` and of `(xi^t, mu)` with respect to the full covector,
/// by Richardson central differences with step `h_rel |cov|`.
pub fn flow_jacobians(
    g: &Group2Step,
    t: f64,
    cov: &Covector,
    h_rel: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    flow_origin(g, t, cov)?;
    let d1 = g.d1();
    let h = h_rel * cov.norm();
    let eval = |v: &DVector<f64>| {
        let f = flow_origin(g, t, &Covector::from_vec(d1, v)).expect("stencil stays off xi = 0");
        let mut out = f.point().to_vec();
        out.extend(f.covector().to_vec().iter().copied());
        out
    };
    let full = jacobian(eval, &cov.to_vec(), h);
    let d = g.dim();
    Ok((
        full.rows(0, d).into_owned(),
        full.rows(d, d).into_owned(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_zero_is_identity() {
        let g = Group2Step::nonisotropic_heisenberg();
        let cov = Covector::from_slices(&[0.3, -1.0, 0.2, 0.5], &[0.7]);
        let f = flow_origin(&g, 0.0, &cov).unwrap();
        assert_eq!(f.x.norm(), 0.0);
        assert_eq!(f.u.norm(), 0.0);
        assert_eq!(f.xi, cov.xi);
    }

    #[test]
    fn zero_frequency_is_rejected() {
        let g = Group2Step::heisenberg();
        let cov = Covector::from_slices(&[0.0, 0.0], &[1.0]);
        assert_eq!(flow_origin(&g, 1.0, &cov), Err(Error::ZeroFrequency));
    }

    #[test]
    fn hamiltonian_examples() {
        let g = Group2Step::heisenberg();
        let p = Point::from_slices(&[2.0, 0.0], &[0.0]);
        let cov = Covector::from_slices(&[0.0, 0.0], &[1.0]);
        assert!((hamiltonian(&g, &p, &cov) - 1.0).abs() < 1e-15);
    }
}
