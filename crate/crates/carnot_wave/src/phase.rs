//! The complex phase `phi`, its mixed Hessian `Phi_0` and the density `d_phi`.

use nalgebra::{DMatrix, DVector};

use crate::carnot::{Covector, Group2Step, Point};
use crate::error::{Error, Result};
use crate::flow::{flow_jacobians, FlowGeometry};
use crate::numerics::{to_complex, to_complex_mat, CMat, CVec, SkewSpectrum, C64, I};

/// Default relative step for derivatives of flow maps in the frequency variable.
pub const FLOW_FD_STEP: f64 = 1e-5;

/// Phase value and gradients at one `(t, x, xi)`.
#[derive(Debug, Clone)]
pub struct PhaseEval {
    pub value: C64,
    /// `d phi / d xi` over the full covector.
    pub grad_xi: CVec,
    /// `grad_x phi` over the full point.
    pub grad_x: CVec,
    pub im_part: f64,
}

/// Mixed Hessian data at one `(t, xi)`.
#[derive(Debug, Clone)]
pub struct HessianEval {
    pub phi0: CMat,
    pub det_phi: C64,
    pub density: C64,
}

/// Everything about the phase that depends only on `(t, xi)`.
#[derive(Debug, Clone)]
pub struct PhaseGeometry {
    pub geo: FlowGeometry,
    /// `|J_mu|` (not normalized).
    pub abs_j: DMatrix<f64>,
}

/// Rank of `J_{mubar}` read off its spectrum.
fn spectral_rank(sp: &SkewSpectrum) -> usize {
    let r = sp.radius();
    sp.lambda()
        .iter()
        .filter(|l| l.abs() > crate::carnot::RANK_TOL * r)
        .count()
}

/// Fails unless `xi != 0` and `mu` lies in the maximal-rank set.
pub(crate) fn checked_geometry(g: &Group2Step, t: f64, cov: &Covector) -> Result<FlowGeometry> {
    let geo = FlowGeometry::new(g, t, cov)?;
    let rank = geo.spectrum.as_ref().map(spectral_rank).unwrap_or(0);
    if rank < g.generic_rank() {
        return Err(Error::OutsideOmega {
            mu: cov.mu.iter().copied().collect(),
            rank,
            generic: g.generic_rank(),
        });
    }
    Ok(geo)
}

impl PhaseGeometry {
    pub fn new(g: &Group2Step, t: f64, cov: &Covector) -> Result<Self> {
        let geo = checked_geometry(g, t, cov)?;
        let sp = geo.spectrum.as_ref().expect("mu is nonzero inside Omega");
        let abs_j = sp.real_func(|l| C64::new(l.abs(), 0.0)) * geo.mu_norm;
        let abs_j = (&abs_j + abs_j.transpose()) * 0.5;
        Ok(PhaseGeometry { geo, abs_j })
    }

    /// `phi(t, p, xi)`.
    pub fn value(&self, p: &Point) -> C64 {
        let f = &self.geo.flow;
        let dx = &p.x - &f.x;
        let du = &p.u - &f.u;
        let re = dx.dot(&f.xi) + du.dot(&f.mu);
        let im = 0.25 * dx.dot(&(&self.abs_j * &dx));
        C64::new(re, im)
    }

    /// `grad_x phi = (xi^t + (i/2)|J_mu|(x - x^t), mu)`.
    pub fn grad_x(&self, p: &Point) -> CVec {
        let f = &self.geo.flow;
        let dx = &p.x - &f.x;
        let im = &self.abs_j * &dx * 0.5;
        let d1 = dx.len();
        CVec::from_fn(d1 + f.mu.len(), |i, _| {
            if i < d1 {
                C64::new(f.xi[i], im[i])
            } else {
                C64::new(f.mu[i - d1], 0.0)
            }
        })
    }
}

/// Phase value with closed-form gradients; frequency derivatives of the flow by finite differences.
pub fn phase_value(g: &Group2Step, t: f64, p: &Point, cov: &Covector) -> Result<PhaseEval> {
    let pg = PhaseGeometry::new(g, t, cov)?;
    let value = pg.value(p);
    let grad_x = pg.grad_x(p);
    let (d1, d2) = (g.d1(), g.d2());
    let (jx, jxi) = flow_jacobians(g, t, cov, FLOW_FD_STEP)?;
    // Phi_underline = d xi^t - (i/2) [ |J_mu| d x^t ; 0 ]
    let mut under = to_complex_mat(&jxi);
    let top = &pg.abs_j * jx.rows(0, d1);
    for i in 0..d1 {
        for j in 0..d1 + d2 {
            under[(i, j)] -= I * 0.5 * top[(i, j)];
        }
    }
    let dfull = p.to_vec() - pg.geo.flow.point().to_vec();
    let mut grad_xi: CVec = under.transpose() * to_complex(&dfull);
    let dx = dfull.rows(0, d1).into_owned();
    let h = FLOW_FD_STEP * cov.norm();
    for k in 0..d2 {
        let deriv = partial_abs_j(g, &cov.mu, k, h);
        grad_xi[d1 + k] += I * 0.25 * dx.dot(&(deriv * &dx));
    }
    Ok(PhaseEval {
        value,
        grad_xi,
        grad_x,
        im_part: value.im,
    })
}

/// `d |J_mu| / d mu_k` by Richardson central differences.
pub fn partial_abs_j(g: &Group2Step, mu: &DVector<f64>, k: usize, h: f64) -> DMatrix<f64> {
    crate::numerics::partial(|m: &DVector<f64>| g.abs_j_mu(m), mu, k, h)
}

/// Closed-form mixed Hessian `Phi_0`, its determinant and the density.
pub fn mixed_hessian(g: &Group2Step, t: f64, cov: &Covector) -> Result<HessianEval> {
    let geo = checked_geometry(g, t, cov)?;
    Ok(hessian_from_geometry(&geo))
}

pub(crate) fn hessian_from_geometry(geo: &FlowGeometry) -> HessianEval {
    let sp = geo.spectrum.as_ref().expect("mu is nonzero inside Omega");
    let th = geo.theta;
    let lam = sp.lambda();
    // exp(theta J) exp(-i theta |J|) and |J| + iJ in the eigenbasis of J = J_{mubar}.
    let e = sp.func(|l| (-I * th * (l + l.abs())).exp());
    let xb = to_complex(&geo.xibar);
    let axb = sp.apply(|l| C64::new(l.abs() + l, 0.0), &xb);
    let n = xb.len();
    let rank1 = &axb * xb.transpose();
    let phi0 = &e * (CMat::identity(n, n) + rank1 * (I * th));
    let a = abs_quadratic(sp, &geo.xibar);
    let tr: f64 = lam.iter().map(|l| l.abs()).sum();
    let det_phi = (-I * th * tr).exp() * (C64::new(1.0, 0.0) + I * th * a);
    let density = (-I * th * tr / 2.0).exp() * (C64::new(1.0, 0.0) + I * th * a).sqrt();
    HessianEval {
        phi0,
        det_phi,
        density,
    }
}

/// `<|J_{mubar}| v, v>` for a real vector `v`.
pub(crate) fn abs_quadratic(sp: &SkewSpectrum, v: &DVector<f64>) -> f64 {
    let c = sp.coords(v);
    c.iter().zip(sp.lambda()).map(|(z, l)| z.norm_sqr() * l.abs()).sum()
}

/// Closed-form inverse `Phi_0^{-1} = (I - i theta/(1 + i theta a) A xibar xibar^T) exp(i theta |J|) exp(-theta J)`.
pub(crate) fn phi0_inverse(geo: &FlowGeometry) -> CMat {
    let sp = geo.spectrum.as_ref().expect("mu is nonzero inside Omega");
    let th = geo.theta;
    let einv = sp.func(|l| (I * th * (l + l.abs())).exp());
    let xb = to_complex(&geo.xibar);
    let axb = sp.apply(|l| C64::new(l.abs() + l, 0.0), &xb);
    let a = abs_quadratic(sp, &geo.xibar);
    let n = xb.len();
    let coef = I * th / (C64::new(1.0, 0.0) + I * th * a);
    (CMat::identity(n, n) - &axb * xb.transpose() * coef) * einv
}

/// `d xi^t / d xi - (i/2)|J_mu| d x^t / d xi` by finite differences (first-layer block only).
pub fn phi0_finite_difference(g: &Group2Step, t: f64, cov: &Covector, h_rel: f64) -> Result<CMat> {
    let pg = PhaseGeometry::new(g, t, cov)?;
    let d1 = g.d1();
    let (jx, jxi) = flow_jacobians(g, t, cov, h_rel)?;
    let dxi = jxi.view((0, 0), (d1, d1)).into_owned();
    let dx = jx.view((0, 0), (d1, d1)).into_owned();
    Ok(to_complex_mat(&dxi) - to_complex_mat(&(&pg.abs_j * dx)) * (I * 0.5))
}

/// True iff `|d phi / d xi| <= tol`.
pub fn stationarity_check(g: &Group2Step, t: f64, p: &Point, cov: &Covector, tol: f64) -> Result<bool> {
    let pe = phase_value(g, t, p, cov)?;
    Ok(pe.grad_xi.norm() <= tol)
}
