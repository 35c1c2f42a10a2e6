//! Transport coefficients `F_kj`, `K`, `Lambda_jr`, the amplitude-to-symbol operator `R`
//! (as a numerical oracle), and the operators `Lambda`, `Mho`, `Lambda_I` acting on symbols.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};

use crate::carnot::{Covector, Group2Step, Point};
use crate::decompose::smooth_step;
use crate::error::{Error, Result};
use crate::flow::FlowGeometry;
use crate::phase::{abs_quadratic, checked_geometry, hessian_from_geometry, phi0_inverse, PhaseGeometry};
use crate::numerics::{
    dot_cr, gauss_legendre, richardson_d1, richardson_d2, to_complex, CMat, CVec, C64, I,
};

/// Largest iterate index accepted by [`amplitude_iterates`] unless overridden.
pub const MAX_ITERATES: usize = 3;

// ---------------------------------------------------------------------------
// Symbols
// ---------------------------------------------------------------------------

/// Region in frequency space outside of which a symbol vanishes.
///
/// It is the intersection of an annulus `xi_min <= |xi| <= xi_max`, a cone
/// `ratio_min <= |mu|/|xi| <= ratio_max` and an axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    pub xi_min: f64,
    pub xi_max: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl Support {
    /// Annulus and cone bounds with the smallest enclosing box.
    pub fn band(d1: usize, d2: usize, xi_min: f64, xi_max: f64, ratio_min: f64, ratio_max: f64) -> Self {
        let mu_max = ratio_max * xi_max;
        let lo = DVector::from_fn(d1 + d2, |i, _| if i < d1 { -xi_max } else { -mu_max });
        Support {
            xi_min,
            xi_max,
            ratio_min,
            ratio_max,
            hi: -&lo,
            lo,
        }
    }

    /// A box, with annulus and cone bounds derived from it.
    pub fn boxed(d1: usize, lo: DVector<f64>, hi: DVector<f64>) -> Self {
        let range = |a: usize, b: usize| {
            let mut near = 0.0;
            let mut far = 0.0;
            for i in a..b {
                let (l, h) = (lo[i], hi[i]);
                let n = if l > 0.0 {
                    l
                } else if h < 0.0 {
                    -h
                } else {
                    0.0
                };
                near += n * n;
                far += l.abs().max(h.abs()).powi(2);
            }
            (near.sqrt(), far.sqrt())
        };
        let (xi_min, xi_max) = range(0, d1);
        let (mu_min, mu_max) = range(d1, lo.len());
        Support {
            xi_min,
            xi_max,
            ratio_min: if xi_max > 0.0 { mu_min / xi_max } else { 0.0 },
            ratio_max: if xi_min > 0.0 { mu_max / xi_min } else { f64::INFINITY },
            lo,
            hi,
        }
    }

    pub fn contains(&self, cov: &Covector) -> bool {
        let v = cov.to_vec();
        if v.iter().zip(self.lo.iter().zip(self.hi.iter())).any(|(x, (l, h))| x < l || x > h) {
            return false;
        }
        let xn = cov.xi.norm();
        if xn < self.xi_min || xn > self.xi_max || xn == 0.0 {
            return false;
        }
        let r = cov.mu.norm() / xn;
        r >= self.ratio_min && r <= self.ratio_max
    }

    /// Smallest `kappa` with the region inside `{|xi| >= 1/kappa, 1/kappa <= |mu|/|xi| <= kappa}`.
    pub fn kappa(&self) -> f64 {
        let a = if self.xi_min > 0.0 { 1.0 / self.xi_min } else { f64::INFINITY };
        let b = if self.ratio_min > 0.0 { 1.0 / self.ratio_min } else { f64::INFINITY };
        a.max(b).max(self.ratio_max).max(1.0)
    }
}

type SymbolFn = dyn Fn(f64, &Covector) -> C64 + Send + Sync;

/// An amplitude `q(t, xi)` with declared orders and support.
#[derive(Clone)]
pub struct Symbol {
    f: Arc<SymbolFn>,
    pub order_t: f64,
    pub order_xi: f64,
    pub support: Support,
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Symbol")
            .field("order_t", &self.order_t)
            .field("order_xi", &self.order_xi)
            .field("support", &self.support)
            .finish()
    }
}

impl Symbol {
    pub fn new(
        support: Support,
        order_t: f64,
        order_xi: f64,
        f: impl Fn(f64, &Covector) -> C64 + Send + Sync + 'static,
    ) -> Self {
        Symbol {
            f: Arc::new(f),
            order_t,
            order_xi,
            support,
        }
    }

    /// The zero symbol on a given support.
    pub fn zero(support: Support) -> Self {
        Symbol::new(support, 0.0, 0.0, |_, _| C64::new(0.0, 0.0))
    }

    /// Value at `(t, cov)`; zero outside the support.
    pub fn eval(&self, t: f64, cov: &Covector) -> C64 {
        if self.support.contains(cov) {
            (self.f)(t, cov)
        } else {
            C64::new(0.0, 0.0)
        }
    }

    /// Smooth Gaussian bump `exp(-|xi - c|^2 / sigma^2)` cut off to the box `c +- w`,
    /// with `sigma = w / 3`, optionally modulated in time by `cos(t/2) + 0.3 i sin(0.8 t)`.
    pub fn gaussian(d1: usize, center: &Covector, half_width: f64, time_modulated: bool) -> Self {
        let c = center.to_vec();
        let lo = c.map(|v| v - half_width);
        let hi = c.map(|v| v + half_width);
        let support = Support::boxed(d1, lo, hi);
        let sigma = half_width / 3.0;
        Symbol::new(support, 0.0, 0.0, move |t, cov| {
            let v = cov.to_vec();
            let mut cut = 1.0;
            for (x, m) in v.iter().zip(c.iter()) {
                let s = (x - m).abs() / half_width;
                cut *= smooth_step((1.0 - s) / 0.4, 1.0);
            }
            let r2 = (&v - &c).norm_squared();
            let base = (-r2 / (sigma * sigma)).exp() * cut;
            let modulation = if time_modulated {
                C64::new((0.5 * t).cos(), 0.3 * (0.8 * t).sin())
            } else {
                C64::new(1.0, 0.0)
            };
            modulation * base
        })
    }
}

/// Finite-difference steps used for derivatives of symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivSteps {
    /// Step in `t`, scaled by `max(1, |t|)`.
    pub h_t: f64,
    /// Step in `xi`, relative to `|cov|`.
    pub h_xi_rel: f64,
}

impl Default for DerivSteps {
    fn default() -> Self {
        DerivSteps {
            h_t: 1e-3,
            h_xi_rel: 1e-3,
        }
    }
}

/// `d_t^j d_xi^alpha q` for `j <= 2`, `|alpha| <= 2`, first-layer `xi` only.
#[derive(Debug, Clone)]
pub struct SymbolDerivs {
    pub q: C64,
    pub q_t: C64,
    pub q_tt: C64,
    pub grad: CVec,
    pub grad_t: CVec,
    pub hess: CMat,
}

impl SymbolDerivs {
    pub fn compute(q: &Symbol, t: f64, cov: &Covector, steps: DerivSteps) -> Self {
        let d1 = cov.xi.len();
        let ht = steps.h_t * t.abs().max(1.0);
        let hx = steps.h_xi_rel * cov.norm();
        let at = |tt: f64, dxi: &[(usize, f64)]| {
            let mut c = cov.clone();
            for &(i, s) in dxi {
                c.xi[i] += s;
            }
            q.eval(tt, &c)
        };
        let q0 = at(t, &[]);
        let q_t = richardson_d1(|s| at(t + s, &[]), 0.0, ht);
        let q_tt = richardson_d2(|s| at(t + s, &[]), 0.0, ht);
        let grad = CVec::from_fn(d1, |i, _| richardson_d1(|s| at(t, &[(i, s)]), 0.0, hx));
        let grad_t = CVec::from_fn(d1, |i, _| {
            richardson_d1(
                |s| richardson_d1(|r| at(t + r, &[(i, s)]), 0.0, ht),
                0.0,
                hx,
            )
        });
        let mut hess = CMat::zeros(d1, d1);
        for i in 0..d1 {
            hess[(i, i)] = richardson_d2(|s| at(t, &[(i, s)]), 0.0, hx);
            for j in 0..i {
                let v = richardson_d1(
                    |s| richardson_d1(|r| at(t, &[(i, s), (j, r)]), 0.0, hx),
                    0.0,
                    hx,
                );
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        SymbolDerivs {
            q: q0,
            q_t,
            q_tt,
            grad,
            grad_t,
            hess,
        }
    }
}

// ---------------------------------------------------------------------------
// Closed-form coefficients
// ---------------------------------------------------------------------------

/// The six coefficients `F_kj`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FCoeffs {
    pub f20: C64,
    pub f11: C64,
    pub f10: C64,
    pub f02: C64,
    pub f01: C64,
    pub f00: C64,
}

/// The coefficients `Lambda_jr` of the operator `Lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaCoeffs {
    pub lambda00: C64,
    pub lambda10: C64,
    pub lambda20: C64,
    pub lambda01: CVec,
    pub lambda11: CVec,
    pub lambda02: CMat,
}

/// All transport coefficients at one `(t, x, xi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffBundle {
    pub f20: C64,
    pub f11: C64,
    pub f10: C64,
    pub f02: C64,
    pub f01: C64,
    pub f00: C64,
    pub k_coeff: C64,
    pub lambda00: C64,
    pub lambda10: C64,
    pub lambda20: C64,
    pub lambda01: CVec,
    pub lambda11: CVec,
    pub lambda02: CMat,
}

/// The `(t, xi)`-dependent quantities shared by every closed-form coefficient.
///
/// With `J = J_{mu/|mu|}`: `a, b, c = <|J|^k xibar, xibar>`, `T = tr |J|`,
/// `D = 1 + i theta a`, `rho = |mu|/|xi|`, `v = (|J| + iJ) xi`, `w = exp(-2i theta |J|) v`.
#[derive(Debug, Clone)]
pub struct TransportGeometry {
    pub geo: FlowGeometry,
    pub rho: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub trace: f64,
    pub d: C64,
    pub v: CVec,
    pub w: CVec,
    /// `|J| w`.
    pub jw: CVec,
    /// `|J|` for the normalized `mu`.
    pub abs_jbar: DMatrix<f64>,
}

impl TransportGeometry {
    pub fn new(g: &Group2Step, t: f64, cov: &Covector) -> Result<Self> {
        let geo = checked_geometry(g, t, cov)?;
        Ok(Self::from_geometry(geo, cov))
    }

    pub(crate) fn from_geometry(geo: FlowGeometry, cov: &Covector) -> Self {
        let sp = geo.spectrum.as_ref().expect("mu is nonzero inside Omega");
        let xb = &geo.xibar;
        let coords = sp.coords(xb);
        let moment = |k: i32| -> f64 {
            coords
                .iter()
                .zip(sp.lambda())
                .map(|(z, l)| z.norm_sqr() * l.abs().powi(k))
                .sum()
        };
        let a = abs_quadratic(sp, xb);
        let b = moment(2);
        let c = moment(3);
        let trace: f64 = sp.lambda().iter().map(|l| l.abs()).sum();
        let th = geo.theta;
        let xi = to_complex(&cov.xi);
        let v = sp.apply(|l| C64::new(l.abs() + l, 0.0), &xi);
        let w = sp.apply(|l| (-2.0 * I * th * l.abs()).exp() * (l.abs() + l), &xi);
        let jw = sp.apply(
            |l| (-2.0 * I * th * l.abs()).exp() * (l.abs() + l) * l.abs(),
            &xi,
        );
        let abs_jbar = sp.real_func(|l| C64::new(l.abs(), 0.0));
        TransportGeometry {
            rho: geo.mu_norm / geo.xi_norm,
            d: C64::new(1.0, th * a),
            a,
            b,
            c,
            trace,
            v,
            w,
            jw,
            abs_jbar,
            geo,
        }
    }

    /// `(s, s2) = (<w, x - x^t>, <|J| w, x - x^t>)`, bilinear pairings.
    fn pairings(&self, x: &DVector<f64>) -> (C64, C64) {
        let dx = x - &self.geo.flow.x;
        (dot_cr(&self.w, &dx), dot_cr(&self.jw, &dx))
    }

    /// Closed-form `F_kj` at first-layer position `x`.
    pub fn f_coeffs(&self, x: &DVector<f64>) -> FCoeffs {
        let (s, s2) = self.pairings(x);
        let rho = self.rho;
        let r2 = rho * rho;
        let (a, tr, d) = (self.a, self.trace, self.d);
        let ad = a / d;
        let th = self.geo.theta;
        FCoeffs {
            f20: -r2 / 4.0 * s * s,
            f11: C64::new(2.0 * self.geo.xi_norm, 0.0) + I * rho * s,
            f10: self.geo.mu_norm / 2.0 * th * a * a / d + r2 / 4.0 * ((tr - ad) * s + 2.0 * s2),
            f02: C64::new(1.0, 0.0),
            f01: -I * rho / 2.0 * (tr - ad),
            f00: -r2 / 16.0 * (tr * tr - 2.0 * tr * ad - ad * ad),
        }
    }

    /// Closed-form `K = F_10 + R F_20` at first-layer position `x`.
    pub fn k_value(&self, x: &DVector<f64>) -> C64 {
        let (s, _) = self.pairings(x);
        let (a, b, tr, d) = (self.a, self.b, self.trace, self.d);
        let th = self.geo.theta;
        self.rho * self.rho / 8.0
            * s
            * (tr - (tr - 2.0 * a) / d + I * th * (2.0 * b - 3.0 * a * a) / (d * d))
    }

    /// Closed-form `Lambda_jr` for a general 2-step group.
    pub fn lambda_coeffs(&self) -> LambdaCoeffs {
        let (a, b, c, tr, d) = (self.a, self.b, self.c, self.trace, self.d);
        let ith = I * self.geo.theta;
        let r2 = self.rho * self.rho;
        let e = 2.0 * b - 3.0 * a * a;
        let lambda00 = -r2 / 16.0 / (d * d)
            * (tr * tr - 6.0 * a * tr - 12.0 * b + 21.0 * a * a
                - 4.0 * ith * tr * e / d
                - 2.0 * ith * (4.0 * c - 30.0 * a * b + 33.0 * a.powi(3)) / d
                + 5.0 * ith * ith * e * e / (d * d)
                + 2.0 * e / d);
        let scal = tr - 3.0 * a - 2.0 * ith * e / d;
        let absj_v = crate::numerics::to_complex_mat(&self.abs_jbar) * &self.v;
        let lambda01 = (&self.v * scal + absj_v * C64::new(2.0, 0.0)) * (-r2 / 4.0 / (d * d));
        let lambda02 = &self.v * self.v.transpose() * (-r2 / 4.0 / (d * d));
        let lambda10 = I * self.rho / 2.0 / d * (tr - a - ith * e / d);
        let lambda11 = &self.v * (I * self.rho / d);
        LambdaCoeffs {
            lambda00,
            lambda10,
            lambda20: C64::new(1.0, 0.0),
            lambda01,
            lambda11,
            lambda02,
        }
    }

    /// Simplified `Lambda_jr` valid on H-type groups.
    pub fn lambda_coeffs_htype(&self) -> LambdaCoeffs {
        let n = self.v.len() as f64;
        let d = C64::new(1.0, self.geo.theta);
        let r2 = self.rho * self.rho;
        let lambda00 =
            -r2 / 16.0 / (d * d) * (n * (n - 2.0) - 2.0 * (2.0 * n - 1.0) / d + 5.0 / (d * d));
        let lambda01 = &self.v * (-r2 / 4.0 / (d * d) * (n + 1.0 - 2.0 / d));
        let lambda10 = I * self.rho / 2.0 / d * (n - 1.0 / d);
        let lambda11 = &self.v * (I * self.rho / d);
        let lambda02 = &self.v * self.v.transpose() * (-r2 / 4.0 / (d * d));
        LambdaCoeffs {
            lambda00,
            lambda10,
            lambda20: C64::new(1.0, 0.0),
            lambda01,
            lambda11,
            lambda02,
        }
    }
}

/// Closed-form `F_kj` at `(t, p, cov)`.
pub fn f_coeffs(g: &Group2Step, t: f64, p: &Point, cov: &Covector) -> Result<FCoeffs> {
    Ok(TransportGeometry::new(g, t, cov)?.f_coeffs(&p.x))
}

/// Closed-form `K` at `(t, p, cov)`.
pub fn k_value(g: &Group2Step, t: f64, p: &Point, cov: &Covector) -> Result<C64> {
    Ok(TransportGeometry::new(g, t, cov)?.k_value(&p.x))
}

/// Closed-form `Lambda_jr` at `(t, cov)`.
pub fn lambda_coeffs(g: &Group2Step, t: f64, cov: &Covector) -> Result<LambdaCoeffs> {
    Ok(TransportGeometry::new(g, t, cov)?.lambda_coeffs())
}

/// Every coefficient at `(t, p, cov)`.
pub fn coeff_bundle(g: &Group2Step, t: f64, p: &Point, cov: &Covector) -> Result<CoeffBundle> {
    let tg = TransportGeometry::new(g, t, cov)?;
    let f = tg.f_coeffs(&p.x);
    let l = tg.lambda_coeffs();
    Ok(CoeffBundle {
        f20: f.f20,
        f11: f.f11,
        f10: f.f10,
        f02: f.f02,
        f01: f.f01,
        f00: f.f00,
        k_coeff: tg.k_value(&p.x),
        lambda00: l.lambda00,
        lambda10: l.lambda10,
        lambda20: l.lambda20,
        lambda01: l.lambda01,
        lambda11: l.lambda11,
        lambda02: l.lambda02,
    })
}

// ---------------------------------------------------------------------------
// Definition-based evaluation of F_kj
// ---------------------------------------------------------------------------

/// Right translation `p . exp(s e_j)` along the horizontal field `X_j`.
pub fn right_translate(g: &Group2Step, p: &Point, j: usize, s: f64) -> Point {
    let mut e = DVector::zeros(g.d1());
    e[j] = s;
    g.multiply(p, &Point::new(e, DVector::zeros(g.d2())))
}

/// `F_kj` computed from their definition through finite differences of `phi` and `d_phi`:
/// `F20 = phi_t^2 - sum (X_j phi)^2`, `F11 = -2 phi_t`,
/// `F10 = -(phi_tt + L phi + 2 phi_t d_t / d)`, `F01 = 2 d_t / d`, `F00 = (d_tt + L d) / d`.
///
/// The density does not depend on the space variable, so its horizontal derivatives vanish.
pub fn f_coeffs_definition(g: &Group2Step, t: f64, p: &Point, cov: &Covector) -> Result<FCoeffs> {
    PhaseGeometry::new(g, t, cov)?;
    let phi = |tt: f64, q: &Point| {
        PhaseGeometry::new(g, tt, cov)
            .map(|pg| pg.value(q))
            .unwrap_or(C64::new(f64::NAN, f64::NAN))
    };
    let dens = |tt: f64| {
        checked_geometry(g, tt, cov)
            .map(|geo| hessian_from_geometry(&geo).density)
            .unwrap_or(C64::new(f64::NAN, f64::NAN))
    };
    let ht = 1e-3 * t.abs().max(1.0);
    let htt = 5e-3 * t.abs().max(1.0);
    let phi_t = richardson_d1(|s| phi(t + s, p), 0.0, ht);
    let phi_tt = richardson_d2(|s| phi(t + s, p), 0.0, htt);
    // phi is quadratic along each horizontal line, so plain stencils are exact.
    let hx = 0.1;
    let mut grad_sq = C64::new(0.0, 0.0);
    let mut lap = C64::new(0.0, 0.0);
    let p0 = phi(t, p);
    for j in 0..g.d1() {
        let fp = phi(t, &right_translate(g, p, j, hx));
        let fm = phi(t, &right_translate(g, p, j, -hx));
        let xj = (fp - fm) / (2.0 * hx);
        grad_sq += xj * xj;
        lap -= (fp - 2.0 * p0 + fm) / (hx * hx);
    }
    let d0 = dens(t);
    let d_t = richardson_d1(dens, t, ht);
    let d_tt = richardson_d2(dens, t, htt);
    Ok(FCoeffs {
        f20: phi_t * phi_t - grad_sq,
        f11: -2.0 * phi_t,
        f10: -(phi_tt + lap + 2.0 * phi_t * d_t / d0),
        f02: C64::new(1.0, 0.0),
        f01: 2.0 * d_t / d0,
        f00: d_tt / d0,
    })
}

// ---------------------------------------------------------------------------
// The amplitude-to-symbol operator R, as a numerical oracle
// ---------------------------------------------------------------------------

/// Function of the first-layer position at fixed `(t, xi)`.
pub type XFn<'a> = Box<dyn Fn(&DVector<f64>) -> C64 + Send + Sync + 'a>;

/// A `u`-independent amplitude `p(t, x, xi)` that can be frozen at `(t, xi)`.
pub trait Amplitude: Sync {
    fn prepare(&self, t: f64, cov: &Covector) -> Result<XFn<'_>>;
}

/// Amplitude given by a plain function of `(t, point, covector)`; `u` is set to zero.
pub struct FnAmplitude<F>(pub F);

impl<F> Amplitude for FnAmplitude<F>
where
    F: Fn(f64, &Point, &Covector) -> C64 + Sync + Send,
{
    fn prepare(&self, t: f64, cov: &Covector) -> Result<XFn<'_>> {
        let cov = cov.clone();
        let d2 = cov.mu.len();
        Ok(Box::new(move |x| {
            (self.0)(t, &Point::new(x.clone(), DVector::zeros(d2)), &cov)
        }))
    }
}

/// Which closed-form `F_kj` multiplies a symbol factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FTerm {
    F20,
    F11,
    F10,
}

/// `sum_i F_i(t, x, xi) * factor_i(t, xi)` as an amplitude.
pub struct FAmplitude<'g> {
    pub g: &'g Group2Step,
    pub terms: Vec<(FTerm, Box<dyn Fn(f64, &Covector) -> C64 + Send + Sync + 'g>)>,
}

impl Amplitude for FAmplitude<'_> {
    fn prepare(&self, t: f64, cov: &Covector) -> Result<XFn<'_>> {
        let tg = TransportGeometry::new(self.g, t, cov)?;
        let factors: Vec<(FTerm, C64)> = self.terms.iter().map(|(k, f)| (*k, f(t, cov))).collect();
        Ok(Box::new(move |x| {
            let f = tg.f_coeffs(x);
            factors
                .iter()
                .map(|(k, c)| {
                    c * match k {
                        FTerm::F20 => f.f20,
                        FTerm::F11 => f.f11,
                        FTerm::F10 => f.f10,
                    }
                })
                .sum()
        }))
    }
}

/// Steps and node counts of the `R` oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RConfig {
    /// Step of the frequency divergence, relative to `|cov|`.
    pub h_xi_rel: f64,
    /// Absolute step of the space gradient.
    pub h_x: f64,
    /// Gauss-Legendre nodes for the segment average of the gradient.
    pub s_nodes: usize,
}

impl Default for RConfig {
    fn default() -> Self {
        RConfig {
            h_xi_rel: 1e-3,
            h_x: 1e-2,
            s_nodes: 4,
        }
    }
}

/// `R p = d^{-1} Div_xi(d Phi_0^{-1} grad~_x p)` applied to an inner amplitude;
/// itself an amplitude, so it composes.
pub struct RAmplitude<'g, A> {
    pub g: &'g Group2Step,
    pub inner: A,
    pub cfg: RConfig,
}

struct StencilNode<'a> {
    inner: XFn<'a>,
    weight_row: CVec,
    xt: DVector<f64>,
}

fn space_gradient(f: &XFn<'_>, x: &DVector<f64>, h: f64) -> CVec {
    CVec::from_fn(x.len(), |i, _| {
        richardson_d1(
            |s| {
                let mut y = x.clone();
                y[i] += s;
                f(&y)
            },
            0.0,
            h,
        )
    })
}

impl<A: Amplitude> Amplitude for RAmplitude<'_, A> {
    fn prepare(&self, t: f64, cov: &Covector) -> Result<XFn<'_>> {
        let g = self.g;
        let cfg = self.cfg;
        let d1 = g.d1();
        let h = cfg.h_xi_rel * cov.norm();
        let d0 = hessian_from_geometry(&checked_geometry(g, t, cov)?).density;
        let offsets = [h, -h, 0.5 * h, -0.5 * h];
        let mut nodes: Vec<StencilNode<'_>> = Vec::with_capacity(4 * d1);
        for i in 0..d1 {
            for &o in &offsets {
                let mut c = cov.clone();
                c.xi[i] += o;
                let geo = checked_geometry(g, t, &c)?;
                let dens = hessian_from_geometry(&geo).density;
                let pinv = phi0_inverse(&geo);
                let row = pinv.row(i).transpose() * dens;
                nodes.push(StencilNode {
                    inner: self.inner.prepare(t, &c)?,
                    weight_row: row,
                    xt: geo.flow.x.clone(),
                });
            }
        }
        let rule = gauss_legendre(cfg.s_nodes);
        let pts = rule.mapped(0.0, 1.0);
        Ok(Box::new(move |x| {
            let comp = |n: &StencilNode<'_>| {
                let mut avg = CVec::zeros(d1);
                for &(s, w) in &pts {
                    let y = &n.xt + (x - &n.xt) * s;
                    avg += space_gradient(&n.inner, &y, cfg.h_x) * C64::new(w, 0.0);
                }
                n.weight_row.iter().zip(avg.iter()).map(|(a, b)| a * b).sum::<C64>()
            };
            let mut div = C64::new(0.0, 0.0);
            for i in 0..d1 {
                let v: Vec<C64> = (0..4).map(|k| comp(&nodes[4 * i + k])).collect();
                let coarse = (v[0] - v[1]) / (2.0 * h);
                let fine = (v[2] - v[3]) / h;
                div += (4.0 * fine - coarse) / 3.0;
            }
            div / d0
        }))
    }
}

/// `R p` at `(t, p, cov)` for a `u`-independent amplitude given as a plain function.
pub fn apply_r_numeric<F>(
    g: &Group2Step,
    amp: F,
    t: f64,
    p: &Point,
    cov: &Covector,
    cfg: RConfig,
) -> Result<C64>
where
    F: Fn(f64, &Point, &Covector) -> C64 + Sync + Send,
{
    let r = RAmplitude {
        g,
        inner: FnAmplitude(amp),
        cfg,
    };
    let f = r.prepare(t, cov)?;
    let v = f(&p.x);
    Ok(v)
}

/// `Lambda q = F00 q + F01 q_t + q_tt + R(F10 q + F11 q_t) + R(R(F20 q))` evaluated on the flow,
/// with every `R` computed by the numerical oracle.
pub fn lambda_r_composition(
    g: &Group2Step,
    q: &Symbol,
    t: f64,
    cov: &Covector,
    cfg: RConfig,
    steps: DerivSteps,
) -> Result<C64> {
    let tg = TransportGeometry::new(g, t, cov)?;
    let xt = tg.geo.flow.x.clone();
    let f = tg.f_coeffs(&xt);
    let ht = steps.h_t * t.abs().max(1.0);
    let q0 = q.eval(t, cov);
    let qt = richardson_d1(|s| q.eval(t + s, cov), 0.0, ht);
    let qtt = richardson_d2(|s| q.eval(t + s, cov), 0.0, ht);
    let q_fn = move |tt: f64, c: &Covector| q.eval(tt, c);
    let qt_fn = move |tt: f64, c: &Covector| richardson_d1(|s| q.eval(tt + s, c), 0.0, ht);
    let first = RAmplitude {
        g,
        inner: FAmplitude {
            g,
            terms: vec![(FTerm::F10, Box::new(q_fn)), (FTerm::F11, Box::new(qt_fn))],
        },
        cfg,
    };
    let second = RAmplitude {
        g,
        inner: RAmplitude {
            g,
            inner: FAmplitude {
                g,
                terms: vec![(FTerm::F20, Box::new(q_fn))],
            },
            cfg,
        },
        cfg,
    };
    let r1 = {
        let f = first.prepare(t, cov)?;
        f(&xt)
    };
    let r2 = {
        let f = second.prepare(t, cov)?;
        f(&xt)
    };
    Ok(f.f00 * q0 + f.f01 * qt + qtt + r1 + r2)
}

// ---------------------------------------------------------------------------
// Operators on symbols
// ---------------------------------------------------------------------------

/// Result of applying an operator to a symbol at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Applied {
    pub value: C64,
    /// False when the point lies outside the symbol's support (the value is then 0).
    pub in_support: bool,
}

/// `Lambda q` from its coefficients and the derivatives of `q`.
pub fn lambda_from_parts(lc: &LambdaCoeffs, dq: &SymbolDerivs) -> C64 {
    let mut v = lc.lambda00 * dq.q + lc.lambda10 * dq.q_t + lc.lambda20 * dq.q_tt;
    v += dq.grad.iter().zip(lc.lambda01.iter()).map(|(a, b)| a * b).sum::<C64>();
    v += dq.grad_t.iter().zip(lc.lambda11.iter()).map(|(a, b)| a * b).sum::<C64>();
    v += lc
        .lambda02
        .iter()
        .zip(dq.hess.transpose().iter())
        .map(|(a, b)| a * b)
        .sum::<C64>();
    v
}

/// `Mho q = Lambda10 q / 2 + q_t + (d_xi q) . Lambda11 / 2`.
pub fn mho_from_parts(lc: &LambdaCoeffs, dq: &SymbolDerivs) -> C64 {
    0.5 * lc.lambda10 * dq.q
        + dq.q_t
        + 0.5 * dq.grad.iter().zip(lc.lambda11.iter()).map(|(a, b)| a * b).sum::<C64>()
}

/// `Lambda q` at `(t, cov)`.
pub fn apply_lambda(g: &Group2Step, q: &Symbol, t: f64, cov: &Covector) -> Result<Applied> {
    apply_lambda_with(g, q, t, cov, DerivSteps::default())
}

pub fn apply_lambda_with(
    g: &Group2Step,
    q: &Symbol,
    t: f64,
    cov: &Covector,
    steps: DerivSteps,
) -> Result<Applied> {
    if !q.support.contains(cov) {
        return Ok(Applied {
            value: C64::new(0.0, 0.0),
            in_support: false,
        });
    }
    let lc = lambda_coeffs(g, t, cov)?;
    let dq = SymbolDerivs::compute(q, t, cov, steps);
    Ok(Applied {
        value: lambda_from_parts(&lc, &dq),
        in_support: true,
    })
}

/// `Mho q` at `(t, cov)`.
pub fn apply_mho(g: &Group2Step, q: &Symbol, t: f64, cov: &Covector) -> Result<Applied> {
    if !q.support.contains(cov) {
        return Ok(Applied {
            value: C64::new(0.0, 0.0),
            in_support: false,
        });
    }
    let lc = lambda_coeffs(g, t, cov)?;
    let dq = SymbolDerivs::compute(q, t, cov, DerivSteps::default());
    Ok(Applied {
        value: mho_from_parts(&lc, &dq),
        in_support: true,
    })
}

/// `Lambda_I q (t, xi) = (2 i |xi|)^{-1} int_0^t Lambda q(tau, xi) d tau` by Gauss-Legendre.
pub fn apply_lambda_i(g: &Group2Step, q: &Symbol, t: f64, cov: &Covector, nodes: usize) -> Result<C64> {
    if nodes < 8 {
        return Err(Error::InvalidInput("Lambda_I needs at least 8 nodes".into()));
    }
    if t == 0.0 || !q.support.contains(cov) {
        return Ok(C64::new(0.0, 0.0));
    }
    let rule = gauss_legendre(nodes);
    let mut acc = C64::new(0.0, 0.0);
    for (tau, w) in rule.mapped(0.0, t) {
        acc += apply_lambda(g, q, tau, cov)?.value * w;
    }
    Ok(acc / (2.0 * I * cov.xi.norm()))
}

/// Exact-key memo of symbol values shared between threads.
#[derive(Default)]
struct Memo {
    map: RwLock<HashMap<Vec<u64>, C64>>,
}

const MEMO_LIMIT: usize = 1 << 20;

impl Memo {
    fn key(t: f64, cov: &Covector) -> Vec<u64> {
        std::iter::once(t)
            .chain(cov.xi.iter().copied())
            .chain(cov.mu.iter().copied())
            .map(f64::to_bits)
            .collect()
    }

    fn get_or(&self, t: f64, cov: &Covector, f: impl FnOnce() -> C64) -> C64 {
        let key = Self::key(t, cov);
        if let Some(v) = self.map.read().expect("memo poisoned").get(&key) {
            return *v;
        }
        let v = f();
        let mut map = self.map.write().expect("memo poisoned");
        if map.len() >= MEMO_LIMIT {
            map.clear();
        }
        map.insert(key, v);
        v
    }
}

/// `[q0, Lambda_I q0, ..., Lambda_I^N q0]` and `|xi| q + i Mho q` for each of them.
#[derive(Debug, Clone)]
pub struct Iterates {
    pub symbols: Vec<Symbol>,
    pub ringring: Vec<Symbol>,
}

/// Builds the parametrix amplitude iterates; `n` is capped by `max_n`.
pub fn amplitude_iterates(
    g: &Group2Step,
    q0: &Symbol,
    n: usize,
    nodes: usize,
    max_n: usize,
) -> Result<Iterates> {
    if n > max_n {
        return Err(Error::InvalidInput(format!(
            "{n} iterates requested, at most {max_n} allowed"
        )));
    }
    if nodes < 8 {
        return Err(Error::InvalidInput("Lambda_I needs at least 8 nodes".into()));
    }
    let group = Arc::new(g.clone());
    let mut symbols = vec![q0.clone()];
    for _ in 0..n {
        let prev = symbols.last().expect("nonempty").clone();
        let memo = Arc::new(Memo::default());
        let gg = group.clone();
        let order_xi = prev.order_xi - 1.0;
        let support = prev.support.clone();
        let next = Symbol::new(support, prev.order_t, order_xi, move |t, cov| {
            memo.get_or(t, cov, || {
                apply_lambda_i(&gg, &prev, t, cov, nodes).unwrap_or(C64::new(f64::NAN, f64::NAN))
            })
        });
        symbols.push(next);
    }
    let ringring = symbols
        .iter()
        .map(|s| {
            let gg = group.clone();
            let q = s.clone();
            Symbol::new(s.support.clone(), s.order_t, s.order_xi + 1.0, move |t, cov| {
                let mho = apply_mho(&gg, &q, t, cov)
                    .map(|a| a.value)
                    .unwrap_or(C64::new(f64::NAN, f64::NAN));
                cov.xi.norm() * q.eval(t, cov) + I * mho
            })
        })
        .collect();
    Ok(Iterates { symbols, ringring })
}
