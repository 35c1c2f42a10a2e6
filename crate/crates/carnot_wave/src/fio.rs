//! Oscillatory kernels `I[q](t, x) = (2 pi)^{-d} int e^{i phi} q d_phi d xi` by tensor
//! Gauss-Legendre quadrature, and the numerical studies built on them.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::carnot::{Covector, Group2Step, Point};
use crate::decompose::{mu_shear, sheared_symbol, MuSectorDecomposition};
use crate::error::{Error, Result};
use crate::flow::FlowGeometry;
pub use crate::numerics::fit_slope;
use crate::numerics::{five_point_d2, gauss_legendre, C64, I};
use crate::phase::{checked_geometry, hessian_from_geometry};
use crate::transport::{apply_lambda, Symbol};

/// Nodes summed per parallel chunk; chunk sums are combined in a fixed order.
const CHUNK: usize = 2048;

/// One piece of the integration region.
///
/// `Spherical` pieces use hyperspherical coordinates in `xi` and in `mu` separately, with
/// radii in the given intervals. `Cone` pieces use hyperspherical coordinates in `xi` and
/// `mu = |xi| s` with `s` in a box.
#[derive(Debug, Clone, PartialEq)]
pub enum Piece {
    Box { lo: DVector<f64>, hi: DVector<f64> },
    Spherical { xi_radius: (f64, f64), mu_radius: (f64, f64) },
    Cone { xi_radius: (f64, f64), s_lo: DVector<f64>, s_hi: DVector<f64> },
}

impl Piece {
    /// Quadrature nodes per coordinate, first-layer coordinates first.
    fn axes(&self, d1: usize, d2: usize, n: usize) -> Vec<Vec<(f64, f64)>> {
        match self {
            Piece::Box { lo, hi } => {
                let rule = gauss_legendre(n);
                (0..d1 + d2).map(|i| rule.mapped(lo[i], hi[i])).collect()
            }
            Piece::Spherical { xi_radius, mu_radius } => {
                let mut axes = sphere_axes(xi_radius, d1, n);
                axes.extend(sphere_axes(mu_radius, d2, n));
                axes
            }
            Piece::Cone { xi_radius, s_lo, s_hi } => {
                let rule = gauss_legendre(n);
                let mut axes = sphere_axes(xi_radius, d1, n);
                axes.extend((0..d2).map(|i| rule.mapped(s_lo[i], s_hi[i])));
                axes
            }
        }
    }

    /// The covector at coordinates `c` and the Jacobian of the map.
    fn covector(&self, d1: usize, d2: usize, c: &[f64]) -> (Covector, f64) {
        match self {
            Piece::Box { .. } => (Covector::from_slices(&c[..d1], &c[d1..]), 1.0),
            Piece::Cone { .. } => {
                let split = sphere_coords(d1);
                let (xi, jx) = sphere_point(&c[..split], d1);
                let r = c[0];
                let mu = DVector::from_column_slice(&c[split..]) * r;
                (Covector::new(xi, mu), jx * r.powi(d2 as i32))
            }
            Piece::Spherical { .. } => {
                let split = sphere_coords(d1);
                let (xi, jx) = sphere_point(&c[..split], d1);
                let (mu, jm) = sphere_point(&c[split..], d2);
                (Covector::new(xi, mu), jx * jm)
            }
        }
    }

    /// A bounding box, used to report the region.
    pub fn bounding_box(&self, d1: usize, d2: usize) -> (DVector<f64>, DVector<f64>) {
        match self {
            Piece::Box { lo, hi } => (lo.clone(), hi.clone()),
            Piece::Cone { xi_radius, s_lo, s_hi } => {
                let sm = s_lo.abs().max().max(s_hi.abs().max());
                let r = xi_radius.1;
                let hi = DVector::from_fn(d1 + d2, |i, _| if i < d1 { r } else { r * sm });
                (-&hi, hi)
            }
            Piece::Spherical { xi_radius, mu_radius } => {
                let hi = DVector::from_fn(d1 + d2, |i, _| if i < d1 { xi_radius.1 } else { mu_radius.1 });
                (-&hi, hi)
            }
        }
    }
}

/// Band region `a_i <= |xi| <= a_{i+1}`, `b_j <= |mu| <= b_{j+1}` split at the given breaks.
pub fn annulus_region(xi_breaks: &[f64], mu_breaks: &[f64]) -> Vec<Piece> {
    let mut out = Vec::new();
    for m in mu_breaks.windows(2) {
        for x in xi_breaks.windows(2) {
            out.push(Piece::Spherical {
                xi_radius: (x[0], x[1]),
                mu_radius: (m[0], m[1]),
            });
        }
    }
    out
}

/// Region of the order-0 band symbol at scale `2^m`, split where the dyadic cutoffs change form.
pub fn band_region(m: i32) -> Vec<Piece> {
    let s = 2f64.powi(m);
    let breaks = [0.5 * s, s, 2.0 * s];
    annulus_region(&breaks, &breaks)
}

/// Radius, then angles; `k = 1` uses the two signs.
fn sphere_axes(radius: &(f64, f64), k: usize, n: usize) -> Vec<Vec<(f64, f64)>> {
    let rule = gauss_legendre(n);
    let mut axes = vec![rule.mapped(radius.0, radius.1)];
    if k == 1 {
        axes.push(vec![(1.0, 1.0), (-1.0, 1.0)]);
        return axes;
    }
    for _ in 0..k.saturating_sub(2) {
        axes.push(rule.mapped(0.0, PI));
    }
    axes.push(rule.mapped(0.0, 2.0 * PI));
    axes
}

/// Number of coordinates used for a `k`-dimensional factor by [`sphere_axes`].
fn sphere_coords(k: usize) -> usize {
    if k == 1 {
        2
    } else {
        k
    }
}

/// Point of `R^k` and Jacobian from coordinates laid out by [`sphere_axes`].
fn sphere_point(c: &[f64], k: usize) -> (DVector<f64>, f64) {
    let r = c[0];
    if k == 1 {
        return (DVector::from_element(1, r * c[1]), 1.0);
    }
    let mut v = DVector::zeros(k);
    let mut jac = r.powi(k as i32 - 1);
    let mut sin_prod = 1.0;
    for i in 0..k - 1 {
        let a = c[1 + i];
        v[i] = r * sin_prod * a.cos();
        if i + 1 < k - 1 {
            jac *= a.sin().powi((k - 2 - i) as i32);
        }
        sin_prod *= a.sin();
    }
    v[k - 1] = r * sin_prod;
    (v, jac)
}

/// Tensor Gauss-Legendre rule over a union of pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpec {
    pub nodes_per_dim: usize,
    /// Pieces of the region; empty means the symbol's support box.
    pub region: Vec<Piece>,
    /// When set, a doubling change above this value is an error.
    pub refine_tol: Option<f64>,
}

impl QuadratureSpec {
    pub fn new(nodes_per_dim: usize) -> Self {
        QuadratureSpec {
            nodes_per_dim,
            region: Vec::new(),
            refine_tol: None,
        }
    }

    pub fn with_region(mut self, region: Vec<Piece>) -> Self {
        self.region = region;
        self
    }

    pub fn doubled(&self) -> Self {
        QuadratureSpec {
            nodes_per_dim: 2 * self.nodes_per_dim,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.nodes_per_dim < 8 {
            return Err(Error::InvalidInput("quadrature needs at least 8 nodes per dimension".into()));
        }
        Ok(())
    }

    fn pieces(&self, q: &Symbol) -> Vec<Piece> {
        if self.region.is_empty() {
            vec![Piece::Box {
                lo: q.support.lo.clone(),
                hi: q.support.hi.clone(),
            }]
        } else {
            self.region.clone()
        }
    }
}

/// A kernel value with its node-doubling error estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub value_re: f64,
    pub value_im: f64,
    pub refine_error: f64,
}

impl KernelSample {
    pub fn value(&self) -> C64 {
        C64::new(self.value_re, self.value_im)
    }
}

/// Quadrature nodes for a kernel at fixed `t`: weights and the phase data at each node.
///
/// Data per node (flat, stride `2 d1 + 2 d2 + d1^2 + 2`): weight (re, im), `x^t`, `u^t`,
/// `xi^t`, `mu`, `|J_mu|` column-major.
#[derive(Debug, Clone)]
pub struct KernelNodes {
    d1: usize,
    d2: usize,
    data: Vec<f64>,
    /// Node ranges that share the same `mu`.
    mu_groups: Vec<(usize, usize)>,
    /// Sum of absolute weights.
    pub abs_mass: f64,
}

impl KernelNodes {
    fn stride(d1: usize, d2: usize) -> usize {
        2 + 2 * d1 + 2 * d2 + d1 * d1
    }

    pub fn len(&self) -> usize {
        self.data.len() / Self::stride(self.d1, self.d2)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Builds nodes from `f(xi~) -> (weight, covector of the phase)`; `None` skips the node.
    pub fn build<F>(g: &Group2Step, pieces: &[Piece], n: usize, f: F) -> Result<Self>
    where
        F: Fn(&Covector) -> Result<Option<(C64, FlowGeometry, DMatrix<f64>)>> + Sync,
    {
        let (d1, d2) = (g.d1(), g.d2());
        let stride = Self::stride(d1, d2);
        let mut data = Vec::new();
        let mut mu_groups = Vec::new();
        let mut abs_mass = 0.0;
        for piece in pieces {
            let axes = piece.axes(d1, d2, n);
            let total: usize = axes.iter().map(Vec::len).product();
            let xi_axes = match piece {
                Piece::Spherical { .. } | Piece::Cone { .. } => sphere_coords(d1),
                _ => d1,
            };
            let xi_count: usize = axes[..xi_axes].iter().map(Vec::len).product();
            let scaled = matches!(piece, Piece::Cone { .. });
            // The last coordinate is the most significant digit, so equal mu are contiguous.
            let results: Vec<Result<Option<(Vec<f64>, u64)>>> = (0..total)
                .into_par_iter()
                .map(|idx| {
                    let mut rem = idx;
                    let mut c = Vec::with_capacity(axes.len());
                    let mut w = 1.0;
                    for axis in &axes {
                        let (x, wi) = axis[rem % axis.len()];
                        rem /= axis.len();
                        c.push(x);
                        w *= wi;
                    }
                    let mu_key = idx / xi_count;
                    let (cov, jac) = piece.covector(d1, d2, &c);
                    w *= jac;
                    Ok(f(&cov)?.map(|(wt, geo, absj)| {
                        let wt = wt * w;
                        let fl = &geo.flow;
                        let mut row = Vec::with_capacity(stride);
                        row.push(wt.re);
                        row.push(wt.im);
                        row.extend(fl.x.iter());
                        row.extend(fl.u.iter());
                        row.extend(fl.xi.iter());
                        row.extend(fl.mu.iter());
                        row.extend(absj.iter());
                        (row, mu_key as u64)
                    }))
                })
                .collect();
            let mut last_key = None;
            for r in results {
                if let Some((row, key)) = r? {
                    let start = data.len() / stride;
                    if last_key != Some(key) || scaled {
                        mu_groups.push((start, start));
                        last_key = Some(key);
                    }
                    abs_mass += C64::new(row[0], row[1]).norm();
                    data.extend(row);
                    mu_groups.last_mut().expect("pushed").1 = start + 1;
                }
            }
        }
        Ok(KernelNodes {
            d1,
            d2,
            data,
            mu_groups,
            abs_mass,
        })
    }

    /// Nodes of `I[A]` for an amplitude `A(xi)` multiplying `(2 pi)^{-d} d_phi`.
    pub fn for_amplitude<F>(g: &Group2Step, t: f64, pieces: &[Piece], n: usize, amp: F) -> Result<Self>
    where
        F: Fn(&Covector) -> Result<C64> + Sync,
    {
        let norm = (2.0 * PI).powi(-(g.dim() as i32));
        Self::build(g, pieces, n, |cov| {
            let a = amp(cov)?;
            if a == C64::new(0.0, 0.0) {
                return Ok(None);
            }
            let geo = checked_geometry(g, t, cov)?;
            let dens = hessian_from_geometry(&geo).density;
            let absj = abs_j_of(&geo);
            Ok(Some((a * dens * norm, geo, absj)))
        })
    }

    fn node_phase(&self, row: &[f64], p: &Point) -> C64 {
        let (d1, d2) = (self.d1, self.d2);
        let mut o = 2;
        let xt = &row[o..o + d1];
        o += d1;
        let ut = &row[o..o + d2];
        o += d2;
        let xit = &row[o..o + d1];
        o += d1;
        let mu = &row[o..o + d2];
        o += d2;
        let absj = &row[o..o + d1 * d1];
        let mut re = 0.0;
        let mut dx = [0.0f64; 16];
        for i in 0..d1 {
            dx[i] = p.x[i] - xt[i];
            re += dx[i] * xit[i];
        }
        for k in 0..d2 {
            re += (p.u[k] - ut[k]) * mu[k];
        }
        let mut im = 0.0;
        for j in 0..d1 {
            let mut s = 0.0;
            for i in 0..d1 {
                s += absj[i + j * d1] * dx[i];
            }
            im += dx[j] * s;
        }
        C64::new(re, 0.25 * im)
    }

    /// `sum_nodes w e^{i phi(p)}`, summed in a fixed order.
    pub fn sum(&self, p: &Point) -> C64 {
        let stride = Self::stride(self.d1, self.d2);
        let partial: Vec<C64> = self
            .data
            .par_chunks(stride * CHUNK)
            .map(|chunk| {
                chunk
                    .chunks(stride)
                    .map(|row| C64::new(row[0], row[1]) * (I * self.node_phase(row, p)).exp())
                    .sum()
            })
            .collect();
        partial.into_iter().sum()
    }

    /// Values at `(x, u_j)` for many `u_j`, using that the phase is `u . mu` plus a `u`-free part.
    pub fn sum_u_line(&self, x: &DVector<f64>, us: &[DVector<f64>]) -> Vec<C64> {
        let stride = Self::stride(self.d1, self.d2);
        let (d1, d2) = (self.d1, self.d2);
        let base = Point::new(x.clone(), DVector::zeros(d2));
        let groups: Vec<(DVector<f64>, C64)> = self
            .mu_groups
            .par_iter()
            .map(|&(a, b)| {
                let mut acc = C64::new(0.0, 0.0);
                for r in a..b {
                    let row = &self.data[r * stride..(r + 1) * stride];
                    acc += C64::new(row[0], row[1]) * (I * self.node_phase(row, &base)).exp();
                }
                let row = &self.data[a * stride..(a + 1) * stride];
                let o = 2 + 2 * d1 + d2;
                (DVector::from_column_slice(&row[o..o + d2]), acc)
            })
            .collect();
        us.iter()
            .map(|u| {
                groups
                    .iter()
                    .map(|(mu, gsum)| gsum * (I * u.dot(mu)).exp())
                    .sum()
            })
            .collect()
    }
}

pub(crate) fn abs_j_of(geo: &FlowGeometry) -> DMatrix<f64> {
    let sp = geo.spectrum.as_ref().expect("mu is nonzero inside Omega");
    sp.real_func(|l| C64::new(l.abs(), 0.0)) * geo.mu_norm
}

/// Nodes of `I[q](t, .)`.
pub fn kernel_nodes(g: &Group2Step, q: &Symbol, t: f64, spec: &QuadratureSpec) -> Result<KernelNodes> {
    spec.validate()?;
    KernelNodes::for_amplitude(g, t, &spec.pieces(q), spec.nodes_per_dim, |cov| Ok(q.eval(t, cov)))
}

/// `I[q](t, p)` with the difference between `n` and `2n` nodes per dimension as error estimate.
pub fn eval_kernel(g: &Group2Step, q: &Symbol, t: f64, p: &Point, spec: &QuadratureSpec) -> Result<KernelSample> {
    let coarse = kernel_nodes(g, q, t, spec)?.sum(p);
    let fine = kernel_nodes(g, q, t, &spec.doubled())?.sum(p);
    let change = (fine - coarse).norm();
    if let Some(tol) = spec.refine_tol {
        if change > tol {
            return Err(Error::RefineFailure { change, tol });
        }
    }
    Ok(KernelSample {
        t,
        x: p.x.iter().copied().collect(),
        u: p.u.iter().copied().collect(),
        value_re: fine.re,
        value_im: fine.im,
        refine_error: change,
    })
}

/// `(2 pi)^{-d} int |q| |d_phi|`, the bound on `|I[q](t, p)|` implied by `Im phi >= 0`.
pub fn absolute_bound(nodes: &KernelNodes) -> f64 {
    nodes.abs_mass
}

/// Result of one wave-identity evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveResidual {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub lhs_re: f64,
    pub lhs_im: f64,
    pub rhs_re: f64,
    pub rhs_im: f64,
    pub residual: f64,
}

/// Steps of the wave-identity stencils.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveSteps {
    pub h_t: f64,
    /// Space step; the stencil uses `h_x / band_scale`.
    pub h_x: f64,
    pub band_scale: f64,
}

/// `(d_t^2 + L) I[q]` against `I[-2i|xi| d_t q + Lambda q]` at several points sharing `t`.
///
/// `L = -sum X_j^2` is applied through right translations along the horizontal fields.
pub fn wave_identity_residuals(
    g: &Group2Step,
    q: &Symbol,
    t: f64,
    points: &[Point],
    spec: &QuadratureSpec,
    steps: WaveSteps,
) -> Result<Vec<WaveResidual>> {
    spec.validate()?;
    let pieces = spec.pieces(q);
    let n = spec.nodes_per_dim;
    let ht = steps.h_t;
    let hx = steps.h_x / steps.band_scale;
    let at_t: Vec<KernelNodes> = [-2.0, -1.0, 0.0, 1.0, 2.0]
        .iter()
        .map(|k| kernel_nodes(g, q, t + k * ht, spec))
        .collect::<Result<_>>()?;
    let ht_sym = 1e-3 * t.abs().max(1.0);
    let rhs_nodes = KernelNodes::for_amplitude(g, t, &pieces, n, |cov| {
        if !q.support.contains(cov) {
            return Ok(C64::new(0.0, 0.0));
        }
        let qt = crate::numerics::richardson_d1(|s| q.eval(t + s, cov), 0.0, ht_sym);
        let lam = apply_lambda(g, q, t, cov)?.value;
        Ok(-2.0 * I * cov.xi.norm() * qt + lam)
    })?;
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let vals: Vec<C64> = at_t.iter().map(|nd| nd.sum(p)).collect();
        let dtt = five_point_d2(|s| vals[(s.round() as i64 + 2) as usize], 0.0, 1.0) / (ht * ht);
        let center = vals[2];
        let mut lap = C64::new(0.0, 0.0);
        for j in 0..g.d1() {
            let fp = at_t[2].sum(&crate::transport::right_translate(g, p, j, hx));
            let fm = at_t[2].sum(&crate::transport::right_translate(g, p, j, -hx));
            lap -= (fp - 2.0 * center + fm) / (hx * hx);
        }
        let lhs = dtt + lap;
        let rhs = rhs_nodes.sum(p);
        let residual = (lhs - rhs).norm() / (lhs.norm() + rhs.norm() + 1e-300);
        out.push(WaveResidual {
            t,
            x: p.x.iter().copied().collect(),
            u: p.u.iter().copied().collect(),
            lhs_re: lhs.re,
            lhs_im: lhs.im,
            rhs_re: rhs.re,
            rhs_im: rhs.im,
            residual,
        });
    }
    Ok(out)
}

/// Single-point convenience wrapper around [`wave_identity_residuals`].
pub fn wave_identity_residual(
    g: &Group2Step,
    q: &Symbol,
    t: f64,
    p: &Point,
    spec: &QuadratureSpec,
    steps: WaveSteps,
) -> Result<f64> {
    Ok(wave_identity_residuals(g, q, t, std::slice::from_ref(p), spec, steps)?[0].residual)
}

/// Outcome of a large-time decomposition check at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecCheck {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub lhs_re: f64,
    pub lhs_im: f64,
    pub rhs_re: f64,
    pub rhs_im: f64,
    pub discrepancy: f64,
    /// `(k, sector index)` pairs with a nonempty integration region.
    pub pieces: Vec<(i64, usize)>,
}

/// Support description of a cone symbol, with the radii and ratios where its profile changes form.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeBounds {
    /// Increasing `|xi|` breaks; the first and last bound the support.
    pub xi_breaks: Vec<f64>,
    /// Increasing `|mu| / |xi|` breaks; the first and last bound the support.
    pub ratio_breaks: Vec<f64>,
}

impl ConeBounds {
    /// Bounds of [`crate::decompose::cone_symbol`] with the given bands.
    pub fn for_cone_symbol(xi_band: (f64, f64), ratio_band: (f64, f64)) -> Self {
        let thirds = |(a, b): (f64, f64)| {
            let w = (b - a) / 3.0;
            vec![a, a + w, b - w, b]
        };
        ConeBounds {
            xi_breaks: thirds(xi_band),
            ratio_breaks: thirds(ratio_band),
        }
    }

    fn ratio_range(&self) -> (f64, f64) {
        (self.ratio_breaks[0], *self.ratio_breaks.last().expect("nonempty breaks"))
    }
}

/// Consecutive subintervals of `[lo, hi]` cut at the breaks inside it.
fn split_interval(lo: f64, hi: f64, breaks: &[f64]) -> Vec<(f64, f64)> {
    let mut pts = vec![lo];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&b| b > lo && b < hi).collect();
    inner.sort_by(f64::total_cmp);
    pts.extend(inner);
    pts.push(hi);
    pts.windows(2)
        .filter(|w| w[1] - w[0] > 1e-12 * (1.0 + hi.abs()))
        .map(|w| (w[0], w[1]))
        .collect()
}

/// Compares `I[q](t, p)` with `|t|^{1/2 - d2} sum_{k, v} I_{k,v}[q_{k,v,T,kappa}](t, p)`, `T = |t|`.
///
/// Both sides are integrated in coordinates `mu = |xi| s`; on the right `s` ranges over the
/// interval where the sheared symbol can be nonzero. Requires `d2 = 1`.
pub fn dec_periodic_check(
    g: &Group2Step,
    q: &Symbol,
    cone: &ConeBounds,
    t: f64,
    points: &[Point],
    kappa: f64,
    spec: &QuadratureSpec,
) -> Result<Vec<DecCheck>> {
    spec.validate()?;
    if g.d2() != 1 {
        return Err(Error::InvalidInput("the decomposition check is implemented for d2 = 1".into()));
    }
    if t == 0.0 {
        return Err(Error::ZeroTime);
    }
    if cone.xi_breaks.len() < 2 || cone.ratio_breaks.len() < 2 {
        return Err(Error::InvalidInput("cone bounds need at least two breaks each".into()));
    }
    let n = spec.nodes_per_dim;
    let tabs = t.abs();
    if tabs < 16.0 * kappa * kappa {
        return Err(Error::InvalidInput(format!("need |t| >= 16 kappa^2 = {}", 16.0 * kappa * kappa)));
    }
    let dec = MuSectorDecomposition::new(1, tabs, kappa, 0.25, 0)?;
    let cone_pieces = |s_breaks: &[f64], s_lo: f64, s_hi: f64| -> Vec<Piece> {
        let mut out = Vec::new();
        for (slo, shi) in split_interval(s_lo, s_hi, s_breaks) {
            for x in cone.xi_breaks.windows(2) {
                out.push(Piece::Cone {
                    xi_radius: (x[0], x[1]),
                    s_lo: DVector::from_element(1, slo),
                    s_hi: DVector::from_element(1, shi),
                });
            }
        }
        out
    };
    let (r0, r1) = cone.ratio_range();
    let neg: Vec<f64> = cone.ratio_breaks.iter().map(|r| -r).collect();
    let mut lhs_pieces = cone_pieces(&cone.ratio_breaks, r0, r1);
    lhs_pieces.extend(cone_pieces(&neg, -r1, -r0));
    let lhs_nodes = KernelNodes::for_amplitude(g, t, &lhs_pieces, n, |cov| Ok(q.eval(t, cov)))?;
    let mut rhs_sets = Vec::new();
    let mut used = Vec::new();
    let k_lo = ((tabs * r0 / 2.0).floor() as i64 - 1).max(1);
    let k_hi = (tabs * r1 / 2.0).ceil() as i64 + 1;
    for k in k_lo..=k_hi {
        for vi in 0..dec.len() {
            let v = dec.sector(vi);
            // On the support sgn(t) mu points along v, so mu~ / |xi| = v (|t| r - 2k) with
            // r = |mu| / |xi| in the cone; chi_plus keeps |mu~| below 2|xi|.
            let to_s = |r: f64| v[0] * (tabs * r - 2.0 * k as f64);
            let (a, b) = (to_s(r0), to_s(r1));
            let s_lo = a.min(b).max(-2.0);
            let s_hi = a.max(b).min(2.0);
            if s_lo >= s_hi {
                continue;
            }
            let mut s_breaks: Vec<f64> = cone.ratio_breaks.iter().map(|&r| to_s(r)).collect();
            s_breaks.push(0.0);
            let qs = sheared_symbol(g, q, k, vi, &dec)?;
            let nodes = KernelNodes::build(g, &cone_pieces(&s_breaks, s_lo, s_hi), n, |cov| {
                let a = qs.eval(t, cov);
                if a == C64::new(0.0, 0.0) {
                    return Ok(None);
                }
                let orig = mu_shear(t, k, &v, cov)?;
                let geo = checked_geometry(g, t, &orig)?;
                let absj = abs_j_of(&geo);
                Ok(Some((a, geo, absj)))
            })?;
            rhs_sets.push(nodes);
            used.push((k, vi));
        }
    }
    let scale = tabs.powf(0.5 - g.d2() as f64);
    let mut out = Vec::new();
    for p in points {
        let lhs = lhs_nodes.sum(p);
        let rhs: C64 = rhs_sets.iter().map(|s| s.sum(p)).sum::<C64>() * scale;
        out.push(DecCheck {
            t,
            x: p.x.iter().copied().collect(),
            u: p.u.iter().copied().collect(),
            lhs_re: lhs.re,
            lhs_im: lhs.im,
            rhs_re: rhs.re,
            rhs_im: rhs.im,
            discrepancy: (lhs - rhs).norm() / (lhs.norm() + rhs.norm() + 1e-300),
            pieces: used.clone(),
        });
    }
    Ok(out)
}

/// One row of the L^1 growth study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L1Row {
    pub m: i32,
    pub norm: f64,
    /// Norm on the grid with half the spacing.
    pub norm_refined: f64,
    /// `|norm_refined - norm| / norm_refined`.
    pub grid_change: f64,
    pub nodes: usize,
}

/// Parameters of the L^1 growth study.
#[derive(Debug, Clone, PartialEq)]
pub struct L1StudyConfig {
    pub t: f64,
    pub ball_radius: f64,
    /// Spatial spacing is `grid_factor 2^{-m}`.
    pub grid_factor: f64,
    /// Quadrature nodes per coordinate on each piece is `nodes_base 2^{m-2}`, at least 12.
    pub nodes_base: usize,
}

impl Default for L1StudyConfig {
    fn default() -> Self {
        L1StudyConfig {
            t: 1.0,
            ball_radius: 1.5,
            grid_factor: 1.0,
            nodes_base: 12,
        }
    }
}

/// Outcome of the L^1 growth study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L1Study {
    pub rows: Vec<L1Row>,
    /// Least-squares slope of `log2 norm` against `m`; `None` when a norm vanishes.
    pub slope: Option<f64>,
}

/// True when the bracket is a multiple of the standard symplectic form on `R^2`.
fn is_isotropic_heisenberg(g: &Group2Step) -> bool {
    if g.d1() != 2 || g.d2() != 1 {
        return false;
    }
    let b = g.bracket_matrix(0);
    let c = b[(0, 1)];
    c != 0.0 && b[(0, 0)] == 0.0 && b[(1, 1)] == 0.0 && b[(1, 0)] == -c
}

/// `int_{|x|^2 + u^2 <= R^2} |I(x, u)|` for a kernel invariant under rotations in `x`,
/// as `sum 2 pi r |I(r, 0, u)|` over a midpoint grid in `(r, u)` with spacing `h`.
fn radial_l1(nodes: &KernelNodes, radius: f64, h: f64) -> f64 {
    let nr = (radius / h).ceil() as usize;
    let nu = (2.0 * radius / h).ceil() as usize;
    let hr = radius / nr as f64;
    let hu = 2.0 * radius / nu as f64;
    let us: Vec<DVector<f64>> = (0..nu)
        .map(|j| DVector::from_element(1, -radius + (j as f64 + 0.5) * hu))
        .collect();
    let mut total = 0.0;
    for i in 0..nr {
        let r = (i as f64 + 0.5) * hr;
        let x = DVector::from_vec(vec![r, 0.0]);
        let vals = nodes.sum_u_line(&x, &us);
        for (u, v) in us.iter().zip(vals) {
            if r * r + u[0] * u[0] <= radius * radius {
                total += 2.0 * PI * r * v.norm() * hr * hu;
            }
        }
    }
    total
}

/// `||1_B I[q_m](t, .)||_1` for the order-0 band symbols `q_m`, with a fitted growth slope.
///
/// Restricted to the isotropic Heisenberg group, where the band symbols are rotation
/// invariant and the spatial integral reduces to the `(|x|, u)` half-plane.
pub fn l1_growth_study(g: &Group2Step, m_list: &[i32], cfg: &L1StudyConfig) -> Result<L1Study> {
    if !is_isotropic_heisenberg(g) {
        return Err(Error::InvalidInput("the L1 study needs the isotropic Heisenberg group".into()));
    }
    if m_list.iter().any(|&m| !(0..=6).contains(&m)) {
        return Err(Error::InvalidInput("band indices must lie in 0..=6".into()));
    }
    if cfg.ball_radius <= 0.0 || cfg.grid_factor <= 0.0 {
        return Err(Error::InvalidInput("radius and grid factor must be positive".into()));
    }
    let cut = crate::decompose::make_cutoffs(1.0)?;
    let mut rows = Vec::new();
    for &m in m_list {
        let q = crate::decompose::band_symbol(g, m, cut);
        let n = ((cfg.nodes_base as f64) * 2f64.powi(m - 2)).round().max(12.0) as usize;
        let spec = QuadratureSpec::new(n).with_region(band_region(m));
        let nodes = kernel_nodes(g, &q, cfg.t, &spec)?;
        let h = cfg.grid_factor * 2f64.powi(-m);
        let norm = radial_l1(&nodes, cfg.ball_radius, h);
        let norm_refined = radial_l1(&nodes, cfg.ball_radius, h / 2.0);
        rows.push(L1Row {
            m,
            norm,
            norm_refined,
            grid_change: (norm_refined - norm).abs() / norm_refined.max(f64::MIN_POSITIVE),
            nodes: nodes.len(),
        });
    }
    let slope = if rows.iter().all(|r| r.norm_refined > 0.0) {
        let x: Vec<f64> = rows.iter().map(|r| r.m as f64).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.norm_refined.log2()).collect();
        fit_slope(&x, &y)
    } else {
        None
    };
    Ok(L1Study { rows, slope })
}

/// One `(N, t, point)` row of the parametrix study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParametrixRow {
    pub iterates: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// `|I[Lambda Lambda_I^N q0](t, x)|`.
    pub remainder: f64,
    /// `|I[q0](t, x)|`.
    pub leading: f64,
    /// `(1/2) sum_{j <= N} (I[Lambda_I^j q0](t) + I[Lambda_I^j q0](-t))`.
    pub cos_sum_re: f64,
    pub cos_sum_im: f64,
    /// `-(1/2i) sum_{j <= N} (I[ringring_j](t) - I[ringring_j](-t))`, when requested.
    pub sin_sum_re: Option<f64>,
    pub sin_sum_im: Option<f64>,
}

/// Options of the parametrix study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParametrixOptions {
    /// Gauss-Legendre nodes of the time integral in `Lambda_I`.
    pub lambda_i_nodes: usize,
    /// Also evaluate the truncated sine-propagator expansion; this needs `Mho` of every
    /// iterate and roughly triples the cost.
    pub sine: bool,
}

impl Default for ParametrixOptions {
    fn default() -> Self {
        ParametrixOptions {
            lambda_i_nodes: 8,
            sine: false,
        }
    }
}

/// Outcome of the parametrix study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParametrixStudy {
    pub rows: Vec<ParametrixRow>,
    /// `sup |I[Lambda Lambda_I^N q0]|` over the grid, indexed by `N`.
    pub sup_remainder: Vec<f64>,
    /// `sup_remainder[N + 1] / sup_remainder[N]`.
    pub ratios: Vec<f64>,
}

/// Sizes of the remainder generators `I[Lambda Lambda_I^N q0]` and the truncated expansions
/// of `cos(t sqrt L) I_0[q0]` and `sqrt L sin(t sqrt L) I_0[q0]` on a `(t, x)` grid.
pub fn parametrix_residual_study(
    g: &Group2Step,
    q0: &Symbol,
    n_max: usize,
    t_grid: &[f64],
    p_grid: &[Point],
    spec: &QuadratureSpec,
    opts: ParametrixOptions,
) -> Result<ParametrixStudy> {
    spec.validate()?;
    let it = crate::transport::amplitude_iterates(g, q0, n_max, opts.lambda_i_nodes, 3)?;
    let pieces = spec.pieces(q0);
    let n = spec.nodes_per_dim;
    let mut rows = Vec::new();
    let mut sup_remainder = vec![0.0f64; n_max + 1];
    for &t in t_grid {
        let sym_nodes = |sym: &Symbol, s: f64| -> Result<KernelNodes> {
            KernelNodes::for_amplitude(g, s, &pieces, n, |cov| Ok(sym.eval(s, cov)))
        };
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        let mut ring_plus = Vec::new();
        let mut ring_minus = Vec::new();
        let mut rem = Vec::new();
        for j in 0..=n_max {
            plus.push(sym_nodes(&it.symbols[j], t)?);
            minus.push(sym_nodes(&it.symbols[j], -t)?);
            if opts.sine {
                ring_plus.push(sym_nodes(&it.ringring[j], t)?);
                ring_minus.push(sym_nodes(&it.ringring[j], -t)?);
            }
            let sym = &it.symbols[j];
            rem.push(KernelNodes::for_amplitude(g, t, &pieces, n, |cov| {
                Ok(apply_lambda(g, sym, t, cov)?.value)
            })?);
        }
        for p in p_grid {
            let leading = plus[0].sum(p).norm();
            let mut cos_sum = C64::new(0.0, 0.0);
            let mut sin_sum = C64::new(0.0, 0.0);
            for j in 0..=n_max {
                cos_sum += 0.5 * (plus[j].sum(p) + minus[j].sum(p));
                if opts.sine {
                    sin_sum += -(ring_plus[j].sum(p) - ring_minus[j].sum(p)) / (2.0 * I);
                }
                let remainder = rem[j].sum(p).norm();
                sup_remainder[j] = sup_remainder[j].max(remainder);
                rows.push(ParametrixRow {
                    iterates: j,
                    t,
                    x: p.x.iter().copied().collect(),
                    u: p.u.iter().copied().collect(),
                    remainder,
                    leading,
                    cos_sum_re: cos_sum.re,
                    cos_sum_im: cos_sum.im,
                    sin_sum_re: opts.sine.then_some(sin_sum.re),
                    sin_sum_im: opts.sine.then_some(sin_sum.im),
                });
            }
        }
    }
    let ratios = sup_remainder
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { f64::NAN })
        .collect();
    Ok(ParametrixStudy {
        rows,
        sup_remainder,
        ratios,
    })
}
