//! Dyadic partitions of unity, angular decompositions of the frequency sphere,
//! and the large-time shear of the second-layer frequency.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::DVector;

use crate::carnot::{Covector, Group2Step};
use crate::error::{Error, Result};
use crate::numerics::{fit_slope, SeededRng, C64};
use crate::phase::{checked_geometry, hessian_from_geometry};
use crate::transport::{Support, Symbol};

/// Smooth step: 0 for `x <= 0`, 1 for `x >= 1`, with `E(x) + E(1 - x) = 1`,
/// built from `f(x) = exp(-sharpness / x)`.
pub fn smooth_step(x: f64, sharpness: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-sharpness / x).exp();
    let b = (-sharpness / (1.0 - x)).exp();
    a / (a + b)
}

/// The dyadic cutoffs `chi0`, `chi1`, `chi1_tilde` built from one smooth step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DyadicCutoffs {
    pub sharpness: f64,
}

impl DyadicCutoffs {
    /// `psi`: 1 on `[0, 1]`, 0 on `[2, inf)`, even.
    pub fn psi(&self, s: f64) -> f64 {
        smooth_step(2.0 - s.abs(), self.sharpness)
    }

    /// `chi1(s) = psi(|s|) - psi(2|s|)`, supported in `1/2 <= |s| <= 2`.
    pub fn chi1(&self, s: f64) -> f64 {
        self.psi(s) - self.psi(2.0 * s)
    }

    /// `chi0(s) = psi(2|s|)`, supported in `[-1, 1]`, so that `chi0 + sum_{k>=0} chi1(2^-k s) = 1`.
    pub fn chi0(&self, s: f64) -> f64 {
        self.psi(2.0 * s)
    }

    /// Equal to 1 on the support of `chi1`; supported in `1/4 <= |s| <= 4`.
    pub fn chi1_tilde(&self, s: f64) -> f64 {
        self.psi(0.5 * s) - self.psi(4.0 * s)
    }

    /// `chi0(s) + sum_{k>=0} chi1(2^-k s)`, summed until the terms vanish.
    pub fn partition_sum(&self, s: f64) -> f64 {
        let mut acc = self.chi0(s);
        let mut k = 0;
        loop {
            let scale = 2f64.powi(-k);
            if s.abs() * scale < 0.25 {
                break;
            }
            acc += self.chi1(s * scale);
            k += 1;
        }
        acc
    }
}

/// Builds the dyadic cutoffs; `transition_sharpness` must be positive.
pub fn make_cutoffs(transition_sharpness: f64) -> Result<DyadicCutoffs> {
    if transition_sharpness <= 0.0 || !transition_sharpness.is_finite() {
        return Err(Error::InvalidInput("sharpness must be positive".into()));
    }
    Ok(DyadicCutoffs {
        sharpness: transition_sharpness,
    })
}

/// Mollified triangle: even, supported in `[-1, 1]`, with `sum_k chi_plus(s - k) = 1`.
pub fn plus_cutoff(s: f64) -> f64 {
    smooth_step(1.0 - s.abs(), 1.0)
}

/// `chi_kappa`: 1 on `[1/kappa, kappa]`, supported in `[1/(2 kappa), 2 kappa]`.
pub fn kappa_cutoff(kappa: f64, s: f64) -> f64 {
    let lo = 1.0 / (2.0 * kappa);
    smooth_step((s - lo) / lo, 1.0) * smooth_step((2.0 * kappa - s) / kappa, 1.0)
}

/// Smooth bump of `rho = distance / radius`: 1 for `rho <= 1/2`, 0 for `rho >= 1`.
fn bump(rho: f64) -> f64 {
    smooth_step(2.0 * (1.0 - rho), 1.0)
}

/// Uniform grid hash over points of the unit sphere, stored with a flat stride.
#[derive(Debug, Clone)]
struct SpatialHash {
    cell: f64,
    dim: usize,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl SpatialHash {
    fn new(cell: f64, dim: usize) -> Self {
        SpatialHash {
            cell,
            dim,
            cells: HashMap::new(),
        }
    }

    fn key(&self, p: &[f64]) -> Vec<i64> {
        p.iter().map(|x| (x / self.cell).floor() as i64).collect()
    }

    fn insert(&mut self, p: &[f64], idx: usize) {
        let k = self.key(p);
        self.cells.entry(k).or_default().push(idx);
    }

    /// Indices stored in cells within `reach` of the cell of `p`, in increasing order.
    fn nearby(&self, p: &[f64], reach: i64) -> Vec<usize> {
        let base = self.key(p);
        let mut out = Vec::new();
        let mut offs = vec![-reach; self.dim];
        loop {
            let k: Vec<i64> = base.iter().zip(&offs).map(|(a, b)| a + b).collect();
            if let Some(v) = self.cells.get(&k) {
                out.extend_from_slice(v);
            }
            let mut i = 0;
            loop {
                if i == self.dim {
                    out.sort_unstable();
                    return out;
                }
                offs[i] += 1;
                if offs[i] > reach {
                    offs[i] = -reach;
                    i += 1;
                } else {
                    break;
                }
            }
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Greedy separated packing of the unit sphere in `R^dim` from a seeded stream.
///
/// Candidates are drawn until `max(2000, 20 n)` consecutive candidates have been rejected.
fn greedy_packing(dim: usize, separation: f64, seed: u64) -> Vec<f64> {
    let mut rng = SeededRng::substream(seed, dim as u64);
    let mut pts: Vec<f64> = Vec::new();
    let mut hash = SpatialHash::new(separation, dim);
    let mut misses = 0usize;
    loop {
        let n = pts.len() / dim;
        if misses >= 2000usize.max(20 * n) {
            break;
        }
        let c = rng.unit_vec(dim);
        let cs = c.as_slice();
        let ok = hash
            .nearby(cs, 1)
            .iter()
            .all(|&j| dist(&pts[j * dim..(j + 1) * dim], cs) >= separation);
        if ok {
            pts.extend_from_slice(cs);
            hash.insert(cs, n);
            misses = 0;
        } else {
            misses += 1;
        }
    }
    pts
}

/// Points on the sphere with Shepard-normalized bump weights of a fixed radius.
#[derive(Debug, Clone)]
struct SphereCover {
    dim: usize,
    radius: f64,
    points: Vec<f64>,
    hash: Arc<OnceLock<SpatialHash>>,
}

impl SphereCover {
    fn new(dim: usize, radius: f64, points: Vec<f64>) -> Self {
        SphereCover {
            dim,
            radius,
            points,
            hash: Arc::new(OnceLock::new()),
        }
    }

    fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn hash(&self) -> &SpatialHash {
        self.hash.get_or_init(|| {
            let mut h = SpatialHash::new(self.radius, self.dim);
            for i in 0..self.len() {
                h.insert(self.point(i), i);
            }
            h
        })
    }

    /// Nonzero normalized weights at the unit vector `w`, by increasing index.
    fn weights(&self, w: &[f64]) -> Vec<(usize, f64)> {
        let raw: Vec<(usize, f64)> = self
            .hash()
            .nearby(w, 1)
            .into_iter()
            .map(|i| (i, bump(dist(self.point(i), w) / self.radius)))
            .filter(|&(_, b)| b > 0.0)
            .collect();
        let total: f64 = raw.iter().map(|p| p.1).sum();
        if total == 0.0 {
            return Vec::new();
        }
        raw.into_iter().map(|(i, b)| (i, b / total)).collect()
    }
}

/// Direction set `Z_m` with its angular partition of unity.
#[derive(Debug, Clone)]
pub struct DirectionSet {
    pub d: usize,
    pub m: u32,
    pub c: f64,
    /// Minimal distance between directions: `c 2^{-m/2}`.
    pub separation: f64,
    cover: SphereCover,
}

impl DirectionSet {
    pub fn len(&self) -> usize {
        self.cover.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Direction `nu_i`.
    pub fn direction(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.cover.point(i))
    }

    pub fn directions(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|i| self.direction(i)).collect()
    }

    /// Radius of each weight's support on the sphere: `2 c 2^{-m/2}`.
    pub fn support_radius(&self) -> f64 {
        self.cover.radius
    }

    /// Support constant `2c` in `supp chi_nu in {|xi/|xi| - nu| <= 2c 2^{-m/2}}`.
    pub fn support_constant(&self) -> f64 {
        2.0 * self.c
    }

    /// Count divided by `2^{m(d-1)/2}`.
    pub fn count_constant(&self) -> f64 {
        self.len() as f64 / 2f64.powf(self.m as f64 * (self.d as f64 - 1.0) / 2.0)
    }

    /// Nonzero weights `chi_{m,nu}(xi)` (0-homogeneous) as `(index, value)` pairs.
    pub fn weights(&self, xi: &DVector<f64>) -> Vec<(usize, f64)> {
        let n = xi.norm();
        if n == 0.0 {
            return Vec::new();
        }
        let w = xi / n;
        self.cover.weights(w.as_slice())
    }
}

/// Greedy `c 2^{-m/2}`-separated packing of the unit sphere in `R^d` with Shepard weights.
pub fn make_directions(d: usize, m: u32, c: f64, seed: u64) -> Result<DirectionSet> {
    if d < 2 {
        return Err(Error::InvalidInput("direction sets need d >= 2".into()));
    }
    if c <= 0.0 || c > 1.0 {
        return Err(Error::InvalidInput("separation constant must lie in (0, 1]".into()));
    }
    let separation = c * 2f64.powf(-(m as f64) / 2.0);
    let pts = greedy_packing(d, separation, seed ^ ((m as u64) << 32));
    Ok(DirectionSet {
        d,
        m,
        c,
        separation,
        cover: SphereCover::new(d, 2.0 * separation, pts),
    })
}

/// Direction counts `|Z_m|` for each `m` with the fitted slope of `log2 |Z_m|` against `m`.
pub fn direction_count_study(d: usize, ms: &[u32], c: f64, seed: u64) -> Result<(Vec<(u32, usize)>, Option<f64>)> {
    let rows = ms
        .iter()
        .map(|&m| make_directions(d, m, c, seed).map(|s| (m, s.len())))
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| (r.1 as f64).log2()).collect();
    Ok((rows, fit_slope(&x, &y)))
}

/// Sector counts `|V_{T,kappa}|` for each `T` with the spread `max / min` of `|V| / T^{d2-1}`.
pub fn sector_count_study(
    d2: usize,
    ts: &[f64],
    kappa: f64,
    c: f64,
    seed: u64,
) -> Result<(Vec<(f64, usize)>, f64)> {
    let rows = ts
        .iter()
        .map(|&t| MuSectorDecomposition::new(d2, t, kappa, c, seed).map(|s| (t, s.len())))
        .collect::<Result<Vec<_>>>()?;
    let norm: Vec<f64> = rows
        .iter()
        .map(|&(t, n)| n as f64 / t.powi(d2 as i32 - 1))
        .collect();
    let hi = norm.iter().copied().fold(f64::MIN, f64::max);
    let lo = norm.iter().copied().fold(f64::MAX, f64::min);
    Ok((rows, hi / lo))
}

/// Sector decomposition `V_{T,kappa}` of the second-layer sphere.
#[derive(Debug, Clone)]
pub struct MuSectorDecomposition {
    pub t_scale: f64,
    pub kappa: f64,
    /// Sector aperture constant: weights vanish unless `|mubar - v| <= c / T`.
    pub c: f64,
    cover: SphereCover,
}

impl MuSectorDecomposition {
    /// Builds `V_{T,kappa}` in `R^{d2}`: `{+1, -1}` for `d2 = 1`, equally spaced angles for
    /// `d2 = 2`, a spherical Fibonacci lattice for `d2 = 3`, a greedy packing otherwise.
    /// Neighbouring sectors are at most `0.6 c / T` apart.
    pub fn new(d2: usize, t_scale: f64, kappa: f64, c: f64, seed: u64) -> Result<Self> {
        if kappa <= 1.0 || t_scale <= 0.0 || c <= 0.0 {
            return Err(Error::InvalidInput("need kappa > 1, T > 0, c > 0".into()));
        }
        let radius = c / t_scale;
        let pts: Vec<f64> = match d2 {
            0 => return Err(Error::InvalidInput("d2 must be positive".into())),
            1 => vec![1.0, -1.0],
            2 => {
                let n = ((2.0 * PI) / (0.6 * radius)).ceil() as usize;
                (0..n)
                    .flat_map(|i| {
                        let a = 2.0 * PI * i as f64 / n as f64;
                        [a.cos(), a.sin()]
                    })
                    .collect()
            }
            3 => {
                let n = (16.0 * PI / (radius * radius)).ceil() as usize;
                let golden = PI * (3.0 - 5f64.sqrt());
                (0..n)
                    .flat_map(|i| {
                        let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                        let r = (1.0 - z * z).sqrt();
                        let a = golden * i as f64;
                        [r * a.cos(), r * a.sin(), z]
                    })
                    .collect()
            }
            _ => greedy_packing(d2, 0.5 * radius, seed),
        };
        Ok(MuSectorDecomposition {
            t_scale,
            kappa,
            c,
            cover: SphereCover::new(d2, if d2 == 1 { 1.0 } else { radius }, pts),
        })
    }

    pub fn len(&self) -> usize {
        self.cover.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.cover.point(i))
    }

    /// Nonzero weights `chi_{T,kappa,v}(mu)` as `(index, value)` pairs.
    pub fn weights(&self, mu: &DVector<f64>) -> Vec<(usize, f64)> {
        let n = mu.norm();
        if n == 0.0 {
            return Vec::new();
        }
        self.cover.weights((mu / n).as_slice())
    }

    /// `chi_{T,kappa,v_i}(mu)`.
    pub fn weight(&self, i: usize, mu: &DVector<f64>) -> f64 {
        self.weights(mu)
            .into_iter()
            .find(|p| p.0 == i)
            .map(|p| p.1)
            .unwrap_or(0.0)
    }
}

/// `mu^{t,k,v}(xi) = (2k|xi| v + mu) / t`.
pub fn mu_shear(t: f64, k: i64, v: &DVector<f64>, cov: &Covector) -> Result<Covector> {
    if t == 0.0 {
        return Err(Error::ZeroTime);
    }
    let n = cov.xi.norm();
    if n == 0.0 {
        return Err(Error::ZeroFrequency);
    }
    Ok(Covector::new(
        cov.xi.clone(),
        (v * (2.0 * k as f64 * n) + &cov.mu) / t,
    ))
}

/// Inverse of [`mu_shear`]: `mu = t mu' - 2k|xi| v`.
pub fn mu_unshear(t: f64, k: i64, v: &DVector<f64>, cov: &Covector) -> Result<Covector> {
    if t == 0.0 {
        return Err(Error::ZeroTime);
    }
    let n = cov.xi.norm();
    if n == 0.0 {
        return Err(Error::ZeroFrequency);
    }
    Ok(Covector::new(
        cov.xi.clone(),
        &cov.mu * t - v * (2.0 * k as f64 * n),
    ))
}

/// The sheared symbol `q_{k,v,T,kappa}(t, xi~)` in the variables `xi~ = (xi, mu~)`:
/// `(2 pi)^{-d} q(t, xi, mu^{t,k,v}) chi_kappa(|t|/T) chi_{T,kappa,v}(sgn(t) mu^{t,k,v})
/// chi_plus(mu~ . v / (2|xi|)) |t|^{-1/2} d_phi(t, xi, mu^{t,k,v})`.
pub fn sheared_symbol(
    g: &Group2Step,
    q: &Symbol,
    k: i64,
    v_index: usize,
    dec: &MuSectorDecomposition,
) -> Result<Symbol> {
    if v_index >= dec.len() {
        return Err(Error::InvalidInput("sector index out of range".into()));
    }
    let (d1, d2) = (g.d1(), g.d2());
    if dec.cover.dim != d2 {
        return Err(Error::InvalidInput("sector decomposition has the wrong dimension".into()));
    }
    let v = dec.sector(v_index);
    let s = &q.support;
    let xmax = s.xi_max;
    let mut lo = s.lo.clone();
    let mut hi = s.hi.clone();
    for i in d1..d1 + d2 {
        lo[i] = -2.5 * xmax;
        hi[i] = 2.5 * xmax;
    }
    let support = Support {
        xi_min: s.xi_min,
        xi_max: s.xi_max,
        ratio_min: 0.0,
        ratio_max: 2.5,
        lo,
        hi,
    };
    let group = g.clone();
    let q = q.clone();
    let dec = dec.clone();
    let norm = (2.0 * PI).powi(-(g.dim() as i32));
    Ok(Symbol::new(support, q.order_t, q.order_xi, move |t, cov| {
        let zero = C64::new(0.0, 0.0);
        if t == 0.0 {
            return zero;
        }
        let xn = cov.xi.norm();
        let chi_plus = plus_cutoff(cov.mu.dot(&v) / (2.0 * xn));
        if chi_plus == 0.0 {
            return zero;
        }
        let chi_k = kappa_cutoff(dec.kappa, t.abs() / dec.t_scale);
        if chi_k == 0.0 {
            return zero;
        }
        let Ok(orig) = mu_shear(t, k, &v, cov) else {
            return zero;
        };
        let qv = q.eval(t, &orig);
        if qv == zero {
            return zero;
        }
        let sector = dec.weight(v_index, &(&orig.mu * t.signum()));
        if sector == 0.0 {
            return zero;
        }
        let dens = match checked_geometry(&group, t, &orig) {
            Ok(geo) => hessian_from_geometry(&geo).density,
            Err(_) => return C64::new(f64::NAN, f64::NAN),
        };
        qv * (norm * chi_k * sector * chi_plus / t.abs().sqrt()) * dens
    }))
}

/// Order-0 band symbol `chi1(|xi|/2^m) chi1(|mu|/2^m)`.
pub fn band_symbol(g: &Group2Step, m: i32, cut: DyadicCutoffs) -> Symbol {
    let scale = 2f64.powi(m);
    let mut support = Support::band(g.d1(), g.d2(), 0.5 * scale, 2.0 * scale, 0.25, 4.0);
    for i in g.d1()..g.dim() {
        support.lo[i] = -2.0 * scale;
        support.hi[i] = 2.0 * scale;
    }
    Symbol::new(support, 0.0, 0.0, move |_, cov| {
        C64::new(cut.chi1(cov.xi.norm() / scale) * cut.chi1(cov.mu.norm() / scale), 0.0)
    })
}

/// Smooth bump equal to 1 on the middle third of `[a, b]` and vanishing outside it.
pub fn interval_bump(s: f64, a: f64, b: f64) -> f64 {
    let w = (b - a) / 3.0;
    smooth_step((s - a) / w, 1.0) * smooth_step((b - s) / w, 1.0)
}

/// Order-0 cone symbol supported in `a <= |xi| <= b`, `r0 <= |mu|/|xi| <= r1`.
pub fn cone_symbol(g: &Group2Step, xi_band: (f64, f64), ratio_band: (f64, f64)) -> Symbol {
    let (a, b) = xi_band;
    let (r0, r1) = ratio_band;
    let support = Support::band(g.d1(), g.d2(), a, b, r0, r1);
    Symbol::new(support, 0.0, 0.0, move |_, cov| {
        let n = cov.xi.norm();
        C64::new(interval_bump(n, a, b) * interval_bump(cov.mu.norm() / n, r0, r1), 0.0)
    })
}
