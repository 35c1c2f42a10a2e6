//! Shared numerical building blocks.
//!
//! Gauss-Legendre rules with a process-wide cache, Richardson-extrapolated
//! finite differences, spectral calculus for real skew-symmetric matrices,
//! and the seeded random stream used by every randomized routine.

use std::collections::HashMap;
use std::ops::{Add, Mul, Sub};
use std::sync::{Arc, OnceLock, RwLock};

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Complex scalar used throughout the crate.
pub type C64 = Complex64;
/// Dense complex matrix.
pub type CMat = DMatrix<C64>;
/// Dense complex vector.
pub type CVec = DVector<C64>;

/// The imaginary unit.
pub const I: C64 = C64::new(0.0, 1.0);

/// Anything that forms a real vector space under cloning, addition and scaling.
pub trait Lin: Clone + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {}
impl<T> Lin for T where T: Clone + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T> {}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GlRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GlRule {
    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Always false; rules have at least two nodes.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped affinely onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| (mid + half * x, half * w))
            .collect()
    }

    /// Integrates `f` over `[a, b]`, summing in node order.
    pub fn integrate<T: Lin>(&self, a: f64, b: f64, f: impl Fn(f64) -> T) -> T {
        let pts = self.mapped(a, b);
        let mut acc = f(pts[0].0) * pts[0].1;
        for &(x, w) in &pts[1..] {
            acc = acc + f(x) * w;
        }
        acc
    }
}

fn gl_cache() -> &'static RwLock<HashMap<usize, Arc<GlRule>>> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<GlRule>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Returns the cached `n`-point Gauss-Legendre rule (`n` is raised to at least 2).
pub fn gauss_legendre(n: usize) -> Arc<GlRule> {
    let n = n.max(2);
    if let Some(rule) = gl_cache().read().expect("quadrature cache poisoned").get(&n) {
        return rule.clone();
    }
    let quad = GaussLegendre::new(n).expect("degree is at least 2");
    let mut pairs: Vec<(f64, f64)> = quad.into_node_weight_pairs();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rule = Arc::new(GlRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    });
    gl_cache()
        .write()
        .expect("quadrature cache poisoned")
        .entry(n)
        .or_insert(rule)
        .clone()
}

/// Plain central difference of a scalar-parameter map.
pub fn central<T: Lin>(f: &impl Fn(f64) -> T, x: f64, h: f64) -> T {
    (f(x + h) - f(x - h)) * (0.5 / h)
}

/// First derivative by central differences with one Richardson level (error `O(h^4)`).
pub fn richardson_d1<T: Lin>(f: impl Fn(f64) -> T, x: f64, h: f64) -> T {
    let coarse = central(&f, x, h);
    let fine = central(&f, x, 0.5 * h);
    (fine * 4.0 - coarse) * (1.0 / 3.0)
}

/// Second derivative by the three-point stencil with one Richardson level (error `O(h^4)`).
pub fn richardson_d2<T: Lin>(f: impl Fn(f64) -> T, x: f64, h: f64) -> T {
    let f0 = f(x);
    let s = |h: f64| (f(x + h) - f0.clone() * 2.0 + f(x - h)) * (1.0 / (h * h));
    let coarse = s(h);
    let fine = s(0.5 * h);
    (fine * 4.0 - coarse) * (1.0 / 3.0)
}

/// Second derivative by the five-point stencil (error `O(h^4)`).
pub fn five_point_d2<T: Lin>(f: impl Fn(f64) -> T, x: f64, h: f64) -> T {
    let num = (f(x + h) + f(x - h)) * 16.0 - (f(x + 2.0 * h) + f(x - 2.0 * h)) - f(x) * 30.0;
    num * (1.0 / (12.0 * h * h))
}

/// Jacobian of a vector map by Richardson central differences; column `j` is `d f / d x_j`.
pub fn jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let cols: Vec<DVector<f64>> = (0..n)
        .map(|j| {
            richardson_d1(
                |s| {
                    let mut y = x.clone();
                    y[j] += s;
                    f(&y)
                },
                0.0,
                h,
            )
        })
        .collect();
    DMatrix::from_columns(&cols)
}

/// Partial derivative of a complex-valued map along coordinate `j`.
pub fn partial<F, T>(f: F, x: &DVector<f64>, j: usize, h: f64) -> T
where
    F: Fn(&DVector<f64>) -> T,
    T: Lin,
{
    richardson_d1(
        |s| {
            let mut y = x.clone();
            y[j] += s;
            f(&y)
        },
        0.0,
        h,
    )
}

/// Taylor-safe `(e^z - 1)/z`.
pub fn expm1_over(z: C64) -> C64 {
    if z.norm() < 1e-4 {
        C64::new(1.0, 0.0) + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        (z.exp() - 1.0) / z
    }
}

/// Taylor-safe `sinh(z)/z`.
pub fn sinhc(z: C64) -> C64 {
    if z.norm() < 1e-4 {
        let z2 = z * z;
        C64::new(1.0, 0.0) + z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sinh() / z
    }
}

/// Unitary diagonalization of a real skew-symmetric matrix `M = U diag(-i lambda) U*`.
///
/// `i M` is Hermitian, so its eigenvalues `lambda` are real; `|M|` has eigenvalues `|lambda|`
/// in the same basis, so every function of `M` and `|M|` is evaluated jointly.
#[derive(Debug, Clone)]
pub struct SkewSpectrum {
    u: CMat,
    lambda: Vec<f64>,
}

impl SkewSpectrum {
    /// Diagonalizes `m`, which must be real skew-symmetric.
    pub fn new(m: &DMatrix<f64>) -> Self {
        let herm = m.map(|v| C64::new(0.0, v));
        let eig = herm.symmetric_eigen();
        SkewSpectrum {
            u: eig.eigenvectors,
            lambda: eig.eigenvalues.iter().copied().collect(),
        }
    }

    /// Real eigenvalues of `i M`.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Spectral radius of `M`.
    pub fn radius(&self) -> f64 {
        self.lambda.iter().fold(0.0, |a, &l| a.max(l.abs()))
    }

    /// `U diag(f(lambda)) U*`.
    pub fn func(&self, f: impl Fn(f64) -> C64) -> CMat {
        let n = self.lambda.len();
        let mut scaled = self.u.clone();
        for j in 0..n {
            let s = f(self.lambda[j]);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        scaled * self.u.adjoint()
    }

    /// Real part of [`SkewSpectrum::func`], for functions that map real matrices to real ones.
    pub fn real_func(&self, f: impl Fn(f64) -> C64) -> DMatrix<f64> {
        self.func(f).map(|z| z.re)
    }

    /// `U diag(f(lambda)) U* v` without forming the matrix.
    pub fn apply(&self, f: impl Fn(f64) -> C64, v: &CVec) -> CVec {
        let mut w = self.u.adjoint() * v;
        for (j, wj) in w.iter_mut().enumerate() {
            *wj *= f(self.lambda[j]);
        }
        &self.u * w
    }

    /// Coordinates `U* v` of a real vector in the eigenbasis.
    pub fn coords(&self, v: &DVector<f64>) -> CVec {
        self.u.adjoint() * to_complex(v)
    }

    /// Maps eigenbasis coordinates back: `U w`.
    pub fn from_coords(&self, w: &CVec) -> CVec {
        &self.u * w
    }
}

/// Promotes a real vector to a complex one.
pub fn to_complex(v: &DVector<f64>) -> CVec {
    v.map(|x| C64::new(x, 0.0))
}

/// Promotes a real matrix to a complex one.
pub fn to_complex_mat(m: &DMatrix<f64>) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}

/// Bilinear (non-conjugating) pairing `sum a_i b_i`.
pub fn dot_c(a: &CVec, b: &CVec) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Bilinear pairing of a complex vector with a real one.
pub fn dot_cr(a: &CVec, b: &DVector<f64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, &y)| x * y).sum()
}

/// Largest absolute entry of a complex matrix.
pub fn max_abs_c(m: &CMat) -> f64 {
    m.iter().fold(0.0, |a, z| a.max(z.norm()))
}

/// Largest absolute entry of a real matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, z: &f64| a.max(z.abs()))
}

/// Seeded, counter-based random stream (ChaCha8).
#[derive(Debug, Clone)]
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    /// Stream for `seed`.
    pub fn new(seed: u64) -> Self {
        SeededRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent sub-stream derived from `seed` and a stream label.
    pub fn substream(seed: u64, label: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label);
        SeededRng(rng)
    }

    /// Uniform sample in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.random::<f64>()
    }

    /// Standard normal sample.
    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    /// Vector of standard normal entries.
    pub fn normal_vec(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.normal())
    }

    /// Uniformly distributed unit vector in `R^n`.
    pub fn unit_vec(&mut self, n: usize) -> DVector<f64> {
        loop {
            let v = self.normal_vec(n);
            let r = v.norm();
            if r > 1e-12 {
                return v / r;
            }
        }
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
