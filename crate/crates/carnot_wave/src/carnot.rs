//! Two-step Carnot groups given by a bracket tensor, and the `J_mu` algebra.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{max_abs, SeededRng};

/// Relative singular-value threshold used for rank decisions.
pub const RANK_TOL: f64 = 1e-9;

/// A frequency `(xi, mu)` dual to a point `(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Covector {
    pub xi: DVector<f64>,
    pub mu: DVector<f64>,
}

impl Covector {
    pub fn new(xi: DVector<f64>, mu: DVector<f64>) -> Self {
        Covector { xi, mu }
    }

    pub fn from_slices(xi: &[f64], mu: &[f64]) -> Self {
        Covector::new(DVector::from_column_slice(xi), DVector::from_column_slice(mu))
    }

    /// Concatenation `(xi, mu)` as one vector of length `d`.
    pub fn to_vec(&self) -> DVector<f64> {
        concat(&self.xi, &self.mu)
    }

    /// Splits a length-`d` vector after the first `d1` entries.
    pub fn from_vec(d1: usize, v: &DVector<f64>) -> Self {
        let (a, b) = split(d1, v);
        Covector::new(a, b)
    }

    /// Euclidean norm of the full covector.
    pub fn norm(&self) -> f64 {
        (self.xi.norm_squared() + self.mu.norm_squared()).sqrt()
    }

    pub fn scaled(&self, r: f64) -> Self {
        Covector::new(&self.xi * r, &self.mu * r)
    }

    /// `t |mu| / (2 |xi|)`.
    pub fn theta(&self, t: f64) -> f64 {
        t * self.mu.norm() / (2.0 * self.xi.norm())
    }
}

/// A group element in exponential coordinates `(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
}

impl Point {
    pub fn new(x: DVector<f64>, u: DVector<f64>) -> Self {
        Point { x, u }
    }

    pub fn from_slices(x: &[f64], u: &[f64]) -> Self {
        Point::new(DVector::from_column_slice(x), DVector::from_column_slice(u))
    }

    pub fn origin(d1: usize, d2: usize) -> Self {
        Point::new(DVector::zeros(d1), DVector::zeros(d2))
    }

    pub fn to_vec(&self) -> DVector<f64> {
        concat(&self.x, &self.u)
    }

    pub fn from_vec(d1: usize, v: &DVector<f64>) -> Self {
        let (a, b) = split(d1, v);
        Point::new(a, b)
    }
}

pub(crate) fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

fn split(d1: usize, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    (
        DVector::from_iterator(d1, v.iter().take(d1).copied()),
        DVector::from_iterator(v.len() - d1, v.iter().skip(d1).copied()),
    )
}

/// On-disk group description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupFile {
    #[serde(default)]
    pub name: Option<String>,
    pub d1: usize,
    pub d2: usize,
    /// `bracket[k][i][j]`.
    pub bracket: Vec<Vec<Vec<f64>>>,
}

/// A 2-step Carnot group `R^d1 x R^d2` with `[x, x']_k = sum_ij B[k][i][j] x_i x'_j`.
#[derive(Clone)]
pub struct Group2Step {
    name: String,
    d1: usize,
    d2: usize,
    bracket: Vec<DMatrix<f64>>,
    generic_rank: usize,
}

impl fmt::Debug for Group2Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Group2Step")
            .field("name", &self.name)
            .field("d1", &self.d1)
            .field("d2", &self.d2)
            .field("generic_rank", &self.generic_rank)
            .finish()
    }
}

impl Group2Step {
    /// Builds and validates a group from its bracket matrices `B[k]`.
    pub fn new(name: &str, d1: usize, d2: usize, bracket: Vec<DMatrix<f64>>) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return Err(Error::InvalidGroup("layer dimensions must be positive".into()));
        }
        if bracket.len() != d2 {
            return Err(Error::InvalidGroup(format!(
                "expected {d2} bracket matrices, found {}",
                bracket.len()
            )));
        }
        for (k, b) in bracket.iter().enumerate() {
            if b.nrows() != d1 || b.ncols() != d1 {
                return Err(Error::InvalidGroup(format!(
                    "bracket[{k}] has shape {}x{}, expected {d1}x{d1}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidGroup(format!("bracket[{k}] has non-finite entries")));
            }
            for i in 0..d1 {
                for j in 0..d1 {
                    let (a, c) = (b[(i, j)], b[(j, i)]);
                    if (a + c).abs() > 1e-12 * (1.0 + a.abs().max(c.abs())) {
                        return Err(Error::InvalidGroup(format!(
                            "bracket[{k}][{i}][{j}] = {a} but bracket[{k}][{j}][{i}] = {c}; \
                             the bracket must be antisymmetric"
                        )));
                    }
                }
            }
        }
        let flat = DMatrix::from_fn(d2, d1 * d1, |k, ij| bracket[k][(ij / d1, ij % d1)]);
        let sv = flat.singular_values();
        let smax = sv.max();
        let rank = sv.iter().filter(|&&s| s > RANK_TOL * smax.max(1e-300)).count();
        if smax == 0.0 || rank < d2 {
            return Err(Error::InvalidGroup(format!(
                "bracket spans a {rank}-dimensional subspace, second layer has dimension {d2}"
            )));
        }
        let mut g = Group2Step {
            name: name.to_string(),
            d1,
            d2,
            bracket,
            generic_rank: 0,
        };
        g.generic_rank = g.sampled_max_rank(200, 0x5eed);
        Ok(g)
    }

    /// Builds a group from a parsed description.
    pub fn from_file_data(data: &GroupFile) -> Result<Self> {
        if data.bracket.len() != data.d2 {
            return Err(Error::InvalidGroup(format!(
                "expected {} bracket matrices, found {}",
                data.d2,
                data.bracket.len()
            )));
        }
        let mut mats = Vec::with_capacity(data.d2);
        for (k, rows) in data.bracket.iter().enumerate() {
            if rows.len() != data.d1 || rows.iter().any(|r| r.len() != data.d1) {
                return Err(Error::InvalidGroup(format!(
                    "bracket[{k}] must be a {0}x{0} array",
                    data.d1
                )));
            }
            mats.push(DMatrix::from_fn(data.d1, data.d1, |i, j| rows[i][j]));
        }
        let name = data.name.clone().unwrap_or_else(|| "custom".into());
        Group2Step::new(&name, data.d1, data.d2, mats)
    }

    /// Parses a JSON group description.
    pub fn from_json(text: &str) -> Result<Self> {
        let data: GroupFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidGroup(e.to_string()))?;
        Group2Step::from_file_data(&data)
    }

    /// Loads a JSON group description from disk.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidGroup(format!("{}: {e}", path.display())))?;
        Group2Step::from_json(&text)
    }

    /// Serializable description of this group.
    pub fn to_file_data(&self) -> GroupFile {
        GroupFile {
            name: Some(self.name.clone()),
            d1: self.d1,
            d2: self.d2,
            bracket: self
                .bracket
                .iter()
                .map(|b| (0..self.d1).map(|i| (0..self.d1).map(|j| b[(i, j)]).collect()).collect())
                .collect(),
        }
    }

    /// Looks up a built-in group by name.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "heisenberg" => Ok(Self::heisenberg()),
            "nonisotropic" | "nonisotropic-heisenberg" => Ok(Self::nonisotropic_heisenberg()),
            "quaternionic" => Ok(Self::quaternionic()),
            "free3" => Ok(Self::free3()),
            other => Err(Error::InvalidInput(format!("unknown built-in group '{other}'"))),
        }
    }

    /// Names accepted by [`Group2Step::builtin`].
    pub fn builtin_names() -> &'static [&'static str] {
        &["heisenberg", "nonisotropic", "quaternionic", "free3"]
    }

    /// The Heisenberg group `H^1`, with `[e1, e2] = 1`.
    pub fn heisenberg() -> Self {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        Self::new("heisenberg", 2, 1, vec![b]).expect("valid built-in")
    }

    /// Heisenberg-type group on `R^4 x R` whose `|J_mu|` has eigenvalues 1 and 2 on the unit sphere.
    pub fn nonisotropic_heisenberg() -> Self {
        let mut b = DMatrix::zeros(4, 4);
        b[(0, 1)] = 1.0;
        b[(1, 0)] = -1.0;
        b[(2, 3)] = 2.0;
        b[(3, 2)] = -2.0;
        Self::new("nonisotropic", 4, 1, vec![b]).expect("valid built-in")
    }

    /// Quaternionic H-type group on `R^4 x R^3`: `J_{e_k}` is left multiplication by `i`, `j`, `k`.
    pub fn quaternionic() -> Self {
        let li = [
            [0.0, -1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, -1.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        let lj = [
            [0.0, 0.0, -1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, -1.0, 0.0, 0.0],
        ];
        let lk = [
            [0.0, 0.0, 0.0, -1.0],
            [0.0, 0.0, -1.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
        ];
        // J_mu = sum mu_k B[k]^T, so B[k] is the transpose of the multiplication matrix.
        let mats = [li, lj, lk]
            .iter()
            .map(|l| DMatrix::from_fn(4, 4, |i, j| l[j][i]))
            .collect();
        Self::new("quaternionic", 4, 3, mats).expect("valid built-in")
    }

    /// Free 2-step nilpotent group on three generators: `[e1,e2] = U1`, `[e1,e3] = U2`, `[e2,e3] = U3`.
    pub fn free3() -> Self {
        let pair = |a: usize, b: usize| {
            let mut m = DMatrix::zeros(3, 3);
            m[(a, b)] = 1.0;
            m[(b, a)] = -1.0;
            m
        };
        Self::new("free3", 3, 3, vec![pair(0, 1), pair(0, 2), pair(1, 2)]).expect("valid built-in")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    /// Topological dimension `d1 + d2`.
    pub fn dim(&self) -> usize {
        self.d1 + self.d2
    }

    /// Homogeneous dimension `d1 + 2 d2`.
    pub fn homogeneous_dim(&self) -> usize {
        self.d1 + 2 * self.d2
    }

    /// Bracket matrix `B[k]`.
    pub fn bracket_matrix(&self, k: usize) -> &DMatrix<f64> {
        &self.bracket[k]
    }

    /// Generic (maximal) rank of `J_mu`, determined by sampling at construction.
    pub fn generic_rank(&self) -> usize {
        self.generic_rank
    }

    /// The bracket `[x, y]` in the second layer.
    pub fn bracket(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.d2, |k, _| x.dot(&(&self.bracket[k] * y)))
    }

    /// `J_mu = sum_k mu_k B[k]^T`, characterized by `<J_mu x, x'> = mu . [x, x']`.
    pub fn j_mu(&self, mu: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.d1, self.d1);
        for (k, b) in self.bracket.iter().enumerate() {
            m += b.transpose() * mu[k];
        }
        m
    }

    /// `|J_mu| = (-J_mu^2)^{1/2}` by symmetric eigendecomposition with clamping at 0.
    pub fn abs_j_mu(&self, mu: &DVector<f64>) -> DMatrix<f64> {
        let j = self.j_mu(mu);
        let b = -(&j * &j);
        let b = (&b + b.transpose()) * 0.5;
        let eig = b.symmetric_eigen();
        let floor = 64.0 * f64::EPSILON * eig.eigenvalues.amax();
        let roots = eig.eigenvalues.map(|l| if l > floor { l.sqrt() } else { 0.0 });
        &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
    }

    /// Numerical rank of `J_mu` with threshold `RANK_TOL * ||J_mu||`.
    pub fn rank_j_mu(&self, mu: &DVector<f64>) -> usize {
        let sv = self.j_mu(mu).singular_values();
        let smax = sv.max();
        if smax == 0.0 {
            return 0;
        }
        sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
    }

    /// Fails with `OutsideOmega` unless `rk J_mu` equals the generic rank.
    pub fn check_omega(&self, mu: &DVector<f64>) -> Result<()> {
        let rank = self.rank_j_mu(mu);
        if rank < self.generic_rank {
            return Err(Error::OutsideOmega {
                mu: mu.iter().copied().collect(),
                rank,
                generic: self.generic_rank,
            });
        }
        Ok(())
    }

    /// Orthogonal projector onto `Ker J_mu` from the characteristic polynomial of `-J_mu^2`.
    ///
    /// With `det(B - s) = sum_j (-1)^j p_j s^j` and `r` the generic rank, the polynomial
    /// `q(s) = sum_{j<=r} (-1)^j p_{j+d1-r} s^j` satisfies `q(B) = p_{d1-r} P_0`.
    pub fn kernel_projector(&self, mu: &DVector<f64>) -> Result<DMatrix<f64>> {
        let r = self.generic_rank;
        let rank = self.rank_j_mu(mu);
        if rank < r {
            return Err(Error::RankDrop { rank, generic: r });
        }
        let n = self.d1;
        let j = self.j_mu(mu);
        let b = -(&j * &j);
        let e = elementary_symmetric(&b);
        // p_j = e_{n-j}; the needed coefficients are p_{j+n-r} = e_{r-j}.
        let lead = e[r];
        let mut acc = DMatrix::<f64>::zeros(n, n);
        for jj in (0..=r).rev() {
            let coef = if jj % 2 == 0 { e[r - jj] } else { -e[r - jj] };
            acc = &acc * &b + DMatrix::identity(n, n) * coef;
        }
        let p = acc / lead;
        Ok((&p + p.transpose()) * 0.5)
    }

    /// Projector onto `Ker J_mu` from the singular value decomposition.
    pub fn kernel_projector_svd(&self, mu: &DVector<f64>) -> DMatrix<f64> {
        let j = self.j_mu(mu);
        let n = self.d1;
        let svd = j.clone().svd(true, true);
        let v_t = svd.v_t.expect("requested");
        let smax = svd.singular_values.max();
        let mut p = DMatrix::zeros(n, n);
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if s <= RANK_TOL * smax.max(1e-300) {
                let v = v_t.row(i).transpose();
                p += &v * v.transpose();
            }
        }
        p
    }

    fn sampled_max_rank(&self, samples: usize, seed: u64) -> usize {
        let mut rng = SeededRng::new(seed);
        (0..samples)
            .map(|_| self.rank_j_mu(&rng.unit_vec(self.d2)))
            .max()
            .unwrap_or(0)
    }

    /// Sampled structural classification over `sample_count` random unit `mu`.
    pub fn classify(&self, sample_count: usize, seed: u64) -> GroupClassification {
        let mut rng = SeededRng::new(seed);
        let mus: Vec<DVector<f64>> = (0..sample_count.max(1)).map(|_| rng.unit_vec(self.d2)).collect();
        let ranks: Vec<usize> = mus.iter().map(|m| self.rank_j_mu(m)).collect();
        let max_rank = ranks.iter().copied().max().unwrap_or(0);
        let mut min_sv = f64::INFINITY;
        let mut htype_err: f64 = 0.0;
        for mu in &mus {
            let j = self.j_mu(mu);
            let sv = j.singular_values();
            let smax = sv.max();
            let smin = sv.min();
            min_sv = min_sv.min(if smax > 0.0 { smin / smax } else { 0.0 });
            let jj = &j * &j + DMatrix::identity(self.d1, self.d1);
            htype_err = htype_err.max(max_abs(&jj));
        }
        let is_metivier = min_sv > RANK_TOL;
        let is_htype = is_metivier && htype_err <= 1e-10;
        let omega_witness = mus
            .iter()
            .zip(&ranks)
            .find(|(_, &r)| r < max_rank)
            .map(|(m, _)| m.iter().copied().collect());
        GroupClassification {
            max_rank,
            is_metivier,
            is_htype,
            omega_witness,
        }
    }

    /// Group law `(x, u)(x', u') = (x + x', u + u' + [x, x']/2)`.
    pub fn multiply(&self, a: &Point, b: &Point) -> Point {
        let br = self.bracket(&a.x, &b.x);
        Point::new(&a.x + &b.x, &a.u + &b.u + br * 0.5)
    }

    /// Group inverse `(-x, -u)`.
    pub fn inverse(&self, a: &Point) -> Point {
        Point::new(-&a.x, -&a.u)
    }

    /// Automorphic dilation `(r x, r^2 u)`.
    pub fn dilate(&self, r: f64, a: &Point) -> Point {
        Point::new(&a.x * r, &a.u * (r * r))
    }

    /// Cotangent action of left translation by `y`: `(xi - J_mu y / 2, mu)`.
    pub fn cotangent_translate(&self, y: &Point, cov: &Covector) -> Covector {
        let j = self.j_mu(&cov.mu);
        Covector::new(&cov.xi - j * &y.x * 0.5, cov.mu.clone())
    }

    /// Inverse of [`Group2Step::cotangent_translate`].
    pub fn cotangent_translate_inv(&self, y: &Point, cov: &Covector) -> Covector {
        let j = self.j_mu(&cov.mu);
        Covector::new(&cov.xi + j * &y.x * 0.5, cov.mu.clone())
    }
}

/// Coefficients `e_0 = 1, e_1, ..., e_n` of the characteristic polynomial of `b`
/// from the Newton identities on traces of powers.
fn elementary_symmetric(b: &DMatrix<f64>) -> Vec<f64> {
    let n = b.nrows();
    let mut traces = Vec::with_capacity(n + 1);
    traces.push(n as f64);
    let mut pow = DMatrix::identity(n, n);
    for _ in 0..n {
        pow = &pow * b;
        traces.push(pow.trace());
    }
    let mut e = vec![1.0; n + 1];
    for k in 1..=n {
        let mut s = 0.0;
        for i in 1..=k {
            let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
            s += sign * e[k - i] * traces[i];
        }
        e[k] = s / k as f64;
    }
    e
}

/// Outcome of [`Group2Step::classify`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupClassification {
    pub max_rank: usize,
    pub is_metivier: bool,
    pub is_htype: bool,
    pub omega_witness: Option<Vec<f64>>,
}
