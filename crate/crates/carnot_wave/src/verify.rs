//! Invariant suites with a machine-readable pass/fail record per check.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;

use crate::carnot::{Covector, Group2Step, Point};
use crate::decompose::{
    band_symbol, cone_symbol, direction_count_study, make_cutoffs, make_directions, mu_shear, mu_unshear, plus_cutoff,
    sector_count_study, sheared_symbol, MuSectorDecomposition,
};
use crate::error::{Error, Result};
use crate::fio::{
    band_region, dec_periodic_check, kernel_nodes, wave_identity_residuals, ConeBounds,
    QuadratureSpec, WaveSteps,
};
use crate::flow::{
    default_ode_step, flow_base, flow_jacobians, flow_ode_oracle, flow_origin, flow_origin_htype,
    hamiltonian, mu_dot_u_closed,
};
use crate::numerics::{max_abs, max_abs_c, partial, richardson_d1, SeededRng, C64, I};
use crate::phase::{mixed_hessian, phase_value, phi0_finite_difference, PhaseGeometry};
use crate::transport::{
    apply_lambda, apply_lambda_i, apply_r_numeric, f_coeffs, f_coeffs_definition, k_value,
    lambda_r_composition, DerivSteps, RConfig, Symbol, TransportGeometry,
};

/// One line of a verification table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub suite: String,
    pub check: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Named tolerances with defaults; overrides must name an existing key.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances(BTreeMap<String, f64>);

const DEFAULT_TOLERANCES: &[(&str, f64)] = &[
    ("carnot.j_mu_identity", 1e-12),
    ("carnot.abs_j_homogeneity", 1e-12),
    ("carnot.abs_j_square", 1e-10),
    ("carnot.kernel_projector", 1e-8),
    ("carnot.metivier_dimension", 0.0),
    ("carnot.associativity", 1e-14),
    ("carnot.dilation", 1e-12),
    ("flow.rk4", 1e-6),
    ("flow.energy", 1e-9),
    ("flow.homogeneity", 1e-11),
    ("flow.symplectic_ort", 1e-6),
    ("flow.symplectic_com", 1e-6),
    ("flow.mu_dot_u", 1e-9),
    ("flow.htype", 1e-10),
    ("flow.left_translation", 1e-6),
    ("phase.phi0_fd", 1e-6),
    ("phase.det", 1e-9),
    ("phase.density_branch", 1e-12),
    ("phase.htype_det", 1e-10),
    ("phase.euler", 1e-11),
    ("phase.underline", 1e-8),
    ("phase.grad_xi_fd", 1e-6),
    ("phase.block_structure", 1e-7),
    ("phase.im_nonnegative", 1e-14),
    ("transport.f_definition", 1e-5),
    ("transport.k_r_oracle", 1e-4),
    ("transport.lambda_r_composition", 1e-4),
    ("transport.exact_ones", 0.0),
    ("transport.crucial_f20", 1e-8),
    ("transport.crucial_dx_f20", 1e-6),
    ("transport.crucial_f11", 1e-8),
    ("transport.crucial_k", 1e-6),
    ("transport.htype_lambda", 1e-10),
    ("transport.lambda_i_ftc", 1e-5),
    ("transport.time_decay", 2.0),
    ("decompose.dyadic_partition", 1e-10),
    ("decompose.chi1_tilde", 1e-12),
    ("decompose.plus_partition", 1e-12),
    ("decompose.direction_partition", 1e-10),
    ("decompose.direction_support", 0.0),
    ("decompose.sector_partition", 1e-10),
    ("decompose.direction_slope", 0.3),
    ("decompose.sector_count", 2.0),
    ("decompose.shear_roundtrip", 1e-14),
    ("decompose.sheared_support", 0.0),
    ("fio.abs_bound", 1e-12),
    ("fio.origin_value", 1e-12),
    ("fio.wave_identity", 5e-3),
    ("fio.dec_periodic", 1e-3),
];

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances(
            DEFAULT_TOLERANCES
                .iter()
                .map(|&(k, v)| (k.to_string(), v))
                .collect(),
        )
    }
}

impl Tolerances {
    pub fn get(&self, key: &str) -> f64 {
        *self.0.get(key).unwrap_or_else(|| panic!("unknown tolerance key {key}"))
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        if !(value >= 0.0) {
            return Err(Error::InvalidInput(format!("tolerance {key} must be nonnegative")));
        }
        match self.0.get_mut(key) {
            Some(v) => {
                *v = value;
                Ok(())
            }
            None => Err(Error::InvalidInput(format!("unknown tolerance key {key}"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

/// Settings shared by every suite.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Random cases per check.
    pub cases: usize,
    pub tol: Tolerances,
    /// Run the quadrature-based kernel checks (only on groups with `d <= 3`).
    pub include_fio: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            cases: 10,
            tol: Tolerances::default(),
            include_fio: true,
        }
    }
}

/// Accumulates the worst error of one check.
struct Check<'a> {
    suite: &'static str,
    key: &'static str,
    tol: &'a Tolerances,
    cases: usize,
    worst: f64,
    note: Option<String>,
}

impl<'a> Check<'a> {
    fn new(suite: &'static str, key: &'static str, tol: &'a Tolerances) -> Self {
        Check {
            suite,
            key,
            tol,
            cases: 0,
            worst: 0.0,
            note: None,
        }
    }

    fn add(&mut self, err: f64) {
        self.cases += 1;
        if err.is_nan() || err > self.worst {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    fn add_result(&mut self, r: Result<f64>) {
        match r {
            Ok(e) => self.add(e),
            Err(e) => {
                self.cases += 1;
                self.worst = f64::INFINITY;
                self.note.get_or_insert_with(|| e.to_string());
            }
        }
    }

    fn finish(self) -> CheckRecord {
        let tolerance = self.tol.get(&format!("{}.{}", self.suite, self.key));
        CheckRecord {
            suite: self.suite.to_string(),
            check: self.key.to_string(),
            cases: self.cases,
            max_error: self.worst,
            tolerance,
            passed: self.worst <= tolerance,
            note: self.note,
        }
    }
}

fn skipped(suite: &str, check: &str, tol: &Tolerances, why: &str) -> CheckRecord {
    CheckRecord {
        suite: suite.to_string(),
        check: check.to_string(),
        cases: 0,
        max_error: 0.0,
        tolerance: tol.get(&format!("{suite}.{check}")),
        passed: true,
        note: Some(format!("skipped: {why}")),
    }
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

fn rel_c(a: C64, b: C64, floor: f64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(floor)
}

fn vec_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// Group-law and bracket invariants.
pub fn carnot_suite(g: &Group2Step, cfg: &VerifyConfig) -> Vec<CheckRecord> {
    let tol = &cfg.tol;
    let mut rng = SeededRng::substream(cfg.seed, 1);
    let (d1, d2) = (g.d1(), g.d2());
    let mut jmu = Check::new("carnot", "j_mu_identity", tol);
    let mut homog = Check::new("carnot", "abs_j_homogeneity", tol);
    let mut square = Check::new("carnot", "abs_j_square", tol);
    let mut proj = Check::new("carnot", "kernel_projector", tol);
    let mut assoc = Check::new("carnot", "associativity", tol);
    let mut dil = Check::new("carnot", "dilation", tol);
    let class = g.classify(200, cfg.seed);
    for _ in 0..cfg.cases {
        let mu = rng.normal_vec(d2);
        let x = rng.normal_vec(d1);
        let y = rng.normal_vec(d1);
        let lhs = (g.j_mu(&mu) * &x).dot(&y);
        let rhs = mu.dot(&g.bracket(&x, &y));
        jmu.add((lhs - rhs).abs() / (mu.norm() * x.norm() * y.norm()));
        let r = rng.uniform(0.1, 10.0);
        let a = g.abs_j_mu(&mu);
        homog.add(max_abs(&(g.abs_j_mu(&(&mu * r)) - &a * r)) / (r * max_abs(&a)).max(1e-300));
        let j = g.j_mu(&mu);
        let j2 = &j * &j;
        square.add(max_abs(&(&a * &a + &j2)) / max_abs(&j2).max(1e-300));
        proj.add_result(g.kernel_projector(&mu).map(|p| {
            let svd = g.kernel_projector_svd(&mu);
            let scale = max_abs(&j).max(1.0);
            let rank = g.rank_j_mu(&mu);
            [
                max_abs(&(&p * &p - &p)),
                max_abs(&(&p * &j)) / scale,
                max_abs(&(&j * &p)) / scale,
                (p.trace() - (d1 - rank) as f64).abs(),
                max_abs(&(&p - svd)),
            ]
            .into_iter()
            .fold(0.0, f64::max)
        }));
        let pts: Vec<Point> = (0..3).map(|_| random_point(g, &mut rng)).collect();
        let ab_c = g.multiply(&g.multiply(&pts[0], &pts[1]), &pts[2]);
        let a_bc = g.multiply(&pts[0], &g.multiply(&pts[1], &pts[2]));
        assoc.add(vec_diff(&ab_c.to_vec(), &a_bc.to_vec()) / 4.0);
        let r = rng.uniform(0.1, 4.0);
        let lhs = g.multiply(&g.dilate(r, &pts[0]), &g.dilate(r, &pts[1]));
        let rhs = g.dilate(r, &g.multiply(&pts[0], &pts[1]));
        dil.add(vec_diff(&lhs.to_vec(), &rhs.to_vec()) / (r * r).max(1.0));
    }
    let mut dim = Check::new("carnot", "metivier_dimension", tol);
    let violated = class.is_metivier && 2 * d2 > g.dim() - 1;
    dim.add(if violated { 1.0 } else { 0.0 });
    vec![
        jmu.finish(),
        homog.finish(),
        square.finish(),
        proj.finish(),
        dim.finish(),
        assoc.finish(),
        dil.finish(),
    ]
}

/// Flow closed forms against the ODE oracle and the structural identities.
pub fn flow_suite(g: &Group2Step, cfg: &VerifyConfig) -> Vec<CheckRecord> {
    let tol = &cfg.tol;
    let mut rng = SeededRng::substream(cfg.seed, 2);
    let mut rk4 = Check::new("flow", "rk4", tol);
    let mut energy = Check::new("flow", "energy", tol);
    let mut homog = Check::new("flow", "homogeneity", tol);
    let mut ort = Check::new("flow", "symplectic_ort", tol);
    let mut com = Check::new("flow", "symplectic_com", tol);
    let mut mu_u = Check::new("flow", "mu_dot_u", tol);
    let mut htype = Check::new("flow", "htype", tol);
    let mut left = Check::new("flow", "left_translation", tol);
    let is_htype = g.classify(200, cfg.seed).is_htype;
    for _ in 0..cfg.cases {
        let cov = random_covector(g, &mut rng);
        let t = rng.uniform(-8.0, 8.0);
        rk4.add_result(flow_rk4_error(g, t, &cov));
        energy.add_result(flow_origin(g, t, &cov).map(|f| {
            (hamiltonian(g, &f.point(), &f.covector()) - cov.xi.norm()).abs() / cov.xi.norm()
        }));
        let r = rng.uniform(0.2, 5.0);
        homog.add_result((|| {
            let a = flow_origin(g, t, &cov)?;
            let b = flow_origin(g, t, &cov.scaled(r))?;
            let ex = vec_diff(&a.x, &b.x) / a.x.amax().max(1e-300);
            let eu = vec_diff(&a.u, &b.u) / a.u.amax().max(1e-300);
            let exi = vec_diff(&(&a.xi * r), &b.xi) / (r * a.xi.amax());
            Ok(ex.max(eu).max(exi))
        })());
        let (eo, ec) = match symplectic_errors(g, t, &cov) {
            Ok(v) => v,
            Err(e) => {
                ort.add_result(Err(e.clone()));
                com.add_result(Err(e));
                continue;
            }
        };
        ort.add(eo);
        com.add(ec);
        mu_u.add_result((|| {
            let f = flow_origin(g, t, &cov)?;
            let closed = mu_dot_u_closed(g, t, &cov)?;
            Ok((f.u.dot(&cov.mu) - closed).abs() / (1.0 + closed.abs()))
        })());
        if is_htype {
            htype.add_result((|| {
                let a = flow_origin(g, t, &cov)?;
                let b = flow_origin_htype(g, t, &cov)?;
                Ok(vec_diff(&a.x, &b.x).max(vec_diff(&a.u, &b.u)).max(vec_diff(&a.xi, &b.xi)))
            })());
        }
        let y = random_point(g, &mut rng);
        let ts = rng.uniform(-2.0, 2.0);
        left.add_result((|| {
            let a = flow_base(g, ts, &y, &cov)?;
            let b = flow_ode_oracle(g, ts, &y, &cov, default_ode_step(ts))?;
            Ok(vec_diff(&a.x, &b.x).max(vec_diff(&a.u, &b.u)).max(vec_diff(&a.xi, &b.xi)))
        })());
    }
    let htype_rec = if is_htype {
        htype.finish()
    } else {
        skipped("flow", "htype", tol, "group is not H-type")
    };
    vec![
        rk4.finish(),
        energy.finish(),
        homog.finish(),
        ort.finish(),
        com.finish(),
        mu_u.finish(),
        htype_rec,
        left.finish(),
    ]
}

/// Componentwise distance between the closed-form flow and RK4 from the origin.
pub fn flow_rk4_error(g: &Group2Step, t: f64, cov: &Covector) -> Result<f64> {
    let a = flow_origin(g, t, cov)?;
    let o = Point::origin(g.d1(), g.d2());
    let b = flow_ode_oracle(g, t, &o, cov, default_ode_step(t))?;
    Ok(vec_diff(&a.x, &b.x).max(vec_diff(&a.u, &b.u)).max(vec_diff(&a.xi, &b.xi)))
}

/// Residuals of `(d x^t)^T xi^t = 0` and of the symmetry of `(d x^t)^T d xi^t`.
pub fn symplectic_errors(g: &Group2Step, t: f64, cov: &Covector) -> Result<(f64, f64)> {
    let (jx, jxi) = flow_jacobians(g, t, cov, 1e-5)?;
    let f = flow_origin(g, t, cov)?;
    let xit = f.covector().to_vec();
    let ort = (jx.transpose() * &xit).amax() / (max_abs(&jx) * xit.amax()).max(1.0);
    let m = jx.transpose() * &jxi;
    let com = max_abs(&(&m - m.transpose())) / max_abs(&jx).max(1.0);
    Ok((ort, com))
}

/// Closed-form phase quantities against finite differences.
pub fn phase_suite(g: &Group2Step, cfg: &VerifyConfig) -> Vec<CheckRecord> {
    let tol = &cfg.tol;
    let mut rng = SeededRng::substream(cfg.seed, 3);
    let class = g.classify(200, cfg.seed);
    let names = [
        "phi0_fd",
        "det",
        "density_branch",
        "htype_det",
        "euler",
        "underline",
        "grad_xi_fd",
        "block_structure",
        "im_nonnegative",
    ];
    if !class.is_metivier {
        return names
            .iter()
            .map(|n| skipped("phase", n, tol, "group is not Metivier"))
            .collect();
    }
    let mut phi0 = Check::new("phase", "phi0_fd", tol);
    let mut det = Check::new("phase", "det", tol);
    let mut branch = Check::new("phase", "density_branch", tol);
    let mut htype = Check::new("phase", "htype_det", tol);
    let mut euler = Check::new("phase", "euler", tol);
    let mut under = Check::new("phase", "underline", tol);
    let mut grad = Check::new("phase", "grad_xi_fd", tol);
    let mut block = Check::new("phase", "block_structure", tol);
    let mut im = Check::new("phase", "im_nonnegative", tol);
    for _ in 0..cfg.cases {
        let cov = random_covector(g, &mut rng);
        let t = rng.uniform(-4.0, 4.0);
        let p = random_point(g, &mut rng);
        phi0.add_result(phi0_error(g, t, &cov));
        det.add_result(mixed_hessian(g, t, &cov).map(|h| {
            (h.phi0.determinant() - h.det_phi).norm() / h.det_phi.norm()
        }));
        branch.add_result(mixed_hessian(g, t, &cov).map(|h| {
            (h.density * h.density - h.det_phi).norm() / h.det_phi.norm()
        }));
        if class.is_htype {
            htype.add_result(mixed_hessian(g, t, &cov).map(|h| {
                let th = cov.theta(t);
                let expect = (-I * th * g.d1() as f64).exp() * (1.0 + I * th);
                (h.det_phi - expect).norm() / expect.norm()
            }));
        }
        let r = rng.uniform(0.2, 5.0);
        euler.add_result((|| {
            let a = PhaseGeometry::new(g, t, &cov)?.value(&p);
            let b = PhaseGeometry::new(g, t, &cov.scaled(r))?.value(&p);
            Ok((b - a * r).norm() / (r * a.norm()).max(1e-300))
        })());
        under.add_result((|| {
            let f = flow_origin(g, t, &cov)?;
            let pe = phase_value(g, t, &f.point(), &cov)?;
            let gx = PhaseGeometry::new(g, t, &cov)?.grad_x(&f.point());
            let xit = f.covector().to_vec();
            let gerr = gx.iter().zip(xit.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            Ok(pe.value.norm().max(pe.grad_xi.norm()).max(gerr))
        })());
        grad.add_result(grad_xi_error(g, t, &p, &cov));
        block.add_result(block_structure_error(g, t, &p, &cov));
        im.add_result(PhaseGeometry::new(g, t, &cov).map(|pg| (-pg.value(&p).im).max(0.0)));
    }
    let htype_rec = if class.is_htype {
        htype.finish()
    } else {
        skipped("phase", "htype_det", tol, "group is not H-type")
    };
    vec![
        phi0.finish(),
        det.finish(),
        branch.finish(),
        htype_rec,
        euler.finish(),
        under.finish(),
        grad.finish(),
        block.finish(),
        im.finish(),
    ]
}

/// Closed-form `Phi_0` against differences of the flow.
pub fn phi0_error(g: &Group2Step, t: f64, cov: &Covector) -> Result<f64> {
    let h = mixed_hessian(g, t, cov)?;
    let fd = phi0_finite_difference(g, t, cov, 1e-5)?;
    Ok(max_abs_c(&(&h.phi0 - &fd)))
}

/// `d phi / d xi` from [`phase_value`] against direct differences of `phi`.
pub fn grad_xi_error(g: &Group2Step, t: f64, p: &Point, cov: &Covector) -> Result<f64> {
    let pe = phase_value(g, t, p, cov)?;
    let v = cov.to_vec();
    let mut worst: f64 = 0.0;
    for j in 0..g.dim() {
        let d = partial(
            |w: &DVector<f64>| {
                PhaseGeometry::new(g, t, &Covector::from_vec(g.d1(), w))
                    .map(|pg| pg.value(p))
                    .unwrap_or(C64::new(f64::NAN, f64::NAN))
            },
            &v,
            j,
            1e-4 * cov.norm(),
        );
        worst = worst.max((d - pe.grad_xi[j]).norm() / (1.0 + d.norm()));
    }
    Ok(worst)
}

/// The second-layer rows of the mixed Hessian `d_xi grad_x phi` are `(0, I)`.
pub fn block_structure_error(g: &Group2Step, t: f64, p: &Point, cov: &Covector) -> Result<f64> {
    let (d1, d2) = (g.d1(), g.d2());
    PhaseGeometry::new(g, t, cov)?;
    let v = cov.to_vec();
    let mut worst: f64 = 0.0;
    for j in 0..d1 + d2 {
        let col = partial(
            |w: &DVector<f64>| {
                let gx = PhaseGeometry::new(g, t, &Covector::from_vec(d1, w))
                    .map(|pg| pg.grad_x(p))
                    .unwrap_or_else(|_| DVector::from_element(d1 + d2, C64::new(f64::NAN, 0.0)));
                DVector::from_fn(2 * (d1 + d2), |i, _| if i % 2 == 0 { gx[i / 2].re } else { gx[i / 2].im })
            },
            &v,
            j,
            1e-5 * cov.norm(),
        );
        for k in 0..d2 {
            let row = d1 + k;
            let expect = if j == row { 1.0 } else { 0.0 };
            worst = worst.max((col[2 * row] - expect).abs()).max(col[2 * row + 1].abs());
        }
    }
    Ok(worst)
}

/// Transport coefficients against their definitions and oracles.
pub fn transport_suite(g: &Group2Step, cfg: &VerifyConfig) -> Vec<CheckRecord> {
    let tol = &cfg.tol;
    let class = g.classify(200, cfg.seed);
    let names = [
        "f_definition",
        "k_r_oracle",
        "lambda_r_composition",
        "exact_ones",
        "crucial_f20",
        "crucial_dx_f20",
        "crucial_f11",
        "crucial_k",
        "htype_lambda",
        "lambda_i_ftc",
        "time_decay",
    ];
    if !class.is_metivier {
        return names
            .iter()
            .map(|n| skipped("transport", n, tol, "group is not Metivier"))
            .collect();
    }
    let mut rng = SeededRng::substream(cfg.seed, 4);
    let mut fdef = Check::new("transport", "f_definition", tol);
    let mut kr = Check::new("transport", "k_r_oracle", tol);
    let mut lr = Check::new("transport", "lambda_r_composition", tol);
    let mut ones = Check::new("transport", "exact_ones", tol);
    let mut c20 = Check::new("transport", "crucial_f20", tol);
    let mut cdx = Check::new("transport", "crucial_dx_f20", tol);
    let mut c11 = Check::new("transport", "crucial_f11", tol);
    let mut ck = Check::new("transport", "crucial_k", tol);
    let mut ht = Check::new("transport", "htype_lambda", tol);
    let mut ftc = Check::new("transport", "lambda_i_ftc", tol);
    let mut decay = Check::new("transport", "time_decay", tol);
    for i in 0..cfg.cases {
        let cov = random_covector(g, &mut rng);
        let p = random_point(g, &mut rng);
        let t = rng.uniform(-4.0, 4.0);
        fdef.add_result(f_definition_error(g, t, &p, &cov));
        kr.add_result(k_oracle_error(g, t, &p, &cov));
        let center = random_covector(g, &mut rng);
        let shift: Vec<f64> = (0..g.d1()).map(|_| rng.uniform(-0.2, 0.2)).collect();
        lr.add_result(lambda_oracle_error(g, t, &center, &shift));
        ones.add_result((|| {
            let fc = f_coeffs(g, t, &p, &cov)?;
            let lc = TransportGeometry::new(g, t, &cov)?.lambda_coeffs();
            Ok((fc.f02 - 1.0).norm().max((lc.lambda20 - 1.0).norm()))
        })());
        match crucial_errors(g, t, &cov) {
            Ok([a, b, c, d]) => {
                c20.add(a);
                cdx.add(b);
                c11.add(c);
                ck.add(d);
            }
            Err(e) => {
                for c in [&mut c20, &mut cdx, &mut c11, &mut ck] {
                    c.add_result(Err(e.clone()));
                }
            }
        }
        if class.is_htype {
            ht.add_result(TransportGeometry::new(g, t, &cov).map(|tg| {
                let a = tg.lambda_coeffs();
                let b = tg.lambda_coeffs_htype();
                [
                    (a.lambda00 - b.lambda00).norm(),
                    (a.lambda10 - b.lambda10).norm(),
                    (&a.lambda01 - &b.lambda01).norm(),
                    (&a.lambda11 - &b.lambda11).norm(),
                    (&a.lambda02 - &b.lambda02).norm(),
                ]
                .into_iter()
                .fold(0.0, f64::max)
            }));
        }
        if i < cfg.cases.min(4) {
            ftc.add_result(lambda_i_ftc_error(g, &center));
            decay.add_result(time_decay_growth(g, &cov));
        }
    }
    let ht_rec = if class.is_htype {
        ht.finish()
    } else {
        skipped("transport", "htype_lambda", tol, "group is not H-type")
    };
    vec![
        fdef.finish(),
        kr.finish(),
        lr.finish(),
        ones.finish(),
        c20.finish(),
        cdx.finish(),
        c11.finish(),
        ck.finish(),
        ht_rec,
        ftc.finish(),
        decay.finish(),
    ]
}

/// Worst relative error of the six closed-form `F_kj` against their definition.
pub fn f_definition_error(g: &Group2Step, t: f64, p: &Point, cov: &Covector) -> Result<f64> {
    let a = f_coeffs(g, t, p, cov)?;
    let b = f_coeffs_definition(g, t, p, cov)?;
    let xi = cov.norm();
    Ok([
        rel_c(a.f20, b.f20, xi * xi),
        rel_c(a.f11, b.f11, xi),
        rel_c(a.f10, b.f10, xi),
        rel_c(a.f02, b.f02, 1.0),
        rel_c(a.f01, b.f01, 1.0),
        rel_c(a.f00, b.f00, 1.0),
    ]
    .into_iter()
    .fold(0.0, f64::max))
}

/// `K` against `F_10 + R F_20` with `R` evaluated numerically.
pub fn k_oracle_error(g: &Group2Step, t: f64, p: &Point, cov: &Covector) -> Result<f64> {
    let k = k_value(g, t, p, cov)?;
    let gg = g.clone();
    let rf20 = apply_r_numeric(
        g,
        move |tt, pp: &Point, cc: &Covector| {
            f_coeffs(&gg, tt, pp, cc)
                .map(|f| f.f20)
                .unwrap_or(C64::new(f64::NAN, f64::NAN))
        },
        t,
        p,
        cov,
        RConfig::default(),
    )?;
    let f10 = f_coeffs(g, t, p, cov)?.f10;
    Ok(rel_c(k, f10 + rf20, cov.norm()))
}

/// `Lambda q` from the coefficients against the nested `R` composition, on a time-modulated
/// Gaussian centred at `center` and evaluated at a nearby covector.
pub fn lambda_oracle_error(g: &Group2Step, t: f64, center: &Covector, shift: &[f64]) -> Result<f64> {
    let width = 0.1 * center.norm();
    let q = Symbol::gaussian(g.d1(), center, width, true);
    let mut cov = center.clone();
    for (v, s) in cov.xi.iter_mut().zip(shift) {
        *v += s * width;
    }
    let a = apply_lambda(g, &q, t, &cov)?.value;
    let b = lambda_r_composition(g, &q, t, &cov, RConfig::default(), DerivSteps::default())?;
    Ok(rel_c(a, b, 1e-12))
}

/// `[|F20|/|xi|^2, |d_x F20|/|xi|^2, |F11 - 2|xi||/|xi|, |K|/|xi|]` on the flow.
pub fn crucial_errors(g: &Group2Step, t: f64, cov: &Covector) -> Result<[f64; 4]> {
    let tg = TransportGeometry::new(g, t, cov)?;
    let f = flow_origin(g, t, cov)?;
    let xi = cov.xi.norm();
    let fc = tg.f_coeffs(&f.x);
    let mut dx: f64 = 0.0;
    for j in 0..g.d1() {
        let d = partial(|x: &DVector<f64>| tg.f_coeffs(x).f20, &f.x, j, 1e-3);
        dx = dx.max(d.norm());
    }
    Ok([
        fc.f20.norm() / (xi * xi),
        dx / (xi * xi),
        (fc.f11 - 2.0 * xi).norm() / xi,
        tg.k_value(&f.x).norm() / xi,
    ])
}

/// `d_t Lambda_I q` against `Lambda q / (2i|xi|)` at `t = 1`, for a static Gaussian at `center`.
pub fn lambda_i_ftc_error(g: &Group2Step, center: &Covector) -> Result<f64> {
    let q = Symbol::gaussian(g.d1(), center, 0.1 * center.norm(), false);
    let cov = center.clone();
    let lam = apply_lambda(g, &q, 1.0, &cov)?.value / (2.0 * I * cov.xi.norm());
    let err = std::cell::RefCell::new(None);
    let d = richardson_d1(
        |s| match apply_lambda_i(g, &q, 1.0 + s, &cov, 16) {
            Ok(v) => v,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                C64::new(f64::NAN, f64::NAN)
            }
        },
        0.0,
        1e-3,
    );
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok((d - lam).norm() / lam.norm().max(1e-12))
}

/// Growth of `(1+t)^2 |Lambda_00|` and `(1+t)|Lambda_10|`: the sup over `t` in `[16, 64]`
/// divided by the sup over `[1, 16]`.
pub fn time_decay_growth(g: &Group2Step, cov: &Covector) -> Result<f64> {
    let mut early = [0.0f64; 2];
    let mut late = [0.0f64; 2];
    for i in 0..=63 {
        let t = 1.0 + i as f64;
        let lc = TransportGeometry::new(g, t, cov)?.lambda_coeffs();
        let w = [(1.0 + t).powi(2) * lc.lambda00.norm(), (1.0 + t) * lc.lambda10.norm()];
        let slot = if t < 16.0 { &mut early } else { &mut late };
        for k in 0..2 {
            slot[k] = slot[k].max(w[k]);
        }
    }
    Ok((0..2)
        .map(|k| if early[k] > 0.0 { late[k] / early[k] } else { 0.0 })
        .fold(0.0, f64::max))
}

/// Partition identities, packing structure and the shear.
pub fn decompose_suite(g: &Group2Step, cfg: &VerifyConfig) -> Vec<CheckRecord> {
    let tol = &cfg.tol;
    let mut rng = SeededRng::substream(cfg.seed, 5);
    let cut = make_cutoffs(1.0).expect("positive sharpness");
    let mut dy = Check::new("decompose", "dyadic_partition", tol);
    let mut tilde = Check::new("decompose", "chi1_tilde", tol);
    for i in 0..=4000 {
        let s = if i <= 2000 {
            -10.0 + 20.0 * i as f64 / 2000.0
        } else {
            let e = -6.0 + 12.0 * (i - 2001) as f64 / 1999.0;
            10f64.powf(e) * if i % 2 == 0 { 1.0 } else { -1.0 }
        };
        dy.add((cut.partition_sum(s) - 1.0).abs());
        tilde.add((cut.chi1_tilde(s) * cut.chi1(s) - cut.chi1(s)).abs());
    }
    let mut plus = Check::new("decompose", "plus_partition", tol);
    for i in 0..=2000 {
        let s = -10.0 + 20.0 * i as f64 / 2000.0;
        let sum: f64 = (-12..=12).map(|k| plus_cutoff(s - k as f64)).sum();
        plus.add((sum - 1.0).abs());
    }
    let mut dpart = Check::new("decompose", "direction_partition", tol);
    let mut dsupp = Check::new("decompose", "direction_support", tol);
    for d in [2usize, 3] {
        for m in [0u32, 2, 4] {
            match make_directions(d, m, 0.25, cfg.seed) {
                Ok(set) => {
                    let reach = set.support_radius();
                    for _ in 0..cfg.cases.max(20) {
                        let xi = rng.unit_vec(d) * rng.uniform(0.5, 3.0);
                        let w = set.weights(&xi);
                        dpart.add((w.iter().map(|p| p.1).sum::<f64>() - 1.0).abs());
                        let unit = &xi / xi.norm();
                        let bad = w
                            .iter()
                            .filter(|(i, v)| *v > 0.0 && (&unit - set.direction(*i)).norm() > reach)
                            .count();
                        dsupp.add(bad as f64);
                    }
                }
                Err(e) => dpart.add_result(Err(e)),
            }
        }
    }
    let mut spart = Check::new("decompose", "sector_partition", tol);
    for d2 in [1usize, 2, 3] {
        match MuSectorDecomposition::new(d2, 16.0 * 1.21, 1.1, 0.25, cfg.seed) {
            Ok(dec) => {
                for _ in 0..cfg.cases.max(20) {
                    let mu = rng.unit_vec(d2) * rng.uniform(0.1, 5.0);
                    spart.add((dec.weights(&mu).iter().map(|p| p.1).sum::<f64>() - 1.0).abs());
                }
            }
            Err(e) => spart.add_result(Err(e)),
        }
    }
    let mut slope = Check::new("decompose", "direction_slope", tol);
    slope.add_result(
        direction_count_study(3, &[2, 3, 4, 5], 0.25, cfg.seed)
            .map(|(_, s)| s.map_or(f64::INFINITY, |s| (s - 1.0).abs())),
    );
    let mut count = Check::new("decompose", "sector_count", tol);
    for d2 in [2usize, 3] {
        count.add_result(sector_count_study(d2, &[4.0, 8.0, 16.0, 32.0], 1.1, 0.25, cfg.seed).map(|r| r.1));
    }
    let mut shear = Check::new("decompose", "shear_roundtrip", tol);
    for _ in 0..cfg.cases {
        let cov = random_covector(g, &mut rng);
        let t = rng.uniform(1.0, 40.0) * if rng.uniform(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
        let k = 1 + rng.index(20) as i64;
        let v = rng.unit_vec(g.d2());
        shear.add_result((|| {
            let s = mu_shear(t, k, &v, &cov)?;
            let back = mu_unshear(t, k, &v, &s)?;
            Ok(vec_diff(&back.mu, &cov.mu) / (cov.mu.amax() + 2.0 * k as f64 * cov.xi.norm()))
        })());
    }
    let mut ssupp = Check::new("decompose", "sheared_support", tol);
    if g.classify(200, cfg.seed).is_metivier {
        ssupp.add_result(sheared_support_violations(g, cfg.seed, cfg.cases.max(20) * 10));
    }
    vec![
        dy.finish(),
        tilde.finish(),
        plus.finish(),
        dpart.finish(),
        dsupp.finish(),
        spart.finish(),
        slope.finish(),
        count.finish(),
        shear.finish(),
        ssupp.finish(),
    ]
}

/// Number of nonzero sheared-symbol samples with `|mu~| / |xi| > 5/2`.
pub fn sheared_support_violations(g: &Group2Step, seed: u64, samples: usize) -> Result<f64> {
    let kappa = 1.1;
    let t = 20.0;
    let q = cone_symbol(g, (1.0, 2.0), (0.8, 1.2));
    let dec = MuSectorDecomposition::new(g.d2(), t, kappa, 0.25, seed)?;
    let mut rng = SeededRng::substream(seed, 6);
    let mut bad = 0usize;
    for k in 8..=12 {
        for vi in 0..dec.len().min(8) {
            let s = sheared_symbol(g, &q, k, vi, &dec)?;
            for _ in 0..samples / 40 {
                let cov = Covector::new(
                    rng.unit_vec(g.d1()) * rng.uniform(0.9, 2.1),
                    rng.unit_vec(g.d2()) * rng.uniform(0.0, 6.0),
                );
                let v = s.eval(t, &cov);
                if v.norm() > 0.0 && cov.mu.norm() / cov.xi.norm() > 2.5 {
                    bad += 1;
                }
            }
        }
    }
    Ok(bad as f64)
}

/// Quadrature-based kernel checks on groups of dimension at most 3.
pub fn fio_suite(g: &Group2Step, cfg: &VerifyConfig) -> Vec<CheckRecord> {
    let tol = &cfg.tol;
    let names = ["abs_bound", "origin_value", "wave_identity", "dec_periodic"];
    let class = g.classify(200, cfg.seed);
    if !cfg.include_fio || !class.is_metivier || g.dim() > 3 {
        let why = if !cfg.include_fio {
            "disabled"
        } else if !class.is_metivier {
            "group is not Metivier"
        } else {
            "quadrature checks run on groups of dimension at most 3"
        };
        return names.iter().map(|n| skipped("fio", n, tol, why)).collect();
    }
    let mut rng = SeededRng::substream(cfg.seed, 7);
    let mut bound = Check::new("fio", "abs_bound", tol);
    let mut origin = Check::new("fio", "origin_value", tol);
    let mut wave = Check::new("fio", "wave_identity", tol);
    let mut dec = Check::new("fio", "dec_periodic", tol);
    let cut = make_cutoffs(1.0).expect("positive sharpness");
    let m = 2;
    let q = band_symbol(g, m, cut);
    let spec = QuadratureSpec::new(16).with_region(band_region(m));
    origin.add_result(origin_value_error(g, &q, &spec));
    let t = rng.uniform(0.3, 0.7);
    let points = wavefront_points(g, &q, t, 2, &mut rng);
    match kernel_nodes(g, &q, t, &spec) {
        Ok(nodes) => {
            for p in &points {
                let v = nodes.sum(p).norm();
                bound.add((v - nodes.abs_mass).max(0.0) / nodes.abs_mass);
            }
        }
        Err(e) => bound.add_result(Err(e)),
    }
    let steps = WaveSteps {
        h_t: 1e-3,
        h_x: 1e-3,
        band_scale: 2f64.powi(m),
    };
    match wave_identity_residuals(g, &q, t, &points, &spec, steps) {
        Ok(rows) => rows.iter().for_each(|r| wave.add(r.residual)),
        Err(e) => wave.add_result(Err(e)),
    }
    let dec_rec = if g.d2() == 1 {
        let xb = (1.0, 2.0);
        let rb = (0.92, 1.08);
        let cq = cone_symbol(g, xb, rb);
        let cone = ConeBounds::for_cone_symbol(xb, rb);
        let pts = wavefront_points(g, &cq, 20.0, 2, &mut rng);
        match dec_periodic_check(g, &cq, &cone, 20.0, &pts, 1.1, &QuadratureSpec::new(10)) {
            Ok(rows) => rows.iter().for_each(|r| dec.add(r.discrepancy)),
            Err(e) => dec.add_result(Err(e)),
        }
        dec.finish()
    } else {
        skipped("fio", "dec_periodic", tol, "implemented for d2 = 1")
    };
    vec![bound.finish(), origin.finish(), wave.finish(), dec_rec]
}

/// `I[q](0, 0)` against the plain quadrature `(2 pi)^{-d} int q`.
pub fn origin_value_error(g: &Group2Step, q: &Symbol, spec: &QuadratureSpec) -> Result<f64> {
    let nodes = kernel_nodes(g, q, 0.0, spec)?;
    let v = nodes.sum(&Point::origin(g.d1(), g.d2()));
    // every weight is (2 pi)^{-d} q > 0 at t = 0, so their plain sum is the absolute mass
    let plain = nodes.abs_mass;
    Ok(((v.re - plain).abs() + v.im.abs()) / plain)
}

/// Points on and near the wavefront `x^t(xi_0)` for random `xi_0` in the support of `q`.
pub fn wavefront_points(g: &Group2Step, q: &Symbol, t: f64, count: usize, rng: &mut SeededRng) -> Vec<Point> {
    let s = &q.support;
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 1000 * count {
        attempts += 1;
        let xi = rng.unit_vec(g.d1()) * rng.uniform(s.xi_min, s.xi_max);
        let ratio = rng.uniform(s.ratio_min.max(0.05), s.ratio_max);
        let cov = Covector::new(xi.clone(), rng.unit_vec(g.d2()) * (ratio * xi.norm()));
        if q.eval(t, &cov).norm() < 1e-3 {
            continue;
        }
        let Ok(f) = flow_origin(g, t, &cov) else {
            continue;
        };
        let dx = DVector::from_fn(g.d1(), |_, _| rng.uniform(-0.05, 0.05));
        let du = DVector::from_fn(g.d2(), |_, _| rng.uniform(-0.05, 0.05));
        out.push(Point::new(f.x + dx, f.u + du));
    }
    out
}

/// Every suite in order.
pub fn verify_all(g: &Group2Step, cfg: &VerifyConfig) -> Vec<CheckRecord> {
    let mut out = carnot_suite(g, cfg);
    out.extend(flow_suite(g, cfg));
    out.extend(phase_suite(g, cfg));
    out.extend(transport_suite(g, cfg));
    out.extend(decompose_suite(g, cfg));
    out.extend(fio_suite(g, cfg));
    out
}
