//! Command-line front end: group validation, verification suites and study tables.
//!
//! Exit codes: 0 when every check passes, 1 on a verification failure, 2 on malformed input.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::carnot::{Covector, Group2Step, Point};
use crate::decompose::{band_symbol, cone_symbol, direction_count_study, make_cutoffs, make_directions};
use crate::error::Error;
use crate::fio::{
    band_region, dec_periodic_check, eval_kernel, l1_growth_study, parametrix_residual_study,
    wave_identity_residuals, ConeBounds, L1StudyConfig, ParametrixOptions, QuadratureSpec,
    WaveSteps,
};
use crate::flow::geodesic_sphere_sample;
use crate::numerics::SeededRng;
use crate::phase::{mixed_hessian, phase_value};
use crate::transport::Symbol;
use crate::verify::{self, CheckRecord, Tolerances, VerifyConfig};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "carnot-wave", version, about = "Wave kernels on 2-step Carnot groups")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct GlobalArgs {
    /// Built-in group name (heisenberg, nonisotropic, quaternionic, free3) or a JSON group file.
    #[arg(long, global = true)]
    pub group: Option<String>,
    /// Seed for every randomized choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for JSON/CSV artifacts and the manifest; reports go to stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel quadrature.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Tolerance override `KEY=VALUE`, repeatable.
    #[arg(long = "tol", global = true, value_name = "KEY=VALUE")]
    pub tol: Vec<String>,
    /// JSON config file with the same fields as the flags; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Group definitions.
    #[command(subcommand)]
    Group(GroupCmd),
    /// Verification suites.
    #[command(subcommand)]
    Verify(VerifyCmd),
    /// Geodesic spheres.
    #[command(subcommand)]
    Sphere(SphereCmd),
    /// Complex phase.
    #[command(subcommand)]
    Phase(PhaseCmd),
    /// Transport coefficients.
    #[command(subcommand)]
    Transport(TransportCmd),
    /// Frequency decompositions.
    #[command(subcommand)]
    Decompose(DecomposeCmd),
    /// Oscillatory-integral kernels and studies.
    #[command(subcommand)]
    Fio(FioCmd),
}

#[derive(Debug, Subcommand)]
pub enum GroupCmd {
    /// Classify the group and check the bracket invariants.
    Validate {
        #[arg(long, default_value_t = 10)]
        cases: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum VerifyCmd {
    /// Every invariant suite on the configured group.
    All {
        #[arg(long, default_value_t = 10)]
        cases: usize,
        /// Skip the quadrature-based kernel checks.
        #[arg(long)]
        no_fio: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum SphereCmd {
    /// Endpoints of unit-speed geodesics from the origin at time `t`.
    Sample {
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 1000)]
        directions: usize,
        /// Second-layer frequencies are drawn uniformly from the ball of this radius.
        #[arg(long, default_value_t = 6.0)]
        mu_max: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum PhaseCmd {
    /// Phase, gradients and density at one `(t, x, u, xi, mu)`.
    Eval {
        #[arg(long)]
        t: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        u: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        xi: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        mu: Vec<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TransportCmd {
    /// Closed-form coefficients against their definitions and oracles.
    Verify {
        #[arg(long, default_value_t = 10)]
        cases: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum DecomposeCmd {
    /// The direction set `Z_m` in `R^d`.
    Directions {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        m: u32,
        #[arg(long, default_value_t = 0.25)]
        c: f64,
    },
    /// Partition identities and counting laws.
    Report {
        #[arg(long, default_value_t = 10)]
        cases: usize,
        /// Largest `m` in the direction-count fit (`d = 3`, `m = 2..=m_max`).
        #[arg(long, default_value_t = 7)]
        m_max: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolKind {
    /// Order-0 dyadic band `psi(2^{-m}|xi|)` on the cone `|mu| <= 4|xi|`.
    Band,
    /// Smooth bump on `|xi|` in `xi-band` and `|mu|/|xi|` in `ratio-band`.
    Cone,
}

#[derive(Debug, Args, Clone)]
pub struct SymbolArgs {
    #[arg(long, value_enum, default_value_t = SymbolKind::Band)]
    pub symbol: SymbolKind,
    #[arg(long, default_value_t = 2)]
    pub m: i32,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0])]
    pub xi_band: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.92, 1.08])]
    pub ratio_band: Vec<f64>,
    /// Gauss-Legendre nodes per coordinate on each quadrature piece.
    #[arg(long, default_value_t = 16)]
    pub nodes: usize,
}

#[derive(Debug, Subcommand)]
pub enum FioCmd {
    /// `I[q](t, x, u)` with its refinement error.
    Eval {
        #[command(flatten)]
        sym: SymbolArgs,
        #[arg(long)]
        t: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        u: Vec<f64>,
        /// Fail unless node doubling changes the value by at most this much.
        #[arg(long)]
        refine_tol: Option<f64>,
    },
    /// Residual of the wave identity at random points near the wavefront.
    WaveCheck {
        #[arg(long, default_value_t = 2)]
        m: i32,
        #[arg(long, default_value_t = 24)]
        nodes: usize,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        #[arg(long, default_value_t = 5)]
        points: usize,
    },
    /// Large-time decomposition against the direct kernel (`d2 = 1`).
    DecCheck {
        #[arg(long, default_value_t = 20.0)]
        t: f64,
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 1.1)]
        kappa: f64,
        #[arg(long, default_value_t = 12)]
        nodes: usize,
    },
    /// `L^1` norms of `I[q_m](t, .)` on a ball and their growth in `m` (isotropic Heisenberg).
    L1Study {
        #[arg(long, value_delimiter = ',', default_values_t = [2, 3, 4, 5])]
        m: Vec<i32>,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 12)]
        nodes_base: usize,
        #[arg(long, default_value_t = 1.5)]
        radius: f64,
    },
    /// Remainder sizes and truncated expansions of the parametrix.
    ParametrixStudy {
        #[command(flatten)]
        sym: SymbolArgs,
        /// Number of `Lambda_I` iterates; each one multiplies the cost by several hundred.
        #[arg(long, default_value_t = 1)]
        iterates: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5])]
        t: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        points: usize,
        #[arg(long, default_value_t = 8)]
        lambda_i_nodes: usize,
        /// Also evaluate the truncated sine-propagator expansion (about three times slower).
        #[arg(long)]
        sine: bool,
    },
}

/// Config file contents; every field is optional.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub group: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub tol: BTreeMap<String, f64>,
}

/// Resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub group_source: String,
    pub group: Group2Step,
    pub seed: u64,
    pub tol: Tolerances,
    pub tol_overrides: BTreeMap<String, f64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

/// CLI failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Malformed input, exit code 2.
    Input(String),
    /// A numerical routine failed, exit code 1.
    Failure(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidGroup(_) | Error::InvalidInput(_) => CliError::Input(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

impl RunConfig {
    pub fn resolve(args: &GlobalArgs) -> CliResult<Self> {
        let file = match &args.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                serde_json::from_str::<RunConfigFile>(&text)
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
            }
            None => RunConfigFile::default(),
        };
        let group_source = args
            .group
            .clone()
            .or(file.group)
            .unwrap_or_else(|| "heisenberg".into());
        let group = load_group(&group_source)?;
        let mut tol = Tolerances::default();
        let mut tol_overrides = file.tol;
        for kv in &args.tol {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("--tol expects KEY=VALUE, got {kv}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| CliError::Input(format!("--tol {k}: {v} is not a number")))?;
            tol_overrides.insert(k.trim().to_string(), v);
        }
        for (k, v) in &tol_overrides {
            tol.set(k, *v)?;
        }
        let jobs = args.jobs.or(file.jobs);
        if jobs == Some(0) {
            return Err(CliError::Input("--jobs must be positive".into()));
        }
        Ok(RunConfig {
            group_source,
            group,
            seed: args.seed.or(file.seed).unwrap_or(0),
            tol,
            tol_overrides,
            out: args.out.clone().or(file.out),
            jobs,
        })
    }
}

fn load_group(source: &str) -> CliResult<Group2Step> {
    if Group2Step::builtin_names().contains(&source) || !Path::new(source).exists() {
        if let Ok(g) = Group2Step::builtin(source) {
            return Ok(g);
        }
        if !Path::new(source).exists() {
            return Err(CliError::Input(format!(
                "{source} is neither a built-in group ({}) nor a file",
                Group2Step::builtin_names().join(", ")
            )));
        }
    }
    Ok(Group2Step::load(Path::new(source))?)
}

/// One artifact of a command: file name and contents.
struct Artifact {
    name: String,
    body: String,
}

/// What a command produced.
struct Report {
    command: String,
    inputs: Value,
    summary: Value,
    artifacts: Vec<Artifact>,
    passed: bool,
    warnings: Vec<String>,
    /// Check records, printed as a table on stdout.
    records: Vec<CheckRecord>,
    /// Artifact echoed on stdout when no output directory is given.
    echo: Option<usize>,
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable report");
    s.push('\n');
    s
}

fn records_csv(records: &[CheckRecord]) -> String {
    let mut s = String::from("suite,check,cases,max_error,tolerance,passed,note\n");
    for r in records {
        let note = r.note.as_deref().unwrap_or("").replace('"', "'");
        let _ = writeln!(
            s,
            "{},{},{},{:e},{:e},{},\"{}\"",
            r.suite, r.check, r.cases, r.max_error, r.tolerance, r.passed, note
        );
    }
    s
}

fn records_table(records: &[CheckRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(
            s,
            "{:4} {:10} {:24} cases={:<5} max_error={:<10.3e} tol={:.1e}{}",
            if r.passed { "PASS" } else { "FAIL" },
            r.suite,
            r.check,
            r.cases,
            r.max_error,
            r.tolerance,
            r.note.as_ref().map(|n| format!("  ({n})")).unwrap_or_default()
        );
    }
    s
}

fn point_from(g: &Group2Step, x: &[f64], u: &[f64]) -> CliResult<Point> {
    if x.len() != g.d1() || u.len() != g.d2() {
        return Err(CliError::Input(format!(
            "point needs {} first-layer and {} second-layer coordinates",
            g.d1(),
            g.d2()
        )));
    }
    Ok(Point::from_slices(x, u))
}

fn pair(v: &[f64], name: &str) -> CliResult<(f64, f64)> {
    match v {
        [a, b] if a < b => Ok((*a, *b)),
        _ => Err(CliError::Input(format!("{name} expects two increasing numbers a,b"))),
    }
}

fn build_symbol(g: &Group2Step, s: &SymbolArgs) -> CliResult<(Symbol, QuadratureSpec)> {
    match s.symbol {
        SymbolKind::Band => {
            if !(0..=6).contains(&s.m) {
                return Err(CliError::Input("band scale m must lie in 0..=6".into()));
            }
            let cut = make_cutoffs(1.0)?;
            Ok((
                band_symbol(g, s.m, cut),
                QuadratureSpec::new(s.nodes).with_region(band_region(s.m)),
            ))
        }
        SymbolKind::Cone => {
            let xb = pair(&s.xi_band, "--xi-band")?;
            let rb = pair(&s.ratio_band, "--ratio-band")?;
            if xb.0 <= 0.0 || rb.0 <= 0.0 {
                return Err(CliError::Input("cone bands must be positive".into()));
            }
            Ok((cone_symbol(g, xb, rb), QuadratureSpec::new(s.nodes)))
        }
    }
}

fn execute(cmd: &Command, cfg: &RunConfig) -> CliResult<Report> {
    let g = &cfg.group;
    let verify_cfg = |cases: usize, include_fio: bool| VerifyConfig {
        seed: cfg.seed,
        cases,
        tol: cfg.tol.clone(),
        include_fio,
    };
    let records_report = |command: &str, inputs: Value, records: Vec<CheckRecord>, extra: Value| {
        let passed = records.iter().all(|r| r.passed);
        let failed: Vec<String> = records
            .iter()
            .filter(|r| !r.passed)
            .map(|r| format!("{}.{}", r.suite, r.check))
            .collect();
        let stem = command.replace(' ', "_");
        Report {
            command: command.into(),
            inputs,
            summary: json!({ "passed": passed, "failed": failed, "extra": extra }),
            artifacts: vec![
                Artifact {
                    name: format!("{stem}.json"),
                    body: to_json(&json!({ "records": records, "extra": extra })),
                },
                Artifact {
                    name: format!("{stem}.csv"),
                    body: records_csv(&records),
                },
            ],
            passed,
            warnings: Vec::new(),
            records,
            echo: None,
        }
    };
    match cmd {
        Command::Group(GroupCmd::Validate { cases }) => {
            let class = g.classify(200, cfg.seed);
            let records = verify::carnot_suite(g, &verify_cfg(*cases, false));
            let extra = json!({
                "d1": g.d1(),
                "d2": g.d2(),
                "classification": class,
                "bracket": g.to_file_data(),
            });
            Ok(records_report("group validate", json!({ "cases": cases }), records, extra))
        }
        Command::Verify(VerifyCmd::All { cases, no_fio }) => {
            let records = verify::verify_all(g, &verify_cfg(*cases, !no_fio));
            Ok(records_report(
                "verify all",
                json!({ "cases": cases, "include_fio": !no_fio }),
                records,
                Value::Null,
            ))
        }
        Command::Transport(TransportCmd::Verify { cases }) => {
            let records = verify::transport_suite(g, &verify_cfg(*cases, false));
            Ok(records_report("transport verify", json!({ "cases": cases }), records, Value::Null))
        }
        Command::Decompose(DecomposeCmd::Report { cases, m_max }) => {
            if *m_max < 2 || *m_max > 8 {
                return Err(CliError::Input("--m-max must lie in 2..=8".into()));
            }
            let records = verify::decompose_suite(g, &verify_cfg(*cases, false));
            let ms: Vec<u32> = (2..=*m_max).collect();
            let (rows, slope) = direction_count_study(3, &ms, 0.25, cfg.seed)?;
            let extra = json!({ "direction_counts_d3": rows, "direction_slope_d3": slope });
            Ok(records_report(
                "decompose report",
                json!({ "cases": cases, "m_max": m_max }),
                records,
                extra,
            ))
        }
        Command::Decompose(DecomposeCmd::Directions { d, m, c }) => {
            let set = make_directions(*d, *m, *c, cfg.seed)?;
            let mut csv = String::from("index");
            for k in 0..*d {
                let _ = write!(csv, ",nu{k}");
            }
            csv.push('\n');
            for (i, v) in set.directions().iter().enumerate() {
                let _ = write!(csv, "{i}");
                for x in v.iter() {
                    let _ = write!(csv, ",{x:e}");
                }
                csv.push('\n');
            }
            Ok(Report {
                command: "decompose directions".into(),
                inputs: json!({ "d": d, "m": m, "c": c }),
                summary: json!({
                    "count": set.len(),
                    "count_constant": set.count_constant(),
                    "separation": set.separation,
                    "support_radius": set.support_radius(),
                }),
                artifacts: vec![Artifact {
                    name: "directions.csv".into(),
                    body: csv,
                }],
                passed: true,
                warnings: Vec::new(),
                records: Vec::new(),
                echo: Some(0),
            })
        }
        Command::Sphere(SphereCmd::Sample { t, directions, mu_max }) => {
            if *directions == 0 || !(*mu_max >= 0.0) {
                return Err(CliError::Input("need at least one direction and mu-max >= 0".into()));
            }
            let mut rng = SeededRng::substream(cfg.seed, 11);
            let covs: Vec<Covector> = (0..*directions)
                .map(|_| {
                    let xi = rng.unit_vec(g.d1());
                    let r = mu_max * rng.uniform(0.0, 1.0).powf(1.0 / g.d2() as f64);
                    Covector::new(xi, rng.unit_vec(g.d2()) * r)
                })
                .collect();
            let pts = geodesic_sphere_sample(g, *t, &covs);
            let mut csv = String::new();
            let head: Vec<String> = (0..g.d1())
                .map(|k| format!("xi{k}"))
                .chain((0..g.d2()).map(|k| format!("mu{k}")))
                .chain((0..g.d1()).map(|k| format!("x{k}")))
                .chain((0..g.d2()).map(|k| format!("u{k}")))
                .collect();
            csv.push_str(&head.join(","));
            csv.push('\n');
            let mut rows = 0usize;
            for (c, p) in covs.iter().zip(pts) {
                let p = p?;
                let vals: Vec<String> = c
                    .to_vec()
                    .iter()
                    .chain(p.to_vec().iter())
                    .map(|v| format!("{v:e}"))
                    .collect();
                csv.push_str(&vals.join(","));
                csv.push('\n');
                rows += 1;
            }
            Ok(Report {
                command: "sphere sample".into(),
                inputs: json!({ "t": t, "directions": directions, "mu_max": mu_max }),
                summary: json!({ "rows": rows }),
                artifacts: vec![Artifact {
                    name: "sphere.csv".into(),
                    body: csv,
                }],
                passed: true,
                warnings: Vec::new(),
                records: Vec::new(),
                echo: Some(0),
            })
        }
        Command::Phase(PhaseCmd::Eval { t, x, u, xi, mu }) => {
            let p = point_from(g, x, u)?;
            if xi.len() != g.d1() || mu.len() != g.d2() {
                return Err(CliError::Input("covector has the wrong dimensions".into()));
            }
            let cov = Covector::from_slices(xi, mu);
            let pe = phase_value(g, *t, &p, &cov)?;
            let h = mixed_hessian(g, *t, &cov)?;
            let c = |z: crate::numerics::C64| [z.re, z.im];
            let summary = json!({
                "value": c(pe.value),
                "grad_xi": pe.grad_xi.iter().map(|z| c(*z)).collect::<Vec<_>>(),
                "grad_x": pe.grad_x.iter().map(|z| c(*z)).collect::<Vec<_>>(),
                "det_phi0": c(h.det_phi),
                "density": c(h.density),
            });
            Ok(Report {
                command: "phase eval".into(),
                inputs: json!({ "t": t, "x": x, "u": u, "xi": xi, "mu": mu }),
                artifacts: vec![Artifact {
                    name: "phase.json".into(),
                    body: to_json(&summary),
                }],
                summary,
                passed: true,
                warnings: Vec::new(),
                records: Vec::new(),
                echo: Some(0),
            })
        }
        Command::Fio(f) => execute_fio(f, cfg),
    }
}

fn execute_fio(cmd: &FioCmd, cfg: &RunConfig) -> CliResult<Report> {
    let g = &cfg.group;
    match cmd {
        FioCmd::Eval { sym, t, x, u, refine_tol } => {
            let p = point_from(g, x, u)?;
            let (q, spec) = build_symbol(g, sym)?;
            let spec = QuadratureSpec {
                refine_tol: *refine_tol,
                ..spec
            };
            let sample = eval_kernel(g, &q, *t, &p, &spec)?;
            Ok(Report {
                command: "fio eval".into(),
                inputs: json!({ "symbol": sym.symbol, "m": sym.m, "nodes": sym.nodes, "t": t, "x": x, "u": u }),
                summary: serde_json::to_value(&sample).expect("serializable"),
                artifacts: vec![Artifact {
                    name: "kernel.json".into(),
                    body: to_json(&sample),
                }],
                passed: true,
                warnings: Vec::new(),
                records: Vec::new(),
                echo: Some(0),
            })
        }
        FioCmd::WaveCheck { m, nodes, t, points } => {
            if !(0..=6).contains(m) {
                return Err(CliError::Input("band scale m must lie in 0..=6".into()));
            }
            let cut = make_cutoffs(1.0)?;
            let q = band_symbol(g, *m, cut);
            let spec = QuadratureSpec::new(*nodes).with_region(band_region(*m));
            let mut rng = SeededRng::substream(cfg.seed, 12);
            let pts = verify::wavefront_points(g, &q, *t, *points, &mut rng);
            let steps = WaveSteps {
                h_t: 1e-3,
                h_x: 1e-3,
                band_scale: 2f64.powi(*m),
            };
            let rows = wave_identity_residuals(g, &q, *t, &pts, &spec, steps)?;
            let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
            let tol = cfg.tol.get("fio.wave_identity");
            Ok(Report {
                command: "fio wave-check".into(),
                inputs: json!({ "m": m, "nodes": nodes, "t": t, "points": points }),
                summary: json!({ "max_residual": worst, "tolerance": tol }),
                artifacts: vec![Artifact {
                    name: "wave_check.json".into(),
                    body: to_json(&json!({ "rows": rows, "max_residual": worst, "tolerance": tol })),
                }],
                passed: worst <= tol,
                warnings: Vec::new(),
                records: Vec::new(),
                echo: Some(0),
            })
        }
        FioCmd::DecCheck { t, points, kappa, nodes } => {
            let xb = (1.0, 2.0);
            let rb = (0.92, 1.08);
            let q = cone_symbol(g, xb, rb);
            let cone = ConeBounds::for_cone_symbol(xb, rb);
            let mut rng = SeededRng::substream(cfg.seed, 13);
            let pts = verify::wavefront_points(g, &q, *t, *points, &mut rng);
            let rows = dec_periodic_check(g, &q, &cone, *t, &pts, *kappa, &QuadratureSpec::new(*nodes))?;
            let worst = rows.iter().map(|r| r.discrepancy).fold(0.0, f64::max);
            let tol = cfg.tol.get("fio.dec_periodic");
            Ok(Report {
                command: "fio dec-check".into(),
                inputs: json!({ "t": t, "points": points, "kappa": kappa, "nodes": nodes }),
                summary: json!({ "discrepancy": worst, "tolerance": tol }),
                artifacts: vec![Artifact {
                    name: "dec_check.json".into(),
                    body: to_json(&json!({ "rows": rows, "discrepancy": worst, "tolerance": tol })),
                }],
                passed: worst <= tol,
                warnings: Vec::new(),
                records: Vec::new(),
                echo: Some(0),
            })
        }
        FioCmd::L1Study { m, t, nodes_base, radius } => {
            let study_cfg = L1StudyConfig {
                t: *t,
                ball_radius: *radius,
                nodes_base: *nodes_base,
                ..Default::default()
            };
            let study = l1_growth_study(g, m, &study_cfg)?;
            let mut csv = String::from("m,norm,norm_refined,grid_change,nodes\n");
            for r in &study.rows {
                let _ = writeln!(csv, "{},{:e},{:e},{:e},{}", r.m, r.norm, r.norm_refined, r.grid_change, r.nodes);
            }
            let mut warnings = Vec::new();
            match study.slope {
                Some(s) if (s - 1.0).abs() <= 0.4 => {}
                s => warnings.push(format!("L1 growth slope {s:?} lies outside 1.0 +- 0.4")),
            }
            Ok(Report {
                command: "fio l1-study".into(),
                inputs: json!({ "m": m, "t": t, "nodes_base": nodes_base, "radius": radius }),
                summary: json!({ "slope": study.slope, "rows": study.rows.len() }),
                artifacts: vec![Artifact {
                    name: "l1_study.csv".into(),
                    body: csv,
                }],
                passed: true,
                warnings,
                records: Vec::new(),
                echo: Some(0),
            })
        }
        FioCmd::ParametrixStudy { sym, iterates, t, points, lambda_i_nodes, sine } => {
            let (q, spec) = build_symbol(g, sym)?;
            let mut rng = SeededRng::substream(cfg.seed, 14);
            let t0 = t.first().copied().unwrap_or(1.0);
            let pts = verify::wavefront_points(g, &q, t0, *points, &mut rng);
            let study = parametrix_residual_study(
                g,
                &q,
                *iterates,
                t,
                &pts,
                &spec,
                ParametrixOptions {
                    lambda_i_nodes: *lambda_i_nodes,
                    sine: *sine,
                },
            )?;
            let mut csv = String::from("iterates,t,point,remainder,leading,cos_re,cos_im,sin_re,sin_im\n");
            for r in &study.rows {
                let pt: Vec<String> = r.x.iter().chain(r.u.iter()).map(|v| format!("{v:e}")).collect();
                let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
                let _ = writeln!(
                    csv,
                    "{},{},\"{}\",{:e},{:e},{:e},{:e},{},{}",
                    r.iterates,
                    r.t,
                    pt.join(" "),
                    r.remainder,
                    r.leading,
                    r.cos_sum_re,
                    r.cos_sum_im,
                    opt(r.sin_sum_re),
                    opt(r.sin_sum_im)
                );
            }
            Ok(Report {
                command: "fio parametrix-study".into(),
                inputs: json!({ "symbol": sym.symbol, "m": sym.m, "nodes": sym.nodes, "iterates": iterates, "t": t, "points": points, "sine": sine }),
                summary: json!({ "sup_remainder": study.sup_remainder, "ratios": study.ratios }),
                artifacts: vec![Artifact {
                    name: "parametrix_study.csv".into(),
                    body: csv,
                }],
                passed: true,
                warnings: Vec::new(),
                records: Vec::new(),
                echo: Some(0),
            })
        }
    }
}

fn manifest(report: &Report, cfg: &RunConfig) -> Value {
    json!({
        "command": report.command,
        "version": VERSION,
        "group": cfg.group_source,
        "d1": cfg.group.d1(),
        "d2": cfg.group.d2(),
        "seed": cfg.seed,
        "tol_overrides": cfg.tol_overrides,
        "inputs": report.inputs,
        "summary": report.summary,
        "passed": report.passed,
        "warnings": report.warnings,
        "files": report.artifacts.iter().map(|a| a.name.clone()).collect::<Vec<_>>(),
    })
}

fn write_out(dir: &Path, report: &Report, cfg: &RunConfig) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::Input(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    for a in &report.artifacts {
        fs::write(dir.join(&a.name), &a.body).map_err(io)?;
    }
    fs::write(dir.join("manifest.json"), to_json(&manifest(report, cfg))).map_err(io)?;
    Ok(())
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let cfg = match RunConfig::resolve(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.code();
        }
    };
    let job = || -> CliResult<Report> {
        let report = execute(&cli.command, &cfg)?;
        match &cfg.out {
            Some(dir) => {
                write_out(dir, &report, &cfg)?;
                emit(&to_json(&manifest(&report, &cfg)));
            }
            None => {
                emit(&records_table(&report.records));
                match report.echo {
                    Some(i) => emit(&report.artifacts[i].body),
                    None => emit(&to_json(&manifest(&report, &cfg))),
                }
            }
        }
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        Ok(report)
    };
    let result = match cfg.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(job),
            Err(e) => Err(CliError::Failure(e.to_string())),
        },
        None => job(),
    };
    match result {
        Ok(r) if r.passed => 0,
        Ok(_) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                2
            } else {
                0
            }
        }
    }
}
