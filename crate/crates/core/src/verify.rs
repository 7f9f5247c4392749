//! Contraction harnesses for the three maximal functions and randomized
//! ensembles that aggregate them into CSV/JSON reports.
//!
//! Every harness returns a report; solver failures become FAIL rows with a
//! cause rather than errors, so one bad scenario never aborts a sweep.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{total_energy, CoefficientField, RegionMask, VariationalKernel};
use crate::error::{Error, Result};
use crate::grid::{gradient, Boundary, Grid, GridFunction};
use crate::maximal::{
    detachment_set, hajlasz_bound, refine_sup, subharmonicity_residual, vertical_max, MaximalResult,
    ResidualScope, Source, SourceKind, SubharmonicityReport, DETACHMENT_TOL,
};
use crate::output::{num, write_atomic, CsvTable};
use crate::pflow::{check_finite_speed, order_margin, solve_flow, LedgerReport, ProximalConfig, TimeGrid};
use crate::semigroup::{
    assemble, calibrate_gaussian, dissipation_check, kernel_certificate, EllipticOperator,
};

/// Relative contraction tolerance.
pub const CONTRACTION_TOL: f64 = 1e-6;
/// Denominator floor for the relative margin.
pub const MARGIN_FLOOR: f64 = 1e-14;
/// Absolute slack for per-step ledger monotonicity.
pub const LEDGER_SLACK: f64 = 1e-9;

/// Identifies the scenario behind a report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioInfo {
    pub seed: Option<u64>,
    pub source: SourceKind,
    pub dim: usize,
    pub n: usize,
    pub h: f64,
    pub boundary: Boundary,
    pub kernel: String,
    pub t_min: f64,
    pub ratio: f64,
    pub t_max: f64,
}

impl ScenarioInfo {
    fn new(source: SourceKind, grid: &Grid, kernel: String, tg: &TimeGrid) -> Self {
        ScenarioInfo {
            seed: None,
            source,
            dim: grid.dim(),
            n: grid.shape()[0],
            h: grid.h(),
            boundary: grid.boundary(),
            kernel,
            t_min: tg.t_min,
            ratio: tg.ratio,
            t_max: tg.t_max,
        }
    }
}

/// `Λ⁻¹‖∇m_ε‖² ≤ ∫A∇m_ε·∇m_ε ≤ ∫A∇f·∇f ≤ Λ‖∇f‖²` with `m_ε` the maximum
/// over knots `t ≥ t_min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChainReport {
    pub links: [f64; 4],
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionReport {
    pub scenario: ScenarioInfo,
    pub energy_before: f64,
    pub energy_after: f64,
    /// `(ℱ(f) − ℱ(m)) / max(ℱ(f), floor)`.
    pub margin: f64,
    pub detachment_nodes: usize,
    pub subharmonic: Option<SubharmonicityReport>,
    pub chain: Option<ChainReport>,
    pub pass: bool,
    pub cause: Option<String>,
}

impl ContractionReport {
    fn failed(scenario: ScenarioInfo, cause: String) -> Self {
        ContractionReport {
            scenario,
            energy_before: f64::NAN,
            energy_after: f64::NAN,
            margin: f64::NAN,
            detachment_nodes: 0,
            subharmonic: None,
            chain: None,
            pass: false,
            cause: Some(cause),
        }
    }

    fn from_energies(scenario: ScenarioInfo, before: f64, after: f64, res: &MaximalResult) -> Self {
        let margin = (before - after) / before.max(MARGIN_FLOOR);
        ContractionReport {
            scenario,
            energy_before: before,
            energy_after: after,
            margin,
            detachment_nodes: detachment_set(res, DETACHMENT_TOL).mask.count(),
            subharmonic: None,
            chain: None,
            pass: margin >= -CONTRACTION_TOL,
            cause: None,
        }
    }
}

/// `ℱ_p(m) ≤ ℱ_p(f)` for the p-flow maximal function, plus the
/// subharmonicity report on the detachment set.
pub fn verify_pflow_contraction(
    f: &GridFunction,
    p: f64,
    timegrid: &TimeGrid,
    config: &ProximalConfig,
) -> ContractionReport {
    pflow_contraction(f, p, timegrid, config).0
}

fn pflow_contraction(
    f: &GridFunction,
    p: f64,
    timegrid: &TimeGrid,
    config: &ProximalConfig,
) -> (ContractionReport, Option<PflowExtras>) {
    let info = ScenarioInfo::new(SourceKind::PFlow, f.grid(), format!("ppower(p={p})"), timegrid);
    if !(p > 2.0) {
        return (ContractionReport::failed(info, "p must exceed 2 for PPower flows".into()), None);
    }
    if let Some(i) = f.values().iter().position(|&v| v < 0.0) {
        return (ContractionReport::failed(info, format!("negative data at node {i}")), None);
    }
    let kernel = VariationalKernel::PPower { p };
    let trace = match solve_flow(f, timegrid, &kernel, config) {
        Ok(t) => t,
        Err(e) => return (ContractionReport::failed(info, e.to_string()), None),
    };
    let source = Source::PFlow {
        kernel: kernel.clone(),
        config: *config,
    };
    let res = crate::maximal::from_states(source.kind(), f, timegrid, trace.states().to_vec());
    let mut rep = ContractionReport::from_energies(
        info,
        total_energy(f, &kernel),
        total_energy(res.maximal(), &kernel),
        &res,
    );
    let e = detachment_set(&res, DETACHMENT_TOL);
    rep.subharmonic = subharmonicity_residual(&res, &kernel, &e, ResidualScope::Detachment).ok();
    let ledger = LedgerReport::from_trace(&trace);
    (rep, Some(PflowExtras { res, trace, ledger }))
}

struct PflowExtras {
    res: MaximalResult,
    trace: crate::pflow::FlowTrace,
    ledger: LedgerReport,
}

/// `ℱ_A(m) ≤ ℱ_A(f)` for the heat or Poisson maximal function, with the
/// ellipticity chain as a secondary check. The subharmonicity report uses
/// the sup refined between knots when the spectral path is available.
pub fn verify_semigroup_contraction(
    f: &GridFunction,
    op: &EllipticOperator,
    timegrid: &TimeGrid,
    source: SourceKind,
) -> ContractionReport {
    semigroup_contraction(f, op, timegrid, source).0
}

fn semigroup_contraction(
    f: &GridFunction,
    op: &EllipticOperator,
    timegrid: &TimeGrid,
    source: SourceKind,
) -> (ContractionReport, Option<MaximalResult>) {
    let info = ScenarioInfo::new(source, f.grid(), format!("quadratic(lambda={})", op.lambda()), timegrid);
    let src = match source {
        SourceKind::Heat => Source::Heat(op.clone()),
        SourceKind::Poisson => Source::Poisson(op.clone()),
        SourceKind::PFlow => {
            return (ContractionReport::failed(info, "p-flow is not a semigroup source".into()), None)
        }
    };
    let res = match vertical_max(&src, f, timegrid) {
        Ok(r) => r,
        Err(e) => return (ContractionReport::failed(info, e.to_string()), None),
    };
    let mut rep = ContractionReport::from_energies(info, op.energy(f), op.energy(res.maximal()), &res);
    rep.chain = Some(chain(op, f, &res));
    if op.uses_spectral() {
        if let Ok(refined) = refine_sup(&src, &res) {
            let e = detachment_set(&refined, DETACHMENT_TOL);
            rep.subharmonic =
                subharmonicity_residual(&refined, &src.energy_kernel(), &e, ResidualScope::Detachment).ok();
        }
    }
    (rep, Some(res))
}

fn chain(op: &EllipticOperator, f: &GridFunction, res: &MaximalResult) -> ChainReport {
    let lambda = op.lambda();
    let mut m_eps: Option<Vec<f64>> = None;
    for u in res.states().iter().skip(1) {
        match &mut m_eps {
            None => m_eps = Some(u.values().to_vec()),
            Some(m) => m.iter_mut().zip(u.values()).for_each(|(a, &b)| *a = a.max(b)),
        }
    }
    let m_eps = GridFunction::from_vec(*f.grid(), m_eps.unwrap_or_else(|| f.values().to_vec()));
    let links = [
        gradient(&m_eps).l2_norm_sq() / lambda,
        2.0 * op.energy(&m_eps),
        2.0 * op.energy(f),
        lambda * gradient(f).l2_norm_sq(),
    ];
    let pass = links
        .windows(2)
        .all(|w| w[0] <= w[1] * (1.0 + CONTRACTION_TOL) + MARGIN_FLOOR);
    ChainReport { links, pass }
}

/// Data generator of an ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// Sums of compactly supported quartic bumps; p-flow scenarios.
    Bumps,
    /// Positive part of a random low-mode cosine series; p-flow scenarios.
    RandomFourier,
    /// Heat and Poisson scenarios on bump data, cycling through the
    /// coefficient kinds (checkerboard first).
    Checkerboard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientKind {
    Identity,
    Checkerboard,
    RandomSpd,
    RandomDiagonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub seed: u64,
    pub count: usize,
    pub generator: Generator,
    pub p_values: Vec<f64>,
    pub lambda: f64,
    pub coefficients: Vec<CoefficientKind>,
    /// Node counts per axis for 1D scenarios.
    pub sizes_1d: Vec<usize>,
    /// Node counts per axis for 2D scenarios.
    pub sizes_2d: Vec<usize>,
    /// Side length of the box.
    pub length: f64,
    pub boundary: Boundary,
    pub timegrid: TimeGrid,
    pub solver: ProximalConfig,
    /// Explicit coefficient field for semigroup scenarios; replaces the
    /// generated kinds when set. Its grid must match the single shape.
    #[serde(skip)]
    pub coefficient_field: Option<CoefficientField>,
}

impl Default for Ensemble {
    fn default() -> Self {
        Ensemble {
            seed: 0,
            count: 200,
            generator: Generator::Bumps,
            p_values: vec![2.5, 3.0, 4.0],
            lambda: 10.0,
            coefficients: vec![
                CoefficientKind::Checkerboard,
                CoefficientKind::Identity,
                CoefficientKind::RandomSpd,
            ],
            sizes_1d: vec![64, 128],
            sizes_2d: vec![32],
            length: 4.0,
            boundary: Boundary::DirichletZero,
            timegrid: TimeGrid::default_geometric(),
            solver: ProximalConfig::default(),
            coefficient_field: None,
        }
    }
}

/// Optional checks attached to ensemble rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Checks {
    pub ledger: bool,
    pub order: bool,
    pub finite_speed: bool,
    pub dissipation: bool,
    pub kernel: bool,
    pub hajlasz: bool,
    pub subharmonic: bool,
}

impl Checks {
    pub fn all() -> Self {
        Checks {
            ledger: true,
            order: true,
            finite_speed: true,
            dissipation: true,
            kernel: true,
            hajlasz: true,
            subharmonic: true,
        }
    }
}

/// One scenario of an ensemble run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleRow {
    pub report: ContractionReport,
    pub coefficients: Option<CoefficientKind>,
    pub ledger: Option<LedgerReport>,
    /// Smallest value over all knots of the flow.
    pub min_value: Option<f64>,
    pub order_margin: Option<f64>,
    /// Largest support inflation, or `None` when the support reached the
    /// edge of the box.
    pub finite_speed_radius: Option<f64>,
    pub dissipation_increase: Option<f64>,
    pub kernel_min: Option<f64>,
    pub hajlasz_ratio: Option<f64>,
    pub pass: bool,
    pub failed_checks: Vec<&'static str>,
    /// Wall-clock seconds per check; kept out of serialized rows so that
    /// artifacts stay deterministic.
    #[serde(skip)]
    pub seconds: BTreeMap<&'static str, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub rows: Vec<EnsembleRow>,
}

/// Aggregate written to `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub total: usize,
    pub pass: usize,
    pub fail: usize,
    pub worst_margin: Option<f64>,
    pub wall_time_s: Option<f64>,
    /// Failure counts per check name.
    pub failed_checks: BTreeMap<String, usize>,
    /// Seconds spent per check, when timing is enabled.
    pub check_seconds: Option<BTreeMap<String, f64>>,
    /// Execution error that stopped the run, if any.
    pub error: Option<String>,
}

impl EnsembleReport {
    pub fn summary(&self, wall_time_s: Option<f64>) -> Summary {
        let pass = self.rows.iter().filter(|r| r.pass).count();
        let worst_margin = self
            .rows
            .iter()
            .map(|r| r.report.margin)
            .filter(|m| !m.is_nan())
            .reduce(f64::min);
        let mut failed_checks = BTreeMap::new();
        for r in &self.rows {
            if !r.report.pass {
                *failed_checks.entry("contraction".to_string()).or_insert(0) += 1;
            }
            for c in &r.failed_checks {
                *failed_checks.entry(c.to_string()).or_insert(0) += 1;
            }
        }
        let check_seconds = wall_time_s.map(|_| {
            let mut m = BTreeMap::new();
            for r in &self.rows {
                for (k, v) in &r.seconds {
                    *m.entry(k.to_string()).or_insert(0.0) += v;
                }
            }
            m
        });
        Summary {
            total: self.rows.len(),
            pass,
            fail: self.rows.len() - pass,
            worst_margin,
            wall_time_s,
            failed_checks,
            check_seconds,
            error: None,
        }
    }

    pub fn to_csv(&self) -> CsvTable {
        let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
        let mut t = CsvTable::new(&[
            "seed",
            "source",
            "dim",
            "n",
            "boundary",
            "kernel",
            "coefficients",
            "energy_before",
            "energy_after",
            "margin",
            "detachment_nodes",
            "subharmonic_rel",
            "chain_pass",
            "ledger_max_increase",
            "min_value",
            "order_margin",
            "finite_speed_radius",
            "dissipation_increase",
            "kernel_min",
            "hajlasz_ratio",
            "pass",
            "cause",
        ]);
        for r in &self.rows {
            let s = &r.report.scenario;
            let cause = match (&r.report.cause, r.failed_checks.is_empty()) {
                (Some(c), _) => c.clone(),
                (None, false) => r.failed_checks.join(";"),
                (None, true) => String::new(),
            };
            t.row([
                s.seed.map(|v| v.to_string()).unwrap_or_default(),
                s.source.as_str().to_string(),
                s.dim.to_string(),
                s.n.to_string(),
                boundary_name(s.boundary).to_string(),
                s.kernel.clone(),
                r.coefficients.map(coefficient_name).unwrap_or("").to_string(),
                num(r.report.energy_before),
                num(r.report.energy_after),
                num(r.report.margin),
                r.report.detachment_nodes.to_string(),
                opt(r.report.subharmonic.map(|s| s.relative())),
                r.report.chain.map(|c| c.pass.to_string()).unwrap_or_default(),
                opt(r.ledger.map(|l| l.max_energy_increase.max(l.max_l2_increase))),
                opt(r.min_value),
                opt(r.order_margin),
                opt(r.finite_speed_radius),
                opt(r.dissipation_increase),
                opt(r.kernel_min),
                opt(r.hajlasz_ratio),
                if r.pass { "PASS" } else { "FAIL" }.to_string(),
                cause,
            ]);
        }
        t
    }

    /// Writes `ensemble.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path, wall_time_s: Option<f64>) -> Result<Summary> {
        let summary = self.summary(wall_time_s);
        self.to_csv().write(&dir.join("ensemble.csv"))?;
        write_summary(dir, &summary)?;
        Ok(summary)
    }
}

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(summary).map_err(|e| Error::Validation(e.to_string()))?;
    json.push(b'\n');
    write_atomic(&dir.join("summary.json"), &json)
}

fn boundary_name(b: Boundary) -> &'static str {
    match b {
        Boundary::Periodic => "periodic",
        Boundary::DirichletZero => "dirichlet-zero",
    }
}

fn coefficient_name(k: CoefficientKind) -> &'static str {
    match k {
        CoefficientKind::Identity => "identity",
        CoefficientKind::Checkerboard => "checkerboard",
        CoefficientKind::RandomSpd => "random-spd",
        CoefficientKind::RandomDiagonal => "random-diagonal",
    }
}

/// Sum of 1–3 quartic bumps `a (1 − r²/w²)²₊` centered in the middle half of
/// the box, radius 5–15% of the side.
pub fn bump_data(grid: Grid, rng: &mut impl Rng) -> GridFunction {
    let e = grid.extent();
    let k = rng.gen_range(1..=3);
    let bumps: Vec<([f64; 2], f64, f64)> = (0..k)
        .map(|_| {
            let c = [rng.gen_range(0.3..0.7) * e[0], rng.gen_range(0.3..0.7) * e[1]];
            (c, rng.gen_range(0.05..0.15) * e[0], rng.gen_range(0.2..1.0))
        })
        .collect();
    let dim = grid.dim();
    GridFunction::from_fn(grid, |x| {
        bumps
            .iter()
            .map(|(c, w, a)| {
                let d2 = (x[0] - c[0]).powi(2) + if dim == 2 { (x[1] - c[1]).powi(2) } else { 0.0 };
                let r2 = d2 / (w * w);
                if r2 < 1.0 {
                    a * (1.0 - r2).powi(2)
                } else {
                    0.0
                }
            })
            .sum()
    })
    .expect("finite data")
}

/// `(Σ_{|k|≤4} a_k cos(2π k·x/L + φ_k))₊` with amplitudes decaying like
/// `1/(1+|k|)`.
pub fn fourier_data(grid: Grid, rng: &mut impl Rng) -> GridFunction {
    let e = grid.extent();
    let dim = grid.dim();
    let mut modes = Vec::new();
    for kx in 0..=4i32 {
        for ky in if dim == 2 { -4..=4 } else { 0..=0 } {
            if kx == 0 && ky <= 0 {
                continue;
            }
            let a = rng.gen_range(-1.0..1.0) / (1.0 + ((kx * kx + ky * ky) as f64).sqrt());
            modes.push((kx as f64, ky as f64, a, rng.gen_range(0.0..std::f64::consts::TAU)));
        }
    }
    let offset = rng.gen_range(0.0..0.5);
    GridFunction::from_fn(grid, |x| {
        let s: f64 = modes
            .iter()
            .map(|(kx, ky, a, ph)| {
                let arg = std::f64::consts::TAU * (kx * x[0] / e[0] + if dim == 2 { ky * x[1] / e[1] } else { 0.0 });
                a * (arg + ph).cos()
            })
            .sum();
        (s + offset).max(0.0)
    })
    .expect("finite data")
}

/// Grid of a scenario: `n` nodes per axis on a box of side `length`.
fn scenario_grid(ens: &Ensemble, dim: usize, n: usize) -> Result<Grid> {
    let h = match ens.boundary {
        Boundary::Periodic => ens.length / n as f64,
        Boundary::DirichletZero => ens.length / (n + 1) as f64,
    };
    Grid::new(&vec![n; dim], h, ens.boundary)
}

/// `(dim, n)` choices of an ensemble, in order.
fn shapes(ens: &Ensemble) -> Vec<(usize, usize)> {
    ens.sizes_1d
        .iter()
        .map(|&n| (1, n))
        .chain(ens.sizes_2d.iter().map(|&n| (2, n)))
        .collect()
}

/// Per-scenario seed derived from the ensemble seed.
pub fn scenario_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

pub(crate) fn coefficient_field(kind: CoefficientKind, grid: Grid, lambda: f64, seed: u64) -> Result<CoefficientField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        CoefficientKind::Identity => Ok(CoefficientField::identity(grid)),
        CoefficientKind::Checkerboard => CoefficientField::checkerboard(grid, lambda, 4),
        CoefficientKind::RandomSpd => CoefficientField::random(grid, lambda, &mut rng),
        CoefficientKind::RandomDiagonal => CoefficientField::random_diagonal(grid, lambda, &mut rng),
    }
}

/// Runs `count` scenarios concurrently; rows come back sorted by scenario
/// index and depend only on the ensemble and `checks`.
pub fn run_ensemble(ens: &Ensemble, checks: &Checks) -> Result<EnsembleReport> {
    let shapes = shapes(ens);
    if ens.count > 0 && shapes.is_empty() {
        return Err(Error::Validation("ensemble needs at least one grid size".into()));
    }
    if matches!(ens.generator, Generator::Bumps | Generator::RandomFourier) && ens.count > 0 {
        if ens.p_values.is_empty() {
            return Err(Error::Validation("ensemble needs at least one p value".into()));
        }
        if let Some(p) = ens.p_values.iter().find(|&&p| !(p > 2.0)) {
            return Err(Error::Validation(format!("p must exceed 2 for PPower flows, got {p}")));
        }
    }
    if ens.generator == Generator::Checkerboard && ens.count > 0 && ens.coefficients.is_empty() {
        return Err(Error::Validation("ensemble needs at least one coefficient kind".into()));
    }
    ens.solver.validate()?;

    // operators are shared across scenarios so each is decomposed once
    let mut operators: BTreeMap<(usize, usize, CoefficientKind), Arc<EllipticOperator>> = BTreeMap::new();
    if ens.generator == Generator::Checkerboard {
        let keys: Vec<(usize, usize, CoefficientKind)> = (0..ens.count.min(shapes.len() * ens.coefficients.len() * 2))
            .map(|i| {
                let (dim, n) = shapes[(i / 2) % shapes.len()];
                (dim, n, ens.coefficients[(i / (2 * shapes.len())) % ens.coefficients.len()])
            })
            .collect();
        for key in keys {
            if operators.contains_key(&key) {
                continue;
            }
            let grid = scenario_grid(ens, key.0, key.1)?;
            let a = match &ens.coefficient_field {
                Some(a) => {
                    a.grid().check_same(&grid)?;
                    a.clone()
                }
                None => coefficient_field(key.2, grid, ens.lambda, ens.seed ^ ((key.1 as u64) << 8) ^ key.0 as u64)?,
            };
            operators.insert(key, Arc::new(assemble(grid, &a)?));
        }
        operators
            .values()
            .collect::<Vec<_>>()
            .par_iter()
            .for_each(|op| {
                if op.uses_spectral() {
                    let _ = op.spectral();
                }
            });
    }

    let rows: Vec<EnsembleRow> = (0..ens.count)
        .into_par_iter()
        .map(|i| {
            let seed = scenario_seed(ens.seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut row = match ens.generator {
                Generator::Bumps | Generator::RandomFourier => {
                    let (dim, n) = shapes[rng.gen_range(0..shapes.len())];
                    let p = ens.p_values[rng.gen_range(0..ens.p_values.len())];
                    pflow_row(ens, checks, dim, n, p, &mut rng)
                }
                Generator::Checkerboard => {
                    let source = if i % 2 == 0 { SourceKind::Heat } else { SourceKind::Poisson };
                    let (dim, n) = shapes[(i / 2) % shapes.len()];
                    let kind = ens.coefficients[(i / (2 * shapes.len())) % ens.coefficients.len()];
                    let op = operators[&(dim, n, kind)].clone();
                    semigroup_row(ens, checks, &op, kind, source, &mut rng)
                }
            };
            row.report.scenario.seed = Some(seed);
            row
        })
        .collect();
    Ok(EnsembleReport { rows })
}

fn empty_row(report: ContractionReport) -> EnsembleRow {
    EnsembleRow {
        pass: report.pass,
        report,
        coefficients: None,
        ledger: None,
        min_value: None,
        order_margin: None,
        finite_speed_radius: None,
        dissipation_increase: None,
        kernel_min: None,
        hajlasz_ratio: None,
        failed_checks: Vec::new(),
        seconds: BTreeMap::new(),
    }
}

fn timed<T>(row: &mut EnsembleRow, name: &'static str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *row.seconds.entry(name).or_insert(0.0) += start.elapsed().as_secs_f64();
    out
}

fn fail(row: &mut EnsembleRow, name: &'static str) {
    row.pass = false;
    row.failed_checks.push(name);
}

fn pflow_row(ens: &Ensemble, checks: &Checks, dim: usize, n: usize, p: f64, rng: &mut ChaCha8Rng) -> EnsembleRow {
    let grid = match scenario_grid(ens, dim, n) {
        Ok(g) => g,
        Err(e) => {
            let info = ScenarioInfo::new(SourceKind::PFlow, &Grid::line(1, 1.0, ens.boundary).unwrap(), format!("ppower(p={p})"), &ens.timegrid);
            return empty_row(ContractionReport::failed(info, e.to_string()));
        }
    };
    let f = match ens.generator {
        Generator::RandomFourier => fourier_data(grid, rng),
        _ => bump_data(grid, rng),
    };
    let start = Instant::now();
    let (report, extras) = pflow_contraction(&f, p, &ens.timegrid, &ens.solver);
    let elapsed = start.elapsed().as_secs_f64();
    let mut row = empty_row(report);
    row.seconds.insert("contraction", elapsed);
    let Some(x) = extras else { return row };
    row.min_value = Some(x.ledger.min_value);
    if checks.ledger {
        row.ledger = Some(x.ledger);
        let l = x.ledger;
        if !(l.max_energy_increase <= LEDGER_SLACK && l.max_l2_increase <= LEDGER_SLACK) {
            fail(&mut row, "ledger");
        }
        if l.min_value < -LEDGER_SLACK {
            fail(&mut row, "positivity");
        }
    }
    if checks.subharmonic {
        if let Some(s) = row.report.subharmonic {
            if !s.pass {
                fail(&mut row, "subharmonic");
            }
        }
    }
    if checks.order {
        // g = f + extra bumps ≥ f
        let extra = bump_data(grid, rng).scale(0.5);
        let g = f.add_scaled(1.0, &extra);
        let kernel = VariationalKernel::PPower { p };
        let res = timed(&mut row, "order", || solve_flow(&g, &ens.timegrid, &kernel, &ens.solver));
        match res {
            Ok(tg) => {
                let o = order_margin(&x.trace, &tg, LEDGER_SLACK / 10.0);
                row.order_margin = Some(o.margin);
                if o.margin < -LEDGER_SLACK {
                    fail(&mut row, "order");
                }
            }
            Err(_) => fail(&mut row, "order"),
        }
    }
    if checks.finite_speed {
        let support = RegionMask::from_fn(grid, |k| f.values()[k] > 0.0);
        match timed(&mut row, "finite_speed", || check_finite_speed(&x.trace, &support, 1e-8)) {
            Ok(r) => row.finite_speed_radius = r.radii.iter().copied().reduce(f64::max),
            Err(Error::DomainTooSmall { .. }) => row.finite_speed_radius = None,
            Err(_) => fail(&mut row, "finite_speed"),
        }
    }
    if checks.hajlasz && grid.node_count() <= crate::maximal::HAJLASZ_MAX_NODES {
        match timed(&mut row, "hajlasz", || hajlasz_bound(&x.res, ens.timegrid.t_min)) {
            Ok(h) => {
                row.hajlasz_ratio = Some(h.max_ratio);
                if !h.pass {
                    fail(&mut row, "hajlasz");
                }
            }
            Err(_) => fail(&mut row, "hajlasz"),
        }
    }
    row
}

fn semigroup_row(
    ens: &Ensemble,
    checks: &Checks,
    op: &EllipticOperator,
    kind: CoefficientKind,
    source: SourceKind,
    rng: &mut ChaCha8Rng,
) -> EnsembleRow {
    let grid = *op.grid();
    let f = bump_data(grid, rng);
    let start = Instant::now();
    let (report, res) = semigroup_contraction(&f, op, &ens.timegrid, source);
    let elapsed = start.elapsed().as_secs_f64();
    let mut row = empty_row(report);
    row.coefficients = Some(kind);
    row.seconds.insert("contraction", elapsed);
    let Some(res) = res else { return row };
    if let Some(c) = row.report.chain {
        if !c.pass {
            fail(&mut row, "chain");
        }
    }
    row.min_value = Some(res.states().iter().map(|u| u.min()).fold(f64::INFINITY, f64::min));
    if checks.subharmonic {
        if let Some(s) = row.report.subharmonic {
            if !s.pass {
                fail(&mut row, "subharmonic");
            }
        }
    }
    if checks.dissipation {
        match timed(&mut row, "dissipation", || dissipation_check(op, &f, &ens.timegrid)) {
            Ok(d) => {
                row.dissipation_increase = Some(d.max_increase);
                if !d.pass {
                    fail(&mut row, "dissipation");
                }
            }
            Err(_) => fail(&mut row, "dissipation"),
        }
    }
    if checks.kernel {
        let times: Vec<f64> = [1.0, 4.0, 16.0, 64.0]
            .iter()
            .map(|s| s * grid.h() * grid.h())
            .filter(|&t| t <= 1.0)
            .collect();
        let ys = [grid.node_count() / 2];
        let cert = timed(&mut row, "kernel", || {
            calibrate_gaussian(grid, op.lambda(), &times).and_then(|c| kernel_certificate(op, &times, &ys, c))
        });
        match cert {
            Ok(c) => {
                row.kernel_min = Some(c.min_value());
                if !c.passes(grid.boundary() == Boundary::Periodic) {
                    fail(&mut row, "kernel");
                }
            }
            Err(_) => fail(&mut row, "kernel"),
        }
    }
    if checks.hajlasz && grid.node_count() <= crate::maximal::HAJLASZ_MAX_NODES {
        match timed(&mut row, "hajlasz", || hajlasz_bound(&res, ens.timegrid.t_min)) {
            Ok(h) => {
                row.hajlasz_ratio = Some(h.max_ratio);
                if !h.pass {
                    fail(&mut row, "hajlasz");
                }
            }
            Err(_) => fail(&mut row, "hajlasz"),
        }
    }
    row
}

/// Runs `f` on a pool sized by `GRADFLOW_THREADS` when set.
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var("GRADFLOW_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| Error::Parse {
                context: "GRADFLOW_THREADS".into(),
                message: format!("expected a positive integer, got {v:?}"),
            })?;
            if n == 0 {
                return Err(Error::Validation("GRADFLOW_THREADS must be at least 1".into()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Validation(e.to_string()))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}
