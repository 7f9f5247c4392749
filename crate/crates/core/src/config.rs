//! Run configuration and command execution for the `gradflow` binary.
//!
//! A configuration is assembled in four layers, later layers winning:
//! built-in defaults, a named preset, a TOML file, and `--section-key value`
//! flags. Unknown keys are errors at every layer.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{total_energy, CoefficientField, RegionMask, VariationalKernel};
use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid};
use crate::maximal::{detachment_set, from_states, DETACHMENT_TOL};
use crate::output::write_atomic;
use crate::pflow::{check_finite_speed, solve_flow, LedgerReport, ProximalConfig, TimeGrid};
use crate::semigroup::{assemble, calibrate_gaussian, kernel_certificate};
use crate::verify::{
    bump_data, fourier_data, run_ensemble, scenario_seed, with_thread_pool, write_summary, Checks,
    CoefficientKind, Ensemble, Generator, Summary, CONTRACTION_TOL, LEDGER_SLACK, MARGIN_FLOOR,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// One flow from generated data: trace, maximal function, ledgers.
    RunFlow,
    /// Ensemble on the configured grid and kernel.
    Verify,
    /// Heat-kernel certificate of the configured operator.
    KernelCheck,
    /// Ensemble across the configured grid sizes and exponents.
    Sweep,
}

impl Command {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "run-flow" => Ok(Command::RunFlow),
            "verify" => Ok(Command::Verify),
            "kernel-check" => Ok(Command::KernelCheck),
            "sweep" => Ok(Command::Sweep),
            other => Err(Error::Parse {
                context: "command".into(),
                message: format!("unknown command {other:?}; expected run-flow, verify, kernel-check or sweep"),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    PPower,
    Quadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckName {
    Ledger,
    Order,
    FiniteSpeed,
    Dissipation,
    Kernel,
    Hajlasz,
    Subharmonic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
    pub h: f64,
    pub boundary: Boundary,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            dim: 1,
            n: 128,
            h: 0.03125,
            boundary: Boundary::DirichletZero,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub kind: KernelKind,
    pub p: f64,
    pub lambda: f64,
    /// Generated field used when no file is given.
    pub coefficients: CoefficientKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficient_file: Option<PathBuf>,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            kind: KernelKind::PPower,
            p: 4.0,
            lambda: 10.0,
            coefficients: CoefficientKind::Identity,
            coefficient_file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub t_min: f64,
    pub ratio: f64,
    pub t_max: f64,
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection {
            t_min: 1e-4,
            ratio: 1.25,
            t_max: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub damping: f64,
    pub delta: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let c = ProximalConfig::default();
        SolverSection {
            newton_tol: c.newton_tol,
            max_newton_iters: c.max_newton_iters,
            damping: c.damping,
            delta: c.delta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub seed: u64,
    pub count: usize,
    pub generator: Generator,
    /// Exponents drawn by `sweep`.
    pub p_values: Vec<f64>,
    /// Node counts drawn by `sweep`.
    pub sizes_1d: Vec<usize>,
    pub sizes_2d: Vec<usize>,
    /// Box side length used by `sweep`.
    pub length: f64,
    /// Coefficient kinds cycled by checkerboard-generator sweeps.
    pub coefficients: Vec<CoefficientKind>,
    pub checks: Vec<CheckName>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        let e = Ensemble::default();
        EnsembleSection {
            seed: 0,
            count: e.count,
            generator: e.generator,
            p_values: e.p_values,
            sizes_1d: e.sizes_1d,
            sizes_2d: e.sizes_2d,
            length: e.length,
            coefficients: e.coefficients,
            checks: vec![CheckName::Ledger],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
    /// Record wall-clock times in `summary.json`; off by default so that
    /// artifacts are byte-identical across runs.
    pub timing: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: PathBuf::from("gradflow-out"),
            formats: vec![Format::Csv, Format::Json],
            timing: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub grid: GridSection,
    pub kernel: KernelSection,
    pub time: TimeSection,
    pub solver: SolverSection,
    pub ensemble: EnsembleSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Command::Verify,
            grid: GridSection::default(),
            kernel: KernelSection::default(),
            time: TimeSection::default(),
            solver: SolverSection::default(),
            ensemble: EnsembleSection::default(),
            output: OutputSection::default(),
        }
    }
}

const SECTIONS: [&str; 6] = ["grid", "kernel", "time", "solver", "ensemble", "output"];

/// Keys that may be set but have no default value.
const OPTIONAL_KEYS: [(&str, &str); 1] = [("kernel", "coefficient_file")];

/// Built-in scenario presets.
pub const PRESETS: [(&str, &str); 5] = [
    (
        "theorem1-smoke",
        r#"
command = "verify"
[grid]
dim = 1
n = 32
h = 0.125
[kernel]
kind = "p-power"
p = 4.0
[ensemble]
count = 5
checks = ["ledger", "order", "subharmonic", "hajlasz"]
"#,
    ),
    (
        "theorem2-smoke",
        r#"
command = "verify"
[grid]
dim = 1
n = 64
h = 0.0625
[kernel]
kind = "quadratic"
coefficients = "checkerboard"
lambda = 10.0
[ensemble]
count = 6
checks = ["dissipation", "subharmonic", "hajlasz"]
"#,
    ),
    (
        "kernel-identity",
        r#"
command = "kernel-check"
[grid]
dim = 1
n = 64
h = 0.125
boundary = "periodic"
[kernel]
kind = "quadratic"
coefficients = "identity"
lambda = 1.0
"#,
    ),
    (
        "finite-speed",
        r#"
command = "run-flow"
[grid]
dim = 1
n = 255
h = 0.03125
[kernel]
kind = "p-power"
p = 4.0
[time]
t_min = 1e-4
ratio = 1.25
t_max = 1.0
"#,
    ),
    (
        "default-ensemble",
        r#"
command = "sweep"
[ensemble]
seed = 42
"#,
    ),
];

impl RunConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Validation(format!("configuration does not serialize: {e}")))
    }

    pub fn from_toml(text: &str, source: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(&e, text, source))
    }

    pub fn timegrid(&self) -> Result<TimeGrid> {
        TimeGrid::geometric(self.time.t_min, self.time.ratio, self.time.t_max)
    }

    pub fn solver(&self) -> ProximalConfig {
        ProximalConfig {
            newton_tol: self.solver.newton_tol,
            max_newton_iters: self.solver.max_newton_iters,
            damping: self.solver.damping,
            delta: self.solver.delta,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(&vec![self.grid.n; self.grid.dim], self.grid.h, self.grid.boundary)
    }

    pub fn checks(&self) -> Checks {
        let mut c = Checks::default();
        for name in &self.ensemble.checks {
            match name {
                CheckName::Ledger => c.ledger = true,
                CheckName::Order => c.order = true,
                CheckName::FiniteSpeed => c.finite_speed = true,
                CheckName::Dissipation => c.dissipation = true,
                CheckName::Kernel => c.kernel = true,
                CheckName::Hajlasz => c.hajlasz = true,
                CheckName::Subharmonic => c.subharmonic = true,
            }
        }
        c
    }

    /// Checks every documented invariant of the configuration.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.dim == 1 || g.dim == 2) {
            return Err(Error::Validation(format!("grid.dim must be 1 or 2, got {}", g.dim)));
        }
        if g.n == 0 {
            return Err(Error::Validation("grid.n must be at least 1".into()));
        }
        if !(g.h.is_finite() && g.h > 0.0) {
            return Err(Error::Validation(format!("grid.h must be positive, got {}", g.h)));
        }
        let k = &self.kernel;
        let flows = self.command != Command::KernelCheck;
        if k.kind == KernelKind::PPower && flows && !(k.p > 2.0) {
            return Err(Error::Validation(format!("p must exceed 2 for PPower flows (got p = {})", k.p)));
        }
        if !(k.lambda.is_finite() && k.lambda >= 1.0) {
            return Err(Error::Validation(format!("kernel.lambda must be >= 1, got {}", k.lambda)));
        }
        self.timegrid()?;
        self.solver().validate()?;
        let e = &self.ensemble;
        // TOML integers are signed 64-bit
        if i64::try_from(e.seed).is_err() {
            return Err(Error::Validation(format!("ensemble.seed must be at most {}, got {}", i64::MAX, e.seed)));
        }
        if self.command == Command::Sweep && matches!(e.generator, Generator::Bumps | Generator::RandomFourier) {
            if e.p_values.is_empty() {
                return Err(Error::Validation("ensemble.p_values must not be empty".into()));
            }
            if let Some(p) = e.p_values.iter().find(|&&p| !(p > 2.0)) {
                return Err(Error::Validation(format!("p must exceed 2 for PPower flows (got p = {p})")));
            }
        }
        if self.command == Command::Sweep && e.sizes_1d.is_empty() && e.sizes_2d.is_empty() {
            return Err(Error::Validation("ensemble needs at least one grid size".into()));
        }
        if e.sizes_1d.iter().chain(&e.sizes_2d).any(|&n| n == 0) {
            return Err(Error::Validation("ensemble grid sizes must be positive".into()));
        }
        if !(e.length.is_finite() && e.length > 0.0) {
            return Err(Error::Validation(format!("ensemble.length must be positive, got {}", e.length)));
        }
        if self.command == Command::Sweep && e.generator == Generator::Checkerboard && e.coefficients.is_empty() {
            return Err(Error::Validation("ensemble.coefficients must not be empty".into()));
        }
        Ok(())
    }
}

fn toml_error(e: &toml::de::Error, text: &str, source: &str) -> Error {
    let context = match e.span() {
        Some(span) => format!("{source}:{}", text[..span.start.min(text.len())].matches('\n').count() + 1),
        None => source.to_string(),
    };
    Error::Parse {
        context,
        message: e.message().trim().to_string(),
    }
}

fn preset_table(name: &str) -> Result<toml::Table> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Parse {
            context: "--preset".into(),
            message: format!(
                "unknown preset {name:?}; available: {}",
                PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
            ),
        })?;
    text.parse::<toml::Table>()
        .map_err(|e| toml_error(&e, text, &format!("preset {name}")))
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// A `--section-key value` override, already split.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub flag: String,
    pub value: String,
}

/// Splits raw arguments into overrides; accepts `--key value` and
/// `--key=value`.
pub fn parse_overrides(args: &[String]) -> Result<Vec<Override>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            return Err(Error::Parse {
                context: a.clone(),
                message: "expected a --section-key flag".into(),
            });
        };
        let (flag, value) = match body.split_once('=') {
            Some((f, v)) => (f.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| Error::Parse {
                    context: a.clone(),
                    message: "missing value".into(),
                })?;
                (body.to_string(), v.clone())
            }
        };
        out.push(Override { flag, value });
    }
    Ok(out)
}

/// Resolves a flag name to `(section, key)`. `--section-key` is the
/// canonical form; a bare `--key` is accepted when exactly one section
/// has that key.
fn resolve_flag(defaults: &toml::Table, flag: &str) -> Result<(String, String)> {
    let has = |section: &str, key: &str| {
        defaults
            .get(section)
            .and_then(|s| s.as_table())
            .is_some_and(|t| t.contains_key(key))
            || OPTIONAL_KEYS.contains(&(section, key))
    };
    for s in SECTIONS {
        if let Some(rest) = flag.strip_prefix(s).and_then(|r| r.strip_prefix('-')) {
            let key = rest.replace('-', "_");
            if has(s, &key) {
                return Ok((s.to_string(), key));
            }
        }
    }
    let key = flag.replace('-', "_");
    let matches: Vec<&str> = SECTIONS.iter().copied().filter(|s| has(s, &key)).collect();
    match matches.as_slice() {
        [s] => Ok((s.to_string(), key)),
        [] => Err(Error::Parse {
            context: format!("--{flag}"),
            message: "unknown option".into(),
        }),
        many => Err(Error::Parse {
            context: format!("--{flag}"),
            message: format!("ambiguous; use one of {}", many.iter().map(|s| format!("--{s}-{flag}")).collect::<Vec<_>>().join(", ")),
        }),
    }
}

/// Converts a flag value to the TOML type of the key's default.
fn flag_value(template: Option<&toml::Value>, raw: &str, flag: &str) -> Result<toml::Value> {
    let bad = |what: &str| Error::Parse {
        context: format!("--{flag}"),
        message: format!("expected {what}, got {raw:?}"),
    };
    let scalar = |template: Option<&toml::Value>, raw: &str| -> Result<toml::Value> {
        let raw = raw.trim();
        Ok(match template {
            Some(toml::Value::Integer(_)) => toml::Value::Integer(raw.parse().map_err(|_| bad("an integer"))?),
            Some(toml::Value::Float(_)) => toml::Value::Float(raw.parse().map_err(|_| bad("a number"))?),
            Some(toml::Value::Boolean(_)) => toml::Value::Boolean(raw.parse().map_err(|_| bad("true or false"))?),
            _ => toml::Value::String(raw.to_string()),
        })
    };
    match template {
        Some(toml::Value::Array(items)) => {
            // element type from the default list, or from a sibling default
            let elem = items.first();
            if raw.trim().is_empty() {
                return Ok(toml::Value::Array(Vec::new()));
            }
            raw.split(',')
                .map(|part| scalar(elem, part))
                .collect::<Result<Vec<_>>>()
                .map(toml::Value::Array)
        }
        t => scalar(t, raw),
    }
}

/// Builds and validates the effective configuration:
/// defaults < preset < file < flags.
pub fn parse_config(
    command: Option<Command>,
    file: Option<&Path>,
    preset: Option<&str>,
    overrides: &[Override],
) -> Result<RunConfig> {
    let cfg = build_config(command, file, preset, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Merges the layers without validating the result; [`execute`] validates
/// and reports failures through `summary.json`.
pub fn build_config(
    command: Option<Command>,
    file: Option<&Path>,
    preset: Option<&str>,
    overrides: &[Override],
) -> Result<RunConfig> {
    let defaults = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
    let mut table = defaults.clone();
    if let Some(name) = preset {
        merge(&mut table, preset_table(name)?);
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let source = path.display().to_string();
        // typed parse first so unknown keys and type errors carry line numbers
        RunConfig::from_toml(&text, &source)?;
        let t = text.parse::<toml::Table>().map_err(|e| toml_error(&e, &text, &source))?;
        merge(&mut table, t);
    }
    for o in overrides {
        let (section, key) = resolve_flag(&defaults, &o.flag)?;
        let template = defaults.get(&section).and_then(|s| s.as_table()).and_then(|t| t.get(&key));
        let mut v = flag_value(template, &o.value, &o.flag)?;
        // integers are accepted where floats are expected and vice versa
        if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (template, &v) {
            v = toml::Value::Float(*i as f64);
        }
        table
            .entry(section)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .expect("sections are tables")
            .insert(key, v);
    }
    if let Some(c) = command {
        table.insert(
            "command".into(),
            toml::Value::try_from(c).expect("command serializes"),
        );
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Parse {
        context: "configuration".into(),
        message: e.message().trim().to_string(),
    })
}

fn coefficient_field(cfg: &RunConfig, grid: Grid) -> Result<CoefficientField> {
    match &cfg.kernel.coefficient_file {
        Some(path) => CoefficientField::read(path, grid, Some(cfg.kernel.lambda)),
        None => crate::verify::coefficient_field(cfg.kernel.coefficients, grid, cfg.kernel.lambda, cfg.ensemble.seed),
    }
}

fn wants(cfg: &RunConfig, f: Format) -> bool {
    cfg.output.formats.contains(&f)
}

/// Runs the configured command; returns the process exit status
/// (0 all PASS, 1 any FAIL, 2 error). `summary.json` is written in every
/// case where the output directory is writable.
pub fn execute(cfg: &RunConfig) -> i32 {
    let start = Instant::now();
    let dir = cfg.output.directory.clone();
    match with_thread_pool(|| run(cfg)).and_then(|r| r) {
        Ok(mut summary) => {
            summary.wall_time_s = cfg.output.timing.then(|| start.elapsed().as_secs_f64());
            if !cfg.output.timing {
                summary.check_seconds = None;
            }
            if let Err(e) = write_summary(&dir, &summary) {
                eprintln!("gradflow: {e}");
                return 2;
            }
            i32::from(summary.fail > 0)
        }
        Err(e) => {
            eprintln!("gradflow: {e}");
            let summary = Summary {
                total: 0,
                pass: 0,
                fail: 0,
                worst_margin: None,
                wall_time_s: cfg.output.timing.then(|| start.elapsed().as_secs_f64()),
                failed_checks: BTreeMap::new(),
                check_seconds: None,
                error: Some(e.to_string()),
            };
            if let Err(e2) = write_summary(&dir, &summary) {
                eprintln!("gradflow: {e2}");
            }
            2
        }
    }
}

fn run(cfg: &RunConfig) -> Result<Summary> {
    cfg.validate()?;
    let dir = &cfg.output.directory;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = match cfg.command {
        Command::RunFlow => run_flow(cfg)?,
        Command::Verify => {
            let grid = cfg.grid()?;
            let mut ens = Ensemble {
                seed: cfg.ensemble.seed,
                count: cfg.ensemble.count,
                generator: cfg.ensemble.generator,
                p_values: vec![cfg.kernel.p],
                lambda: cfg.kernel.lambda,
                coefficients: vec![cfg.kernel.coefficients],
                sizes_1d: if grid.dim() == 1 { vec![cfg.grid.n] } else { vec![] },
                sizes_2d: if grid.dim() == 2 { vec![cfg.grid.n] } else { vec![] },
                length: grid.extent()[0] + match grid.boundary() {
                    Boundary::Periodic => 0.0,
                    Boundary::DirichletZero => grid.h(),
                },
                boundary: grid.boundary(),
                timegrid: cfg.timegrid()?,
                solver: cfg.solver(),
                coefficient_field: None,
            };
            if cfg.kernel.kind == KernelKind::Quadratic {
                ens.generator = Generator::Checkerboard;
                if cfg.kernel.coefficient_file.is_some() {
                    ens.coefficient_field = Some(coefficient_field(cfg, grid)?);
                }
            }
            ensemble_artifacts(cfg, &ens)?
        }
        Command::Sweep => {
            let ens = Ensemble {
                seed: cfg.ensemble.seed,
                count: cfg.ensemble.count,
                generator: cfg.ensemble.generator,
                p_values: cfg.ensemble.p_values.clone(),
                lambda: cfg.kernel.lambda,
                coefficients: cfg.ensemble.coefficients.clone(),
                sizes_1d: cfg.ensemble.sizes_1d.clone(),
                sizes_2d: cfg.ensemble.sizes_2d.clone(),
                length: cfg.ensemble.length,
                boundary: cfg.grid.boundary,
                timegrid: cfg.timegrid()?,
                solver: cfg.solver(),
                coefficient_field: None,
            };
            ensemble_artifacts(cfg, &ens)?
        }
        Command::KernelCheck => kernel_check(cfg)?,
    };
    write_atomic(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    Ok(summary)
}

fn ensemble_artifacts(cfg: &RunConfig, ens: &Ensemble) -> Result<Summary> {
    let report = run_ensemble(ens, &cfg.checks())?;
    if wants(cfg, Format::Csv) {
        report.to_csv().write(&cfg.output.directory.join("ensemble.csv"))?;
    }
    if wants(cfg, Format::Json) {
        let mut json = serde_json::to_vec_pretty(&report.rows).map_err(|e| Error::Validation(e.to_string()))?;
        json.push(b'\n');
        write_atomic(&cfg.output.directory.join("ensemble.json"), &json)?;
    }
    Ok(report.summary(cfg.output.timing.then_some(0.0)))
}

fn run_flow(cfg: &RunConfig) -> Result<Summary> {
    let grid = cfg.grid()?;
    let kernel = match cfg.kernel.kind {
        KernelKind::PPower => VariationalKernel::p_power(cfg.kernel.p)?,
        KernelKind::Quadratic => VariationalKernel::Quadratic(coefficient_field(cfg, grid)?),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed(cfg.ensemble.seed, 0));
    let f = match cfg.ensemble.generator {
        Generator::RandomFourier => fourier_data(grid, &mut rng),
        _ => bump_data(grid, &mut rng),
    };
    let tg = cfg.timegrid()?;
    let trace = solve_flow(&f, &tg, &kernel, &cfg.solver())?;
    let res = from_states(crate::maximal::SourceKind::PFlow, &f, &tg, trace.states().to_vec());
    let e = detachment_set(&res, DETACHMENT_TOL);
    let before = total_energy(&f, &kernel);
    let margin = (before - total_energy(res.maximal(), &kernel)) / before.max(MARGIN_FLOOR);
    let ledger = LedgerReport::from_trace(&trace);

    let mut failed_checks = BTreeMap::new();
    if margin < -CONTRACTION_TOL {
        failed_checks.insert("contraction".to_string(), 1);
    }
    if !(ledger.max_energy_increase <= LEDGER_SLACK && ledger.max_l2_increase <= LEDGER_SLACK) {
        failed_checks.insert("ledger".to_string(), 1);
    }
    if ledger.min_value < -LEDGER_SLACK {
        failed_checks.insert("positivity".to_string(), 1);
    }
    if cfg.checks().finite_speed && !kernel.is_linear() {
        let support = RegionMask::from_fn(grid, |k| f.values()[k] > 0.0);
        if let Err(err) = check_finite_speed(&trace, &support, 1e-8) {
            if !matches!(err, Error::DomainTooSmall { .. }) {
                return Err(err);
            }
            failed_checks.insert("finite_speed".to_string(), 1);
        }
    }
    if wants(cfg, Format::Csv) {
        trace.to_csv(1e-8).write(&cfg.output.directory.join("flow.csv"))?;
        res.to_csv(&e).write(&cfg.output.directory.join("maximal.csv"))?;
    }
    let fail = usize::from(!failed_checks.is_empty());
    Ok(Summary {
        total: 1,
        pass: 1 - fail,
        fail,
        worst_margin: Some(margin),
        wall_time_s: None,
        failed_checks,
        check_seconds: None,
        error: None,
    })
}

fn kernel_check(cfg: &RunConfig) -> Result<Summary> {
    let grid = cfg.grid()?;
    let a = match cfg.kernel.kind {
        KernelKind::Quadratic => coefficient_field(cfg, grid)?,
        KernelKind::PPower => CoefficientField::identity(grid),
    };
    let op = assemble(grid, &a)?;
    let h2 = grid.h() * grid.h();
    let mut times: Vec<f64> = (0..).map(|k| h2 * 4f64.powi(k)).take_while(|&t| t < 1.0).collect();
    times.push(1.0);
    let n = grid.node_count();
    let ys: Vec<usize> = [0, n / 3, n / 2, (2 * n) / 3]
        .into_iter()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let constants = calibrate_gaussian(grid, op.lambda(), &times)?;
    let cert = kernel_certificate(&op, &times, &ys, constants)?;
    if wants(cfg, Format::Csv) {
        cert.to_csv().write(&cfg.output.directory.join("kernel.csv"))?;
    }
    let pass = cert.passes(grid.boundary() == Boundary::Periodic);
    let mut failed_checks = BTreeMap::new();
    if !pass {
        failed_checks.insert("kernel".to_string(), 1);
    }
    Ok(Summary {
        total: 1,
        pass: usize::from(pass),
        fail: usize::from(!pass),
        worst_margin: None,
        wall_time_s: None,
        failed_checks,
        check_seconds: None,
        error: None,
    })
}
