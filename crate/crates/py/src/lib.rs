//! Python bindings: grids, kernels, flows, vertical maximal functions and
//! the command runner. Grid functions cross the boundary as flat lists of
//! floats in node order.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gradflow::config::{build_config, execute, Command, Override};
use gradflow::energy::total_energy;
use gradflow::maximal::{detachment_set, hajlasz_bound, refine_sup, vertical_max as vmax, DETACHMENT_TOL};
use gradflow::semigroup::assemble;
use gradflow::verify::{bump_data as bumps, verify_pflow_contraction as contraction};
use gradflow::{
    Boundary, CoefficientField, Error, FlowTrace, Grid, GridFunction, MaximalResult, ProximalConfig, Source,
    TimeGrid, VariationalKernel,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn boundary(name: &str) -> PyResult<Boundary> {
    match name {
        "dirichlet-zero" | "dirichlet" => Ok(Boundary::DirichletZero),
        "periodic" => Ok(Boundary::Periodic),
        _ => Err(PyValueError::new_err(format!(
            "unknown boundary {name:?}; expected \"dirichlet-zero\" or \"periodic\""
        ))),
    }
}

#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyGrid(Grid);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (shape, h, boundary = "dirichlet-zero"))]
    fn new(shape: Vec<usize>, h: f64, boundary: &str) -> PyResult<Self> {
        Ok(PyGrid(Grid::new(&shape, h, self::boundary(boundary)?).map_err(to_py)?))
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.0.h()
    }

    #[getter]
    fn boundary(&self) -> &'static str {
        match self.0.boundary() {
            Boundary::DirichletZero => "dirichlet-zero",
            Boundary::Periodic => "periodic",
        }
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.0.node_count()
    }

    /// Node coordinates, one list per node.
    fn positions(&self) -> Vec<Vec<f64>> {
        (0..self.0.node_count())
            .map(|n| self.0.position(n)[..self.0.dim()].to_vec())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Grid(shape={:?}, h={}, boundary={:?})", self.0.shape(), self.0.h(), self.boundary())
    }
}

impl PyGrid {
    fn function(&self, values: Vec<f64>) -> PyResult<GridFunction> {
        GridFunction::new(self.0, values).map_err(to_py)
    }
}

#[pyclass(name = "TimeGrid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTimeGrid(TimeGrid);

#[pymethods]
impl PyTimeGrid {
    /// Knots `0, t_min, t_min·ratio, …`, with `t_max` as the last knot.
    #[staticmethod]
    #[pyo3(signature = (t_min = 1e-4, ratio = 1.25, t_max = 10.0))]
    fn geometric(t_min: f64, ratio: f64, t_max: f64) -> PyResult<Self> {
        Ok(PyTimeGrid(TimeGrid::geometric(t_min, ratio, t_max).map_err(to_py)?))
    }

    #[staticmethod]
    fn uniform(dt: f64, t_max: f64) -> PyResult<Self> {
        Ok(PyTimeGrid(TimeGrid::uniform(dt, t_max).map_err(to_py)?))
    }

    #[getter]
    fn knots(&self) -> Vec<f64> {
        self.0.knots().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "Kernel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyKernel(VariationalKernel);

#[pymethods]
impl PyKernel {
    /// `F(ξ) = |ξ|^p / p`.
    #[staticmethod]
    fn p_power(p: f64) -> PyResult<Self> {
        Ok(PyKernel(VariationalKernel::p_power(p).map_err(to_py)?))
    }

    /// `F(x, ξ) = ½ A(x)ξ·ξ` with a generated coefficient field:
    /// `"identity"`, `"checkerboard"`, `"random-spd"` or `"random-diagonal"`.
    #[staticmethod]
    #[pyo3(signature = (grid, coefficients = "identity", lambda_ = 10.0, seed = 0))]
    fn quadratic(grid: &PyGrid, coefficients: &str, lambda_: f64, seed: u64) -> PyResult<Self> {
        let g = grid.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = match coefficients {
            "identity" => Ok(CoefficientField::identity(g)),
            "checkerboard" => CoefficientField::checkerboard(g, lambda_, 4),
            "random-spd" => CoefficientField::random(g, lambda_, &mut rng),
            "random-diagonal" => CoefficientField::random_diagonal(g, lambda_, &mut rng),
            other => return Err(PyValueError::new_err(format!("unknown coefficient kind {other:?}"))),
        }
        .map_err(to_py)?;
        Ok(PyKernel(VariationalKernel::Quadratic(a)))
    }

    /// Quadratic kernel with coefficients read from a text file.
    #[staticmethod]
    #[pyo3(signature = (grid, path, lambda_ = None))]
    fn from_file(grid: &PyGrid, path: std::path::PathBuf, lambda_: Option<f64>) -> PyResult<Self> {
        let a = CoefficientField::read(&path, grid.0, lambda_).map_err(to_py)?;
        Ok(PyKernel(VariationalKernel::Quadratic(a)))
    }

    fn energy(&self, grid: &PyGrid, u: Vec<f64>) -> PyResult<f64> {
        Ok(total_energy(&grid.function(u)?, &self.0))
    }

    fn __repr__(&self) -> String {
        format!("Kernel({})", self.0.label())
    }
}

#[pyclass(name = "FlowTrace", frozen)]
struct PyFlowTrace(FlowTrace);

#[pymethods]
impl PyFlowTrace {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.timegrid().knots().to_vec()
    }

    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        self.0.states().iter().map(|s| s.values().to_vec()).collect()
    }

    /// `(t, energy, l2_norm_sq)` per knot.
    fn ledger(&self) -> Vec<(f64, f64, f64)> {
        self.0.ledger().iter().map(|e| (e.t, e.energy, e.l2_norm_sq)).collect()
    }

    /// The trace as CSV text.
    #[pyo3(signature = (threshold = 1e-8))]
    fn to_csv(&self, threshold: f64) -> PyResult<String> {
        String::from_utf8(self.0.to_csv(threshold).into_bytes()).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

#[pyclass(name = "MaximalResult", frozen)]
struct PyMaximal(MaximalResult);

#[pymethods]
impl PyMaximal {
    #[getter]
    fn source(&self) -> &'static str {
        self.0.source().as_str()
    }

    #[getter]
    fn maximal(&self) -> Vec<f64> {
        self.0.maximal().values().to_vec()
    }

    #[getter]
    fn argmax_t(&self) -> Vec<f64> {
        self.0.argmax_t().to_vec()
    }

    /// Nodes where the maximal function exceeds the data by more than `tol`.
    #[pyo3(signature = (tol = DETACHMENT_TOL))]
    fn detachment(&self, tol: f64) -> Vec<bool> {
        detachment_set(&self.0, tol).mask.mask().to_vec()
    }

    /// Largest all-pairs Hajłasz ratio of the truncated maximal function.
    fn hajlasz_ratio(&self, eps: f64) -> PyResult<f64> {
        Ok(hajlasz_bound(&self.0, eps).map_err(to_py)?.max_ratio)
    }
}

/// Solves the gradient flow of `kernel` from `f` on the knots of `timegrid`.
#[pyfunction]
fn solve_flow(grid: &PyGrid, f: Vec<f64>, kernel: &PyKernel, timegrid: &PyTimeGrid) -> PyResult<PyFlowTrace> {
    let f = grid.function(f)?;
    Ok(PyFlowTrace(
        gradflow::pflow::solve_flow(&f, &timegrid.0, &kernel.0, &ProximalConfig::default()).map_err(to_py)?,
    ))
}

/// Vertical maximal function of `f` for `source` in `"p-flow"`, `"heat"`
/// or `"poisson"`. Semigroup sources take the operator from a quadratic
/// kernel and refine the supremum between knots.
#[pyfunction]
#[pyo3(signature = (source, grid, f, kernel, timegrid, refine = true))]
fn vertical_max(
    source: &str,
    grid: &PyGrid,
    f: Vec<f64>,
    kernel: &PyKernel,
    timegrid: &PyTimeGrid,
    refine: bool,
) -> PyResult<PyMaximal> {
    let f = grid.function(f)?;
    let semigroup = |kernel: &VariationalKernel| match kernel {
        VariationalKernel::Quadratic(a) => assemble(grid.0, a).map_err(to_py),
        VariationalKernel::PPower { .. } => Err(PyValueError::new_err("semigroup sources need a quadratic kernel")),
    };
    let src = match source {
        "p-flow" => Source::pflow(kernel.0.clone()),
        "heat" => Source::Heat(semigroup(&kernel.0)?),
        "poisson" => Source::Poisson(semigroup(&kernel.0)?),
        other => return Err(PyValueError::new_err(format!("unknown source {other:?}"))),
    };
    let mut res = vmax(&src, &f, &timegrid.0).map_err(to_py)?;
    if refine {
        res = refine_sup(&src, &res).map_err(to_py)?;
    }
    Ok(PyMaximal(res))
}

/// Energy contraction of the p-flow maximal function, as a dict.
#[pyfunction]
fn verify_pflow_contraction<'py>(
    py: Python<'py>,
    grid: &PyGrid,
    f: Vec<f64>,
    p: f64,
    timegrid: &PyTimeGrid,
) -> PyResult<Bound<'py, PyDict>> {
    let f = grid.function(f)?;
    let r = contraction(&f, p, &timegrid.0, &ProximalConfig::default());
    let d = PyDict::new(py);
    d.set_item("energy_before", r.energy_before)?;
    d.set_item("energy_after", r.energy_after)?;
    d.set_item("margin", r.margin)?;
    d.set_item("detachment_nodes", r.detachment_nodes)?;
    d.set_item("subharmonic_relative", r.subharmonic.map(|s| s.relative()))?;
    d.set_item("pass", r.pass)?;
    d.set_item("cause", r.cause)?;
    Ok(d)
}

/// Random sum of quartic bumps, as used by the ensembles.
#[pyfunction]
#[pyo3(signature = (grid, seed = 0))]
fn bump_data(grid: &PyGrid, seed: u64) -> Vec<f64> {
    bumps(grid.0, &mut ChaCha8Rng::seed_from_u64(seed)).into_values()
}

/// Runs a command as the `gradflow` binary would and returns its exit
/// status. `overrides` maps flag names (`"grid-n"`, `"p"`, …) to values.
#[pyfunction]
#[pyo3(signature = (command, config = None, preset = None, overrides = None))]
fn run(
    command: &str,
    config: Option<std::path::PathBuf>,
    preset: Option<&str>,
    overrides: Option<Vec<(String, String)>>,
) -> PyResult<i32> {
    let command = Command::parse(command).map_err(to_py)?;
    let overrides: Vec<Override> = overrides
        .unwrap_or_default()
        .into_iter()
        .map(|(flag, value)| Override { flag, value })
        .collect();
    let cfg = build_config(Some(command), config.as_deref(), preset, &overrides).map_err(to_py)?;
    Ok(execute(&cfg))
}

#[pymodule]
#[pyo3(name = "gradflow")]
fn gradflow_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyTimeGrid>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyFlowTrace>()?;
    m.add_class::<PyMaximal>()?;
    m.add_function(wrap_pyfunction!(solve_flow, m)?)?;
    m.add_function(wrap_pyfunction!(vertical_max, m)?)?;
    m.add_function(wrap_pyfunction!(verify_pflow_contraction, m)?)?;
    m.add_function(wrap_pyfunction!(bump_data, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
