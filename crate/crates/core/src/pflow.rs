//! Implicit (minimizing-movement) integration of `u' = div 𝒜(x, ∇u)`.
//!
//! Each step solves `v − τ div 𝒜(x, ∇v) = u`, i.e. `v` minimizes
//! `‖v − u‖² / (2τ) + ℱ(v)`. Because the step is an exact proximal map, the
//! energy and L² ledgers of the flow hold as inequalities of the scheme
//! itself, up to the Newton tolerance.

use serde::{Deserialize, Serialize};

use crate::energy::{energy_of_gradient, flux_field, RegionMask, VariationalKernel};
use crate::error::{Error, Result};
use crate::grid::{divergence_into, gradient, gradient_into, Boundary, Grid, GridFunction};
use crate::linalg::{pcg, CgOptions};
use crate::output::{num, CsvTable};

/// Time knots `0 = t_0 < t_1 < … < t_K`.
///
/// The geometric form has `t_k = t_min · r^(k−1)` for `k ≥ 1` up to `t_max`,
/// with `t_max` appended as the last knot when the progression misses it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_min: f64,
    pub ratio: f64,
    pub t_max: f64,
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn geometric(t_min: f64, ratio: f64, t_max: f64) -> Result<Self> {
        if !(t_min.is_finite() && t_min > 0.0) {
            return Err(Error::Validation(format!("t_min must be positive, got {t_min}")));
        }
        if !(ratio.is_finite() && ratio > 1.0) {
            return Err(Error::Validation(format!("ratio must exceed 1, got {ratio}")));
        }
        if !(t_max.is_finite() && t_max >= t_min) {
            return Err(Error::Validation(format!(
                "t_max must be finite and >= t_min, got {t_max}"
            )));
        }
        let mut knots = vec![0.0];
        let mut k = 0i32;
        loop {
            let t = t_min * ratio.powi(k);
            if t > t_max * (1.0 + 1e-12) {
                break;
            }
            knots.push(t);
            k += 1;
        }
        let last = *knots.last().unwrap();
        if last < t_max * (1.0 - 1e-12) {
            knots.push(t_max);
        } else {
            *knots.last_mut().unwrap() = t_max.max(last.min(t_max));
        }
        Ok(TimeGrid {
            t_min,
            ratio,
            t_max,
            knots,
        })
    }

    /// Default grid: `t_min = 1e-4`, ratio `1.25`, `t_max = 10`.
    pub fn default_geometric() -> Self {
        Self::geometric(1e-4, 1.25, 10.0).expect("defaults are valid")
    }

    /// Uniform knots `0, dt, 2dt, …, t_max`.
    pub fn uniform(dt: f64, t_max: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0 && t_max.is_finite() && t_max >= dt) {
            return Err(Error::Validation(format!(
                "uniform grid needs 0 < dt <= t_max, got dt={dt}, t_max={t_max}"
            )));
        }
        let steps = (t_max / dt).round() as usize;
        let knots = (0..=steps).map(|k| k as f64 * dt).collect();
        Ok(TimeGrid {
            t_min: dt,
            ratio: 1.0,
            t_max: steps as f64 * dt,
            knots,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Step sizes `t_{k+1} − t_k`.
    pub fn steps(&self) -> impl Iterator<Item = f64> + '_ {
        self.knots.windows(2).map(|w| w[1] - w[0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProximalConfig {
    /// Absolute residual tolerance on the `h^n`-weighted ℓ² scale.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// Initial Newton step length, in `(0, 1]`.
    pub damping: f64,
    /// Jacobian-only regularization `|∇v|² → |∇v|² + δ`.
    pub delta: f64,
}

impl Default for ProximalConfig {
    fn default() -> Self {
        ProximalConfig {
            newton_tol: 1e-10,
            max_newton_iters: 100,
            damping: 1.0,
            delta: 1e-12,
        }
    }
}

impl ProximalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol.is_finite() && self.newton_tol > 0.0) {
            return Err(Error::Validation("newton_tol must be positive".into()));
        }
        if self.max_newton_iters == 0 {
            return Err(Error::Validation("max_newton_iters must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Validation("damping must lie in (0, 1]".into()));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::Validation("delta must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Scratch state for residual and Jacobian evaluations on one grid.
struct StepWorkspace<'a> {
    grid: Grid,
    kernel: &'a VariationalKernel,
    tau: f64,
    grad: Vec<f64>,
    flux: Vec<f64>,
    div: Vec<f64>,
}

impl<'a> StepWorkspace<'a> {
    fn new(grid: Grid, kernel: &'a VariationalKernel, tau: f64) -> Self {
        let ne = grid.cell_count() * grid.dim();
        StepWorkspace {
            grid,
            kernel,
            tau,
            grad: vec![0.0; ne],
            flux: vec![0.0; ne],
            div: vec![0.0; grid.node_count()],
        }
    }

    fn xi(&self, cell: usize) -> [f64; 2] {
        if self.grid.dim() == 1 {
            [self.grad[cell], 0.0]
        } else {
            [self.grad[2 * cell], self.grad[2 * cell + 1]]
        }
    }

    /// Residual `v − τ div 𝒜(∇v) − u`; leaves `∇v` in `self.grad`.
    fn residual(&mut self, v: &[f64], u: &[f64], out: &mut [f64]) {
        let d = self.grid.dim();
        gradient_into(&self.grid, v, &mut self.grad);
        for cell in 0..self.grid.cell_count() {
            let f = self.kernel.flux(cell, self.xi(cell));
            self.flux[cell * d..cell * d + d].copy_from_slice(&f[..d]);
        }
        divergence_into(&self.grid, &self.flux, &mut self.div);
        for i in 0..v.len() {
            out[i] = v[i] - self.tau * self.div[i] - u[i];
        }
    }

    /// Objective `‖v − u‖²/(2τ) + ℱ(v)`.
    fn objective(&mut self, v: &[f64], u: &[f64]) -> f64 {
        let w = self.grid.weight();
        gradient_into(&self.grid, v, &mut self.grad);
        let e: f64 = (0..self.grid.cell_count())
            .map(|c| self.kernel.density(c, self.xi(c)))
            .sum::<f64>()
            * w;
        let dist: f64 = v.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * w;
        dist / (2.0 * self.tau) + e
    }

    /// Cell Hessians at the gradient currently in `self.grad`.
    fn hessians(&self, delta: f64) -> Vec<[f64; 3]> {
        (0..self.grid.cell_count())
            .map(|c| self.kernel.hessian(c, self.xi(c), delta))
            .collect()
    }
}

/// Applies `J w = w + τ Gᵀ H G w` (the Newton Jacobian).
fn jacobian_apply(grid: &Grid, tau: f64, hess: &[[f64; 3]], w: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
    let d = grid.dim();
    scratch.resize(grid.cell_count() * d, 0.0);
    gradient_into(grid, w, scratch);
    for (cell, h) in hess.iter().enumerate() {
        if d == 1 {
            scratch[cell] *= h[0];
        } else {
            let (a, b) = (scratch[2 * cell], scratch[2 * cell + 1]);
            scratch[2 * cell] = h[0] * a + h[1] * b;
            scratch[2 * cell + 1] = h[1] * a + h[2] * b;
        }
    }
    divergence_into(grid, scratch, out);
    for i in 0..w.len() {
        out[i] = w[i] - tau * out[i];
    }
}

fn jacobian_diagonal(grid: &Grid, tau: f64, hess: &[[f64; 3]]) -> Vec<f64> {
    let d = grid.dim();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let n = grid.node_count();
    let mut diag = vec![0.0; n];
    let inside = |c: [isize; 2]| -> Option<usize> {
        match grid.boundary() {
            Boundary::Periodic => {
                let i = c[0].rem_euclid(grid.shape()[0] as isize) as usize;
                let j = if d == 1 { 0 } else { c[1].rem_euclid(grid.shape()[1] as isize) as usize };
                Some(grid.index([i, j]))
            }
            Boundary::DirichletZero => {
                let ok = (0..d).all(|a| c[a] >= 0 && c[a] < grid.shape()[a] as isize);
                ok.then(|| grid.index([c[0] as usize, c[1] as usize]))
            }
        }
    };
    for (cell, h) in hess.iter().enumerate() {
        let b = grid.cell_base(cell);
        if let Some(nb) = inside(b) {
            diag[nb] += if d == 1 { h[0] } else { h[0] + 2.0 * h[1] + h[2] } * inv_h2;
        }
        for ax in 0..d {
            let mut e = b;
            e[ax] += 1;
            if let Some(ne) = inside(e) {
                diag[ne] += if ax == 0 { h[0] } else { h[2] } * inv_h2;
            }
        }
    }
    diag.iter().map(|v| 1.0 + tau * v).collect()
}

fn weighted_norm(grid: &Grid, r: &[f64]) -> f64 {
    (grid.weight() * r.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

/// One backward-Euler step `v − τ div 𝒜(x, ∇v) = u` by damped Newton.
pub fn proximal_step(
    u: &GridFunction,
    tau: f64,
    kernel: &VariationalKernel,
    config: &ProximalConfig,
) -> Result<GridFunction> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {tau}")));
    }
    config.validate()?;
    let grid = *u.grid();
    kernel.check_grid(&grid)?;
    let n = grid.node_count();
    let w = grid.weight();
    let uv = u.values();

    let mut ws = StepWorkspace::new(grid, kernel, tau);
    let mut v = uv.to_vec();
    let mut r = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; n];
    let scratch = std::cell::RefCell::new(Vec::new());
    let mut delta = config.delta;

    ws.residual(&v, uv, &mut r);
    let mut rnorm = weighted_norm(&grid, &r);
    let mut iterations = 0;
    while rnorm > config.newton_tol {
        if iterations >= config.max_newton_iters {
            return Err(Error::NonConvergence {
                knot: 0,
                residual: rnorm,
                iterations,
            });
        }
        iterations += 1;

        // ws.grad holds ∇v from the last residual evaluation
        let hess = ws.hessians(delta);
        let diag = jacobian_diagonal(&grid, tau, &hess);
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let mut step = vec![0.0; n];
        let cg = CgOptions {
            rel_tol: 1e-12,
            abs_tol: 1e-3 * config.newton_tol / w.sqrt(),
            max_iters: 20 * n + 100,
        };
        let apply = |x: &[f64], out: &mut [f64]| {
            jacobian_apply(&grid, tau, &hess, x, &mut scratch.borrow_mut(), out)
        };
        if pcg(apply, &diag, &rhs, &mut step, cg).is_err() {
            delta = (delta * 100.0).max(1e-10);
            ws.residual(&v, uv, &mut r);
            continue;
        }

        let phi = ws.objective(&v, uv);
        let slope = w * r.iter().zip(&step).map(|(a, b)| a * b).sum::<f64>() / tau;
        let mut alpha = config.damping;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                trial[i] = v[i] + alpha * step[i];
            }
            ws.residual(&trial, uv, &mut r_trial);
            let rn = weighted_norm(&grid, &r_trial);
            let phi_t = ws.objective(&trial, uv);
            let armijo = phi_t <= phi + 1e-4 * alpha * slope + 4.0 * f64::EPSILON * phi.abs();
            if rn.is_finite() && (rn <= (1.0 - 1e-4 * alpha) * rnorm || (armijo && phi_t.is_finite())) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if accepted {
            std::mem::swap(&mut v, &mut trial);
            std::mem::swap(&mut r, &mut r_trial);
            // recompute so ws.grad matches v
            ws.residual(&v, uv, &mut r);
            rnorm = weighted_norm(&grid, &r);
        } else {
            delta = (delta * 100.0).max(1e-10);
            ws.residual(&v, uv, &mut r);
        }
    }
    Ok(GridFunction::from_vec(grid, v))
}

/// Per-knot bookkeeping of a flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub t: f64,
    pub l2_norm_sq: f64,
    pub energy: f64,
    /// `Σ τ_j ‖(u^{j+1} − u^j)/τ_j‖²` up to this knot.
    pub dissipation: f64,
    /// `Σ 2 τ_j ⟨𝒜(∇u^{j+1}), ∇u^{j+1}⟩` up to this knot (`= 2 τ p ℱ`).
    pub l2_dissipation: f64,
    pub min_value: f64,
}

#[derive(Clone, Debug)]
pub struct FlowTrace {
    kernel: VariationalKernel,
    timegrid: TimeGrid,
    states: Vec<GridFunction>,
    ledger: Vec<LedgerEntry>,
}

impl FlowTrace {
    pub fn kernel(&self) -> &VariationalKernel {
        &self.kernel
    }

    pub fn timegrid(&self) -> &TimeGrid {
        &self.timegrid
    }

    pub fn states(&self) -> &[GridFunction] {
        &self.states
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    pub fn last(&self) -> &GridFunction {
        self.states.last().expect("trace has at least the initial state")
    }

    /// CSV with one row per knot: `t, l2_norm_sq, energy, min_value,
    /// support_radius`. Support radii are measured from `{|f| > threshold}`.
    pub fn to_csv(&self, threshold: f64) -> CsvTable {
        let f = &self.states[0];
        let support = RegionMask::from_fn(*f.grid(), |n| f.values()[n].abs() > threshold);
        let radii = support_radii(&self.states, &support, threshold);
        let mut t = CsvTable::new(&["t", "l2_norm_sq", "energy", "min_value", "support_radius"]);
        for (e, r) in self.ledger.iter().zip(radii) {
            t.row([num(e.t), num(e.l2_norm_sq), num(e.energy), num(e.min_value), num(r)]);
        }
        t
    }
}

/// Runs the proximal scheme over `timegrid` starting from `f`.
pub fn solve_flow(
    f: &GridFunction,
    timegrid: &TimeGrid,
    kernel: &VariationalKernel,
    config: &ProximalConfig,
) -> Result<FlowTrace> {
    config.validate()?;
    kernel.check_grid(f.grid())?;
    let knots = timegrid.knots();
    let mut states = Vec::with_capacity(knots.len());
    let mut ledger = Vec::with_capacity(knots.len());
    let entry = |t: f64, u: &GridFunction, dissipation: f64, l2_dissipation: f64| LedgerEntry {
        t,
        l2_norm_sq: u.l2_norm_sq(),
        energy: energy_of_gradient(kernel, &gradient(u)),
        dissipation,
        l2_dissipation,
        min_value: u.min(),
    };
    ledger.push(entry(knots[0], f, 0.0, 0.0));
    states.push(f.clone());
    let (mut diss, mut l2_diss) = (0.0, 0.0);
    for (k, tau) in timegrid.steps().enumerate() {
        let prev = &states[k];
        let next = proximal_step(prev, tau, kernel, config).map_err(|e| match e {
            Error::NonConvergence {
                residual,
                iterations,
                ..
            } => Error::NonConvergence {
                knot: k + 1,
                residual,
                iterations,
            },
            other => other,
        })?;
        let dv = next.sub(prev);
        diss += dv.l2_norm_sq() / tau;
        let grad = gradient(&next);
        let flux = flux_field(kernel, &grad);
        l2_diss += 2.0 * tau * flux.inner(&grad);
        ledger.push(entry(knots[k + 1], &next, diss, l2_diss));
        states.push(next);
    }
    Ok(FlowTrace {
        kernel: kernel.clone(),
        timegrid: timegrid.clone(),
        states,
        ledger,
    })
}

/// Worst violations of the discrete energy estimates along a trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LedgerReport {
    /// `max_k ℱ(u^{k+1}) − ℱ(u^k)`.
    pub max_energy_increase: f64,
    /// `max_k ‖u^{k+1}‖ − ‖u^k‖`.
    pub max_l2_increase: f64,
    /// `max_k (Σ τ‖u̇‖² + ℱ(u^k)) − ℱ(f)`.
    pub energy_identity_excess: f64,
    /// `max_k (‖u^k‖² + Σ 2τ⟨𝒜(∇u),∇u⟩) − ‖f‖²`.
    pub l2_identity_excess: f64,
    pub min_value: f64,
}

impl LedgerReport {
    pub fn from_trace(trace: &FlowTrace) -> Self {
        let l = trace.ledger();
        let mut rep = LedgerReport {
            max_energy_increase: f64::NEG_INFINITY,
            max_l2_increase: f64::NEG_INFINITY,
            energy_identity_excess: f64::NEG_INFINITY,
            l2_identity_excess: f64::NEG_INFINITY,
            min_value: f64::INFINITY,
        };
        for w in l.windows(2) {
            rep.max_energy_increase = rep.max_energy_increase.max(w[1].energy - w[0].energy);
            rep.max_l2_increase = rep
                .max_l2_increase
                .max(w[1].l2_norm_sq.sqrt() - w[0].l2_norm_sq.sqrt());
        }
        for e in l {
            rep.energy_identity_excess = rep
                .energy_identity_excess
                .max(e.dissipation + e.energy - l[0].energy);
            rep.l2_identity_excess = rep
                .l2_identity_excess
                .max(e.l2_norm_sq + e.l2_dissipation - l[0].l2_norm_sq);
            rep.min_value = rep.min_value.min(e.min_value);
        }
        if l.len() < 2 {
            rep.max_energy_increase = 0.0;
            rep.max_l2_increase = 0.0;
        }
        rep
    }

    pub fn passes(&self, slack: f64) -> bool {
        self.max_energy_increase <= slack
            && self.max_l2_increase <= slack
            && self.energy_identity_excess <= slack
            && self.l2_identity_excess <= slack
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OrderReport {
    /// `min over knots and nodes of (u_g − u_f)`.
    pub margin: f64,
    pub pass: bool,
}

/// Runs both flows and reports the smallest gap `state_g − state_f`.
pub fn check_order_preservation(
    f: &GridFunction,
    g: &GridFunction,
    timegrid: &TimeGrid,
    kernel: &VariationalKernel,
    config: &ProximalConfig,
) -> Result<OrderReport> {
    f.grid().check_same(g.grid())?;
    if let Some(i) = f.values().iter().zip(g.values()).position(|(a, b)| a > b) {
        return Err(Error::InvalidArgument(format!("f > g at node {i}")));
    }
    let tf = solve_flow(f, timegrid, kernel, config)?;
    let tg = solve_flow(g, timegrid, kernel, config)?;
    Ok(order_margin(&tf, &tg, config.newton_tol))
}

pub(crate) fn order_margin(tf: &FlowTrace, tg: &FlowTrace, newton_tol: f64) -> OrderReport {
    let margin = tf
        .states()
        .iter()
        .zip(tg.states())
        .flat_map(|(a, b)| a.values().iter().zip(b.values()).map(|(x, y)| y - x))
        .fold(f64::INFINITY, f64::min);
    OrderReport {
        margin,
        pass: margin >= -10.0 * newton_tol,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiniteSpeedReport {
    /// Support inflation radius per knot.
    pub radii: Vec<f64>,
    pub pass: bool,
}

/// Distance from each above-threshold node to `initial_support`, maximized.
fn support_radius(u: &GridFunction, support: &[usize], threshold: f64) -> (f64, Vec<usize>) {
    let g = u.grid();
    let mut r: f64 = 0.0;
    let mut hot = Vec::new();
    for (n, &v) in u.values().iter().enumerate() {
        if v.abs() >= threshold {
            hot.push(n);
            let d = support
                .iter()
                .map(|&s| g.distance(n, s))
                .fold(f64::INFINITY, f64::min);
            r = r.max(if d.is_finite() { d } else { f64::INFINITY });
        }
    }
    (r, hot)
}

pub(crate) fn support_radii(states: &[GridFunction], support: &RegionMask, threshold: f64) -> Vec<f64> {
    let s: Vec<usize> = support.nodes().collect();
    states
        .iter()
        .map(|u| support_radius(u, &s, threshold).0)
        .collect()
}

/// Finite speed of propagation: every knot's above-threshold set must stay
/// inside a finite inflation of `initial_support` that does not reach the
/// edge of the box.
pub fn check_finite_speed(
    trace: &FlowTrace,
    initial_support: &RegionMask,
    threshold: f64,
) -> Result<FiniteSpeedReport> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument("threshold must be positive".into()));
    }
    let grid = *trace.states()[0].grid();
    let s: Vec<usize> = initial_support.nodes().collect();
    // largest distance to the support anywhere on a periodic box
    let reach = if grid.boundary() == Boundary::Periodic {
        (0..grid.node_count())
            .map(|n| s.iter().map(|&m| grid.distance(n, m)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let mut radii = Vec::with_capacity(trace.states().len());
    for (k, u) in trace.states().iter().enumerate() {
        let (r, hot) = support_radius(u, &s, threshold);
        let touches = match grid.boundary() {
            Boundary::DirichletZero => hot.iter().any(|&n| grid.is_boundary_node(n)),
            Boundary::Periodic => r.is_infinite() || (!hot.is_empty() && r >= reach),
        };
        if touches {
            return Err(Error::DomainTooSmall { knot: k });
        }
        radii.push(r);
    }
    Ok(FiniteSpeedReport { radii, pass: true })
}
