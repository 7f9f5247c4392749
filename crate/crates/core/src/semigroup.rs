//! Heat and Poisson semigroups of `L = div(A∇·)`.
//!
//! `−L` is assembled as the sparse symmetric matrix `Gᵀ A G` of the grid
//! calculus. Two execution paths evaluate `e^{tL} f`:
//!
//! * **spectral** (node count ≤ the operator's cap, 4096 by default): a dense
//!   eigendecomposition of `−L`, giving exact functional calculus; it doubles
//!   as the oracle for everything else;
//! * **Crank–Nicolson** with conjugate-gradient solves and step-doubling error
//!   control, for larger grids.
//!
//! The Poisson semigroup `e^{−t(−L)^{1/2}}` is available either from the
//! spectral square root or by subordination to the heat semigroup.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use serde::Serialize;

use crate::energy::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{gradient, Boundary, Grid, GridFunction};
use crate::linalg::{dot, norm, pcg, symmetric_eigen, CgOptions};
use crate::output::{num, CsvTable};
use crate::pflow::TimeGrid;

/// Default node-count cap for the dense spectral path.
pub const DEFAULT_SPECTRAL_CAP: usize = 4096;

/// Compressed sparse rows of a symmetric matrix.
#[derive(Clone, Debug)]
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.row_ptr.len() - 1)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&k| self.cols[k] == i)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }
}

/// `−L = −div(A∇·)` on a grid, as a symmetric positive-semidefinite matrix.
#[derive(Debug)]
pub struct EllipticOperator {
    grid: Grid,
    coefficients: CoefficientField,
    matrix: Csr,
    spectral_cap: usize,
    spectral: OnceLock<std::result::Result<Arc<SpectralDecomposition>, String>>,
}

impl Clone for EllipticOperator {
    fn clone(&self) -> Self {
        let spectral = OnceLock::new();
        if let Some(s) = self.spectral.get() {
            let _ = spectral.set(s.clone());
        }
        EllipticOperator {
            grid: self.grid,
            coefficients: self.coefficients.clone(),
            matrix: self.matrix.clone(),
            spectral_cap: self.spectral_cap,
            spectral,
        }
    }
}

/// Builds `−L` from the coefficient field.
pub fn assemble(grid: Grid, a: &CoefficientField) -> Result<EllipticOperator> {
    a.grid().check_same(&grid)?;
    a.check_ellipticity()?;
    let d = grid.dim();
    let inv_h = 1.0 / grid.h();
    let node_of = |c: [isize; 2]| -> Option<usize> {
        match grid.boundary() {
            Boundary::Periodic => {
                let i = c[0].rem_euclid(grid.shape()[0] as isize) as usize;
                let j = if d == 1 { 0 } else { c[1].rem_euclid(grid.shape()[1] as isize) as usize };
                Some(grid.index([i, j]))
            }
            Boundary::DirichletZero => {
                let ok = (0..d).all(|ax| c[ax] >= 0 && c[ax] < grid.shape()[ax] as isize);
                ok.then(|| grid.index([c[0] as usize, c[1] as usize]))
            }
        }
    };
    // upper triangle only; mirrored below so the matrix is exactly symmetric
    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for cell in 0..grid.cell_count() {
        let b = grid.cell_base(cell);
        let m = a.matrix(cell);
        let amat = [[m[0], m[1]], [m[1], m[2]]];
        // local gradient rows: component `ax` = (u(b+e_ax) − u(b)) / h
        let mut local: Vec<(usize, [f64; 2])> = Vec::with_capacity(3);
        let mut push = |node: Option<usize>, coef: [f64; 2]| {
            if let Some(n) = node {
                if let Some(e) = local.iter_mut().find(|(m, _)| *m == n) {
                    e.1[0] += coef[0];
                    e.1[1] += coef[1];
                } else {
                    local.push((n, coef));
                }
            }
        };
        let base_coef = if d == 1 { [-inv_h, 0.0] } else { [-inv_h, -inv_h] };
        push(node_of(b), base_coef);
        for ax in 0..d {
            let mut e = b;
            e[ax] += 1;
            let mut coef = [0.0, 0.0];
            coef[ax] = inv_h;
            push(node_of(e), coef);
        }
        for &(i, gi) in &local {
            for &(j, gj) in &local {
                if i > j {
                    continue;
                }
                let mut v = 0.0;
                for p in 0..d {
                    for q in 0..d {
                        v += gi[p] * amat[p][q] * gj[q];
                    }
                }
                *entries.entry((i, j)).or_insert(0.0) += v;
            }
        }
    }
    let n = grid.node_count();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (&(i, j), &v) in &entries {
        rows[i].push((j, v));
        if i != j {
            rows[j].push((i, v));
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for mut r in rows {
        r.sort_by_key(|e| e.0);
        for (c, v) in r {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    Ok(EllipticOperator {
        grid,
        coefficients: a.clone(),
        matrix: Csr {
            row_ptr,
            cols,
            vals,
        },
        spectral_cap: DEFAULT_SPECTRAL_CAP,
        spectral: OnceLock::new(),
    })
}

impl EllipticOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coefficients(&self) -> &CoefficientField {
        &self.coefficients
    }

    pub fn lambda(&self) -> f64 {
        self.coefficients.lambda()
    }

    pub fn spectral_cap(&self) -> usize {
        self.spectral_cap
    }

    pub fn with_spectral_cap(mut self, cap: usize) -> Self {
        self.spectral_cap = cap;
        self.spectral = OnceLock::new();
        self
    }

    pub fn uses_spectral(&self) -> bool {
        self.grid.node_count() <= self.spectral_cap
    }

    /// `(−L) u`, node-wise.
    pub fn apply_neg(&self, u: &GridFunction) -> GridFunction {
        let mut out = vec![0.0; u.len()];
        self.matrix.apply(u.values(), &mut out);
        GridFunction::from_vec(self.grid, out)
    }

    /// `L u = div(A∇u)`.
    pub fn apply(&self, u: &GridFunction) -> GridFunction {
        self.apply_neg(u).scale(-1.0)
    }

    /// Entry `(i, j)` of `−L`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let m = &self.matrix;
        (m.row_ptr[i]..m.row_ptr[i + 1])
            .find(|&k| m.cols[k] == j)
            .map_or(0.0, |k| m.vals[k])
    }

    pub fn is_symmetric(&self) -> bool {
        let m = &self.matrix;
        (0..self.grid.node_count()).all(|i| {
            (m.row_ptr[i]..m.row_ptr[i + 1]).all(|k| self.entry(m.cols[k], i) == m.vals[k])
        })
    }

    /// Quadratic energy `½ ⟨−Lu, u⟩ = ½ ∫ A∇u·∇u`.
    pub fn energy(&self, u: &GridFunction) -> f64 {
        0.5 * self.apply_neg(u).inner(u)
    }

    /// Dense decomposition of `−L`, computed once and cached.
    pub fn spectral(&self) -> Result<Arc<SpectralDecomposition>> {
        let n = self.grid.node_count();
        if n > self.spectral_cap {
            return Err(Error::Spectral(format!(
                "{n} nodes exceed the spectral cap {}",
                self.spectral_cap
            )));
        }
        self.spectral
            .get_or_init(|| {
                let mut dense = vec![0.0; n * n];
                let m = &self.matrix;
                for i in 0..n {
                    for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                        dense[i + n * m.cols[k]] = m.vals[k];
                    }
                }
                symmetric_eigen(n, dense)
                    .map(|(values, vectors)| Arc::new(SpectralDecomposition { n, values, vectors }))
                    .map_err(|e| e.to_string())
            })
            .clone()
            .map_err(Error::Spectral)
    }

    /// Projection onto the kernel of `−L`: the mean on periodic grids, zero
    /// on Dirichlet grids.
    pub fn kernel_projection(&self, f: &GridFunction) -> GridFunction {
        match self.grid.boundary() {
            Boundary::Periodic => GridFunction::constant(self.grid, f.mean()),
            Boundary::DirichletZero => GridFunction::zeros(self.grid),
        }
    }
}

/// Eigenpairs of `−L` (Euclidean-orthonormal eigenvectors, ascending
/// eigenvalues).
#[derive(Debug)]
pub struct SpectralDecomposition {
    n: usize,
    values: Vec<f64>,
    /// Column-major: eigenvector `j` occupies `vectors[j*n..(j+1)*n]`.
    vectors: Vec<f64>,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn eigenvector(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.n..(j + 1) * self.n]
    }

    /// `Vᵀ f`.
    pub fn coefficients(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n).map(|j| dot(self.eigenvector(j), f)).collect()
    }

    /// `V c`.
    pub fn synthesize(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (j, &cj) in c.iter().enumerate() {
            if cj == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.eigenvector(j)) {
                *o += cj * v;
            }
        }
        out
    }

    /// `φ(−L) f` given precomputed coefficients.
    pub fn apply_fn(&self, coeffs: &[f64], phi: impl Fn(f64) -> f64) -> Vec<f64> {
        let c: Vec<f64> = coeffs
            .iter()
            .zip(&self.values)
            .map(|(&c, &l)| c * phi(l.max(0.0)))
            .collect();
        self.synthesize(&c)
    }

    /// Largest `‖(−L)φ_j − λ_jφ_j‖ / max(1, λ_j)` and largest deviation of
    /// `VᵀV` from the identity.
    pub fn residuals(&self, op: &EllipticOperator) -> (f64, f64) {
        let n = self.n;
        let mut worst_res: f64 = 0.0;
        let mut out = vec![0.0; n];
        for j in 0..n {
            let v = self.eigenvector(j);
            op.matrix.apply(v, &mut out);
            let r: f64 = out
                .iter()
                .zip(v)
                .map(|(a, b)| (a - self.values[j] * b).powi(2))
                .sum::<f64>()
                .sqrt();
            worst_res = worst_res.max(r / self.values[j].abs().max(1.0));
        }
        let mut worst_orth: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                let g = dot(self.eigenvector(i), self.eigenvector(j));
                let target = if i == j { 1.0 } else { 0.0 };
                worst_orth = worst_orth.max((g - target).abs());
            }
        }
        (worst_res, worst_orth)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoissonMethod {
    Spectral,
    Subordination,
}

/// Nodes and weights for `P_t = Σ_i w_i e^{s_i(t) L}`.
///
/// Substituting `s = t²/(4r)` turns the subordination integral into
/// `π^{−1/2} ∫_0^∞ r^{−1/2} e^{−r} e^{(t²/4r) L} dr`; with `r = e^x` the
/// integrand decays double-exponentially as `x → +∞` and like `e^{x/2}` as
/// `x → −∞`, so a trapezoid rule on `x ∈ [−60, 5]` with step 1/4 resolves it
/// uniformly in `t`. Weights are renormalized to unit mass.
#[derive(Clone, Debug)]
pub struct SubordinationQuadrature {
    r_nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Default for SubordinationQuadrature {
    fn default() -> Self {
        Self::new(-60.0, 5.0, 0.25)
    }
}

impl SubordinationQuadrature {
    pub fn new(x_min: f64, x_max: f64, step: f64) -> Self {
        let count = ((x_max - x_min) / step).round() as usize + 1;
        let mut r_nodes = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        for k in 0..count {
            let x = x_min + k as f64 * step;
            let r = x.exp();
            r_nodes.push(r);
            weights.push(step * (0.5 * x - r).exp() / std::f64::consts::PI.sqrt());
        }
        let mass: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= mass);
        SubordinationQuadrature { r_nodes, weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Heat times `s_i = t²/(4 r_i)`.
    pub fn heat_times(&self, t: f64) -> Result<Vec<f64>> {
        let t2 = t * t;
        if !t2.is_finite() {
            return Err(Error::QuadratureUnderflow { t });
        }
        Ok(self.r_nodes.iter().map(|r| t2 / (4.0 * r)).collect())
    }

    /// Scalar symbol `Σ w_i e^{−s_i λ}`, approximating `e^{−t√λ}`.
    pub fn symbol(&self, t: f64, lambda: f64) -> f64 {
        let t2 = t * t;
        self.r_nodes
            .iter()
            .zip(&self.weights)
            .map(|(r, w)| w * (-(t2 / (4.0 * r)) * lambda).exp())
            .sum()
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("time must be finite and nonnegative, got {t}")))
    }
}

/// `e^{tL} f`.
pub fn heat_apply(op: &EllipticOperator, f: &GridFunction, t: f64) -> Result<GridFunction> {
    check_time(t)?;
    op.grid.check_same(f.grid())?;
    if t == 0.0 {
        return Ok(f.clone());
    }
    Ok(heat_trajectory(op, f, &[t])?.pop().expect("one time"))
}

/// `e^{t_k L} f` for each requested time (any order).
pub fn heat_trajectory(op: &EllipticOperator, f: &GridFunction, times: &[f64]) -> Result<Vec<GridFunction>> {
    for &t in times {
        check_time(t)?;
    }
    op.grid.check_same(f.grid())?;
    if op.uses_spectral() {
        let sd = op.spectral()?;
        let c = sd.coefficients(f.values());
        Ok(times
            .iter()
            .map(|&t| {
                if t == 0.0 {
                    f.clone()
                } else {
                    GridFunction::from_vec(op.grid, sd.apply_fn(&c, |l| (-t * l).exp()))
                }
            })
            .collect())
    } else {
        crank_nicolson_trajectory(op, f, times, 1e-8)
    }
}

/// `e^{−t(−L)^{1/2}} f`.
pub fn poisson_apply(
    op: &EllipticOperator,
    f: &GridFunction,
    t: f64,
    method: PoissonMethod,
) -> Result<GridFunction> {
    check_time(t)?;
    if t == 0.0 {
        op.grid.check_same(f.grid())?;
        return Ok(f.clone());
    }
    Ok(poisson_trajectory(op, f, &[t], method)?.pop().expect("one time"))
}

pub fn poisson_trajectory(
    op: &EllipticOperator,
    f: &GridFunction,
    times: &[f64],
    method: PoissonMethod,
) -> Result<Vec<GridFunction>> {
    for &t in times {
        check_time(t)?;
    }
    op.grid.check_same(f.grid())?;
    let quad = SubordinationQuadrature::default();
    match (method, op.uses_spectral()) {
        (PoissonMethod::Spectral, true) => {
            let sd = op.spectral()?;
            let c = sd.coefficients(f.values());
            Ok(times
                .iter()
                .map(|&t| {
                    if t == 0.0 {
                        f.clone()
                    } else {
                        GridFunction::from_vec(op.grid, sd.apply_fn(&c, |l| (-t * l.sqrt()).exp()))
                    }
                })
                .collect())
        }
        (PoissonMethod::Spectral, false) => Err(Error::Spectral(format!(
            "{} nodes exceed the spectral cap {}",
            op.grid.node_count(),
            op.spectral_cap
        ))),
        (PoissonMethod::Subordination, true) => {
            let sd = op.spectral()?;
            let c = sd.coefficients(f.values());
            times
                .iter()
                .map(|&t| {
                    if t == 0.0 {
                        return Ok(f.clone());
                    }
                    let s = quad.heat_times(t)?;
                    let w = quad.weights();
                    let v = sd.apply_fn(&c, |l| {
                        s.iter().zip(w).map(|(si, wi)| wi * (-si * l).exp()).sum()
                    });
                    Ok(GridFunction::from_vec(op.grid, v))
                })
                .collect()
        }
        (PoissonMethod::Subordination, false) => times
            .iter()
            .map(|&t| {
                if t == 0.0 {
                    return Ok(f.clone());
                }
                let s = quad.heat_times(t)?;
                let states = crank_nicolson_trajectory(op, f, &s, 1e-8)?;
                let mut acc = vec![0.0; f.len()];
                for (u, w) in states.iter().zip(quad.weights()) {
                    for (a, v) in acc.iter_mut().zip(u.values()) {
                        *a += w * v;
                    }
                }
                Ok(GridFunction::from_vec(op.grid, acc))
            })
            .collect(),
    }
}

/// Crank–Nicolson with step-doubling error control; returns the state at
/// each requested time.
///
/// Each accepted step compares one step of size τ against two of size τ/2
/// and keeps the latter when their difference, divided by 3, is below
/// `tol · max(‖u‖, ‖f‖·1e-3)`. Once a step changes the state by less than
/// `1e-14 ‖f‖` over a span longer than the elapsed time, the state is taken
/// as stationary for all later times.
pub fn crank_nicolson_trajectory(
    op: &EllipticOperator,
    f: &GridFunction,
    times: &[f64],
    tol: f64,
) -> Result<Vec<GridFunction>> {
    let n = f.len();
    let grid = op.grid;
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut out: Vec<Option<GridFunction>> = vec![None; times.len()];

    let diag_m = op.matrix.diagonal();
    let f_norm = norm(f.values()).max(f64::MIN_POSITIVE);
    let lam_max_est = diag_m.iter().copied().fold(0.0, f64::max) * 2.0;

    let cn_step = |u: &[f64], tau: f64, guess: &[f64]| -> Result<Vec<f64>> {
        let mut mu = vec![0.0; n];
        op.matrix.apply(u, &mut mu);
        let rhs: Vec<f64> = u.iter().zip(&mu).map(|(a, b)| a - 0.5 * tau * b).collect();
        let diag: Vec<f64> = diag_m.iter().map(|d| 1.0 + 0.5 * tau * d).collect();
        let apply = |x: &[f64], o: &mut [f64]| {
            op.matrix.apply(x, o);
            for (oi, xi) in o.iter_mut().zip(x) {
                *oi = xi + 0.5 * tau * *oi;
            }
        };
        let mut x = guess.to_vec();
        pcg(
            apply,
            &diag,
            &rhs,
            &mut x,
            CgOptions {
                rel_tol: 1e-13,
                abs_tol: 1e-16 * f_norm,
                max_iters: 20 * n + 1000,
            },
        )?;
        Ok(x)
    };

    let mut u = f.values().to_vec();
    let mut t = 0.0;
    let mut tau = (1.0 / lam_max_est.max(1e-300)).min(1e-3).max(1e-12);
    let mut stationary = false;
    for &idx in &order {
        let target = times[idx];
        while !stationary && t < target {
            let step = tau.min(target - t);
            let big = cn_step(&u, step, &u)?;
            let half = cn_step(&u, 0.5 * step, &u)?;
            let two = cn_step(&half, 0.5 * step, &half)?;
            let diff: f64 = big
                .iter()
                .zip(&two)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                / 3.0;
            let scale = norm(&two).max(1e-3 * f_norm);
            let err = diff / (tol * scale);
            if err <= 1.0 {
                let change = two
                    .iter()
                    .zip(&u)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                u = two;
                t += step;
                if change <= 1e-14 * f_norm && step >= t * 0.5 {
                    stationary = true;
                }
                let grow = if err > 0.0 { 0.9 * err.powf(-1.0 / 3.0) } else { 2.0 };
                if step == tau {
                    tau *= grow.clamp(0.2, 2.0);
                }
            } else {
                tau = step * (0.9 * err.powf(-1.0 / 3.0)).clamp(0.1, 0.5);
                if tau < 1e-14 * (t + 1e-300) {
                    return Err(Error::CgNonConvergence {
                        residual: err,
                        iterations: 0,
                    });
                }
            }
        }
        out[idx] = Some(GridFunction::from_vec(grid, u.clone()));
    }
    Ok(out.into_iter().map(|s| s.expect("every time visited")).collect())
}

/// `K_t(·, y) = e^{tL}(δ_y / h^n)`.
pub fn heat_kernel_column(op: &EllipticOperator, y: usize, t: f64) -> Result<GridFunction> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("kernel time must be positive, got {t}")));
    }
    let mut delta = vec![0.0; op.grid.node_count()];
    delta[y] = 1.0 / op.grid.weight();
    heat_apply(op, &GridFunction::from_vec(op.grid, delta), t)
}

/// Gaussian upper-bound constants `K_t(x,y) ≤ C t^{−n/2} e^{−c d²/t}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GaussianConstants {
    pub big_c: f64,
    pub small_c: f64,
}

impl GaussianConstants {
    pub fn bound(&self, dim: usize, t: f64, d: f64) -> f64 {
        self.big_c * t.powf(-0.5 * dim as f64) * (-self.small_c * d * d / t).exp()
    }
}

/// Rate used for the identity calibration; half the continuum rate 1/4.
pub const IDENTITY_RATE: f64 = 0.125;

/// Kernel entries at or below this fraction of their column maximum are
/// roundoff and excluded from Gaussian ratios. The discrete kernel's tail
/// decays like `1/k!`, so far entries are dominated by eigensolver noise.
pub const KERNEL_NOISE_FLOOR: f64 = 1e-12;

fn gaussian_ratio(col: &[f64], grid: &Grid, y: usize, t: f64, consts: GaussianConstants) -> f64 {
    let floor = KERNEL_NOISE_FLOOR * col.iter().copied().fold(0.0, f64::max);
    col.iter()
        .enumerate()
        .filter(|(_, &k)| k > floor)
        .map(|(x, &k)| k / consts.bound(grid.dim(), t, grid.distance(x, y)))
        .fold(0.0, f64::max)
}

/// Calibrates `(C, c)` on `A = I` over the given times and then scales them
/// to ellipticity `Λ`: `c = c_I / Λ`, `C = Λ^{n/2} C_I`, the exact
/// constant-coefficient scaling between conductivities `Λ⁻¹` and `Λ`.
pub fn calibrate_gaussian(grid: Grid, lambda: f64, times: &[f64]) -> Result<GaussianConstants> {
    let op = assemble(grid, &CoefficientField::identity(grid))?;
    let n = grid.node_count();
    // the identity kernel is translation invariant on periodic grids; on
    // Dirichlet grids sample every column
    let ys: Vec<usize> = match grid.boundary() {
        Boundary::Periodic => vec![0],
        Boundary::DirichletZero => (0..n).collect(),
    };
    let mut c_id: f64 = 0.0;
    for &y in &ys {
        let mut delta = vec![0.0; n];
        delta[y] = 1.0 / grid.weight();
        let cols = heat_trajectory(&op, &GridFunction::from_vec(grid, delta), times)?;
        let unit = GaussianConstants {
            big_c: 1.0,
            small_c: IDENTITY_RATE,
        };
        for (col, &t) in cols.iter().zip(times) {
            c_id = c_id.max(gaussian_ratio(col.values(), &grid, y, t, unit));
        }
    }
    Ok(GaussianConstants {
        big_c: c_id * lambda.powf(0.5 * grid.dim() as f64),
        small_c: IDENTITY_RATE / lambda,
    })
}

/// One row of a heat-kernel certificate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KernelRow {
    pub t: f64,
    pub y_index: usize,
    pub min_value: f64,
    pub mass: f64,
    pub calibrated_c_big: f64,
    pub calibrated_c_small: f64,
    /// `max_x K_t(x,y) / bound(t, d(x,y))` over entries above the noise
    /// floor; the certificate needs ≤ 1.
    pub max_bound_ratio: f64,
    /// `max_x |K_t(x,y) − K_t(y,x)|`.
    pub symmetry_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelCertificate {
    pub rows: Vec<KernelRow>,
    pub constants: GaussianConstants,
}

impl KernelCertificate {
    pub fn min_value(&self) -> f64 {
        self.rows.iter().map(|r| r.min_value).fold(f64::INFINITY, f64::min)
    }

    pub fn max_mass_error(&self) -> f64 {
        self.rows.iter().map(|r| (r.mass - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn max_bound_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.max_bound_ratio).fold(0.0, f64::max)
    }

    pub fn max_symmetry_error(&self) -> f64 {
        self.rows.iter().map(|r| r.symmetry_error).fold(0.0, f64::max)
    }

    /// Nonnegativity, unit mass (periodic only), symmetry, Gaussian bound.
    pub fn passes(&self, periodic: bool) -> bool {
        self.min_value() >= -1e-12
            && (!periodic || self.max_mass_error() <= 1e-10)
            && self.max_symmetry_error() <= 1e-10
            && self.max_bound_ratio() <= 1.0 + 1e-12
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            "t",
            "y_index",
            "min_value",
            "mass",
            "calibrated_C",
            "calibrated_c",
            "max_bound_ratio",
        ]);
        for r in &self.rows {
            t.row([
                num(r.t),
                r.y_index.to_string(),
                num(r.min_value),
                num(r.mass),
                num(r.calibrated_c_big),
                num(r.calibrated_c_small),
                num(r.max_bound_ratio),
            ]);
        }
        t
    }
}

/// Extracts kernel columns at each `(t, y)` and checks them against the
/// calibrated Gaussian bound. Symmetry is measured against the columns of
/// every other sampled `y`.
pub fn kernel_certificate(
    op: &EllipticOperator,
    times: &[f64],
    ys: &[usize],
    constants: GaussianConstants,
) -> Result<KernelCertificate> {
    let grid = op.grid;
    let n = grid.node_count();
    let mut columns = Vec::with_capacity(ys.len());
    for &y in ys {
        let mut delta = vec![0.0; n];
        delta[y] = 1.0 / grid.weight();
        columns.push(heat_trajectory(op, &GridFunction::from_vec(grid, delta), times)?);
    }
    let mut rows = Vec::new();
    for (ti, &t) in times.iter().enumerate() {
        for (yi, &y) in ys.iter().enumerate() {
            let col = columns[yi][ti].values();
            let ratio = gaussian_ratio(col, &grid, y, t, constants);
            let mut sym: f64 = 0.0;
            for (zi, &z) in ys.iter().enumerate() {
                sym = sym.max((col[z] - columns[zi][ti].values()[y]).abs());
            }
            rows.push(KernelRow {
                t,
                y_index: y,
                min_value: col.iter().copied().fold(f64::INFINITY, f64::min),
                mass: grid.weight() * col.iter().sum::<f64>(),
                calibrated_c_big: constants.big_c,
                calibrated_c_small: constants.small_c,
                max_bound_ratio: ratio,
                symmetry_error: sym,
            });
        }
    }
    Ok(KernelCertificate { rows, constants })
}

/// Left and right sides of the k = 0 gradient bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OperatorBoundReport {
    pub t: f64,
    /// `t ‖∇H_t f‖²`.
    pub heat_lhs: f64,
    /// `Λ/(2e) ‖f‖²`.
    pub heat_rhs: f64,
    /// `t² ‖∇P_t f‖²`.
    pub poisson_lhs: f64,
    /// `4Λ/e² ‖f‖²`.
    pub poisson_rhs: f64,
    /// `poisson_lhs / (Λ/e² ‖f‖²)`; at most 1 by the sharp scalar bound.
    pub poisson_sharp_ratio: f64,
    pub pass: bool,
}

pub fn operator_bound_check(op: &EllipticOperator, f: &GridFunction, t: f64) -> Result<OperatorBoundReport> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("t must be positive, got {t}")));
    }
    let lam = op.lambda();
    let e = std::f64::consts::E;
    let f2 = f.l2_norm_sq();
    let h = heat_apply(op, f, t)?;
    let p = poisson_apply(op, f, t, PoissonMethod::Spectral)?;
    let heat_lhs = t * gradient(&h).l2_norm_sq();
    let poisson_lhs = t * t * gradient(&p).l2_norm_sq();
    let heat_rhs = lam / (2.0 * e) * f2;
    let poisson_rhs = 4.0 * lam / (e * e) * f2;
    let sharp = lam / (e * e) * f2;
    let slack = 1e-12 * f2;
    Ok(OperatorBoundReport {
        t,
        heat_lhs,
        heat_rhs,
        poisson_lhs,
        poisson_rhs,
        poisson_sharp_ratio: if sharp > 0.0 { poisson_lhs / sharp } else { 0.0 },
        pass: heat_lhs <= heat_rhs + slack && poisson_lhs <= poisson_rhs + slack,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DissipationReport {
    pub heat_energies: Vec<f64>,
    pub poisson_energies: Vec<f64>,
    /// Largest increase between consecutive knots, either semigroup.
    pub max_increase: f64,
    pub pass: bool,
}

/// Quadratic energy along both semigroups at the knots of `timegrid`.
pub fn dissipation_check(op: &EllipticOperator, f: &GridFunction, timegrid: &TimeGrid) -> Result<DissipationReport> {
    let knots = timegrid.knots();
    let heat: Vec<f64> = heat_trajectory(op, f, knots)?.iter().map(|u| op.energy(u)).collect();
    let method = if op.uses_spectral() {
        PoissonMethod::Spectral
    } else {
        PoissonMethod::Subordination
    };
    let poisson: Vec<f64> = poisson_trajectory(op, f, knots, method)?
        .iter()
        .map(|u| op.energy(u))
        .collect();
    let inc = |v: &[f64]| v.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let max_increase = inc(&heat).max(inc(&poisson)).max(if knots.len() < 2 { 0.0 } else { f64::NEG_INFINITY });
    Ok(DissipationReport {
        heat_energies: heat,
        poisson_energies: poisson,
        max_increase,
        pass: max_increase <= 1e-10,
    })
}
