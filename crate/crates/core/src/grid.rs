//! Uniform lattices and the discrete calculus built on them.
//!
//! Nodes carry [`GridFunction`] values. Gradients live on *cells*: a cell is
//! identified by its base node `b`, and stores one forward difference per
//! axis, `(u(b + e_a) - u(b)) / h`. On a periodic grid every node is the base
//! of exactly one cell. A `DirichletZero` grid carries an implicit ghost
//! layer of zeros around the nodes, so its cells are based on the nodes plus
//! the ghost row/column at index `-1` (`n + 1` cells per axis).
//!
//! [`divergence`] is the exact negative adjoint of [`gradient`] under the
//! `h^n`-weighted inner products, so summation by parts is an identity.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Periodic,
    DirichletZero,
}

/// A uniform 1D or 2D lattice.
///
/// Node `(i, j)` has flat index `i + nx * j`; 1D grids use `j = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    shape: [usize; 2],
    h: f64,
    boundary: Boundary,
}

impl Grid {
    pub fn new(shape: &[usize], h: f64, boundary: Boundary) -> Result<Self> {
        let dim = shape.len();
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        let min_nodes = match boundary {
            Boundary::Periodic => 2,
            Boundary::DirichletZero => 1,
        };
        if let Some(&n) = shape.iter().find(|&&n| n < min_nodes) {
            return Err(Error::InvalidGrid(format!(
                "axis with {n} nodes; {boundary:?} grids need at least {min_nodes}"
            )));
        }
        let shape = if dim == 1 { [shape[0], 1] } else { [shape[0], shape[1]] };
        Ok(Grid {
            dim,
            shape,
            h,
            boundary,
        })
    }

    pub fn line(n: usize, h: f64, boundary: Boundary) -> Result<Self> {
        Self::new(&[n], h, boundary)
    }

    pub fn square(n: usize, h: f64, boundary: Boundary) -> Result<Self> {
        Self::new(&[n, n], h, boundary)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape[..self.dim]
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn node_count(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    /// Measure of one node (or cell): `h^n`.
    pub fn weight(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Cells per axis; the second entry is 1 on 1D grids.
    pub fn cell_shape(&self) -> [usize; 2] {
        match self.boundary {
            Boundary::Periodic => self.shape,
            Boundary::DirichletZero => {
                if self.dim == 1 {
                    [self.shape[0] + 1, 1]
                } else {
                    [self.shape[0] + 1, self.shape[1] + 1]
                }
            }
        }
    }

    pub fn cell_count(&self) -> usize {
        let [cx, cy] = self.cell_shape();
        cx * cy
    }

    pub fn coords(&self, node: usize) -> [usize; 2] {
        [node % self.shape[0], node / self.shape[0]]
    }

    pub fn index(&self, coords: [usize; 2]) -> usize {
        coords[0] + self.shape[0] * coords[1]
    }

    /// Base node of a cell, possibly a ghost (`-1`) on `DirichletZero` grids.
    pub fn cell_base(&self, cell: usize) -> [isize; 2] {
        let [cx, _] = self.cell_shape();
        let (ci, cj) = ((cell % cx) as isize, (cell / cx) as isize);
        match self.boundary {
            Boundary::Periodic => [ci, cj],
            Boundary::DirichletZero => {
                if self.dim == 1 {
                    [ci - 1, 0]
                } else {
                    [ci - 1, cj - 1]
                }
            }
        }
    }

    /// Index of the cell whose base is `base`, wrapping on periodic grids.
    pub fn cell_at(&self, base: [isize; 2]) -> usize {
        let [cx, _] = self.cell_shape();
        match self.boundary {
            Boundary::Periodic => {
                let i = base[0].rem_euclid(self.shape[0] as isize) as usize;
                let j = base[1].rem_euclid(self.shape[1] as isize) as usize;
                i + cx * j
            }
            Boundary::DirichletZero => {
                let i = (base[0] + 1) as usize;
                let j = if self.dim == 1 { 0 } else { (base[1] + 1) as usize };
                i + cx * j
            }
        }
    }

    /// Node a cell is attributed to for localized energies: its base node,
    /// clamped into the grid when the base is a ghost.
    pub fn cell_owner(&self, cell: usize) -> usize {
        let b = self.cell_base(cell);
        let i = b[0].max(0) as usize;
        let j = b[1].max(0) as usize;
        self.index([i, j])
    }

    /// Node value at possibly out-of-range coordinates: wrapped on periodic
    /// grids, zero on the ghost layer of `DirichletZero` grids.
    #[inline]
    pub fn value_at(&self, values: &[f64], c: [isize; 2]) -> f64 {
        match self.boundary {
            Boundary::Periodic => {
                let i = c[0].rem_euclid(self.shape[0] as isize) as usize;
                let j = c[1].rem_euclid(self.shape[1] as isize) as usize;
                values[i + self.shape[0] * j]
            }
            Boundary::DirichletZero => {
                let (nx, ny) = (self.shape[0] as isize, self.shape[1] as isize);
                if c[0] < 0 || c[0] >= nx || c[1] < 0 || c[1] >= ny {
                    0.0
                } else {
                    values[(c[0] + nx * c[1]) as usize]
                }
            }
        }
    }

    /// Physical position of a node. Periodic nodes sit at `i h`; Dirichlet
    /// nodes at `(i + 1) h`, so the ghost layer sits at `0` and `(n + 1) h`.
    pub fn position(&self, node: usize) -> [f64; 2] {
        let [i, j] = self.coords(node);
        let off = match self.boundary {
            Boundary::Periodic => 0.0,
            Boundary::DirichletZero => 1.0,
        };
        let y = if self.dim == 1 { 0.0 } else { (j as f64 + off) * self.h };
        [(i as f64 + off) * self.h, y]
    }

    /// Side lengths of the box spanned by the grid, ghosts included.
    pub fn extent(&self) -> [f64; 2] {
        let side = |n: usize| match self.boundary {
            Boundary::Periodic => n as f64 * self.h,
            Boundary::DirichletZero => (n + 1) as f64 * self.h,
        };
        [side(self.shape[0]), if self.dim == 1 { 0.0 } else { side(self.shape[1]) }]
    }

    /// Geometric center of the box.
    pub fn center(&self) -> [f64; 2] {
        let [ex, ey] = self.extent();
        match self.boundary {
            Boundary::Periodic => [(ex - self.h) / 2.0, (ey - self.h).max(0.0) / 2.0],
            Boundary::DirichletZero => [ex / 2.0, ey / 2.0],
        }
    }

    /// Euclidean distance between nodes, minimum-image on periodic grids.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (ca, cb) = (self.coords(a), self.coords(b));
        let mut d2 = 0.0;
        for ax in 0..self.dim {
            let mut d = (ca[ax] as isize - cb[ax] as isize).unsigned_abs();
            if self.boundary == Boundary::Periodic {
                d = d.min(self.shape[ax] - d);
            }
            let d = d as f64 * self.h;
            d2 += d * d;
        }
        d2.sqrt()
    }

    /// Whether the node touches the ghost layer (DirichletZero); always
    /// false on periodic grids.
    pub fn is_boundary_node(&self, node: usize) -> bool {
        if self.boundary == Boundary::Periodic {
            return false;
        }
        let c = self.coords(node);
        (0..self.dim).any(|ax| c[ax] == 0 || c[ax] + 1 == self.shape[ax])
    }

    /// Nodes adjacent along the axes (the 2n-point stencil), skipping ghosts.
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        let c = self.coords(node);
        let mut out = Vec::with_capacity(2 * self.dim);
        for ax in 0..self.dim {
            for step in [-1isize, 1] {
                let mut n = [c[0] as isize, c[1] as isize];
                n[ax] += step;
                match self.boundary {
                    Boundary::Periodic => {
                        n[ax] = n[ax].rem_euclid(self.shape[ax] as isize);
                    }
                    Boundary::DirichletZero => {
                        if n[ax] < 0 || n[ax] >= self.shape[ax] as isize {
                            continue;
                        }
                    }
                }
                out.push(self.index([n[0] as usize, n[1] as usize]));
            }
        }
        out
    }

    /// Cells that use `node` as one of their difference endpoints.
    pub fn incident_cells(&self, node: usize) -> Vec<(usize, usize)> {
        let c = self.coords(node);
        let base = [c[0] as isize, c[1] as isize];
        let mut out = Vec::with_capacity(2 * self.dim);
        for ax in 0..self.dim {
            out.push((self.cell_at(base), ax));
            let mut b = base;
            b[ax] -= 1;
            out.push((self.cell_at(b), ax));
        }
        out
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// Node-valued samples on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(GridFunction { grid, values })
    }

    /// Constructor for values already known to be valid.
    pub(crate) fn from_vec(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count());
        GridFunction { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        GridFunction {
            grid,
            values: vec![c; grid.node_count()],
        }
    }

    /// Samples `f` at node positions.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..grid.node_count()).map(|i| f(grid.position(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFunction::from_vec(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &GridFunction) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + s * b)
            .collect();
        GridFunction::from_vec(self.grid, values)
    }

    pub fn sub(&self, other: &GridFunction) -> Self {
        self.add_scaled(-1.0, other)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn inner(&self, other: &GridFunction) -> f64 {
        self.grid.weight() * dot(&self.values, &other.values)
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.inner(self)
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }
}

/// Gradient samples: one vector per cell, one component per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeField {
    grid: Grid,
    values: Vec<f64>,
}

impl EdgeField {
    /// `values` is laid out cell-major: `values[cell * dim + axis]`.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let expected = grid.cell_count() * grid.dim();
        if values.len() != expected {
            return Err(Error::GridMismatch(format!(
                "{} edge values, expected {expected}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(EdgeField { grid, values })
    }

    pub(crate) fn from_vec(grid: Grid, values: Vec<f64>) -> Self {
        EdgeField { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        EdgeField {
            grid,
            values: vec![0.0; grid.cell_count() * grid.dim()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Gradient vector of one cell; the second entry is 0 on 1D grids.
    #[inline]
    pub fn vector(&self, cell: usize) -> [f64; 2] {
        let d = self.grid.dim();
        if d == 1 {
            [self.values[cell], 0.0]
        } else {
            [self.values[2 * cell], self.values[2 * cell + 1]]
        }
    }

    pub fn component(&self, cell: usize, axis: usize) -> f64 {
        self.values[cell * self.grid.dim() + axis]
    }

    pub fn inner(&self, other: &EdgeField) -> f64 {
        self.grid.weight() * dot(&self.values, &other.values)
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.inner(self)
    }

    /// `h^n Σ_cells |ξ_c|^p` with the Euclidean norm per cell.
    pub fn lp_norm_pow(&self, p: f64) -> f64 {
        let w = self.grid.weight();
        (0..self.grid.cell_count())
            .map(|c| {
                let [a, b] = self.vector(c);
                (a * a + b * b).sqrt().powf(p)
            })
            .sum::<f64>()
            * w
    }
}

/// Forward differences `(u(b + e_a) - u(b)) / h` for every cell.
pub fn gradient(u: &GridFunction) -> EdgeField {
    let grid = *u.grid();
    let mut out = vec![0.0; grid.cell_count() * grid.dim()];
    gradient_into(&grid, u.values(), &mut out);
    EdgeField::from_vec(grid, out)
}

pub(crate) fn gradient_into(grid: &Grid, u: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    let inv_h = 1.0 / grid.h();
    for cell in 0..grid.cell_count() {
        let b = grid.cell_base(cell);
        let ub = grid.value_at(u, b);
        for ax in 0..d {
            let mut n = b;
            n[ax] += 1;
            out[cell * d + ax] = (grid.value_at(u, n) - ub) * inv_h;
        }
    }
}

/// Negative adjoint of [`gradient`]: node `x` receives
/// `Σ_a (g_a(cell at x) - g_a(cell at x - e_a)) / h`.
pub fn divergence(g: &EdgeField) -> GridFunction {
    let grid = *g.grid();
    let mut out = vec![0.0; grid.node_count()];
    divergence_into(&grid, g.values(), &mut out);
    GridFunction::from_vec(grid, out)
}

pub(crate) fn divergence_into(grid: &Grid, g: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    let inv_h = 1.0 / grid.h();
    for (node, o) in out.iter_mut().enumerate() {
        let c = grid.coords(node);
        let base = [c[0] as isize, c[1] as isize];
        let own = grid.cell_at(base);
        let mut acc = 0.0;
        for ax in 0..d {
            let mut b = base;
            b[ax] -= 1;
            let prev = grid.cell_at(b);
            acc += g[own * d + ax] - g[prev * d + ax];
        }
        *o = acc * inv_h;
    }
}

/// Discrete Hardy–Littlewood maximal function of `|u|`.
///
/// 1D: supremum of averages over all windows (intervals of nodes) that
/// contain the node; windows wrap on periodic grids and stay inside the node
/// range on Dirichlet grids. 2D: supremum over centered square (ℓ∞) balls,
/// clipped to the grid on Dirichlet grids.
pub fn hardy_littlewood_max(u: &GridFunction) -> GridFunction {
    let grid = *u.grid();
    let abs: Vec<f64> = u.values().iter().map(|v| v.abs()).collect();
    let values = if grid.dim() == 1 {
        hl_max_1d(&abs, grid.boundary())
    } else {
        hl_max_2d(&grid, &abs)
    };
    GridFunction::from_vec(grid, values)
}

fn hl_max_1d(u: &[f64], boundary: Boundary) -> Vec<f64> {
    let n = u.len();
    let periodic = boundary == Boundary::Periodic;
    // prefix sums over a doubled copy so wrapped windows are contiguous
    let len = if periodic { 2 * n } else { n };
    let mut prefix = vec![0.0; len + 1];
    for k in 0..len {
        prefix[k + 1] = prefix[k] + u[k % n];
    }
    let mut out = u.to_vec();
    let mut deque: VecDeque<usize> = VecDeque::new();
    for w in 2..=n {
        // window starts: periodic a ∈ [0, n), Dirichlet a ∈ [0, n - w]
        let starts = if periodic { n } else { n - w + 1 };
        let avg: Vec<f64> = (0..starts)
            .map(|a| (prefix[a + w] - prefix[a]) / w as f64)
            .collect();
        // node x is covered by starts a ∈ [x - w + 1, x]
        if periodic {
            // sliding max over the cyclic sequence of starts
            deque.clear();
            let total = n + w - 1;
            for k in 0..total {
                let a = k % n;
                while deque.back().is_some_and(|&b| avg[b % n] <= avg[a]) {
                    deque.pop_back();
                }
                deque.push_back(k);
                while deque.front().is_some_and(|&f| f + w <= k) {
                    deque.pop_front();
                }
                if k + 1 >= w {
                    let x = k % n;
                    let best = avg[deque.front().copied().unwrap() % n];
                    if best > out[x] {
                        out[x] = best;
                    }
                }
            }
        } else {
            deque.clear();
            let mut next = 0;
            for (x, o) in out.iter_mut().enumerate() {
                while next <= x.min(starts - 1) {
                    while deque.back().is_some_and(|&b| avg[b] <= avg[next]) {
                        deque.pop_back();
                    }
                    deque.push_back(next);
                    next += 1;
                }
                while deque.front().is_some_and(|&f| f + w <= x) {
                    deque.pop_front();
                }
                if let Some(&f) = deque.front() {
                    if avg[f] > *o {
                        *o = avg[f];
                    }
                }
            }
        }
    }
    out
}

fn hl_max_2d(grid: &Grid, u: &[f64]) -> Vec<f64> {
    let [nx, ny] = [grid.shape()[0], grid.shape()[1]];
    let periodic = grid.boundary() == Boundary::Periodic;
    // summed-area table over a (possibly tripled, for wrap) array
    let (px, py) = if periodic { (3 * nx, 3 * ny) } else { (nx, ny) };
    let at = |i: usize, j: usize| u[(i % nx) + nx * (j % ny)];
    let mut sat = vec![0.0; (px + 1) * (py + 1)];
    for j in 0..py {
        for i in 0..px {
            sat[(i + 1) + (px + 1) * (j + 1)] = at(i, j) + sat[i + (px + 1) * (j + 1)]
                + sat[(i + 1) + (px + 1) * j]
                - sat[i + (px + 1) * j];
        }
    }
    let rect = |i0: usize, i1: usize, j0: usize, j1: usize| {
        // inclusive-exclusive [i0, i1) × [j0, j1)
        sat[i1 + (px + 1) * j1] - sat[i0 + (px + 1) * j1] - sat[i1 + (px + 1) * j0]
            + sat[i0 + (px + 1) * j0]
    };
    let max_r = if periodic {
        (nx.min(ny) - 1) / 2
    } else {
        nx.max(ny)
    };
    let mut out = u.to_vec();
    for node in 0..grid.node_count() {
        let [i, j] = grid.coords(node);
        let mut best = out[node];
        for r in 1..=max_r {
            let avg = if periodic {
                let (ci, cj) = (i + nx, j + ny);
                let s = rect(ci - r, ci + r + 1, cj - r, cj + r + 1);
                s / ((2 * r + 1) * (2 * r + 1)) as f64
            } else {
                let i0 = i.saturating_sub(r);
                let i1 = (i + r + 1).min(nx);
                let j0 = j.saturating_sub(r);
                let j1 = (j + r + 1).min(ny);
                rect(i0, i1, j0, j1) / ((i1 - i0) * (j1 - j0)) as f64
            };
            best = best.max(avg);
        }
        if periodic {
            best = best.max(u.iter().sum::<f64>() / u.len() as f64);
        }
        out[node] = best;
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fn(grid: Grid, rng: &mut ChaCha8Rng) -> GridFunction {
        let v = (0..grid.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        GridFunction::new(grid, v).unwrap()
    }

    fn random_edges(grid: Grid, rng: &mut ChaCha8Rng) -> EdgeField {
        let mut v: Vec<f64> = (0..grid.cell_count() * grid.dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        // ghost-to-ghost components never appear in a gradient; zero them so
        // the field lies in the range the adjoint identity speaks about
        if grid.boundary() == Boundary::DirichletZero {
            for cell in 0..grid.cell_count() {
                let b = grid.cell_base(cell);
                for ax in 0..grid.dim() {
                    let mut n = b;
                    n[ax] += 1;
                    let inside = |c: [isize; 2]| {
                        (0..grid.dim()).all(|a| c[a] >= 0 && c[a] < grid.shape()[a] as isize)
                    };
                    if !inside(b) && !inside(n) {
                        v[cell * grid.dim() + ax] = 0.0;
                    }
                }
            }
        }
        EdgeField::new(grid, v).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::line(1, 1.0, Boundary::Periodic).is_err());
        assert!(Grid::line(4, 0.0, Boundary::Periodic).is_err());
        assert!(Grid::new(&[2, 2, 2], 1.0, Boundary::Periodic).is_err());
        assert!(Grid::line(1, 1.0, Boundary::DirichletZero).is_ok());
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        for b in [Boundary::Periodic] {
            let g = Grid::square(5, 0.3, b).unwrap();
            let grad = gradient(&GridFunction::constant(g, 3.0));
            assert!(grad.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn periodic_line_hand_values() {
        let g = Grid::line(3, 1.0, Boundary::Periodic).unwrap();
        let u = GridFunction::new(g, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(gradient(&u).values(), &[1.0, -1.0, 0.0]);
        let e = EdgeField::new(g, vec![1.0, -1.0, 0.0]).unwrap();
        assert_eq!(divergence(&e).values(), &[1.0, -2.0, 1.0]);
    }

    #[test]
    fn dirichlet_single_node_sees_ghosts() {
        let g = Grid::line(1, 1.0, Boundary::DirichletZero).unwrap();
        let u = GridFunction::new(g, vec![2.5]).unwrap();
        assert_eq!(gradient(&u).values(), &[2.5, -2.5]);
    }

    #[test]
    fn zero_field_has_zero_divergence() {
        let g = Grid::square(4, 1.0, Boundary::DirichletZero).unwrap();
        assert!(divergence(&EdgeField::zeros(g)).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn summation_by_parts_all_layouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grids = [
            Grid::line(17, 0.1, Boundary::Periodic).unwrap(),
            Grid::line(17, 0.1, Boundary::DirichletZero).unwrap(),
            Grid::square(8, 0.25, Boundary::Periodic).unwrap(),
            Grid::new(&[6, 9], 0.5, Boundary::DirichletZero).unwrap(),
        ];
        for g in grids {
            for _ in 0..20 {
                let u = random_fn(g, &mut rng);
                let e = random_edges(g, &mut rng);
                let lhs = divergence(&e).inner(&u);
                let rhs = -e.inner(&gradient(&u));
                let scale = lhs.abs().max(rhs.abs()).max(1e-300);
                assert!((lhs - rhs).abs() <= 1e-13 * scale.max(1.0), "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn periodic_divergence_conserves_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::square(7, 1.0, Boundary::Periodic).unwrap();
        let e = random_edges(g, &mut rng);
        let s: f64 = divergence(&e).values().iter().sum();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn hl_max_window_enumeration() {
        let g = Grid::line(4, 1.0, Boundary::DirichletZero).unwrap();
        let u = GridFunction::new(g, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let m = hardy_littlewood_max(&u);
        assert_eq!(m.values()[0], 0.5);
        assert_eq!(m.values()[1], 1.0);
        assert_eq!(m.values()[2], 0.5);
        assert!((m.values()[3] - 1.0 / 3.0).abs() < 1e-15);
    }

    fn brute_hl_1d(u: &[f64], periodic: bool) -> Vec<f64> {
        let n = u.len();
        (0..n)
            .map(|x| {
                let mut best = f64::NEG_INFINITY;
                for w in 1..=n {
                    let starts: Vec<usize> = if periodic {
                        (0..n).collect()
                    } else {
                        (0..=n - w).collect()
                    };
                    for a in starts {
                        let cover = (0..w).any(|k| (a + k) % n == x);
                        if cover {
                            let s: f64 = (0..w).map(|k| u[(a + k) % n]).sum();
                            best = best.max(s / w as f64);
                        }
                    }
                }
                best
            })
            .collect()
    }

    #[test]
    fn hl_max_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for b in [Boundary::Periodic, Boundary::DirichletZero] {
            for n in [2usize, 3, 7, 12] {
                let g = Grid::line(n, 1.0, b).unwrap();
                let u: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
                let m = hardy_littlewood_max(&GridFunction::new(g, u.clone()).unwrap());
                let want = brute_hl_1d(&u, b == Boundary::Periodic);
                for (a, w) in m.values().iter().zip(&want) {
                    assert!((a - w).abs() < 1e-14, "{b:?} n={n}: {a} vs {w}");
                }
            }
        }
    }

    #[test]
    fn hl_max_constant_and_dominates() {
        let g = Grid::square(6, 1.0, Boundary::Periodic).unwrap();
        let m = hardy_littlewood_max(&GridFunction::constant(g, 2.0));
        assert!(m.values().iter().all(|&v| (v - 2.0).abs() < 1e-14));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_fn(Grid::square(9, 1.0, Boundary::DirichletZero).unwrap(), &mut rng).abs();
        let m = hardy_littlewood_max(&u);
        assert!(m.values().iter().zip(u.values()).all(|(a, b)| a >= b));
    }

    #[test]
    fn distance_wraps() {
        let g = Grid::line(10, 0.5, Boundary::Periodic).unwrap();
        assert_eq!(g.distance(0, 9), 0.5);
        let g = Grid::line(10, 0.5, Boundary::DirichletZero).unwrap();
        assert_eq!(g.distance(0, 9), 4.5);
    }
}
