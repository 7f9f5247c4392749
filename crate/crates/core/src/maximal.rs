//! Vertical maximal functions `m(x) = max_k u(t_k, x)` of the three flows,
//! detachment sets `{m > f}`, subharmonicity residuals on them, and the
//! pointwise Hajłasz-type gradient bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{flux_field, subsolution_residual, RegionMask, VariationalKernel};
use crate::error::{Error, Result};
use crate::grid::{gradient, hardy_littlewood_max, Boundary, GridFunction};
use crate::output::{num, CsvTable};
use crate::pflow::{solve_flow, ProximalConfig, TimeGrid};
use crate::semigroup::{heat_trajectory, poisson_trajectory, EllipticOperator, PoissonMethod};

/// Default detachment tolerance.
pub const DETACHMENT_TOL: f64 = 1e-8;
/// Default relative tolerance for the subharmonicity residual.
pub const SUBHARMONIC_TOL: f64 = 1e-6;

/// The extension `u(t, ·)` whose vertical maximum is taken.
#[derive(Clone, Debug)]
pub enum Source {
    PFlow {
        kernel: VariationalKernel,
        config: ProximalConfig,
    },
    Heat(EllipticOperator),
    Poisson(EllipticOperator),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    PFlow,
    Heat,
    Poisson,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::PFlow => "p-flow",
            SourceKind::Heat => "heat",
            SourceKind::Poisson => "poisson",
        }
    }
}

impl Source {
    pub fn pflow(kernel: VariationalKernel) -> Self {
        Source::PFlow {
            kernel,
            config: ProximalConfig::default(),
        }
    }

    pub fn kind(&self) -> SourceKind {
        match self {
            Source::PFlow { .. } => SourceKind::PFlow,
            Source::Heat(_) => SourceKind::Heat,
            Source::Poisson(_) => SourceKind::Poisson,
        }
    }

    /// The energy the flow dissipates: the p-flow kernel, or `½ A ξ·ξ` for
    /// the semigroups.
    pub fn energy_kernel(&self) -> VariationalKernel {
        match self {
            Source::PFlow { kernel, .. } => kernel.clone(),
            Source::Heat(op) | Source::Poisson(op) => VariationalKernel::Quadratic(op.coefficients().clone()),
        }
    }

    /// States at every knot of `timegrid`, starting with `f` itself.
    pub fn trajectory(&self, f: &GridFunction, timegrid: &TimeGrid) -> Result<Vec<GridFunction>> {
        match self {
            Source::PFlow { kernel, config } => Ok(solve_flow(f, timegrid, kernel, config)?.states().to_vec()),
            Source::Heat(op) => heat_trajectory(op, f, timegrid.knots()),
            Source::Poisson(op) => {
                let method = if op.uses_spectral() {
                    PoissonMethod::Spectral
                } else {
                    PoissonMethod::Subordination
                };
                poisson_trajectory(op, f, timegrid.knots(), method)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct MaximalResult {
    source: SourceKind,
    base: GridFunction,
    maximal: GridFunction,
    argmax: Vec<usize>,
    argmax_t: Vec<f64>,
    timegrid: TimeGrid,
    states: Vec<GridFunction>,
}

impl MaximalResult {
    pub fn source(&self) -> SourceKind {
        self.source
    }

    pub fn base(&self) -> &GridFunction {
        &self.base
    }

    pub fn maximal(&self) -> &GridFunction {
        &self.maximal
    }

    /// Knot index attaining the maximum at each node (smallest on ties).
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    /// Time attaining the maximum; equals the knot time unless the sup was
    /// refined between knots.
    pub fn argmax_t(&self) -> &[f64] {
        &self.argmax_t
    }

    pub fn timegrid(&self) -> &TimeGrid {
        &self.timegrid
    }

    pub fn states(&self) -> &[GridFunction] {
        &self.states
    }

    /// CSV: `node_index, f, m, argmax_t, in_detachment`.
    pub fn to_csv(&self, detachment: &DetachmentSet) -> CsvTable {
        let mut t = CsvTable::new(&["node_index", "f", "m", "argmax_t", "in_detachment"]);
        for n in 0..self.base.len() {
            t.row([
                n.to_string(),
                num(self.base.values()[n]),
                num(self.maximal.values()[n]),
                num(self.argmax_t[n]),
                u8::from(detachment.mask.contains(n)).to_string(),
            ]);
        }
        t
    }
}

fn check_nonnegative(f: &GridFunction) -> Result<()> {
    match f.values().iter().position(|&v| v < 0.0) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "data must be nonnegative; f[{i}] = {}",
            f.values()[i]
        ))),
        None => Ok(()),
    }
}

/// `m(x) = max_k u(t_k, x)` over all knots, `k = 0` included.
pub fn vertical_max(source: &Source, f: &GridFunction, timegrid: &TimeGrid) -> Result<MaximalResult> {
    check_nonnegative(f)?;
    let states = source.trajectory(f, timegrid)?;
    Ok(from_states(source.kind(), f, timegrid, states))
}

pub(crate) fn from_states(source: SourceKind, f: &GridFunction, timegrid: &TimeGrid, states: Vec<GridFunction>) -> MaximalResult {
    let n = f.len();
    let mut m = f.values().to_vec();
    let mut argmax = vec![0usize; n];
    for (k, u) in states.iter().enumerate().skip(1) {
        for (x, &v) in u.values().iter().enumerate() {
            if v > m[x] {
                m[x] = v;
                argmax[x] = k;
            }
        }
    }
    let knots = timegrid.knots();
    MaximalResult {
        source,
        base: f.clone(),
        maximal: GridFunction::from_vec(*f.grid(), m),
        argmax_t: argmax.iter().map(|&k| knots[k]).collect(),
        argmax,
        timegrid: timegrid.clone(),
        states,
    }
}

/// Replaces the knot maximum of a heat or Poisson result by the maximum over
/// the whole interval `[0, t_max]`.
///
/// Between consecutive knots where `∂_t u(·, x)` changes sign from `+` to
/// `−`, the critical time is located by a bracketed root search on the
/// spectral representation. At such an interior maximum `∂_t u = 0`, which
/// makes the discrete subsolution test sharp instead of `O(Δt)`. p-flow
/// results are returned unchanged: the scheme is discrete in time.
pub fn refine_sup(source: &Source, res: &MaximalResult) -> Result<MaximalResult> {
    let (op, poisson) = match source {
        Source::PFlow { .. } => return Ok(res.clone()),
        Source::Heat(op) => (op, false),
        Source::Poisson(op) => (op, true),
    };
    if source.kind() != res.source {
        return Err(Error::InvalidArgument("source does not match the result".into()));
    }
    let sd = op.spectral()?;
    let n = sd.len();
    let rates: Vec<f64> = sd
        .eigenvalues()
        .iter()
        .map(|&l| if poisson { l.max(0.0).sqrt() } else { l.max(0.0) })
        .collect();
    let c = sd.coefficients(res.base.values());
    let knots = res.timegrid.knots();
    // ∂_t u at every knot and node
    let slopes: Vec<Vec<f64>> = knots
        .iter()
        .map(|&t| {
            let d: Vec<f64> = c
                .iter()
                .zip(&rates)
                .map(|(&cj, &r)| -r * cj * (-r * t).exp())
                .collect();
            sd.synthesize(&d)
        })
        .collect();

    let refined: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut best = (res.maximal.values()[x], res.argmax_t[x]);
            let brackets: Vec<usize> = (0..knots.len() - 1)
                .filter(|&k| slopes[k][x] > 0.0 && slopes[k + 1][x] < 0.0)
                .collect();
            if brackets.is_empty() {
                return best;
            }
            let w: Vec<f64> = (0..n).map(|j| c[j] * sd.eigenvector(j)[x]).collect();
            let value = |t: f64| -> f64 { w.iter().zip(&rates).map(|(wj, r)| wj * (-r * t).exp()).sum() };
            let slope = |t: f64| -> f64 { w.iter().zip(&rates).map(|(wj, r)| -r * wj * (-r * t).exp()).sum() };
            for k in brackets {
                let t = bracketed_root(&slope, knots[k], knots[k + 1], slopes[k][x], slopes[k + 1][x]);
                let v = value(t);
                if v > best.0 {
                    best = (v, t);
                }
            }
            best
        })
        .collect();

    let mut out = res.clone();
    let mut m = res.maximal.values().to_vec();
    for (x, (v, t)) in refined.into_iter().enumerate() {
        if v > m[x] {
            m[x] = v;
            out.argmax_t[x] = t;
        }
    }
    out.maximal = GridFunction::from_vec(*res.base.grid(), m);
    Ok(out)
}

/// Root of `g` in `[a, b]` with `g(a) > 0 > g(b)` (Illinois regula falsi).
fn bracketed_root(g: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut ga: f64, mut gb: f64) -> f64 {
    let mut side = 0i8;
    for _ in 0..200 {
        let t = (a * gb - b * ga) / (gb - ga);
        let t = if t > a && t < b { t } else { 0.5 * (a + b) };
        let gt = g(t);
        if gt == 0.0 || (b - a) <= 4.0 * f64::EPSILON * b.abs() {
            return t;
        }
        if gt > 0.0 {
            a = t;
            ga = gt;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = t;
            gb = gt;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
    }
    0.5 * (a + b)
}

#[derive(Clone, Debug)]
pub struct DetachmentSet {
    pub mask: RegionMask,
    pub tol: f64,
    /// Whether `E` contains a node adjacent to the Dirichlet boundary.
    pub touches_boundary: bool,
}

/// `E = {m > f + tol}`.
pub fn detachment_set(res: &MaximalResult, tol: f64) -> DetachmentSet {
    let grid = *res.base.grid();
    let (f, m) = (res.base.values(), res.maximal.values());
    let mask = RegionMask::from_fn(grid, |n| m[n] > f[n] + tol);
    let touches_boundary =
        grid.boundary() == Boundary::DirichletZero && mask.nodes().any(|n| grid.is_boundary_node(n));
    DetachmentSet {
        mask,
        tol,
        touches_boundary,
    }
}

/// Which detachment nodes the residual is evaluated at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualScope {
    /// Every node of `E`.
    Detachment,
    /// Nodes of `E` whose full stencil lies in `E`.
    Interior,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SubharmonicityReport {
    pub evaluated: usize,
    /// `min div 𝒜(∇m)` over the evaluated nodes (`+∞` when none).
    pub min_residual: f64,
    pub worst_node: Option<usize>,
    /// Largest flux difference quotient `max |𝒜(∇m)| / h`.
    pub scale: f64,
    pub vacuous: bool,
    pub pass: bool,
}

impl SubharmonicityReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.vacuous || self.min_residual >= -rel_tol * self.scale
    }

    /// `min_residual / scale`, or 0 when nothing was evaluated.
    pub fn relative(&self) -> f64 {
        if self.vacuous || self.scale == 0.0 {
            0.0
        } else {
            self.min_residual / self.scale
        }
    }
}

/// Discrete subsolution test `div 𝒜(∇m) ≥ 0` on the detachment set.
pub fn subharmonicity_residual(
    res: &MaximalResult,
    kernel: &VariationalKernel,
    e: &DetachmentSet,
    scope: ResidualScope,
) -> Result<SubharmonicityReport> {
    let m = &res.maximal;
    let nodes = match scope {
        ResidualScope::Detachment => e.mask.clone(),
        ResidualScope::Interior => e.mask.interior(),
    };
    if e.mask.is_empty() {
        return Ok(SubharmonicityReport {
            evaluated: 0,
            min_residual: f64::INFINITY,
            worst_node: None,
            scale: 0.0,
            vacuous: true,
            pass: true,
        });
    }
    if nodes.is_empty() {
        return Err(Error::EmptyInterior);
    }
    let r = subsolution_residual(m, kernel);
    let flux = flux_field(kernel, &gradient(m));
    let scale = flux.values().iter().fold(0.0f64, |a, v| a.max(v.abs())) / m.grid().h();
    let (mut min_residual, mut worst_node) = (f64::INFINITY, None);
    for n in nodes.nodes() {
        if r.values()[n] < min_residual {
            min_residual = r.values()[n];
            worst_node = Some(n);
        }
    }
    let mut rep = SubharmonicityReport {
        evaluated: nodes.count(),
        min_residual,
        worst_node,
        scale,
        vacuous: false,
        pass: false,
    };
    rep.pass = rep.passes(SUBHARMONIC_TOL);
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HajlaszReport {
    /// `max |m_ε(x) − m_ε(y)| / (d(x,y)(Mg(x) + Mg(y)))` over node pairs.
    pub max_ratio: f64,
    pub worst_pair: Option<(usize, usize)>,
    pub pass: bool,
}

/// Largest node count accepted by [`hajlasz_bound`].
pub const HAJLASZ_MAX_NODES: usize = 4096;

/// Pointwise bound `|m_ε(x) − m_ε(y)| ≤ d(x,y) (Mg(x) + Mg(y))` where
/// `m_ε = max_{t_k ≥ ε} u(t_k)` and `g = max_{t_k ≥ ε}` of the largest
/// incident edge gradient magnitude.
pub fn hajlasz_bound(res: &MaximalResult, eps: f64) -> Result<HajlaszReport> {
    let grid = *res.base.grid();
    let n = grid.node_count();
    if n > HAJLASZ_MAX_NODES {
        return Err(Error::InvalidArgument(format!(
            "{n} nodes exceed the all-pairs limit {HAJLASZ_MAX_NODES}"
        )));
    }
    let knots = res.timegrid.knots();
    let used: Vec<usize> = (0..knots.len()).filter(|&k| knots[k] >= eps).collect();
    if used.is_empty() {
        return Err(Error::InvalidArgument(format!("no knot at or after eps = {eps}")));
    }
    let mut m = vec![f64::NEG_INFINITY; n];
    let mut g = vec![0.0f64; n];
    for &k in &used {
        let u = &res.states[k];
        let grad = gradient(u);
        for x in 0..n {
            m[x] = m[x].max(u.values()[x]);
            for (cell, ax) in grid.incident_cells(x) {
                g[x] = g[x].max(grad.component(cell, ax).abs());
            }
        }
    }
    let mg = hardy_littlewood_max(&GridFunction::from_vec(grid, g));
    let mg = mg.values();
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let rows: Vec<(f64, Option<(usize, usize)>)> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut best = (0.0, None);
            for y in x + 1..n {
                let lhs = (m[x] - m[y]).abs();
                if lhs <= 1e-14 * scale {
                    continue;
                }
                let rhs = grid.distance(x, y) * (mg[x] + mg[y]);
                let ratio = if rhs > 0.0 { lhs / rhs } else { f64::INFINITY };
                if ratio > best.0 {
                    best = (ratio, Some((x, y)));
                }
            }
            best
        })
        .collect();
    let (max_ratio, worst_pair) = rows
        .into_iter()
        .fold((0.0, None), |a, b| if b.0 > a.0 { b } else { a });
    Ok(HajlaszReport {
        max_ratio,
        worst_pair,
        pass: max_ratio <= 1.0 + 1e-6,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{total_energy, CoefficientField};
    use crate::grid::Grid;
    use crate::semigroup::assemble;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cosine() -> (Source, GridFunction) {
        let g = Grid::line(4, 1.0, Boundary::Periodic).unwrap();
        let op = assemble(g, &CoefficientField::identity(g)).unwrap();
        (Source::Heat(op), GridFunction::new(g, vec![1.5, 1.0, 0.5, 1.0]).unwrap())
    }

    fn bump(g: Grid, center: f64, width: f64) -> GridFunction {
        GridFunction::from_fn(g, |x| {
            let r = (x[0] - center).abs() / width;
            if r < 1.0 {
                (1.0 - r * r).powi(2)
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn constants_are_fixed() {
        let g = Grid::line(8, 0.5, Boundary::Periodic).unwrap();
        let f = GridFunction::constant(g, 2.0);
        let op = assemble(g, &CoefficientField::identity(g)).unwrap();
        let tg = TimeGrid::geometric(1e-2, 2.0, 4.0).unwrap();
        for s in [
            Source::pflow(VariationalKernel::p_power(3.0).unwrap()),
            Source::Heat(op.clone()),
            Source::Poisson(op),
        ] {
            let r = vertical_max(&s, &f, &tg).unwrap();
            for &v in r.maximal().values() {
                assert!((v - 2.0).abs() < 1e-12);
            }
            assert!(detachment_set(&r, DETACHMENT_TOL).mask.is_empty());
            let e = detachment_set(&r, DETACHMENT_TOL);
            let rep = subharmonicity_residual(&r, &s.energy_kernel(), &e, ResidualScope::Interior).unwrap();
            assert!(rep.vacuous && rep.pass);
        }
    }

    #[test]
    fn cosine_closed_form() {
        let (s, f) = cosine();
        let tg = TimeGrid::geometric(1e-4, 1.25, 10.0).unwrap();
        let r = vertical_max(&s, &f, &tg).unwrap();
        let want = [1.5, 1.0, 1.0 - 0.5 * (-20.0f64).exp(), 1.0];
        for (a, b) in r.maximal().values().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(r.argmax()[0], 0);
        assert_eq!(r.argmax()[2], tg.len() - 1);
        let e = detachment_set(&r, 1e-6);
        assert_eq!(e.mask.nodes().collect::<Vec<_>>(), vec![2]);
        // (1 − 2 m_2 + 1) / h² = e^{−20}
        let k = s.energy_kernel();
        let rep = subharmonicity_residual(&r, &k, &e, ResidualScope::Detachment).unwrap();
        assert!((rep.min_residual - (-20.0f64).exp()).abs() < 1e-12);
        assert!(rep.pass);
        assert!(matches!(
            subharmonicity_residual(&r, &k, &e, ResidualScope::Interior),
            Err(Error::EmptyInterior)
        ));
        // edge differences (−0.5, −0.5, 0.5, 0.5) for f, (−0.5, 0, 0, 0.5) for m
        assert!((total_energy(&f, &k) - 0.5).abs() < 1e-14);
        assert!((total_energy(r.maximal(), &k) - 0.25).abs() < 1e-8);
    }

    #[test]
    fn detachment_shrinks_with_tolerance() {
        let g = Grid::line(64, 0.1, Boundary::Periodic).unwrap();
        let op = assemble(g, &CoefficientField::identity(g)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = GridFunction::new(g, (0..64).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let r = vertical_max(&Source::Heat(op), &f, &TimeGrid::default_geometric()).unwrap();
        let mut prev = detachment_set(&r, 0.0).mask;
        for tol in [1e-8, 1e-4, 1e-2, 0.1, 0.5] {
            let e = detachment_set(&r, tol).mask;
            assert!(e.is_subset_of(&prev));
            prev = e;
        }
    }

    #[test]
    fn maximal_dominates_and_is_monotone_in_t_max() {
        let g = Grid::line(48, 0.25, Boundary::DirichletZero).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = CoefficientField::random(g, 5.0, &mut rng).unwrap();
        let op = assemble(g, &a).unwrap();
        let f = GridFunction::new(g, (0..48).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        for s in [
            Source::pflow(VariationalKernel::p_power(3.0).unwrap()),
            Source::Heat(op.clone()),
            Source::Poisson(op.clone()),
        ] {
            let short = vertical_max(&s, &f, &TimeGrid::geometric(1e-3, 2.0, 0.512).unwrap()).unwrap();
            let long = vertical_max(&s, &f, &TimeGrid::geometric(1e-3, 2.0, 4.096).unwrap()).unwrap();
            for x in 0..48 {
                assert!(short.maximal().values()[x] >= f.values()[x]);
                assert!(long.maximal().values()[x] >= short.maximal().values()[x] - 1e-14);
            }
        }
    }

    #[test]
    fn refinement_finds_interior_critical_times() {
        let g = Grid::line(32, 0.2, Boundary::Periodic).unwrap();
        let op = assemble(g, &CoefficientField::identity(g)).unwrap();
        let f = bump(g, 3.2, 1.0);
        let tg = TimeGrid::geometric(1e-3, 1.6, 2.0).unwrap();
        for s in [Source::Heat(op.clone()), Source::Poisson(op.clone())] {
            let coarse = vertical_max(&s, &f, &tg).unwrap();
            let fine = refine_sup(&s, &coarse).unwrap();
            let dense = vertical_max(&s, &f, &TimeGrid::geometric(1e-3, 1.002, 2.0).unwrap()).unwrap();
            for x in 0..32 {
                let (c, r, d) = (coarse.maximal().values()[x], fine.maximal().values()[x], dense.maximal().values()[x]);
                assert!(r >= c);
                assert!(r >= d - 1e-12, "{x}: refined {r} below dense {d}");
                assert!(r - d < 1e-6);
            }
            let e = detachment_set(&fine, DETACHMENT_TOL);
            let rep = subharmonicity_residual(&fine, &s.energy_kernel(), &e, ResidualScope::Detachment).unwrap();
            assert!(rep.min_residual >= -1e-10 * rep.scale, "{:?} {rep:?}", s.kind());
        }
    }

    #[test]
    fn pflow_subharmonic_on_detachment_1d() {
        let g = Grid::line(64, 0.125, Boundary::DirichletZero).unwrap();
        let f = bump(g, 4.0, 1.5);
        let k = VariationalKernel::p_power(4.0).unwrap();
        let r = vertical_max(&Source::pflow(k.clone()), &f, &TimeGrid::geometric(1e-3, 1.25, 2.0).unwrap()).unwrap();
        let e = detachment_set(&r, DETACHMENT_TOL);
        assert!(!e.mask.is_empty());
        let rep = subharmonicity_residual(&r, &k, &e, ResidualScope::Detachment).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn hajlasz_brute_force_1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for boundary in [Boundary::Periodic, Boundary::DirichletZero] {
            let g = Grid::line(40, 0.1, boundary).unwrap();
            let op = assemble(g, &CoefficientField::random(g, 4.0, &mut rng).unwrap()).unwrap();
            let f = GridFunction::new(g, (0..40).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
            let tg = TimeGrid::geometric(1e-3, 1.5, 1.0).unwrap();
            for s in [
                Source::pflow(VariationalKernel::p_power(2.5).unwrap()),
                Source::Heat(op.clone()),
                Source::Poisson(op.clone()),
            ] {
                let r = vertical_max(&s, &f, &tg).unwrap();
                let rep = hajlasz_bound(&r, 1e-3).unwrap();
                assert!(rep.pass, "{boundary:?} {:?} {rep:?}", s.kind());
                assert!(rep.max_ratio > 0.0);
            }
        }
    }

    #[test]
    fn hajlasz_constant_is_trivial() {
        let g = Grid::line(16, 0.1, Boundary::Periodic).unwrap();
        let op = assemble(g, &CoefficientField::identity(g)).unwrap();
        let r = vertical_max(&Source::Heat(op), &GridFunction::constant(g, 1.0), &TimeGrid::default_geometric())
            .unwrap();
        let rep = hajlasz_bound(&r, 1e-4).unwrap();
        assert_eq!(rep.max_ratio, 0.0);
        assert!(rep.worst_pair.is_none());
    }

    #[test]
    fn negative_data_rejected() {
        let g = Grid::line(4, 1.0, Boundary::Periodic).unwrap();
        let f = GridFunction::new(g, vec![1.0, -0.1, 0.0, 0.0]).unwrap();
        let s = Source::pflow(VariationalKernel::p_power(3.0).unwrap());
        assert!(vertical_max(&s, &f, &TimeGrid::default_geometric()).is_err());
    }

    #[test]
    fn csv_columns() {
        let (s, f) = cosine();
        let r = vertical_max(&s, &f, &TimeGrid::geometric(0.5, 2.0, 2.0).unwrap()).unwrap();
        let e = detachment_set(&r, 1e-6);
        let text = String::from_utf8(r.to_csv(&e).into_bytes()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("node_index,f,m,argmax_t,in_detachment"));
        assert_eq!(lines.next(), Some("0,1.5,1.5,0,0"));
        assert!(lines.nth(1).unwrap().ends_with(",2,1"));
    }
}
