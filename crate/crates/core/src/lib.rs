//! Discrete gradient flows and their vertical maximal functions.
//!
//! The crate discretizes two families of flows on uniform 1D/2D lattices:
//!
//! * the degenerate p-parabolic flow `u' = div(|∇u|^{p-2} ∇u)` (and its
//!   quadratic variant `u' = div(A∇u)`), integrated by proximal
//!   (backward-Euler) steps so that the energy and L² ledgers hold exactly;
//! * the heat semigroup `e^{tL}` and the Poisson semigroup `e^{-t(-L)^{1/2}}`
//!   of a divergence-form operator `L = div(A∇·)` with rough coefficients.
//!
//! On top of these flows it computes vertical maximal functions
//! `m(x) = sup_t u(t, x)` over geometric time grids and checks that the energy
//! of `m` does not exceed the energy of the data, together with the
//! supporting discrete inequalities (comparison, positivity, finite speed,
//! heat kernel bounds, subharmonicity on the detachment set, pointwise
//! gradient bounds).
//!
//! Module map:
//!
//! | module      | contents                                                   |
//! |-------------|------------------------------------------------------------|
//! | [`grid`]    | lattices, gradient/divergence, Hardy–Littlewood maximal    |
//! | [`energy`]  | variational kernels, coefficient fields, energies, gaps    |
//! | [`pflow`]   | proximal stepper, flow traces, order/finite-speed checks   |
//! | [`semigroup`] | elliptic operator, heat/Poisson semigroups, certificates |
//! | [`maximal`] | vertical maximal functions, detachment sets, residuals     |
//! | [`verify`]  | contraction harnesses and randomized ensembles             |
//! | [`config`]  | run configuration and command execution for the CLI        |

pub mod config;
pub mod energy;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod maximal;
pub mod output;
pub mod pflow;
pub mod semigroup;
pub mod verify;

pub use energy::{CoefficientField, RegionMask, VariationalKernel};
pub use error::{Error, Result};
pub use grid::{Boundary, EdgeField, Grid, GridFunction};
pub use maximal::{DetachmentSet, MaximalResult, Source, SourceKind};
pub use verify::{Checks, ContractionReport, Ensemble, Generator};
pub use pflow::{FlowTrace, ProximalConfig, TimeGrid};
pub use semigroup::{EllipticOperator, PoissonMethod, SpectralDecomposition};


