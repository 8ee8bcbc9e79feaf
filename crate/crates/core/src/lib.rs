//! Discrete multi-marginal optimal transport.
//!
//! The crate solves the multi-marginal Kantorovich problem over finitely
//! supported marginals, builds c-conjugate dual potentials by sequential
//! convexification, checks structural conditions on cost functions (twist,
//! non-degeneracy, negativity of the tensor `T = S + H` on the middle
//! factors) and diagnoses whether computed optimal couplings are Monge
//! solutions, i.e. concentrated on the graph of a map over the first
//! marginal.
//!
//! Marginal indices are zero-based throughout: the "first" marginal is `0`
//! and the "last" is `m - 1`. The middle factors are `1..m-1`.
//!
//! Module map:
//!
//! - [`geometry`]: domain boxes, discrete marginals, product configurations, samplers.
//! - [`costs`]: cost models with analytic and finite-difference differentials.
//! - [`conditions`]: tensor assembly and sampled condition scans.
//! - [`solver`]: exact LP, entropic, and brute-force Monge solvers.
//! - [`duality`]: c-conjugate potentials, complementary slackness, dual-uniqueness probe.
//! - [`diagnostics`]: graph extraction, pushforward checks, uniqueness probe.
//! - [`presets`]: ready-made instances for the builtin families.
//! - [`cli`]: the `mmot` command-line front end.

#![forbid(unsafe_code)]

pub mod cli;
pub mod conditions;
pub mod costs;
pub mod diagnostics;
pub mod duality;
mod error;
pub mod geometry;
pub mod linalg;
pub mod presets;
pub mod solver;

pub use error::{Error, Result};
