//! Multilevel ensemble transform particle filtering.
//!
//! This crate implements ensemble transform particle filters whose
//! resampling step is replaced by deterministic optimal-transport couplings,
//! together with their multilevel variants: pairs of coarse/fine ensembles
//! driven by shared Brownian increments are kept positively correlated
//! across assimilation steps, so a telescoping sum over resolution levels
//! estimates posterior expectations at a fraction of the single-level cost.
//!
//! Module layout:
//!
//! * [`ot`] — discrete optimal-transport solvers (transportation simplex,
//!   monotone one-dimensional matching, Hungarian assignment).
//! * [`transform`] — ensemble transforms built from those solvers: the
//!   single-ensemble transform, the seamless coarse/fine coupling, the
//!   assignment-based recoupling, and their localised forms.
//! * [`models`] — stochastic test models (Lorenz 63/96, a linear sanity
//!   model), Euler–Maruyama integration, and coupled coarse/fine noise.
//! * [`filter`] — weight updates, assimilation steps, level schedules, and
//!   the multilevel filter loop.
//! * [`harness`] — experiment drivers (consistency, variance decay, cost
//!   versus accuracy), CSV/JSON output, and reference-run caching.

pub mod error;
pub mod filter;
pub(crate) mod linalg;
pub mod harness;
pub mod models;
pub mod ot;
pub mod rng;
pub mod transform;

pub use error::{Error, Result};
