//! Quantized policies for controlled diffusions.
//!
//! Models, relaxed Markov policies and their quantizations, Monte Carlo and
//! finite-difference cost evaluation, HJB policy iteration, Borkar-topology
//! pairings, and the convergence studies built on top of them.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod borkar;
pub mod config;
pub mod error;
pub mod expr;
pub mod grid;
pub mod model;
pub mod pde;
pub mod policy;
pub mod rng;
pub mod simulate;
pub mod study;

pub use error::{Error, Result};
