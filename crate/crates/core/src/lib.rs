//! kt-safe anonymization of attributed graphs.
//!
//! A released graph is kt-safe when every vertex hides among at least `k`
//! vertices that share its quasi-identifier, have an n-hop ball within `ε`
//! insertions of its own and t-close attribute distributions at every hop,
//! and when at most a fraction `α` of that group carries a sensitive value.

pub mod anonymize;
pub mod cli;
pub mod distances;
pub mod error;
pub mod fixtures;
pub mod generate;
pub mod graph;
pub mod index;
pub mod io;
pub mod metrics;
pub mod partition;
pub mod verify;

pub use error::{KtError, Result};
