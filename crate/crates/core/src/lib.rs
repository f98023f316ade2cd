//! Range experts for regression models.
//!
//! A trained scalar model `f` is followed by a virtual layer of clipped copies
//! of its output, one per output segment. Queries are linear combinations of
//! these experts, so a question such as "why is the output above this value"
//! becomes a weighted sum of per-expert attributions.

pub mod attribution;
pub mod data;
pub mod disentangle;
mod error;
pub mod eval;
pub mod experts;
pub mod nn;
pub mod query;
pub mod target;
mod textfmt;

pub use error::{Error, Result};
