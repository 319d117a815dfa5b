//! Demonstration selection for in-context classification.
//!
//! Candidates are ranked by how confidently the model misjudges them under
//! the current prompt, and the most misjudged ones are swapped in. Baseline
//! selectors, evaluation, and ablation experiments live alongside.

pub mod artifact;
pub mod backend;
pub mod baselines;
pub mod error;
pub mod eval;
pub mod manifest;
mod parallel;
pub mod sampling;
pub mod selection;
pub mod strategy;
pub mod task;

pub use error::{Error, Result};
pub use parallel::par_map;
