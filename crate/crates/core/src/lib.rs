//! Adaptive sample mining for noisy-label classification.
//!
//! Two identically shaped, independently initialized classifiers are trained
//! together. Once per epoch their averaged predictions set per-class clean and
//! noisy confidence thresholds, the training set is split into clean,
//! ambiguous and noisy subsets, and each subset gets its own loss:
//! cross-entropy for clean samples, a ramped blend of cross-entropy and
//! symmetric KL agreement for ambiguous ones, and label-free weak/strong
//! consistency for noisy ones.

pub mod cli;
pub mod cotrain;
pub mod data;
pub mod error;
pub mod losses;
pub mod mining;
pub mod numerics;
pub mod thresholds;

pub use error::{AsmError, Result};
