//! Markov chain choice model (MCCM) toolkit.
//!
//! A customer starts at a random state drawn from `lambda` and walks the
//! chain `rho` until hitting an offered product (purchase) or state 0 (no
//! purchase). This crate computes exact and simulated choice probabilities
//! and recovers `lambda` and `rho` from choice probabilities of assortments
//! of two adjacent sizes `r` and `r + 1`.
//!
//! - [`model`]: parameters, assortments, validation, random generation.
//! - [`choice`]: absorption probabilities, choice and conditional tables.
//! - [`plan`]: which assortments the recovery needs.
//! - [`recovery`]: the linear systems and their solution.
//! - [`simulate`]: Monte Carlo purchase simulation.

pub mod choice;
pub mod error;
pub mod json;
pub mod linalg;
pub mod model;
pub mod plan;
pub mod recovery;
pub mod simulate;

pub use choice::{ChoiceTable, ConditionalTable};
pub use error::{Error, Result, SystemId};
pub use model::{Assortment, ModelParams, Violation};
pub use plan::RecoveryPlan;
pub use recovery::{LinearSystem, RecoveryReport};
