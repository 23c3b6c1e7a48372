//! Distribution-free prediction intervals for regression.
//!
//! Two bootstrap constructions (pivot and percentile) and four conformal
//! constructions (full, split, cross and bootstrap conformal) built on top of a
//! small learner abstraction, plus the evaluation machinery used to judge
//! coverage, width and training cost of each method.
//!
//! Every randomized routine takes an explicit 64-bit seed; see [`rng`].

pub mod bootstrap;
pub mod conformal;
pub mod data;
pub mod evaluation;
pub mod harness;
pub mod interval;
pub mod kde;
pub mod learners;
pub mod rng;
pub mod stats;
pub mod synthetic;

pub use data::Dataset;
pub use interval::PredictionInterval;
pub use learners::{Learner, LearnerSpec, Regressor};
