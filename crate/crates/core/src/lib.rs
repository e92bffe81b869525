// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod data;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod model;
pub mod parallel;
pub mod planner;
pub mod seeding;

pub use error::{Error, Result};
