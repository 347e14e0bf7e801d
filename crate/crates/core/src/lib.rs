//! Condition numbers of real homogeneous polynomial systems and the
//! Monte Carlo machinery for studying them under the Kostlan / Shub–Smale
//! Gaussian model.

pub mod condition;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod matrix;
pub mod poly;
pub mod random;
pub mod stiefel;
pub mod verify;

pub use error::{Error, Result};
