pub mod checks;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod inverse;
pub mod linalg;
pub mod models;
pub mod rkhs;
pub mod stationary;
pub mod timedep;

pub use error::{MfgError, Result};
