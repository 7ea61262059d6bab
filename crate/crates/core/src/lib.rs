pub mod baselines;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mamis;
pub mod numeric;
pub mod pointgen;
pub mod proposals;
pub mod targets;
pub mod theory;
pub mod transforms;

mod direction_numbers;

pub use error::{Error, Result};
