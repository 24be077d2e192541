pub mod error;
pub mod harness;
pub mod infectivity;
pub mod kernel;
pub mod limit_solver;
mod quad;
pub mod pde_solver;
pub mod simulator;
pub mod scenario;

pub use error::{Error, Result};
