pub mod baselines;
pub mod env;
pub mod error;
pub mod evalrep;
pub mod exec;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod student;
pub mod teacher;
pub mod worldmodel;

pub use error::{Error, Result};
