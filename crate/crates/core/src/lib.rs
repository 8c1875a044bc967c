pub mod baselines;
pub mod cli;
pub mod error;
pub mod flow;
pub mod io;
pub mod model;
pub mod nn;
pub mod numeric;
pub mod sim;
pub mod training;

pub use error::{Error, Result};
