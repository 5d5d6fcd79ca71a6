pub mod baselines;
pub mod dag;
pub mod model;
mod error;
pub mod metrics;
pub mod rng;
pub mod scm;
pub mod table;
pub mod theory;
pub mod training;

pub use dag::Dag;
pub use error::{Error, Result};
pub use table::Table;
