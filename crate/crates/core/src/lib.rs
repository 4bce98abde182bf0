pub mod cli;
pub mod copuladata;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod gmrf;
pub mod heavytail;
pub mod linalg;
pub mod mmd;
pub mod mvae;
pub mod nnmrf;
pub mod rng;

pub use error::{Error, Result};
