pub mod baselines;
pub mod contour;
pub mod dataset;
pub mod distmat;
pub mod error;
pub mod eval;
pub mod loss;
pub mod mds;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
