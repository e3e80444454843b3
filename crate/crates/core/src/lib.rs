pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod io;
pub mod model;
pub mod real;
pub mod stream;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::{Precision, Real};
