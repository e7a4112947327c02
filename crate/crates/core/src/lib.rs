pub mod analysis;
pub mod datasets;
pub mod error;
pub mod losses;
pub mod nn;
pub mod quadrature;
pub mod rd;
pub mod vae;

pub use error::{Error, Result};
