//! Parametric physics-informed surrogate for laser powder-bed fusion
//! thermal fields, trained without simulation data.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod model;
pub mod oracle;
pub mod physics;
pub mod sampling;
pub mod train;

pub use error::{Error, Result};
