//! Latent-class path choice estimation for capacity-constrained urban rail.

pub mod attributes;
pub mod calibration;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod io;
pub mod latent;
pub mod leftbehind;
pub mod pipeline;
pub mod ptam;
pub mod simulator;
pub mod transit;
pub mod walktime;

pub use error::{Error, Result};
