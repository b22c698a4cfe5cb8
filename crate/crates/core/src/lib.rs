//! Urban canyon channel simulation and calibration.

pub mod calibrate;
pub mod cli;
pub mod distributions;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod identify;
pub mod io;
pub mod largescale;
pub mod rng;
pub mod scenario;
pub mod simulate;
pub mod stats;
pub mod synthesis;

pub use error::{Error, Result};
