//! Bloch band structures, plane-wave transmission and outgoing-wave diagnostics
//! for a free-space / periodic-medium interface on a vertically periodic strip.

pub mod bloch_core;
pub mod cell_model;
pub mod config;
pub mod error;
pub mod exec;
pub mod fft;
pub mod field;
pub mod flux;
pub mod io;
pub mod linalg;
pub mod radiation;
pub mod solver;
pub mod transform;
pub mod transmission;

pub use error::{Error, Result};
pub use num_complex::Complex64;
