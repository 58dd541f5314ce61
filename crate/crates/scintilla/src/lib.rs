//! Propagation of transverse-mode photon states through atmospheric turbulence.

pub mod config;
pub mod couplings;
pub mod error;
pub mod grid;
pub mod io;
pub mod ipe;
pub mod mc;
pub mod metrics;
pub mod modes;
pub mod quadrature;
pub mod scenario;
pub mod single_screen;
pub mod special;
pub mod turbulence;
pub mod units;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
