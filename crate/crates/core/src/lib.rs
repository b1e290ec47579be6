//! Simulation, gate synthesis and characterization of quantum frequency
//! processors: cascades of electro-optic phase modulators and line-by-line
//! pulse shapers acting on frequency-bin encoded photons.

pub mod bayes;
pub mod channel;
pub mod circuit;
pub mod counts;
pub mod error;
pub mod fock;
pub mod io;
pub mod linalg;
pub mod openbox;
pub mod optimize;
pub mod rng;
pub mod special;
pub mod synthesis;
pub mod transfer;

pub use error::{QfpError, Result};
pub use linalg::CMatrix;
pub use num_complex::Complex64;
