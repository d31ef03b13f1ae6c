//! Continuous frames, their Gramian kernels, and the discretization machinery
//! that turns them into sampled atomic decompositions and Banach frames.

pub mod coverings;
pub mod discretization;
pub mod error;
pub mod fourier;
pub mod frames;
pub mod kernel;
pub mod linalg;
pub mod localization;
pub mod measure_space;
pub mod oscillation;
pub mod sequence_spaces;

pub use num_complex::Complex64 as C64;
pub use error::{Error, Result};
