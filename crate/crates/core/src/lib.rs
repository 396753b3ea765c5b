//! Numerical core for next-acceleration-scale MRI reconstruction: k-space sampling and the
//! encoding operator, synthetic phantoms, portable file formats, and image-quality metrics.

pub mod dataio;
pub mod error;
pub mod fourier;
pub mod image;
pub mod label;
pub mod metrics;

pub use error::{Error, Result};
pub use image::{ComplexImage, RealImage};
pub use label::AcquisitionLabel;
