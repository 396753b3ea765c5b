//! Undersampling masks and the MRI encoding operator.

mod fft;
mod mask;
mod operator;

pub use fft::fft2c;
pub use mask::{
    make_mask, make_pyramid, sample_budget, Acceleration, MaskPattern, MaskPyramid, SamplingMask,
};
pub use operator::{
    adjoint, adjoint_f64, data_consistency_error, forward, make_coil_maps, measure_pyramid,
    zero_filled, AccelerationPyramid, CoilSensitivities, KSpaceMeasurement,
};
