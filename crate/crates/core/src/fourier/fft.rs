//! Orthonormal, fftshift-centered 2D FFT.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// In-place centered 2D DFT of a row-major `height x width` buffer.
///
/// The k-space origin is placed at `(height/2, width/2)` and the transform is scaled by
/// `1/sqrt(height*width)`, so forward and inverse are exact adjoints. Both sides must be even.
pub fn fft2c(data: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    debug_assert_eq!(data.len(), height * width);
    shift(data, height, width);
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for j in 0..width {
        for i in 0..height {
            column[i] = data[i * width + j];
        }
        col_fft.process(&mut column);
        for i in 0..height {
            data[i * width + j] = column[i];
        }
    }
    shift(data, height, width);
    let scale = 1.0 / ((height * width) as f64).sqrt();
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Half-size circular shift on both axes; for even sides fftshift and ifftshift coincide.
fn shift(data: &mut [Complex64], height: usize, width: usize) {
    let (hh, hw) = (height / 2, width / 2);
    for row in data.chunks_exact_mut(width) {
        row.rotate_left(hw);
    }
    data.rotate_left(hh * width);
}
