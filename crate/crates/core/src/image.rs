//! Image containers shared by the operators, the metrics and the file formats.

use num_complex::Complex32;

use crate::error::{Error, Result};

/// Complex-valued 2D image, row-major, stored as single precision (real, imaginary) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex32>,
}

pub(crate) fn check_dims(height: usize, width: usize) -> Result<()> {
    if height < 8 || width < 8 {
        return Err(Error::InvalidShape {
            height,
            width,
            reason: "both sides must be at least 8",
        });
    }
    if height % 2 != 0 || width % 2 != 0 {
        return Err(Error::InvalidShape {
            height,
            width,
            reason: "both sides must be even",
        });
    }
    Ok(())
}

impl ComplexImage {
    pub fn new(height: usize, width: usize, data: Vec<Complex32>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::Length {
                what: "complex image",
                expected: height * width,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![Complex32::new(0.0, 0.0); height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> Complex32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex32> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Complex32 {
        self.data[i * self.width + j]
    }

    pub fn max_magnitude(&self) -> f32 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f32::max)
    }

    pub fn norm_l2(&self) -> f64 {
        self.data
            .iter()
            .map(|c| (c.re as f64).powi(2) + (c.im as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Scales the image so its largest magnitude is 1. An all-zero image is left untouched.
    pub fn normalize(&mut self) {
        let max = self
            .data
            .iter()
            .map(|c| ((c.re as f64).powi(2) + (c.im as f64).powi(2)).sqrt())
            .fold(0.0f64, f64::max);
        if max > 0.0 {
            for c in &mut self.data {
                *c = Complex32::new((c.re as f64 / max) as f32, (c.im as f64 / max) as f32);
            }
        }
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    pub fn magnitude(&self) -> RealImage {
        RealImage {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|c| ((c.re as f64).powi(2) + (c.im as f64).powi(2)).sqrt())
                .collect(),
        }
    }

    /// Interleaved (real, imaginary) channels, channel-major: `[re plane, im plane]`.
    pub fn to_planes(&self) -> Vec<f32> {
        let n = self.data.len();
        let mut out = vec![0.0f32; 2 * n];
        for (k, c) in self.data.iter().enumerate() {
            out[k] = c.re;
            out[n + k] = c.im;
        }
        out
    }

    pub fn from_planes(height: usize, width: usize, planes: &[f32]) -> Result<Self> {
        let n = height * width;
        if planes.len() < 2 * n {
            return Err(Error::Length {
                what: "complex planes",
                expected: 2 * n,
                actual: planes.len(),
            });
        }
        Self::new(
            height,
            width,
            (0..n).map(|k| Complex32::new(planes[k], planes[n + k])).collect(),
        )
    }
}

/// Real-valued image (typically a magnitude image) in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RealImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape {
                height,
                width,
                reason: "empty image",
            });
        }
        if data.len() != height * width {
            return Err(Error::Length {
                what: "real image",
                expected: height * width,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_or_tiny_shapes() {
        assert!(ComplexImage::zeros(9, 16).is_err());
        assert!(ComplexImage::zeros(6, 6).is_err());
        assert!(ComplexImage::zeros(8, 8).is_ok());
    }

    #[test]
    fn normalize_sets_unit_peak() {
        let mut img =
            ComplexImage::from_fn(8, 8, |i, j| Complex32::new(i as f32 * 0.3, j as f32 * -0.7))
                .unwrap();
        img.normalize();
        assert!((img.max_magnitude() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalize_keeps_zero_image() {
        let img = ComplexImage::zeros(8, 8).unwrap().normalized();
        assert_eq!(img.max_magnitude(), 0.0);
    }

    #[test]
    fn planes_round_trip() {
        let img =
            ComplexImage::from_fn(8, 10, |i, j| Complex32::new(i as f32, -(j as f32))).unwrap();
        let back = ComplexImage::from_planes(8, 10, &img.to_planes()).unwrap();
        assert_eq!(img, back);
    }
}
