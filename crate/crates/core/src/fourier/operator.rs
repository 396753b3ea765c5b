//! Multi-coil MRI encoding operator `E = M F S` and its adjoint.

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fft::fft2c;
use super::mask::{MaskPyramid, SamplingMask};
use crate::error::{Error, Result};
use crate::image::{check_dims, ComplexImage};

/// Per-coil complex sensitivity maps, normalized so that `sum_c |s_c|^2 = 1` at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSensitivities {
    height: usize,
    width: usize,
    maps: Vec<Vec<Complex64>>,
}

impl CoilSensitivities {
    /// Wraps raw maps and normalizes them to unit root-sum-of-squares.
    pub fn new(height: usize, width: usize, mut maps: Vec<Vec<Complex64>>) -> Result<Self> {
        check_dims(height, width)?;
        if maps.is_empty() {
            return Err(Error::InvalidArgument("at least one coil is required".into()));
        }
        for m in &maps {
            if m.len() != height * width {
                return Err(Error::Length {
                    what: "coil map",
                    expected: height * width,
                    actual: m.len(),
                });
            }
        }
        for k in 0..height * width {
            let rss = maps.iter().map(|m| m[k].norm_sqr()).sum::<f64>().sqrt();
            if rss <= 0.0 || !rss.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "coil maps vanish at pixel {k}"
                )));
            }
            for m in maps.iter_mut() {
                m[k] /= rss;
            }
        }
        Ok(Self {
            height,
            width,
            maps,
        })
    }

    pub fn identity(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![vec![Complex64::new(1.0, 0.0); height * width]])
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[Vec<Complex64>] {
        &self.maps
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Smooth synthetic sensitivities: each coil is a low-order complex polynomial peaking toward
/// its own position on a ring around the field of view. One coil yields the constant map.
pub fn make_coil_maps(n_coils: usize, shape: (usize, usize), seed: u64) -> Result<CoilSensitivities> {
    let (height, width) = shape;
    if n_coils < 1 {
        return Err(Error::InvalidArgument("n_coils must be at least 1".into()));
    }
    if n_coils == 1 {
        return CoilSensitivities::identity(height, width);
    }
    check_dims(height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc011);
    let mut maps = Vec::with_capacity(n_coils);
    for c in 0..n_coils {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / n_coils as f64;
        let (dy, dx) = angle.sin_cos();
        let quad: f64 = rng.gen_range(-0.3..0.3);
        let cross: f64 = rng.gen_range(-0.3..0.3);
        let phase_y: f64 = rng.gen_range(-0.6..0.6);
        let phase_x: f64 = rng.gen_range(-0.6..0.6);
        let phase_0: f64 = rng.gen_range(-1.0..1.0);
        let mut map = Vec::with_capacity(height * width);
        for i in 0..height {
            let y = 2.0 * i as f64 / (height - 1) as f64 - 1.0;
            for j in 0..width {
                let x = 2.0 * j as f64 / (width - 1) as f64 - 1.0;
                let re = 1.6 + 0.9 * (dx * x + dy * y) + quad * (x * x - y * y) + cross * x * y;
                let im = phase_0 + phase_y * y + phase_x * x;
                map.push(Complex64::new(re, 0.35 * re * im));
            }
        }
        maps.push(map);
    }
    CoilSensitivities::new(height, width, maps)
}

/// Undersampled multi-coil k-space data; entries outside the mask are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceMeasurement {
    pub mask: SamplingMask,
    values: Vec<Vec<Complex64>>,
}

impl KSpaceMeasurement {
    /// Masks `values` so that the zero-outside-mask invariant holds.
    pub fn new(mask: SamplingMask, mut values: Vec<Vec<Complex64>>) -> Result<Self> {
        let n = mask.height * mask.width;
        for v in values.iter_mut() {
            if v.len() != n {
                return Err(Error::Length {
                    what: "k-space coil",
                    expected: n,
                    actual: v.len(),
                });
            }
            for (x, &m) in v.iter_mut().zip(mask.selected()) {
                if m == 0 {
                    *x = Complex64::new(0.0, 0.0);
                }
            }
        }
        Ok(Self { mask, values })
    }

    pub fn values(&self) -> &[Vec<Complex64>] {
        &self.values
    }

    pub fn n_coils(&self) -> usize {
        self.values.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter())
            .map(|c| c.norm_sqr())
            .sum()
    }

    /// `sum_c <self_c, other_c>` with the conjugate on `other`.
    pub fn inner(&self, other: &KSpaceMeasurement) -> Complex64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b))
            .map(|(a, b)| a * b.conj())
            .sum()
    }
}

fn check_same(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch { expected, actual });
    }
    Ok(())
}

/// `y_c = M ⊙ F(s_c ⊙ x)` with the orthonormal centered FFT.
pub fn forward(
    x: &ComplexImage,
    sens: &CoilSensitivities,
    mask: &SamplingMask,
) -> Result<KSpaceMeasurement> {
    check_same(x.shape(), sens.shape())?;
    check_same(x.shape(), mask.shape())?;
    let (h, w) = x.shape();
    let values = sens
        .maps()
        .iter()
        .map(|s| {
            let mut buf: Vec<Complex64> = x
                .data()
                .iter()
                .zip(s)
                .map(|(p, s)| Complex64::new(p.re as f64, p.im as f64) * s)
                .collect();
            fft2c(&mut buf, h, w, false);
            buf
        })
        .collect();
    KSpaceMeasurement::new(mask.clone(), values)
}

/// Adjoint in double precision: `sum_c conj(s_c) ⊙ F^H(M ⊙ y_c)`.
pub fn adjoint_f64(y: &KSpaceMeasurement, sens: &CoilSensitivities) -> Result<Vec<Complex64>> {
    check_same(sens.shape(), y.shape())?;
    if y.n_coils() != sens.n_coils() {
        return Err(Error::InvalidArgument(format!(
            "measurement has {} coils, sensitivities have {}",
            y.n_coils(),
            sens.n_coils()
        )));
    }
    let (h, w) = y.shape();
    let mut acc = vec![Complex64::new(0.0, 0.0); h * w];
    for (values, s) in y.values().iter().zip(sens.maps()) {
        let mut buf: Vec<Complex64> = values
            .iter()
            .zip(y.mask.selected())
            .map(|(&v, &m)| if m == 1 { v } else { Complex64::new(0.0, 0.0) })
            .collect();
        fft2c(&mut buf, h, w, true);
        for ((a, b), s) in acc.iter_mut().zip(&buf).zip(s) {
            *a += s.conj() * b;
        }
    }
    Ok(acc)
}

pub fn adjoint(y: &KSpaceMeasurement, sens: &CoilSensitivities) -> Result<ComplexImage> {
    let (h, w) = y.shape();
    let acc = adjoint_f64(y, sens)?;
    ComplexImage::new(
        h,
        w,
        acc.iter()
            .map(|c| Complex32::new(c.re as f32, c.im as f32))
            .collect(),
    )
}

/// Adjoint reconstruction rescaled to unit peak magnitude; the per-level network input.
pub fn zero_filled(y: &KSpaceMeasurement, sens: &CoilSensitivities) -> Result<ComplexImage> {
    let (h, w) = y.shape();
    let acc = adjoint_f64(y, sens)?;
    let max = acc.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 1.0 };
    ComplexImage::new(
        h,
        w,
        acc.iter()
            .map(|c| Complex32::new((c.re * scale) as f32, (c.im * scale) as f32))
            .collect(),
    )
}

/// `||E x - y||_2^2`.
pub fn data_consistency_error(
    x: &ComplexImage,
    y: &KSpaceMeasurement,
    sens: &CoilSensitivities,
) -> Result<f64> {
    let ex = forward(x, sens, &y.mask)?;
    if ex.n_coils() != y.n_coils() {
        return Err(Error::InvalidArgument("coil count mismatch".into()));
    }
    Ok(ex
        .values()
        .iter()
        .zip(y.values())
        .flat_map(|(a, b)| a.iter().zip(b))
        .map(|(a, b)| (a - b).norm_sqr())
        .sum())
}

/// Masks together with the measurement taken at every level.
#[derive(Debug, Clone)]
pub struct AccelerationPyramid {
    pub masks: MaskPyramid,
    pub measurements: Vec<KSpaceMeasurement>,
}

pub fn measure_pyramid(
    x: &ComplexImage,
    sens: &CoilSensitivities,
    masks: MaskPyramid,
) -> Result<AccelerationPyramid> {
    let measurements = masks
        .masks
        .iter()
        .map(|m| forward(x, sens, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(AccelerationPyramid {
        masks,
        measurements,
    })
}
