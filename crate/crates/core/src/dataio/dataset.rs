use num_complex::Complex32;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::formats::read_single_slice;
use super::manifest::{DatasetManifest, ManifestEntry, Split};
use super::phantom::Contrast;
use crate::error::{Error, Result};
use crate::fourier::{
    make_coil_maps, make_pyramid, measure_pyramid, zero_filled, Acceleration,
    AccelerationPyramid, CoilSensitivities, MaskPattern,
};
use crate::image::ComplexImage;
use crate::label::AcquisitionLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PyramidConfig {
    pub n_coils: usize,
    pub coil_seed: u64,
    pub independent_masks: bool,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            n_coils: 1,
            coil_seed: 0,
            independent_masks: false,
        }
    }
}

/// One slice with its measurements and network inputs at every acceleration level.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub contrast: Contrast,
    pub pattern: MaskPattern,
    pub target: ComplexImage,
    pub sens: CoilSensitivities,
    pub pyramid: AccelerationPyramid,
    /// Zero-filled images ordered `[32, 16, 8, 4, 2, FS]`.
    pub inputs: Vec<ComplexImage>,
    pub labels: Vec<AcquisitionLabel>,
}

impl Sample {
    pub fn input(&self, acceleration: Acceleration) -> &ComplexImage {
        &self.inputs[acceleration.level_index()]
    }
}

pub fn build_sample(
    id: &str,
    contrast: Contrast,
    pattern: MaskPattern,
    mask_seed: u32,
    target: ComplexImage,
    config: &PyramidConfig,
) -> Result<Sample> {
    let shape = target.shape();
    let sens = make_coil_maps(config.n_coils, shape, config.coil_seed)?;
    let masks = make_pyramid(pattern, shape, mask_seed, config.independent_masks)?;
    let pyramid = measure_pyramid(&target, &sens, masks)?;
    let inputs = pyramid
        .measurements
        .iter()
        .map(|y| zero_filled(y, &sens))
        .collect::<Result<Vec<_>>>()?;
    let labels = Acceleration::SCHEDULE
        .iter()
        .map(|&a| AcquisitionLabel::new(pattern, a))
        .collect();
    Ok(Sample {
        id: id.to_string(),
        contrast,
        pattern,
        target,
        sens,
        pyramid,
        inputs,
        labels,
    })
}

fn load_entry(manifest: &DatasetManifest, e: &ManifestEntry, config: &PyramidConfig) -> Result<Sample> {
    let target = read_single_slice(&manifest.path_of(e))?;
    if target.shape() != (manifest.height, manifest.width) {
        return Err(Error::ShapeMismatch {
            expected: (manifest.height, manifest.width),
            actual: target.shape(),
        });
    }
    build_sample(&e.id, e.contrast, e.pattern, e.mask_seed, target, config)
}

/// Loads every slice of `split`, in manifest order.
pub fn build_dataset(
    manifest: &DatasetManifest,
    split: Split,
    config: &PyramidConfig,
) -> Result<Vec<Sample>> {
    manifest
        .split(split)
        .map(|e| load_entry(manifest, e, config))
        .collect()
}

/// Seeded permutation of `0..n`.
pub fn epoch_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Largest pixelwise magnitude difference between two images of equal shape.
pub fn max_abs_diff(a: &ComplexImage, b: &ComplexImage) -> f32 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(p, q): (&Complex32, &Complex32)| (p - q).norm())
        .fold(0.0, f32::max)
}
