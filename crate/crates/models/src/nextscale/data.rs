//! Ground-truth token pyramids and batch assembly for the transformer.

use candle_core::{Device, Tensor};
use nasp_core::dataio::Sample;
use nasp_core::fourier::Acceleration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aqvae::{images_to_tensor, AqVae, TokenMap};
use crate::error::{Error, Result};

/// A slice with its eval-mode token maps for all six levels.
#[derive(Debug, Clone)]
pub struct ArExample<'a> {
    pub sample: &'a Sample,
    pub maps: Vec<Vec<u32>>,
}

/// Tokenizes every sample once, `batch` slices at a time.
pub fn prepare_examples<'a>(tokenizer: &AqVae, samples: &'a [Sample], batch: usize) -> Result<Vec<ArExample<'a>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let maps = tokenizer.tokenize(&refs)?;
        for (b, s) in chunk.iter().enumerate() {
            out.push(ArExample {
                sample: s,
                maps: maps.iter().map(|m| m.sample(b).to_vec()).collect(),
            });
        }
    }
    Ok(out)
}

/// Network inputs for a batch: zero-filled 32x and fully sampled planes with their labels, and
/// the ground-truth maps as `(B, side^2)` u32 tensors.
#[derive(Debug, Clone)]
pub struct ArBatch {
    pub x32: Tensor,
    pub labels32: Vec<usize>,
    pub xfs: Tensor,
    pub labels_fs: Vec<usize>,
    pub maps: Vec<Tensor>,
}

pub fn maps_to_tensors(maps: &[&[Vec<u32>]]) -> Result<Vec<Tensor>> {
    let b = maps.len();
    let n_maps = maps[0].len();
    (0..n_maps)
        .map(|m| {
            let n = maps[0][m].len();
            let flat: Vec<u32> = maps.iter().flat_map(|s| s[m].iter().copied()).collect();
            Ok(Tensor::from_vec(flat, (b, n), &Device::Cpu)?)
        })
        .collect()
}

pub fn tensors_to_maps(maps: &[Tensor]) -> Result<Vec<Vec<Vec<u32>>>> {
    let b = maps[0].dim(0)?;
    let flat = maps.iter().map(|t| Ok(t.to_vec2::<u32>()?)).collect::<Result<Vec<_>>>()?;
    Ok((0..b).map(|k| flat.iter().map(|m| m[k].clone()).collect()).collect())
}

pub fn input_batch(samples: &[&Sample]) -> Result<(Tensor, Vec<usize>, Tensor, Vec<usize>)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no samples in batch"));
    }
    let (r32, fs) = (Acceleration::R32.level_index(), Acceleration::Full.level_index());
    let x32 = images_to_tensor(&samples.iter().map(|s| &s.inputs[r32]).collect::<Vec<_>>())?;
    let xfs = images_to_tensor(&samples.iter().map(|s| &s.inputs[fs]).collect::<Vec<_>>())?;
    Ok((
        x32,
        samples.iter().map(|s| s.labels[r32].id()).collect(),
        xfs,
        samples.iter().map(|s| s.labels[fs].id()).collect(),
    ))
}

pub fn make_batch(examples: &[&ArExample]) -> Result<ArBatch> {
    let samples: Vec<&Sample> = examples.iter().map(|e| e.sample).collect();
    let (x32, labels32, xfs, labels_fs) = input_batch(&samples)?;
    let maps: Vec<&[Vec<u32>]> = examples.iter().map(|e| e.maps.as_slice()).collect();
    Ok(ArBatch {
        x32,
        labels32,
        xfs,
        labels_fs,
        maps: maps_to_tensors(&maps)?,
    })
}

/// Replaces each token independently, with probability `p`, by a uniform draw from `0..vocab`.
pub fn randomize_prefix(maps: &[Vec<u32>], vocab: usize, p: f64, seed: u64) -> Result<Vec<Vec<u32>>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p_replace must be in [0, 1], got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(maps
        .iter()
        .map(|m| {
            m.iter()
                .map(|&t| {
                    if p > 0.0 && rng.gen::<f64>() < p {
                        rng.gen_range(0..vocab as u32)
                    } else {
                        t
                    }
                })
                .collect()
        })
        .collect())
}

/// Per-level token maps of a batch as [`TokenMap`]s.
pub fn to_token_maps(maps: &[Tensor], sides: &[usize]) -> Result<Vec<TokenMap>> {
    maps.iter()
        .zip(sides)
        .enumerate()
        .map(|(level, (t, &side))| {
            Ok(TokenMap {
                level,
                side,
                indices: t.flatten_all()?.to_vec1::<u32>()?,
            })
        })
        .collect()
}

/// Debug export of one slice's pyramid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMapsJson {
    pub schedule: Vec<usize>,
    pub maps: Vec<Vec<u32>>,
}
