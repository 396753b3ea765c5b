//! PSNR, windowed SSIM and a feature-space perceptual distance on magnitude images.

use crate::error::{Error, Result};
use crate::image::RealImage;

/// Reported PSNR for exact matches.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(x: &RealImage, reference: &RealImage) -> Result<()> {
    if x.shape() != reference.shape() {
        return Err(Error::ShapeMismatch {
            expected: reference.shape(),
            actual: x.shape(),
        });
    }
    Ok(())
}

fn peak(reference: &RealImage) -> f64 {
    let m = reference.max();
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// `10 log10(max(ref)^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &RealImage, reference: &RealImage) -> Result<f64> {
    same_shape(x, reference)?;
    let n = x.data().len() as f64;
    let mse = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    let p = peak(reference);
    Ok((10.0 * (p * p / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (k, t) in taps.iter_mut().enumerate() {
        let d = k as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(data: &[f64], height: usize, width: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (height + 1 - k, width + 1 - k);
    let mut rows = vec![0.0; height * ow];
    for i in 0..height {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|t| taps[t] * data[i * width + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|t| taps[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean structural similarity over all fully contained 11x11 Gaussian windows (sigma 1.5),
/// with `K1 = 0.01`, `K2 = 0.03` and dynamic range `max(ref)`.
pub fn ssim(x: &RealImage, reference: &RealImage) -> Result<f64> {
    same_shape(x, reference)?;
    let (h, w) = x.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidShape {
            height: h,
            width: w,
            reason: "image smaller than the 11x11 SSIM window",
        });
    }
    let taps = gaussian_window();
    let l = peak(reference);
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);
    let a = x.data();
    let b = reference.data();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.iter().zip(b).map(|(&p, &q)| f(p, q)).collect()
    };
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let e_aa = filter_valid(&prod(&|p, _| p * p), h, w, &taps);
    let e_bb = filter_valid(&prod(&|_, q| q * q), h, w, &taps);
    let e_ab = filter_valid(&prod(&|p, q| p * q), h, w, &taps);
    let mut total = 0.0;
    for k in 0..mu_a.len() {
        let (ma, mb) = (mu_a[k], mu_b[k]);
        let va = e_aa[k] - ma * ma;
        let vb = e_bb[k] - mb * mb;
        let cov = e_ab[k] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Activations at one depth, channel-major (`channels x positions`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub positions: usize,
    pub data: Vec<f32>,
}

/// Source of multi-depth features for perceptual comparison.
pub trait FeatureExtractor {
    /// Label used in reports, e.g. `proxy-perceptual` for a random-weight extractor.
    fn metric_name(&self) -> &str;

    fn extract(&self, image: &RealImage) -> Result<Vec<FeatureMap>>;
}

/// Mean over depths of the position-averaged squared distance between channel-unit-normalized
/// features.
pub fn perceptual_distance(
    x: &RealImage,
    reference: &RealImage,
    extractor: &dyn FeatureExtractor,
) -> Result<f64> {
    same_shape(x, reference)?;
    let fx = extractor.extract(x)?;
    let fr = extractor.extract(reference)?;
    if fx.is_empty() || fx.len() != fr.len() {
        return Err(Error::InvalidArgument(
            "extractor returned mismatched or empty depths".into(),
        ));
    }
    let mut total = 0.0;
    for (a, b) in fx.iter().zip(&fr) {
        if a.channels != b.channels || a.positions != b.positions {
            return Err(Error::InvalidArgument("feature shapes differ".into()));
        }
        let unit = |m: &FeatureMap, p: usize| -> f64 {
            let n: f64 = (0..m.channels)
                .map(|c| (m.data[c * m.positions + p] as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            n + 1e-10
        };
        let mut depth = 0.0;
        for p in 0..a.positions {
            let (na, nb) = (unit(a, p), unit(b, p));
            depth += (0..a.channels)
                .map(|c| {
                    let d = a.data[c * a.positions + p] as f64 / na
                        - b.data[c * b.positions + p] as f64 / nb;
                    d * d
                })
                .sum::<f64>();
        }
        total += depth / a.positions as f64;
    }
    Ok(total / fx.len() as f64)
}
