//! Fixed random-weight feature extractor with four exposed depths, and the trainable
//! least-squares discriminator heads on top of it.

use candle_core::{Device, Tensor};
use nasp_core::metrics::{FeatureExtractor, FeatureMap};
use nasp_core::RealImage;

use crate::error::Result;
use crate::nn::{space_to_depth, Conv2d};
use crate::params::ParamStore;

pub const PROXY_METRIC_NAME: &str = "proxy-perceptual";

#[derive(Debug, Clone)]
pub struct RandomExtractor {
    /// Per depth: optional 2x downsampling projection, then a 3x3 convolution.
    layers: Vec<(Option<Tensor>, Tensor, usize)>,
    widths: Vec<usize>,
}

impl RandomExtractor {
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        let ps = ParamStore::new(seed);
        let mut layers = Vec::new();
        let mut c_in = 1;
        for (d, &w) in widths.iter().enumerate() {
            let lp = ps.pp(format!("depth{d}"));
            let (down, c) = if d == 0 {
                (None, c_in)
            } else {
                let t = lp.get("down", &[w, 4 * c_in], crate::params::Init::Normal((2.0 / (4 * c_in) as f64).sqrt()))?;
                (Some(t.detach()), w)
            };
            let conv = lp.get("conv", &[w, 9 * c], crate::params::Init::Normal((2.0 / (9 * c) as f64).sqrt()))?;
            layers.push((down, conv.detach(), c));
            c_in = w;
        }
        Ok(Self {
            layers,
            widths: widths.to_vec(),
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// `x: (1, B, H, W)` magnitudes to four `(C_d, B, H_d, W_d)` maps.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = x.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (down, conv, c) in &self.layers {
            if let Some(p) = down {
                let s = space_to_depth(&h, 2)?;
                let (ci, b, hh, ww) = s.dims4()?;
                h = p.matmul(&s.reshape((ci, b * hh * ww))?)?.reshape((p.dim(0)?, b, hh, ww))?;
            }
            let (_, b, hh, ww) = h.dims4()?;
            let padded = h.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
            let mut taps = Vec::with_capacity(9);
            for dy in 0..3 {
                for dx in 0..3 {
                    taps.push(padded.narrow(2, dy, hh)?.narrow(3, dx, ww)?);
                }
            }
            let cols = Tensor::stack(&taps, 1)?.reshape((9 * c, b * hh * ww))?;
            let y = conv.matmul(&cols)?.reshape((conv.dim(0)?, b, hh, ww))?;
            h = y.maximum(&(&y * 0.2)?)?;
            out.push(h.clone());
        }
        Ok(out)
    }
}

impl FeatureExtractor for RandomExtractor {
    fn metric_name(&self) -> &str {
        PROXY_METRIC_NAME
    }

    fn extract(&self, image: &RealImage) -> nasp_core::Result<Vec<FeatureMap>> {
        let run = || -> Result<Vec<FeatureMap>> {
            let (h, w) = image.shape();
            let data: Vec<f32> = image.data().iter().map(|&v| v as f32).collect();
            let x = Tensor::from_vec(data, (1, 1, h, w), &Device::Cpu)?;
            self.forward(&x)?
                .into_iter()
                .map(|f| {
                    let (c, _, fh, fw) = f.dims4()?;
                    Ok(FeatureMap {
                        channels: c,
                        positions: fh * fw,
                        data: f.flatten_all()?.to_vec1::<f32>()?,
                    })
                })
                .collect()
        };
        run().map_err(|e| nasp_core::Error::InvalidArgument(format!("feature extraction failed: {e}")))
    }
}

/// One 1x1 convolution per extractor depth, each producing a single-channel score map.
#[derive(Debug, Clone)]
pub struct DiscriminatorHeads {
    heads: Vec<Conv2d>,
}

impl DiscriminatorHeads {
    pub fn new(ps: &ParamStore, widths: &[usize]) -> Result<Self> {
        let heads = widths
            .iter()
            .enumerate()
            .map(|(d, &w)| Conv2d::new(&ps.pp(format!("head{d}")), w, 1, 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { heads })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn forward(&self, features: &[Tensor]) -> Result<Vec<Tensor>> {
        if features.len() != self.heads.len() {
            return Err(crate::Error::InvalidArgument(format!(
                "{} feature depths for {} discriminator heads",
                features.len(),
                self.heads.len()
            )));
        }
        self.heads.iter().zip(features).map(|(h, f)| h.forward(f)).collect()
    }
}
