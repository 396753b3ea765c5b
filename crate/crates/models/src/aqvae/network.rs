//! Label-conditioned convolutional encoder and the mirrored decoder.

use candle_core::{DType, Device, Tensor};
use nasp_core::label::N_LABELS;

use super::config::TokenizerConfig;
use crate::error::Result;
use crate::nn::{depth_to_space, silu, space_to_depth, upsample_nearest2, Conv2d, GroupNorm};
use crate::params::{Init, ParamStore};

/// Per-sample FiLM parameters: `gamma = 1 + dgamma[label]`, `delta = delta[label]`, both tables
/// zero at initialization.
#[derive(Debug, Clone)]
struct Film {
    dgamma: Tensor,
    delta: Tensor,
}

impl Film {
    fn new(ps: &ParamStore, channels: usize) -> Result<Self> {
        Ok(Self {
            dgamma: ps.get("dgamma", &[N_LABELS, channels], Init::Zeros)?,
            delta: ps.get("delta", &[N_LABELS, channels], Init::Zeros)?,
        })
    }

    /// `x: (C, B, H, W)`, `labels: (B,)` u32.
    fn forward(&self, x: &Tensor, labels: &Tensor) -> Result<Tensor> {
        let (c, b, _, _) = x.dims4()?;
        let g = (self.dgamma.index_select(labels, 0)?.t()? + 1.0)?.reshape((c, b, 1, 1))?;
        let d = self.delta.index_select(labels, 0)?.t()?.reshape((c, b, 1, 1))?;
        Ok(x.broadcast_mul(&g)?.broadcast_add(&d)?)
    }
}

#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    norm2: GroupNorm,
    film: Option<Film>,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new(ps: &ParamStore, c_in: usize, c_out: usize, groups: usize, film: bool) -> Result<Self> {
        Ok(Self {
            norm1: GroupNorm::new(&ps.pp("norm1"), c_in, groups)?,
            conv1: Conv2d::new(&ps.pp("conv1"), c_in, c_out, 3)?,
            norm2: GroupNorm::new(&ps.pp("norm2"), c_out, groups)?,
            film: if film { Some(Film::new(&ps.pp("film"), c_out)?) } else { None },
            conv2: Conv2d::new(&ps.pp("conv2"), c_out, c_out, 3)?,
            skip: if c_in != c_out { Some(Conv2d::new(&ps.pp("skip"), c_in, c_out, 1)?) } else { None },
        })
    }

    pub fn forward(&self, x: &Tensor, labels: Option<&Tensor>) -> Result<Tensor> {
        let h = self.conv1.forward(&silu(&self.norm1.forward(x)?)?)?;
        let mut h = self.norm2.forward(&h)?;
        if let (Some(film), Some(labels)) = (&self.film, labels) {
            h = film.forward(&h, labels)?;
        }
        let h = self.conv2.forward(&silu(&h)?)?;
        let skip = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((skip + h)?)
    }
}

/// Encoder output: the latent grid and the three deepest stage outputs, finest first.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub latent: Tensor,
    pub features: [Tensor; 3],
}

#[derive(Debug, Clone)]
pub struct Encoder {
    patch: usize,
    conv_in: Conv2d,
    stages: Vec<(Option<Conv2d>, Vec<ResBlock>)>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

impl Encoder {
    pub fn new(ps: &ParamStore, cfg: &TokenizerConfig) -> Result<Self> {
        let ch = cfg.stage_channels();
        let g = cfg.norm_groups;
        let conv_in = Conv2d::new(&ps.pp("conv_in"), 2 * cfg.patch * cfg.patch, ch[0], 3)?;
        let mut stages = Vec::new();
        for (s, &c) in ch.iter().enumerate() {
            let sp = ps.pp(format!("stage{s}"));
            let down = if s == 0 {
                None
            } else {
                Some(Conv2d::new(&sp.pp("down"), 4 * ch[s - 1], c, 1)?)
            };
            let blocks = (0..cfg.enc_res_blocks[s])
                .map(|k| ResBlock::new(&sp.pp(format!("res{k}")), c, c, g, true))
                .collect::<Result<Vec<_>>>()?;
            stages.push((down, blocks));
        }
        let last = *ch.last().unwrap();
        Ok(Self {
            patch: cfg.patch,
            conv_in,
            stages,
            norm_out: GroupNorm::new(&ps.pp("norm_out"), last, g)?,
            conv_out: Conv2d::new(&ps.pp("conv_out"), last, cfg.latent_dim, 1)?,
        })
    }

    /// `x: (2, B, H, W)` real/imaginary planes, `labels: (B,)`.
    pub fn forward(&self, x: &Tensor, labels: &Tensor) -> Result<Encoded> {
        let mut h = self.conv_in.forward(&space_to_depth(x, self.patch)?)?;
        let mut outs = Vec::with_capacity(self.stages.len());
        for (down, blocks) in &self.stages {
            if let Some(d) = down {
                h = d.forward(&space_to_depth(&h, 2)?)?;
            }
            for b in blocks {
                h = b.forward(&h, Some(labels))?;
            }
            outs.push(h.clone());
        }
        let latent = self.conv_out.forward(&silu(&self.norm_out.forward(&h)?)?)?;
        let n = outs.len();
        let features = [outs[n - 3].clone(), outs[n - 2].clone(), outs[n - 1].clone()];
        Ok(Encoded { latent, features })
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    patch: usize,
    conv_in: Conv2d,
    /// Coarsest first: residual blocks then an optional upsampling convolution.
    stages: Vec<(Vec<ResBlock>, Option<Conv2d>)>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

impl Decoder {
    pub fn new(ps: &ParamStore, cfg: &TokenizerConfig) -> Result<Self> {
        let ch = cfg.stage_channels();
        let g = cfg.norm_groups;
        let n = ch.len();
        let conv_in = Conv2d::new(&ps.pp("conv_in"), cfg.latent_dim, ch[n - 1], 3)?;
        let mut stages = Vec::new();
        for s in (0..n).rev() {
            let sp = ps.pp(format!("stage{s}"));
            let blocks = (0..cfg.dec_res_blocks[s])
                .map(|k| ResBlock::new(&sp.pp(format!("res{k}")), ch[s], ch[s], g, false))
                .collect::<Result<Vec<_>>>()?;
            let up = if s == 0 {
                None
            } else {
                Some(Conv2d::new(&sp.pp("up"), ch[s], ch[s - 1], 3)?)
            };
            stages.push((blocks, up));
        }
        Ok(Self {
            patch: cfg.patch,
            conv_in,
            stages,
            norm_out: GroupNorm::new(&ps.pp("norm_out"), ch[0], g)?,
            conv_out: Conv2d::new(&ps.pp("conv_out"), ch[0], 3 * cfg.patch * cfg.patch, 3)?,
        })
    }

    /// `z: (d, B, S, S)` to raw 3-channel output `(3, B, H, W)`.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = self.conv_in.forward(z)?;
        for (blocks, up) in &self.stages {
            for b in blocks {
                h = b.forward(&h, None)?;
            }
            if let Some(u) = up {
                h = u.forward(&upsample_nearest2(&h)?)?;
            }
        }
        let y = self.conv_out.forward(&silu(&self.norm_out.forward(&h)?)?)?;
        depth_to_space(&y, self.patch)
    }
}

/// Keeps the real/imaginary channels of a raw decoder output, clamps the magnitude at 1.5 and
/// rescales each image to unit peak magnitude.
pub fn finalize_output(raw: &Tensor) -> Result<Tensor> {
    let planes = raw.narrow(0, 0, 2)?;
    let mag = magnitude(&planes)?;
    let clamp = (mag.recip()? * 1.5)?.minimum(1.0)?;
    let clamped = planes.broadcast_mul(&clamp.unsqueeze(0)?)?;
    let (_, b, h, w) = clamped.dims4()?;
    let peak = magnitude(&clamped)?
        .reshape((b, h * w))?
        .max_keepdim(1)?
        .maximum(1e-6)?
        .reshape((1, b, 1, 1))?;
    Ok(clamped.broadcast_div(&peak)?)
}

/// `(2, B, H, W)` planes to `(B, H, W)` magnitudes, smoothed at zero for stable gradients.
pub fn magnitude(planes: &Tensor) -> Result<Tensor> {
    Ok((planes.sqr()?.sum(0)? + 1e-12)?.sqrt()?)
}

pub fn labels_tensor(ids: &[usize]) -> Result<Tensor> {
    let v: Vec<u32> = ids.iter().map(|&i| i as u32).collect();
    Ok(Tensor::from_vec(v, ids.len(), &Device::Cpu)?.to_dtype(DType::U32)?)
}
