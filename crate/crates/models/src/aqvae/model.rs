//! The additive multi-input tokenizer: encode every pyramid level, quantize each to its own
//! token grid with the shared codebook, refine, average and decode.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use nasp_core::dataio::{codebook_from_bytes, codebook_to_bytes, Checkpoint, Sample};
use nasp_core::fourier::Acceleration;
use nasp_core::ComplexImage;

use super::codebook::{rotation_trick, Codebook};
use super::config::TokenizerConfig;
use super::network::{finalize_output, labels_tensor, Decoder, Encoded, Encoder};
use crate::error::{Error, Result};
use crate::nn::{apply_grid_op, resample_2d, Conv2d};
use crate::params::ParamStore;

pub const N_LEVELS: usize = 6;

/// Token grid of one pyramid level for a batch, sample-major row-major indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMap {
    pub level: usize,
    pub side: usize,
    pub indices: Vec<u32>,
}

impl TokenMap {
    pub fn batch(&self) -> usize {
        self.indices.len() / (self.side * self.side)
    }

    pub fn sample(&self, b: usize) -> &[u32] {
        let n = self.side * self.side;
        &self.indices[b * n..(b + 1) * n]
    }
}

/// Quantization result for one level: area-downsampled latent, quantized latent (both
/// `(d, B, g, g)`) and the token map.
#[derive(Debug, Clone)]
pub struct Quantized {
    pub z: Tensor,
    pub zq: Tensor,
    pub tokens: TokenMap,
}

#[derive(Debug, Clone)]
pub struct LevelOutputs {
    pub quantized: Vec<Quantized>,
    /// Decoded `(2, B, H, W)` planes.
    pub recon: Tensor,
}

pub struct AqVae {
    pub cfg: TokenizerConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    refine: Vec<Conv2d>,
    pub codebook: Codebook,
    down_ops: Vec<Tensor>,
    up_ops: Vec<Tensor>,
}

/// `(2, B, H, W)` planes from complex images.
pub fn images_to_tensor(images: &[&ComplexImage]) -> Result<Tensor> {
    let (h, w) = images[0].shape();
    let mut re = Vec::with_capacity(images.len() * h * w);
    let mut im = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.shape() != (h, w) {
            return Err(Error::InvalidArgument("images differ in shape".into()));
        }
        re.extend(img.data().iter().map(|c| c.re));
        im.extend(img.data().iter().map(|c| c.im));
    }
    re.extend(im);
    Ok(Tensor::from_vec(re, (2, images.len(), h, w), &Device::Cpu)?)
}

pub fn tensor_to_images(x: &Tensor) -> Result<Vec<ComplexImage>> {
    let (_, b, h, w) = x.dims4()?;
    (0..b)
        .map(|k| {
            let planes = x.narrow(1, k, 1)?.flatten_all()?.to_vec1::<f32>()?;
            Ok(ComplexImage::from_planes(h, w, &planes)?)
        })
        .collect()
}

impl AqVae {
    /// Fresh model; the codebook holds placeholder vectors until [`AqVae::init_codebook`].
    pub fn new(cfg: &TokenizerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = ParamStore::new(seed);
        let encoder = Encoder::new(&params.pp("encoder"), cfg)?;
        let decoder = Decoder::new(&params.pp("decoder"), cfg)?;
        let refine = (0..N_LEVELS)
            .map(|k| Conv2d::zeros(&params.pp(format!("refine{k}")), cfg.latent_dim, cfg.latent_dim, 3))
            .collect::<Result<Vec<_>>>()?;
        let s = cfg.base_side();
        let down_ops = cfg.schedule.iter().map(|&g| resample_2d(g, s, false)).collect::<Result<Vec<_>>>()?;
        let up_ops = cfg.schedule.iter().map(|&g| resample_2d(s, g, true)).collect::<Result<Vec<_>>>()?;
        let placeholder: Vec<f32> = (0..cfg.codebook_size * cfg.latent_dim)
            .map(|k| ((k * 7919) % 1000) as f32 / 1000.0 - 0.5)
            .collect();
        let codebook = Codebook::from_vectors(cfg.codebook_size, cfg.latent_dim, placeholder, cfg.ema_decay, cfg.ema_eps)?;
        Ok(Self {
            cfg: cfg.clone(),
            params,
            encoder,
            decoder,
            refine,
            codebook,
            down_ops,
            up_ops,
        })
    }

    pub fn base_side(&self) -> usize {
        self.cfg.base_side()
    }

    pub fn schedule(&self) -> &[usize] {
        &self.cfg.schedule
    }

    /// Rejects inputs whose peak magnitude exceeds 1 + 1e-3.
    pub fn check_normalized(x: &Tensor) -> Result<()> {
        let peak = crate::nn::scalar(&super::network::magnitude(x)?.flatten_all()?.max(0)?)?;
        if peak > 1.0 + 1e-3 {
            return Err(Error::InvalidArgument(format!(
                "encoder input is not normalized (peak magnitude {peak:.4})"
            )));
        }
        Ok(())
    }

    /// `x: (2, B, H, W)`, one label id per sample.
    pub fn encode(&self, x: &Tensor, labels: &[usize]) -> Result<Encoded> {
        Self::check_normalized(x)?;
        self.encoder.forward(x, &labels_tensor(labels)?)
    }

    /// Area-downsamples `z: (d, B, S, S)` to the level's side and snaps each vector to its
    /// nearest code; `train` switches the gradient path to the rotation trick.
    pub fn quantize(&self, z: &Tensor, level: usize, train: bool) -> Result<Quantized> {
        let side = *self
            .cfg
            .schedule
            .get(level)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown level {level}")))?;
        let (d, b, s, _) = z.dims4()?;
        if s != self.base_side() || side > s {
            return Err(Error::InvalidArgument(format!(
                "cannot quantize a {s}x{s} latent to side {side}"
            )));
        }
        let zd = apply_grid_op(z, &self.down_ops[level])?;
        let rows = zd.reshape((d, b * side * side))?.t()?.contiguous()?;
        let indices = self.codebook.assign(&rows.detach().flatten_all()?.to_vec1::<f32>()?);
        let idx = Tensor::from_slice(&indices, indices.len(), &Device::Cpu)?;
        let q = self.codebook.tensor()?.index_select(&idx, 0)?;
        let q = if train { rotation_trick(&rows, &q)? } else { q };
        let zq = q.t()?.contiguous()?.reshape((d, b, side, side))?;
        Ok(Quantized {
            z: zd,
            zq,
            tokens: TokenMap { level, side, indices },
        })
    }

    /// Codebook vectors of a token map as a `(d, B, g, g)` latent.
    pub fn lookup(&self, tokens: &TokenMap) -> Result<Tensor> {
        let b = tokens.batch();
        let idx = Tensor::from_slice(&tokens.indices, tokens.indices.len(), &Device::Cpu)?;
        let q = self.codebook.tensor()?.index_select(&idx, 0)?;
        Ok(q.t()?.contiguous()?.reshape((self.cfg.latent_dim, b, tokens.side, tokens.side))?)
    }

    /// `up(Q) + rho * phi_k(up(Q))` at the base side.
    pub fn refine(&self, zq: &Tensor, level: usize) -> Result<Tensor> {
        let conv = self
            .refine
            .get(level)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown level {level}")))?;
        let up = apply_grid_op(zq, &self.up_ops[level])?;
        if self.cfg.rho == 0.0 {
            return Ok(up);
        }
        Ok((&up + (conv.forward(&up)? * self.cfg.rho)?)?)
    }

    /// Elementwise mean of refined latents.
    pub fn fuse(latents: &[Tensor]) -> Result<Tensor> {
        let n = latents.len();
        if n == 0 {
            return Err(Error::InvalidArgument("fuse needs at least one level".into()));
        }
        let mut acc = latents[0].clone();
        for l in &latents[1..] {
            acc = (acc + l)?;
        }
        Ok((acc / n as f64)?)
    }

    /// Fused latent to `(2, B, H, W)` output planes.
    pub fn decode(&self, fused: &Tensor) -> Result<Tensor> {
        let s = self.base_side();
        if fused.dim(2)? != s || fused.dim(3)? != s {
            return Err(Error::InvalidArgument(format!(
                "decoder expects a {s}x{s} latent, got {:?}",
                fused.dims()
            )));
        }
        finalize_output(&self.decoder.forward(fused)?)
    }

    /// Decodes from quantized latents of all levels.
    pub fn decode_quantized(&self, zq: &[Tensor]) -> Result<Tensor> {
        let refined = zq
            .iter()
            .enumerate()
            .map(|(k, q)| self.refine(q, k))
            .collect::<Result<Vec<_>>>()?;
        self.decode(&Self::fuse(&refined)?)
    }

    pub fn decode_tokens(&self, maps: &[TokenMap]) -> Result<Tensor> {
        let zq = maps.iter().map(|m| self.lookup(m)).collect::<Result<Vec<_>>>()?;
        self.decode_quantized(&zq)
    }

    /// Full pass over the six levels of each sample. `inputs` is `(2, 6B, H, W)` in level-major
    /// order (`level * B + b`), `labels` likewise.
    pub fn forward_levels(&self, inputs: &Tensor, labels: &[usize], train: bool) -> Result<LevelOutputs> {
        let total = inputs.dim(1)?;
        let b = total / N_LEVELS;
        let enc = self.encode(inputs, labels)?;
        let mut quantized = Vec::with_capacity(N_LEVELS);
        for k in 0..N_LEVELS {
            let z = enc.latent.narrow(1, k * b, b)?;
            quantized.push(self.quantize(&z, k, train)?);
        }
        let zq: Vec<Tensor> = quantized.iter().map(|q| q.zq.clone()).collect();
        let recon = self.decode_quantized(&zq)?;
        Ok(LevelOutputs { quantized, recon })
    }

    /// Ground-truth token pyramids (eval mode) for a set of samples.
    pub fn tokenize(&self, samples: &[&Sample]) -> Result<Vec<TokenMap>> {
        let (inputs, labels) = level_batch(samples)?;
        let out = self.forward_levels(&inputs, &labels, false)?;
        Ok(out.quantized.into_iter().map(|q| q.tokens).collect())
    }

    /// Eval-mode reconstruction of each sample from all six levels.
    pub fn reconstruct(&self, samples: &[&Sample]) -> Result<Vec<ComplexImage>> {
        let (inputs, labels) = level_batch(samples)?;
        tensor_to_images(&self.forward_levels(&inputs, &labels, false)?.recon)
    }

    /// Initializes the codebook from the eval-mode latents of `samples` at every level.
    pub fn init_codebook(&mut self, samples: &[&Sample], seed: u64) -> Result<()> {
        let (inputs, labels) = level_batch(samples)?;
        let enc = self.encode(&inputs, &labels)?;
        let b = samples.len();
        let d = self.cfg.latent_dim;
        let mut rows = Vec::new();
        for k in 0..N_LEVELS {
            let z = apply_grid_op(&enc.latent.narrow(1, k * b, b)?, &self.down_ops[k])?;
            let n = z.elem_count() / d;
            rows.extend(z.reshape((d, n))?.t()?.flatten_all()?.to_vec1::<f32>()?);
        }
        self.codebook = Codebook::from_samples(self.cfg.codebook_size, d, &rows, seed, self.cfg.ema_decay, self.cfg.ema_eps)?;
        Ok(())
    }

    pub fn codebook_bytes(&self) -> Result<Vec<u8>> {
        Ok(codebook_to_bytes(self.codebook.size(), self.codebook.dim(), self.codebook.vectors())?)
    }

    pub fn load_codebook_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let (v, d, vectors) = codebook_from_bytes(bytes)?;
        if v != self.cfg.codebook_size || d != self.cfg.latent_dim {
            return Err(Error::Weights(format!(
                "codebook is {v}x{d}, config expects {}x{}",
                self.cfg.codebook_size, self.cfg.latent_dim
            )));
        }
        self.codebook = Codebook::from_vectors(v, d, vectors, self.cfg.ema_decay, self.cfg.ema_eps)?;
        Ok(())
    }
}

/// Stacks the six level inputs of each sample, level-major, with their label ids.
pub fn level_batch(samples: &[&Sample]) -> Result<(Tensor, Vec<usize>)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no samples in batch"));
    }
    let mut images = Vec::with_capacity(N_LEVELS * samples.len());
    let mut labels = Vec::with_capacity(N_LEVELS * samples.len());
    for k in 0..N_LEVELS {
        for s in samples {
            images.push(&s.inputs[k]);
            labels.push(s.labels[k].id());
        }
    }
    Ok((images_to_tensor(&images)?, labels))
}

/// Ground-truth targets `(2, B, H, W)`.
pub fn target_batch(samples: &[&Sample]) -> Result<Tensor> {
    images_to_tensor(&samples.iter().map(|s| &s.target).collect::<Vec<_>>())
}

/// Zero-filled 32x inputs `(2, B, H, W)` with their labels.
pub fn r32_batch(samples: &[&Sample]) -> Result<(Tensor, Vec<usize>)> {
    let k = Acceleration::R32.level_index();
    let images: Vec<&ComplexImage> = samples.iter().map(|s| &s.inputs[k]).collect();
    let labels = samples.iter().map(|s| s.labels[k].id()).collect();
    Ok((images_to_tensor(&images)?, labels))
}

pub const TOKENIZER_COMPONENT: &str = "tokenizer";
pub const WEIGHTS_BLOB: &str = "weights.safetensors";
pub const CODEBOOK_BLOB: &str = "codebook.bin";

impl AqVae {
    pub fn to_checkpoint(&self, profile: &str, seed: u64, metrics: BTreeMap<String, f64>) -> Result<Checkpoint> {
        let mut blobs = BTreeMap::new();
        blobs.insert(WEIGHTS_BLOB.to_string(), self.params.to_safetensors()?);
        blobs.insert(CODEBOOK_BLOB.to_string(), self.codebook_bytes()?);
        Ok(Checkpoint::new(
            TOKENIZER_COMPONENT,
            profile,
            serde_json::to_value(&self.cfg)?,
            seed,
            metrics,
            blobs,
        ))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg: TokenizerConfig = serde_json::from_value(ckpt.manifest.config.clone())?;
        let mut model = Self::new(&cfg, ckpt.manifest.seed)?;
        model.params.load_safetensors(ckpt.blob(WEIGHTS_BLOB)?)?;
        model.load_codebook_bytes(ckpt.blob(CODEBOOK_BLOB)?)?;
        Ok(model)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load_component(dir, TOKENIZER_COMPONENT)?)
    }
}
