//! Scale-by-scale generation from the 32x input and image reconstruction.

use candle_core::{Device, Tensor};
use nasp_core::dataio::Sample;
use nasp_core::ComplexImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{input_batch, tensors_to_maps, to_token_maps, TokenMapsJson};
use super::decode::{decode_tokens, DecodeStrategy};
use super::model::NextScaleModel;
use crate::aqvae::{tensor_to_images, AqVae};
use crate::error::{Error, Result};

/// Generated token maps `(B, side^2)` for every level and the logits that produced maps `1..`.
#[derive(Debug, Clone)]
pub struct Generation {
    pub maps: Vec<Tensor>,
    pub logits: Vec<Tensor>,
}

/// The coarsest map: the tokenizer's eval-mode quantization of the 32x input.
pub fn initial_map(tokenizer: &AqVae, x32: &Tensor, labels32: &[usize]) -> Result<Tensor> {
    let enc = tokenizer.encode(x32, labels32)?;
    let q = tokenizer.quantize(&enc.latent, 0, false)?;
    let b = x32.dim(1)?;
    let n = q.tokens.side * q.tokens.side;
    Ok(Tensor::from_vec(q.tokens.indices, (b, n), &Device::Cpu)?)
}

/// Predicts maps `1..L` one scale at a time, each in a single parallel step.
pub fn generate(
    model: &NextScaleModel,
    tokenizer: &AqVae,
    x32: &Tensor,
    labels32: &[usize],
    strategy: &DecodeStrategy,
    rng: &mut ChaCha8Rng,
) -> Result<Generation> {
    if tokenizer.cfg.schedule != model.tok_cfg.schedule || tokenizer.cfg.codebook_size != model.vocab() {
        return Err(Error::Config("tokenizer and transformer disagree on schedule or vocabulary".into()));
    }
    strategy.validate(model.vocab())?;
    let ctx = model.encode_context(x32, labels32)?;
    let mut maps = vec![initial_map(tokenizer, x32, labels32)?];
    let mut logits = Vec::new();
    let b = x32.dim(1)?;
    for k in 1..=model.layout().n_targets() {
        let l = model.forward(&maps, &ctx, None, k, None)?.pop().unwrap().detach();
        let tokens = decode_tokens(&l, strategy, rng)?;
        maps.push(Tensor::from_vec(tokens, (b, model.layout().map_len(k)), &Device::Cpu)?);
        logits.push(l);
    }
    Ok(Generation { maps, logits })
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub id: String,
    pub image: ComplexImage,
    pub tokens: TokenMapsJson,
}

/// Reconstructs each sample from its 32x input only.
pub fn reconstruct(
    model: &NextScaleModel,
    tokenizer: &AqVae,
    samples: &[&Sample],
    strategy: &DecodeStrategy,
    batch_size: usize,
) -> Result<Vec<Reconstruction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(strategy.seed);
    let sides = tokenizer.cfg.schedule.clone();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let (x32, labels32, _, _) = input_batch(chunk)?;
        let g = generate(model, tokenizer, &x32, &labels32, strategy, &mut rng)?;
        let images = tensor_to_images(&tokenizer.decode_tokens(&to_token_maps(&g.maps, &sides)?)?)?;
        for ((s, image), maps) in chunk.iter().zip(images).zip(tensors_to_maps(&g.maps)?) {
            out.push(Reconstruction {
                id: s.id.clone(),
                image,
                tokens: TokenMapsJson {
                    schedule: sides.clone(),
                    maps,
                },
            });
        }
    }
    Ok(out)
}
