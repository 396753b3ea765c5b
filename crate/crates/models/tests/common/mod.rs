#![allow(dead_code)]

use nasp_core::dataio::{build_sample, gen_phantom, Contrast, PhantomSpec, PyramidConfig, Sample};
use nasp_core::fourier::MaskPattern;
use nasp_models::aqvae::{AqVae, TokenizerConfig};
use nasp_models::nextscale::ArModelConfig;

/// Smallest configuration that still exercises every code path: 64x64 input, 8x8 latent.
pub fn tiny_tokenizer(codebook_size: usize) -> TokenizerConfig {
    TokenizerConfig {
        base_width: 8,
        ch_mult: vec![1, 1, 1],
        enc_res_blocks: vec![0, 0, 1],
        dec_res_blocks: vec![0, 0, 1],
        codebook_size,
        latent_dim: 4,
        extractor_widths: vec![4, 4, 8, 8],
        ..TokenizerConfig::desk()
    }
}

pub fn tiny_ar() -> ArModelConfig {
    ArModelConfig {
        depth: 2,
        embed_dim: 16,
        heads: 2,
        ..ArModelConfig::desk()
    }
}

pub fn sample(k: usize) -> Sample {
    let c = Contrast::ALL[k % 3];
    let p = MaskPattern::ALL[k % 4];
    let img = gen_phantom(&PhantomSpec::new(64, 64, c, k as u64)).unwrap();
    build_sample(&format!("s{k:03}"), c, p, k as u32, img, &PyramidConfig::default()).unwrap()
}

pub fn samples(n: usize) -> Vec<Sample> {
    (0..n).map(sample).collect()
}

/// Tiny tokenizer with its codebook initialized from the given samples.
pub fn tokenizer(codebook_size: usize, samples: &[Sample]) -> AqVae {
    let mut tok = AqVae::new(&tiny_tokenizer(codebook_size), 3).unwrap();
    let refs: Vec<&Sample> = samples.iter().collect();
    tok.init_codebook(&refs, 5).unwrap();
    tok
}
