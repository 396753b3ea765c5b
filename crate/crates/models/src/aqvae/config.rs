use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerLossConfig {
    pub w_ssim: f64,
    pub w_adv: f64,
    pub w_perc: f64,
    /// Commitment weight; the same constant as beta, applied once.
    pub w_commit: f64,
}

impl Default for TokenizerLossConfig {
    fn default() -> Self {
        Self {
            w_ssim: 1.0,
            w_adv: 0.1,
            w_perc: 0.1,
            w_commit: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerConfig {
    pub image_side: usize,
    /// Space-to-depth factor applied to the input before the first convolution.
    pub patch: usize,
    pub base_width: usize,
    /// Channel multiplier per encoder stage; each stage after the first halves the side.
    pub ch_mult: Vec<usize>,
    pub enc_res_blocks: Vec<usize>,
    pub dec_res_blocks: Vec<usize>,
    pub norm_groups: usize,
    pub codebook_size: usize,
    pub latent_dim: usize,
    /// Token-grid side per level, ordered `[32, 16, 8, 4, 2, FS]`.
    pub schedule: Vec<usize>,
    pub rho: f64,
    pub ema_decay: f64,
    pub ema_eps: f64,
    pub loss: TokenizerLossConfig,
    /// Channels of the fixed random feature extractor at each of its depths.
    pub extractor_widths: Vec<usize>,
    pub extractor_seed: u64,
}

impl TokenizerConfig {
    pub fn desk() -> Self {
        Self {
            image_side: 64,
            patch: 2,
            base_width: 16,
            ch_mult: vec![1, 2, 4],
            enc_res_blocks: vec![0, 1, 1],
            dec_res_blocks: vec![1, 1, 1],
            norm_groups: 8,
            codebook_size: 512,
            latent_dim: 16,
            schedule: vec![3, 4, 5, 6, 7, 8],
            rho: 0.5,
            ema_decay: 0.99,
            ema_eps: 1e-5,
            loss: TokenizerLossConfig::default(),
            extractor_widths: vec![8, 16, 32, 32],
            extractor_seed: 0x5eed,
        }
    }

    pub fn paper() -> Self {
        Self {
            image_side: 256,
            patch: 1,
            base_width: 160,
            ch_mult: vec![1, 1, 2, 2, 4],
            enc_res_blocks: vec![2; 5],
            dec_res_blocks: vec![2; 5],
            norm_groups: 32,
            codebook_size: 4096,
            latent_dim: 32,
            schedule: vec![11, 12, 13, 14, 15, 16],
            extractor_widths: vec![32, 64, 128, 128],
            ..Self::desk()
        }
    }

    /// Side of the encoder output grid.
    pub fn base_side(&self) -> usize {
        self.image_side / (self.patch << (self.ch_mult.len() - 1))
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        self.ch_mult.iter().map(|m| m * self.base_width).collect()
    }

    /// Sides of the three cross-attention feature maps, finest first.
    pub fn feature_sides(&self) -> [usize; 3] {
        let b = self.base_side();
        [4 * b, 2 * b, b]
    }

    /// Channel counts matching [`TokenizerConfig::feature_sides`].
    pub fn feature_channels(&self) -> [usize; 3] {
        let c = self.stage_channels();
        let n = c.len();
        [c[n - 3], c[n - 2], c[n - 1]]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let n = self.ch_mult.len();
        if n < 3 {
            return fail("ch_mult needs at least three stages (three feature resolutions)".into());
        }
        if self.enc_res_blocks.len() != n || self.dec_res_blocks.len() != n {
            return fail(format!("enc_res_blocks and dec_res_blocks need {n} entries"));
        }
        if self.patch == 0 || self.image_side % (self.patch << (n - 1)) != 0 {
            return fail(format!(
                "image_side {} is not divisible by patch*2^{}",
                self.image_side,
                n - 1
            ));
        }
        if self.stage_channels().iter().any(|c| c % self.norm_groups != 0) {
            return fail("every stage width must be divisible by norm_groups".into());
        }
        if self.schedule.len() != 6 {
            return fail(format!("schedule needs 6 sides, got {}", self.schedule.len()));
        }
        if self.schedule.windows(2).any(|w| w[1] != w[0] + 1) {
            return fail(format!("schedule {:?} must increase by exactly 1", self.schedule));
        }
        if *self.schedule.last().unwrap() != self.base_side() {
            return fail(format!(
                "schedule must end at the base latent side {}",
                self.base_side()
            ));
        }
        if self.codebook_size == 0 || self.latent_dim == 0 {
            return fail("codebook_size and latent_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return fail("ema_decay must lie in [0, 1)".into());
        }
        let l = &self.loss;
        if [l.w_ssim, l.w_adv, l.w_perc, l.w_commit].iter().any(|w| *w < 0.0) {
            return fail("loss weights must be nonnegative".into());
        }
        if self.extractor_widths.len() != 4 {
            return fail("the feature extractor exposes exactly 4 depths".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub disc_lr: f64,
    pub lr_floor: f64,
    pub warmup_steps: usize,
    pub clip_generator: f64,
    pub clip_discriminator: f64,
    pub weight_decay: f64,
    /// Generator steps before the adversarial term is switched on.
    pub adv_start_step: usize,
    pub seed: u64,
}

impl Default for TokenizerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 45,
            batch_size: 4,
            lr: 3e-3,
            disc_lr: 1e-3,
            lr_floor: 1e-6,
            warmup_steps: 20,
            clip_generator: 5.0,
            clip_discriminator: 1.0,
            weight_decay: 0.0,
            adv_start_step: 360,
            seed: 0,
        }
    }
}
