//! Tokenizer objective and the alternating generator/discriminator training loop.

use std::collections::BTreeMap;

use candle_core::Tensor;
use nasp_core::dataio::{epoch_order, Sample};
use nasp_core::metrics;
use serde::Serialize;

use super::codebook::Codebook;
use super::config::{TokenizerConfig, TokenizerTrainConfig};
use super::extractor::{DiscriminatorHeads, RandomExtractor};
use super::losses::{commitment_loss, discriminator_loss, generator_adv_loss, perceptual_loss, ssim_loss};
use super::model::{level_batch, target_batch, AqVae, LevelOutputs, N_LEVELS};
use super::network::magnitude;
use crate::error::{check_finite, Error, Result};
use crate::nn::scalar;
use crate::optim::{Decay, Schedule, Trainer};
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub ssim: f64,
    pub adv: f64,
    pub perc: f64,
    pub commit: f64,
    pub total: f64,
    /// `(w_ssim, w_adv, w_perc, w_commit)` as applied.
    pub weights: [f64; 4],
}

/// Total generator loss for one level-major batch. The adversarial term is skipped (and reported
/// as zero) when `heads` is `None`.
pub fn tokenizer_loss(
    model: &AqVae,
    extractor: &RandomExtractor,
    heads: Option<&DiscriminatorHeads>,
    inputs: &Tensor,
    labels: &[usize],
    target: &Tensor,
    train: bool,
) -> Result<(Tensor, LossBreakdown, LevelOutputs)> {
    let w = &model.cfg.loss;
    let out = model.forward_levels(inputs, labels, train)?;
    let fake = magnitude(&out.recon)?;
    let real = magnitude(target)?.detach();
    let l_ssim = ssim_loss(&fake, &real)?;
    let fake_feat = extractor.forward(&fake.unsqueeze(0)?)?;
    let real_feat = extractor.forward(&real.unsqueeze(0)?)?;
    let l_perc = perceptual_loss(&fake_feat, &real_feat)?;
    let z: Vec<Tensor> = out.quantized.iter().map(|q| q.z.clone()).collect();
    let q: Vec<Tensor> = out.quantized.iter().map(|q| q.zq.clone()).collect();
    let l_commit = commitment_loss(&z, &q, w.w_commit)?;
    let mut total = ((l_ssim.clone() * w.w_ssim)? + (l_perc.clone() * w.w_perc)?)?;
    total = (total + &l_commit)?;
    let mut adv = 0.0;
    if let Some(heads) = heads {
        let l_adv = generator_adv_loss(&heads.forward(&fake_feat)?)?;
        adv = scalar(&l_adv)?;
        total = (total + (l_adv * w.w_adv)?)?;
    }
    let breakdown = LossBreakdown {
        ssim: scalar(&l_ssim)?,
        adv,
        perc: scalar(&l_perc)?,
        commit: scalar(&l_commit)?,
        total: scalar(&total)?,
        weights: [w.w_ssim, w.w_adv, w.w_perc, w.w_commit],
    };
    Ok((total, breakdown, out))
}

#[derive(Debug, Clone, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub disc_loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TokenizerReport {
    pub steps: usize,
    /// Code-usage perplexity over each epoch's assignments (all levels).
    pub epoch_perplexity: Vec<f64>,
    pub val_ssim: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_ssim: f64,
    pub last_val_ssim: f64,
    pub first_loss: f64,
    pub last_loss: f64,
}

impl TokenizerReport {
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("steps".into(), self.steps as f64);
        m.insert("best_val_ssim".into(), self.best_val_ssim);
        m.insert("last_val_ssim".into(), self.last_val_ssim);
        m.insert("best_epoch".into(), self.best_epoch as f64);
        m.insert("first_loss".into(), self.first_loss);
        m.insert("last_loss".into(), self.last_loss);
        if let Some(p) = self.epoch_perplexity.first() {
            m.insert("first_epoch_perplexity".into(), *p);
        }
        if let Some(p) = self.epoch_perplexity.last() {
            m.insert("last_epoch_perplexity".into(), *p);
        }
        m
    }
}

/// Mean magnitude SSIM of eval-mode six-level reconstructions against the targets.
pub fn mean_ssim(model: &AqVae, samples: &[&Sample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no samples to score"));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        for (recon, s) in model.reconstruct(chunk)?.iter().zip(chunk) {
            total += metrics::ssim(&recon.magnitude(), &s.target.magnitude())?;
        }
    }
    Ok(total / samples.len() as f64)
}

/// Trains `model` in place and restores the weights and codebook with the best validation SSIM.
/// When `val` is empty the training set is scored instead.
pub fn train_tokenizer(
    model: &mut AqVae,
    train: &[Sample],
    val: &[Sample],
    cfg: &TokenizerTrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TokenizerReport> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("tokenizer training set"));
    }
    let tcfg: TokenizerConfig = model.cfg.clone();
    let extractor = RandomExtractor::new(&tcfg.extractor_widths, tcfg.extractor_seed)?;
    let disc_params = ParamStore::new(cfg.seed ^ 0xd15c);
    let heads = DiscriminatorHeads::new(&disc_params.pp("disc"), &tcfg.extractor_widths)?;

    let bs = cfg.batch_size.max(1);
    let per_epoch = train.len().div_ceil(bs);
    let total_steps = per_epoch * cfg.epochs;
    let mut gen_opt = Trainer::new(
        model.params.vars(),
        Schedule {
            peak: cfg.lr,
            floor: cfg.lr_floor,
            warmup: cfg.warmup_steps,
            total: total_steps,
            decay: Decay::Cosine,
        },
        (0.9, 0.95),
        cfg.weight_decay,
        cfg.clip_generator,
    )?;
    let mut disc_opt = Trainer::new(
        disc_params.vars(),
        Schedule {
            peak: cfg.disc_lr,
            floor: cfg.lr_floor,
            warmup: cfg.warmup_steps,
            total: total_steps,
            decay: Decay::Cosine,
        },
        (0.9, 0.95),
        0.0,
        cfg.clip_discriminator,
    )?;

    let first: Vec<&Sample> = epoch_order(train.len(), cfg.seed)
        .into_iter()
        .take(bs)
        .map(|k| &train[k])
        .collect();
    model.init_codebook(&first, cfg.seed)?;

    let val_refs: Vec<&Sample> = if val.is_empty() { train.iter().collect() } else { val.iter().collect() };
    let mut report = TokenizerReport {
        best_val_ssim: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best: Option<(BTreeMap<String, Tensor>, Codebook)> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed.wrapping_add(epoch as u64 + 1));
        let mut usage: Vec<u32> = Vec::new();
        for chunk in order.chunks(bs) {
            let batch: Vec<&Sample> = chunk.iter().map(|&k| &train[k]).collect();
            let (inputs, labels) = level_batch(&batch)?;
            let target = target_batch(&batch)?;
            let use_adv = step >= cfg.adv_start_step && tcfg.loss.w_adv > 0.0;
            let (loss, breakdown, out) =
                tokenizer_loss(model, &extractor, use_adv.then_some(&heads), &inputs, &labels, &target, true)?;
            check_finite(breakdown.total, "tokenizer loss", step)?;
            let (grad_norm, lr) = gen_opt.backward_step(&loss)?;

            let d = tcfg.latent_dim;
            for q in &out.quantized {
                let n = q.tokens.indices.len();
                let rows = q.z.detach().reshape((d, n))?.t()?.flatten_all()?.to_vec1::<f32>()?;
                model.codebook.ema_update(&q.tokens.indices, &rows)?;
                usage.extend_from_slice(&q.tokens.indices);
            }

            let mut disc_loss = 0.0;
            if use_adv {
                let fake = magnitude(&out.recon.detach())?.unsqueeze(0)?;
                let real = magnitude(&target)?.unsqueeze(0)?;
                let ld = discriminator_loss(
                    &heads.forward(&extractor.forward(&real)?)?,
                    &heads.forward(&extractor.forward(&fake)?)?,
                )?;
                disc_loss = check_finite(scalar(&ld)?, "discriminator loss", step)?;
                disc_opt.backward_step(&ld)?;
            }

            if step == 0 {
                report.first_loss = breakdown.total;
            }
            report.last_loss = breakdown.total;
            on_step(&StepLog {
                step,
                epoch,
                lr,
                loss: breakdown,
                disc_loss,
                grad_norm,
            });
            step += 1;
        }
        report.epoch_perplexity.push(model.codebook.perplexity(&usage));
        let v = mean_ssim(model, &val_refs, bs)?;
        report.val_ssim.push(v);
        report.last_val_ssim = v;
        if v > report.best_val_ssim {
            report.best_val_ssim = v;
            report.best_epoch = epoch;
            best = Some((model.params.snapshot()?, model.codebook.clone()));
        }
    }
    report.steps = step;
    if let Some((weights, codebook)) = best {
        model.params.restore(&weights)?;
        model.codebook = codebook;
    }
    debug_assert_eq!(N_LEVELS, tcfg.schedule.len());
    Ok(report)
}
