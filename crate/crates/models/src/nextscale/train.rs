//! Teacher-forced cross-entropy training of the student (context only) and the teacher
//! (privileged features, corrupted prefixes).

use std::collections::BTreeMap;

use nasp_core::dataio::epoch_order;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::ArTrainConfig;
use super::data::{make_batch, maps_to_tensors, randomize_prefix, ArBatch, ArExample};
use super::model::NextScaleModel;
use crate::error::{check_finite, Error, Result};
use crate::nn::scalar;
use crate::optim::{Decay, Schedule, Trainer};

#[derive(Debug, Clone, Serialize)]
pub struct ArStepLog {
    pub step: usize,
    pub ce: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ArReport {
    pub steps: usize,
    pub first_ce: f64,
    pub last_ce: f64,
    /// Eval-mode cross-entropy over the whole training set after training.
    pub final_train_ce: f64,
}

impl ArReport {
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("steps".to_string(), self.steps as f64),
            ("first_ce".to_string(), self.first_ce),
            ("last_ce".to_string(), self.last_ce),
            ("final_train_ce".to_string(), self.final_train_ce),
        ])
    }
}

/// Teacher-forced logits for a batch; the teacher also receives fully sampled features.
pub fn batch_logits(
    model: &NextScaleModel,
    batch: &ArBatch,
    inputs: &[candle_core::Tensor],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<candle_core::Tensor>> {
    let ctx = model.encode_context(&batch.x32, &batch.labels32)?;
    let privileged = if model.cfg.privileged {
        Some(model.encode_context(&batch.xfs, &batch.labels_fs)?)
    } else {
        None
    };
    model.forward(inputs, &ctx, privileged.as_ref(), model.layout().n_targets(), rng)
}

/// Eval-mode teacher-forced cross-entropy (no prefix corruption), averaged over positions.
pub fn evaluate_ce(model: &NextScaleModel, examples: &[ArExample], batch_size: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("no examples to score"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&ArExample> = chunk.iter().collect();
        let batch = make_batch(&refs)?;
        let logits = batch_logits(model, &batch, &batch.maps, None)?;
        let n = chunk.len() * model.layout().predicted_len();
        total += scalar(&model.cross_entropy(&logits, &batch.maps)?)? * n as f64;
        count += n;
    }
    Ok(total / count as f64)
}

pub fn train_ar(
    model: &NextScaleModel,
    examples: &[ArExample],
    cfg: &ArTrainConfig,
    mut on_step: impl FnMut(&ArStepLog),
) -> Result<ArReport> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("transformer training set"));
    }
    let mut trainer = Trainer::new(
        model.params.vars(),
        Schedule {
            peak: cfg.lr,
            floor: 0.0,
            warmup: cfg.warmup_steps,
            total: cfg.steps,
            decay: Decay::Linear,
        },
        (0.9, 0.95),
        cfg.weight_decay,
        cfg.clip,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa7);
    let bs = cfg.batch_size.max(1).min(examples.len());
    let n_t = model.layout().n_targets();
    let mut report = ArReport::default();
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    for step in 0..cfg.steps {
        if order.len() < bs {
            order = epoch_order(examples.len(), cfg.seed.wrapping_add(epoch));
            epoch += 1;
        }
        let picked: Vec<usize> = order.drain(..bs).collect();
        let refs: Vec<&ArExample> = picked.iter().map(|&k| &examples[k]).collect();
        let batch = make_batch(&refs)?;
        let inputs = if model.cfg.privileged && cfg.p_replace > 0.0 {
            let corrupted: Vec<Vec<Vec<u32>>> = refs
                .iter()
                .enumerate()
                .map(|(b, e)| {
                    let seed = cfg.seed ^ ((step as u64) << 20) ^ (b as u64) ^ 0x5eed;
                    let mut m = randomize_prefix(&e.maps[..n_t], model.vocab(), cfg.p_replace, seed)?;
                    m.push(e.maps[n_t].clone());
                    Ok(m)
                })
                .collect::<Result<_>>()?;
            let views: Vec<&[Vec<u32>]> = corrupted.iter().map(|m| m.as_slice()).collect();
            maps_to_tensors(&views)?
        } else {
            batch.maps.clone()
        };
        let logits = batch_logits(model, &batch, &inputs, Some(&mut rng))?;
        let loss = model.cross_entropy(&logits, &batch.maps)?;
        let ce = check_finite(scalar(&loss)?, "cross-entropy", step)?;
        let (grad_norm, lr) = trainer.backward_step(&loss)?;
        if step == 0 {
            report.first_ce = ce;
        }
        report.last_ce = ce;
        on_step(&ArStepLog { step, ce, lr, grad_norm });
    }
    report.steps = cfg.steps;
    report.final_train_ce = evaluate_ce(model, examples, bs)?;
    Ok(report)
}
