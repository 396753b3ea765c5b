//! Student rollouts scored by the frozen privileged teacher, and the distillation loop.

use std::collections::BTreeMap;

use candle_core::Tensor;
use nasp_core::dataio::{epoch_order, sha256_hex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kl::reverse_kl;
use crate::aqvae::AqVae;
use crate::error::{check_finite, Error, Result};
use crate::nextscale::{generate, make_batch, ArBatch, ArExample, DecodeStrategy, NextScaleModel};
use crate::nn::scalar;
use crate::optim::{Decay, Schedule, Trainer};

/// One rollout: the sampled maps (the first from the tokenizer) and per-scale logits of both
/// models on that same history. Student logits carry gradients; teacher logits do not.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub maps: Vec<Tensor>,
    pub student_logits: Vec<Tensor>,
    pub teacher_logits: Vec<Tensor>,
    pub seed: u64,
}

/// Teacher-side logits on a given history, detached.
pub fn teacher_logits(teacher: &NextScaleModel, batch: &ArBatch, maps: &[Tensor]) -> Result<Vec<Tensor>> {
    if !teacher.cfg.privileged {
        return Err(Error::InvalidArgument("the teacher needs the privileged branch".into()));
    }
    let ctx = teacher.encode_context(&batch.x32, &batch.labels32)?;
    let fs = teacher.encode_context(&batch.xfs, &batch.labels_fs)?;
    let n = teacher.layout().n_targets();
    Ok(teacher
        .forward(maps, &ctx, Some(&fs), n, None)?
        .into_iter()
        .map(|t| t.detach())
        .collect())
}

/// Student logits for every scale of a stored history, in eval mode (one pass; block causality
/// makes this equal to the scale-by-scale logits seen during sampling).
pub fn student_logits(student: &NextScaleModel, batch: &ArBatch, maps: &[Tensor]) -> Result<Vec<Tensor>> {
    let ctx = student.encode_context(&batch.x32, &batch.labels32)?;
    student.forward(maps, &ctx, None, student.layout().n_targets(), None)
}

pub fn rollout(
    student: &NextScaleModel,
    teacher: &NextScaleModel,
    tokenizer: &AqVae,
    batch: &ArBatch,
    strategy: &DecodeStrategy,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = generate(student, tokenizer, &batch.x32, &batch.labels32, strategy, &mut rng)?;
    Ok(Trajectory {
        student_logits: student_logits(student, batch, &g.maps)?,
        teacher_logits: teacher_logits(teacher, batch, &g.maps)?,
        maps: g.maps,
        seed,
    })
}

pub fn weights_hash(model: &NextScaleModel) -> Result<String> {
    Ok(sha256_hex(&model.params.to_safetensors()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_floor: f64,
    pub warmup_steps: usize,
    pub clip: f64,
    pub n_rollouts: usize,
    /// Weight of an optional teacher-forced cross-entropy term; 0 keeps pure reverse KL.
    pub ce_weight: f64,
    pub temperature: f64,
    /// Held-out evaluation (and teacher hash check) period in steps.
    pub eval_every: usize,
    pub seed: u64,
}

impl DistillConfig {
    pub fn paper() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            lr: 1e-5,
            lr_floor: 0.0,
            warmup_steps: 0,
            clip: 1.0,
            n_rollouts: 1,
            ce_weight: 0.0,
            temperature: 1.0,
            eval_every: 100,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            steps: 60,
            lr: 1e-3,
            eval_every: 10,
            ..Self::paper()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DistillStepLog {
    pub step: usize,
    pub rkl: f64,
    pub lr: f64,
    pub scale_rkl: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DistillReport {
    pub steps: usize,
    pub initial_heldout_rkl: f64,
    pub best_heldout_rkl: f64,
    pub best_step: usize,
    pub heldout_history: Vec<(usize, f64)>,
    pub teacher_hash: String,
}

impl DistillReport {
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("steps".to_string(), self.steps as f64),
            ("initial_heldout_rkl".to_string(), self.initial_heldout_rkl),
            ("best_heldout_rkl".to_string(), self.best_heldout_rkl),
            ("best_step".to_string(), self.best_step as f64),
        ])
    }
}

/// Mean reverse KL of multinomial student rollouts on `examples`, with a fixed sampling seed.
pub fn heldout_rkl(
    student: &NextScaleModel,
    teacher: &NextScaleModel,
    tokenizer: &AqVae,
    examples: &[ArExample],
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("held-out distillation set"));
    }
    let mut total = 0.0;
    for (k, chunk) in examples.chunks(batch_size.max(1)).enumerate() {
        let refs: Vec<&ArExample> = chunk.iter().collect();
        let batch = make_batch(&refs)?;
        let t = rollout(student, teacher, tokenizer, &batch, &DecodeStrategy::multinomial(seed), seed ^ k as u64)?;
        let (kl, _) = reverse_kl(&t.student_logits, &t.teacher_logits)?;
        total += scalar(&kl)? * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

/// Distills the teacher into `student` in place; the student ends at the weights with the
/// lowest held-out reverse KL (the initial weights included).
pub fn distill(
    student: &NextScaleModel,
    teacher: &NextScaleModel,
    tokenizer: &AqVae,
    train: &[ArExample],
    heldout: &[ArExample],
    cfg: &DistillConfig,
    mut on_step: impl FnMut(&DistillStepLog),
) -> Result<DistillReport> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("distillation set"));
    }
    if student.cfg.privileged {
        return Err(Error::InvalidArgument("the student must not see privileged features".into()));
    }
    let hash = weights_hash(teacher)?;
    let check_teacher = || -> Result<()> {
        let now = weights_hash(teacher)?;
        if now != hash {
            return Err(Error::TeacherDrift {
                before: hash.clone(),
                after: now,
            });
        }
        Ok(())
    };
    let mut trainer = Trainer::new(
        student.params.vars(),
        Schedule {
            peak: cfg.lr,
            floor: cfg.lr_floor,
            warmup: cfg.warmup_steps,
            total: cfg.steps,
            decay: Decay::Cosine,
        },
        (0.9, 0.95),
        0.0,
        cfg.clip,
    )?;
    let bs = cfg.batch_size.max(1).min(train.len());
    let eval_set = if heldout.is_empty() { train } else { heldout };
    let eval_seed = cfg.seed ^ 0xe7a1;
    let initial = heldout_rkl(student, teacher, tokenizer, eval_set, bs, eval_seed)?;
    let mut report = DistillReport {
        initial_heldout_rkl: initial,
        best_heldout_rkl: initial,
        heldout_history: vec![(0, initial)],
        teacher_hash: hash.clone(),
        ..Default::default()
    };
    let mut best = student.params.snapshot()?;
    let strategy = DecodeStrategy {
        temperature: cfg.temperature,
        ..DecodeStrategy::multinomial(cfg.seed)
    };
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    for step in 0..cfg.steps {
        if order.len() < bs {
            order = epoch_order(train.len(), cfg.seed.wrapping_add(epoch));
            epoch += 1;
        }
        let picked: Vec<usize> = order.drain(..bs).collect();
        let refs: Vec<&ArExample> = picked.iter().map(|&k| &train[k]).collect();
        let batch = make_batch(&refs)?;
        let mut losses = Vec::with_capacity(cfg.n_rollouts.max(1));
        let mut scale_rkl = vec![0.0; student.layout().n_targets()];
        for r in 0..cfg.n_rollouts.max(1) {
            let seed = cfg.seed ^ ((step as u64) << 16) ^ r as u64;
            let t = rollout(student, teacher, tokenizer, &batch, &strategy, seed)?;
            let (kl, per) = reverse_kl(&t.student_logits, &t.teacher_logits)?;
            for (a, b) in scale_rkl.iter_mut().zip(per) {
                *a += b / cfg.n_rollouts.max(1) as f64;
            }
            losses.push(kl);
        }
        let mut loss = (Tensor::stack(&losses, 0)?.sum_all()? / losses.len() as f64)?;
        let rkl = check_finite(scalar(&loss)?, "reverse KL", step)?;
        if cfg.ce_weight > 0.0 {
            let logits = student_logits(student, &batch, &batch.maps)?;
            loss = (loss + (student.cross_entropy(&logits, &batch.maps)? * cfg.ce_weight)?)?;
        }
        let (_, lr) = trainer.backward_step(&loss)?;
        on_step(&DistillStepLog {
            step,
            rkl,
            lr,
            scale_rkl,
        });
        let done = step + 1;
        if done % cfg.eval_every.max(1) == 0 || done == cfg.steps {
            check_teacher()?;
            let v = heldout_rkl(student, teacher, tokenizer, eval_set, bs, eval_seed)?;
            report.heldout_history.push((done, v));
            if v < report.best_heldout_rkl {
                report.best_heldout_rkl = v;
                report.best_step = done;
                best = student.params.snapshot()?;
            }
        }
    }
    check_teacher()?;
    student.params.restore(&best)?;
    report.steps = cfg.steps;
    Ok(report)
}
