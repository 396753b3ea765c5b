//! Training stages: tokenizer, student and teacher transformers, distillation.

use std::path::Path;

use nasp_core::dataio::{Sample, Split};
use nasp_models::aqvae::model::TOKENIZER_COMPONENT;
use nasp_models::aqvae::train::mean_ssim;
use nasp_models::aqvae::{train_tokenizer, AqVae};
use nasp_models::nextscale::{
    evaluate_ce, prepare_examples, train_ar, NextScaleModel, STUDENT_COMPONENT, TEACHER_COMPONENT,
};
use nasp_models::opd::{distill, weights_hash};
use serde_json::json;

use crate::config::{Profile, RunConfig};
use crate::error::{CliError, CliResult};
use crate::run::{find_checkpoint, load_manifest, load_split, RunDir};

fn profile_name(cfg: &RunConfig) -> &'static str {
    match cfg.profile {
        Profile::Desk => "desk",
        Profile::Paper => "paper",
    }
}

/// The first `n` items, or all of them when `n` is 0.
fn head<T>(items: &[T], n: usize) -> &[T] {
    if n == 0 {
        items
    } else {
        &items[..n.min(items.len())]
    }
}

pub fn load_tokenizer(dir: &Path) -> CliResult<AqVae> {
    Ok(AqVae::load(&find_checkpoint(dir, TOKENIZER_COMPONENT)?)?)
}

fn load_train(cfg: &RunConfig, data: &Path) -> CliResult<(Vec<Sample>, Vec<Sample>)> {
    let manifest = load_manifest(data)?;
    let train = load_split(&manifest, Split::Train, cfg)?;
    if train.is_empty() {
        return Err(CliError::config(format!("{} has no training slices", data.display())));
    }
    let val = load_split(&manifest, Split::Val, cfg)?;
    Ok((train, val))
}

pub fn tokenizer(cfg: &RunConfig, data: &Path, out: &Path) -> CliResult<()> {
    let (train, val) = load_train(cfg, data)?;
    let run = RunDir::create(out)?;
    run.write_config(cfg)?;
    let mut model = AqVae::new(&cfg.tokenizer, cfg.seed)?;
    let mut log = run.log("train_log.jsonl")?;
    let report = train_tokenizer(&mut model, &train, &val, &cfg.tokenizer_train, |s| log.write(s))?;
    log.close()?;
    let refs: Vec<&Sample> = train.iter().collect();
    let train_ssim = mean_ssim(&model, &refs, cfg.data.eval_batch_size)?;
    let mut metrics = report.metrics();
    metrics.insert("train_ssim".into(), train_ssim);
    model.to_checkpoint(profile_name(cfg), cfg.seed, metrics.clone())?.save(&run.path)?;
    run.write_metrics(&json!({
        "metrics": metrics,
        "val_ssim_per_epoch": report.val_ssim,
        "perplexity_per_epoch": report.epoch_perplexity,
    }))?;
    run.finish()
}

pub fn transformers(cfg: &RunConfig, tokenizer_dir: &Path, data: &Path, out: &Path) -> CliResult<()> {
    let tok = load_tokenizer(tokenizer_dir)?;
    let (train, val) = load_train(cfg, data)?;
    let run = RunDir::create(out)?;
    run.write_config(cfg)?;
    let bs = cfg.data.eval_batch_size;
    let train = head(&train, cfg.data.ar_train_slices);
    let examples = prepare_examples(&tok, train, bs)?;
    let val_examples = prepare_examples(&tok, &val, bs)?;

    let mut results = serde_json::Map::new();
    for (component, model_cfg, seed) in [
        (STUDENT_COMPONENT, cfg.ar.clone(), cfg.seed.wrapping_add(1)),
        (TEACHER_COMPONENT, cfg.ar.teacher(), cfg.seed.wrapping_add(2)),
    ] {
        let model = NextScaleModel::new(&model_cfg, &tok, seed)?;
        let mut log = run.log(&format!("{component}_log.jsonl"))?;
        let report = train_ar(&model, &examples, &cfg.ar_train, |s| log.write(s))?;
        log.close()?;
        let mut metrics = report.metrics();
        if !val_examples.is_empty() {
            metrics.insert("val_ce".into(), evaluate_ce(&model, &val_examples, bs)?);
        }
        model
            .to_checkpoint(profile_name(cfg), seed, metrics.clone())?
            .save(&run.join(component))?;
        results.insert(component.to_string(), json!(metrics));
    }
    results.insert("train_slices".into(), json!(examples.len()));
    run.write_metrics(&results)?;
    run.finish()
}

pub fn distillation(
    cfg: &RunConfig,
    student_dir: &Path,
    teacher_dir: &Path,
    tokenizer_dir: &Path,
    data: &Path,
    out: &Path,
) -> CliResult<()> {
    let tok = load_tokenizer(tokenizer_dir)?;
    let student = NextScaleModel::load(&find_checkpoint(student_dir, STUDENT_COMPONENT)?, STUDENT_COMPONENT)?;
    let teacher = NextScaleModel::load(&find_checkpoint(teacher_dir, TEACHER_COMPONENT)?, TEACHER_COMPONENT)?;
    let (train, val) = load_train(cfg, data)?;
    let run = RunDir::create(out)?;
    run.write_config(cfg)?;
    let bs = cfg.data.eval_batch_size;
    let train_examples = prepare_examples(&tok, head(&train, cfg.data.distill_train_slices), bs)?;
    let heldout = prepare_examples(&tok, head(&val, cfg.data.heldout_slices), bs)?;

    let hash_before = weights_hash(&teacher)?;
    let mut log = run.log("distill_log.jsonl")?;
    let report = distill(&student, &teacher, &tok, &train_examples, &heldout, &cfg.distill, |s| log.write(s))?;
    log.close()?;
    let hash_after = weights_hash(&teacher)?;

    let mut metrics = report.metrics();
    if !heldout.is_empty() {
        metrics.insert("val_ce".into(), evaluate_ce(&student, &heldout, bs)?);
    }
    student
        .to_checkpoint(profile_name(cfg), cfg.seed, metrics.clone())?
        .save(&run.path)?;
    run.write_metrics(&json!({
        "metrics": metrics,
        "heldout_rkl_history": report.heldout_history,
        "rkl_reduction": 1.0 - report.best_heldout_rkl / report.initial_heldout_rkl,
        "teacher_hash_before": hash_before,
        "teacher_hash_after": hash_after,
        "heldout_slices": heldout.len(),
        "train_slices": train_examples.len(),
    }))?;
    run.finish()
}
