use std::collections::HashSet;
use std::path::PathBuf;

use clap::Args;
use nasp_core::dataio::{read_single_slice, DatasetManifest};
use nasp_core::fourier::Acceleration;
use nasp_core::metrics::{evaluate, EvalSlice, FeatureExtractor};
use nasp_models::aqvae::RandomExtractor;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::run::{load_manifest, RunDir};

pub const REPORT_STEM: &str = "eval";

#[derive(Args)]
pub struct EvaluateArgs {
    /// Extractor settings for the perceptual column come from this config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Reconstruction directory written by reconstruct.
    #[arg(long)]
    pub recon_dir: PathBuf,
    /// Dataset directory with the fully sampled references.
    #[arg(long)]
    pub ref_dir: PathBuf,
    /// Acceleration the reconstructions were made from, recorded per row.
    #[arg(long, default_value_t = 32)]
    pub acceleration: u32,
    /// Skip the perceptual column.
    #[arg(long)]
    pub no_perceptual: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn slices(manifest: &DatasetManifest, ids: Option<&HashSet<String>>, r: u32) -> CliResult<Vec<EvalSlice>> {
    manifest
        .entries
        .iter()
        .filter(|e| ids.is_none_or(|ids| ids.contains(&e.id)))
        .map(|e| {
            Ok(EvalSlice {
                id: e.id.clone(),
                pattern: e.pattern,
                acceleration: r,
                contrast: e.contrast.name().to_string(),
                image: read_single_slice(&manifest.path_of(e))?,
            })
        })
        .collect()
}

pub fn run(args: &EvaluateArgs) -> CliResult<()> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    Acceleration::from_factor(args.acceleration)?;
    let recon_manifest = load_manifest(&args.recon_dir)?;
    let ref_manifest = load_manifest(&args.ref_dir)?;
    let recon = slices(&recon_manifest, None, args.acceleration)?;
    if recon.is_empty() {
        return Err(CliError::config(format!("{} lists no slices", args.recon_dir.display())));
    }
    let ids: HashSet<String> = recon.iter().map(|s| s.id.clone()).collect();
    let reference = slices(&ref_manifest, Some(&ids), 1)?;
    if let Some(missing) = recon.iter().find(|r| !reference.iter().any(|s| s.id == r.id)) {
        return Err(CliError::missing(format!(
            "slice `{}` has no reference in {}",
            missing.id,
            args.ref_dir.display()
        )));
    }

    let extractor = if args.no_perceptual {
        None
    } else {
        Some(RandomExtractor::new(&cfg.tokenizer.extractor_widths, cfg.tokenizer.extractor_seed)?)
    };
    let report = evaluate(
        &recon,
        &reference,
        extractor.as_ref().map(|e| e as &dyn FeatureExtractor),
    )?;

    let run = RunDir::create(&args.out)?;
    run.write_config(&cfg)?;
    report.write(&run.path, REPORT_STEM)?;
    let n = report.records.len() as f64;
    let mean = |f: &dyn Fn(&nasp_core::metrics::SliceRecord) -> f64| report.records.iter().map(f).sum::<f64>() / n;
    let mut metrics = serde_json::json!({
        "slices": report.records.len(),
        "psnr_mean": mean(&|r| r.psnr),
        "ssim_mean": mean(&|r| r.ssim),
    });
    if let Some(name) = &report.perceptual_metric {
        metrics["perceptual_metric"] = name.clone().into();
        metrics["perceptual_mean"] = mean(&|r| r.perceptual.unwrap_or(f64::NAN)).into();
    }
    run.write_metrics(&metrics)?;
    run.finish()
}
