//! Cross-run tables: per-(pattern, contrast) metrics and a per-contrast comparison against the
//! first run.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use nasp_core::metrics::MetricReport;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::evaluate::REPORT_STEM;
use crate::plot::grouped_bars;
use crate::run::RunDir;

#[derive(Args)]
pub struct ReportArgs {
    /// `name=dir` for each evaluate output; the first is the comparison baseline (repeatable).
    #[arg(long = "eval", value_parser = parse_named, required = true)]
    pub evals: Vec<(String, PathBuf)>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    let (name, dir) = s.split_once('=').ok_or_else(|| format!("expected name=dir, got `{s}`"))?;
    if name.is_empty() || name.contains(',') {
        return Err(format!("bad run name `{name}`"));
    }
    Ok((name.to_string(), PathBuf::from(dir)))
}

#[derive(Serialize)]
struct GroupRow<'a> {
    run: &'a str,
    pattern: &'a str,
    contrast: &'a str,
    count: usize,
    psnr_mean: f64,
    psnr_std: f64,
    ssim_mean: f64,
    ssim_std: f64,
    perceptual_mean: Option<f64>,
}

#[derive(Serialize)]
struct ComparisonRow {
    run: String,
    contrast: String,
    count: usize,
    psnr_mean: f64,
    ssim_mean: f64,
    psnr_delta: f64,
    ssim_delta: f64,
}

/// Mean PSNR and SSIM per contrast plus an `all` row.
fn by_contrast(report: &MetricReport) -> BTreeMap<String, (usize, f64, f64)> {
    let mut acc: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    for r in &report.records {
        for key in [r.contrast.clone(), "all".to_string()] {
            let e = acc.entry(key).or_default();
            e.0 += 1;
            e.1 += r.psnr;
            e.2 += r.ssim;
        }
    }
    acc.into_iter()
        .map(|(k, (n, p, s))| (k, (n, p / n as f64, s / n as f64)))
        .collect()
}

pub fn run(args: &ReportArgs) -> CliResult<()> {
    let mut names = std::collections::HashSet::new();
    let mut reports = Vec::with_capacity(args.evals.len());
    for (name, dir) in &args.evals {
        if !names.insert(name.as_str()) {
            return Err(CliError::config(format!("--eval: run name `{name}` given twice")));
        }
        if !dir.join(format!("{REPORT_STEM}.csv")).exists() {
            return Err(CliError::missing(format!(
                "{} has no evaluation report; run evaluate first",
                dir.display()
            )));
        }
        reports.push((name.as_str(), MetricReport::read(dir, REPORT_STEM)?));
    }
    let run = RunDir::create(&args.out)?;

    let mut w = csv::Writer::from_path(run.join("groups.csv"))?;
    let mut keys: Vec<(String, String)> = Vec::new();
    for (name, report) in &reports {
        for g in &report.groups {
            w.serialize(GroupRow {
                run: name,
                pattern: g.pattern.name(),
                contrast: &g.contrast,
                count: g.count,
                psnr_mean: g.psnr_mean,
                psnr_std: g.psnr_std,
                ssim_mean: g.ssim_mean,
                ssim_std: g.ssim_std,
                perceptual_mean: g.perceptual_mean,
            })?;
            let key = (g.pattern.name().to_string(), g.contrast.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    w.flush()?;
    keys.sort();

    let base = by_contrast(&reports[0].1);
    let mut rows = Vec::new();
    for (name, report) in &reports {
        for (contrast, (count, psnr, ssim)) in by_contrast(report) {
            let (bp, bs) = base.get(&contrast).map(|b| (b.1, b.2)).unwrap_or((f64::NAN, f64::NAN));
            rows.push(ComparisonRow {
                run: name.to_string(),
                contrast,
                count,
                psnr_mean: psnr,
                ssim_mean: ssim,
                psnr_delta: psnr - bp,
                ssim_delta: ssim - bs,
            });
        }
    }
    let mut w = csv::Writer::from_path(run.join("comparison.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;

    // one bar group per (pattern, contrast), one bar per run
    let lookup = |report: &MetricReport, key: &(String, String), f: fn(&nasp_core::metrics::GroupSummary) -> f64| {
        report
            .groups
            .iter()
            .find(|g| g.pattern.name() == key.0 && g.contrast == key.1)
            .map(f)
            .unwrap_or(f64::NAN)
    };
    for (file, f) in [
        ("psnr.png", (|g| g.psnr_mean) as fn(&nasp_core::metrics::GroupSummary) -> f64),
        ("ssim.png", |g| g.ssim_mean),
    ] {
        let values: Vec<Vec<f64>> = keys
            .iter()
            .map(|k| reports.iter().map(|(_, r)| lookup(r, k, f)).collect())
            .collect();
        grouped_bars(&values, &run.join(file))?;
    }

    run.write_metrics(&serde_json::json!({
        "runs": reports.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
        "groups": keys.len(),
        "comparison": rows,
    }))?;
    run.finish()
}
