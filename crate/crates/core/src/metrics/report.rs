use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::quality::{perceptual_distance, psnr, ssim, FeatureExtractor};
use crate::error::{Error, Result};
use crate::fourier::MaskPattern;
use crate::image::ComplexImage;

/// A reconstructed or reference slice together with its acquisition metadata.
#[derive(Debug, Clone)]
pub struct EvalSlice {
    pub id: String,
    pub pattern: MaskPattern,
    pub acceleration: u32,
    pub contrast: String,
    pub image: ComplexImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRecord {
    pub slice_id: String,
    pub pattern: MaskPattern,
    pub acceleration: u32,
    pub contrast: String,
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub pattern: MaskPattern,
    pub contrast: String,
    pub count: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub perceptual_mean: Option<f64>,
    pub perceptual_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Name of the perceptual metric column, when one was computed.
    pub perceptual_metric: Option<String>,
    pub records: Vec<SliceRecord>,
    pub groups: Vec<GroupSummary>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricReport {
    /// Builds grouped aggregates, keyed by (pattern, contrast), from per-slice records.
    pub fn from_records(perceptual_metric: Option<String>, mut records: Vec<SliceRecord>) -> Self {
        records.sort_by(|a, b| a.slice_id.cmp(&b.slice_id));
        let mut groups: BTreeMap<(MaskPattern, String), Vec<&SliceRecord>> = BTreeMap::new();
        for r in &records {
            groups
                .entry((r.pattern, r.contrast.clone()))
                .or_default()
                .push(r);
        }
        let groups = groups
            .into_iter()
            .map(|((pattern, contrast), members)| {
                let p: Vec<f64> = members.iter().map(|r| r.psnr).collect();
                let s: Vec<f64> = members.iter().map(|r| r.ssim).collect();
                let perc: Option<Vec<f64>> = members.iter().map(|r| r.perceptual).collect();
                let (psnr_mean, psnr_std) = mean_std(&p);
                let (ssim_mean, ssim_std) = mean_std(&s);
                let perc = perc.map(|v| mean_std(&v));
                GroupSummary {
                    pattern,
                    contrast,
                    count: members.len(),
                    psnr_mean,
                    psnr_std,
                    ssim_mean,
                    ssim_std,
                    perceptual_mean: perc.map(|p| p.0),
                    perceptual_std: perc.map(|p| p.1),
                }
            })
            .collect();
        Self {
            perceptual_metric,
            records,
            groups,
        }
    }

    /// Writes `<stem>.csv` (one record per row) and `<stem>.json` (metric name and groups).
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&csv_path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        let json_path = dir.join(format!("{stem}.json"));
        let summary = ReportSummary {
            perceptual_metric: self.perceptual_metric.clone(),
            groups: self.groups.clone(),
        };
        std::fs::write(&json_path, serde_json::to_string_pretty(&summary)?)
            .map_err(|e| Error::io(&json_path, e))
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let csv_path = dir.join(format!("{stem}.csv"));
        if !csv_path.exists() {
            return Err(Error::MissingFile(csv_path));
        }
        let mut r = csv::Reader::from_path(&csv_path)?;
        let records = r
            .deserialize()
            .collect::<std::result::Result<Vec<SliceRecord>, _>>()?;
        let json_path = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let summary: ReportSummary = serde_json::from_str(&text)?;
        Ok(Self {
            perceptual_metric: summary.perceptual_metric,
            records,
            groups: summary.groups,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ReportSummary {
    perceptual_metric: Option<String>,
    groups: Vec<GroupSummary>,
}

/// Scores each reconstruction against the reference with the same id (on magnitudes).
pub fn evaluate(
    recon: &[EvalSlice],
    reference: &[EvalSlice],
    extractor: Option<&dyn FeatureExtractor>,
) -> Result<MetricReport> {
    let refs: BTreeMap<&str, &EvalSlice> = reference.iter().map(|s| (s.id.as_str(), s)).collect();
    if refs.len() != recon.len() {
        return Err(Error::InvalidArgument(format!(
            "{} reconstructions vs {} references",
            recon.len(),
            refs.len()
        )));
    }
    let mut records = Vec::with_capacity(recon.len());
    for r in recon {
        let reference = refs
            .get(r.id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("no reference for slice `{}`", r.id)))?;
        let x = r.image.magnitude();
        let y = reference.image.magnitude();
        let perceptual = extractor
            .map(|e| perceptual_distance(&x, &y, e))
            .transpose()?;
        records.push(SliceRecord {
            slice_id: r.id.clone(),
            pattern: r.pattern,
            acceleration: r.acceleration,
            contrast: r.contrast.clone(),
            psnr: psnr(&x, &y)?,
            ssim: ssim(&x, &y)?,
            perceptual,
        });
    }
    Ok(MetricReport::from_records(
        extractor.map(|e| e.metric_name().to_string()),
        records,
    ))
}
