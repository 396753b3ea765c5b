//! Image-quality metrics on magnitude images and grouped evaluation reports.

mod quality;
mod report;

pub use quality::{
    gaussian_window, perceptual_distance, psnr, ssim, FeatureExtractor, FeatureMap, PSNR_CAP_DB,
    SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};
pub use report::{evaluate, EvalSlice, GroupSummary, MetricReport, SliceRecord};
