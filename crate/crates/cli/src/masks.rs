use std::path::PathBuf;

use clap::Args;
use image::{GrayImage, Luma};
use nasp_core::fourier::{make_mask, Acceleration, MaskPattern, SamplingMask};

use crate::error::{CliError, CliResult};
use crate::run::{parse_shape, RunDir};

#[derive(Args)]
pub struct MaskArgs {
    /// Pattern name (cartesian_x, cartesian_y, radial, gaussian_vd) or `all`.
    #[arg(long)]
    pub pattern: String,
    /// Acceleration factor R.
    #[arg(long)]
    pub accel: u32,
    #[arg(long, default_value = "256x256", value_parser = parse_shape)]
    pub shape: (usize, usize),
    #[arg(long, default_value_t = 0)]
    pub seed: u32,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn render(mask: &SamplingMask) -> GrayImage {
    let (h, w) = mask.shape();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask.is_selected(y as usize, x as usize) { 255 } else { 0 }])
    })
}

pub fn run(args: &MaskArgs) -> CliResult<()> {
    let patterns: Vec<MaskPattern> = if args.pattern == "all" {
        MaskPattern::ALL.to_vec()
    } else {
        vec![args.pattern.parse()?]
    };
    let accel = Acceleration::from_factor(args.accel)?;
    if accel == Acceleration::Full {
        return Err(CliError::config("--accel must be an undersampling factor (2, 4, 8, 16 or 32)"));
    }
    let run = RunDir::create(&args.out)?;
    let mut counts = serde_json::Map::new();
    for p in patterns {
        let mask = make_mask(p, accel, args.shape, args.seed)?;
        let stem = format!("{}_r{}", p.name(), args.accel);
        mask.write(&run.join(&format!("{stem}.mrmk")))?;
        render(&mask).save(run.join(&format!("{stem}.png")))?;
        counts.insert(stem, mask.count().into());
    }
    run.write_metrics(&serde_json::json!({ "selected": counts }))?;
    run.finish()
}
