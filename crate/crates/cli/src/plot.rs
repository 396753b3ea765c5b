//! Grouped bar charts rendered straight to PNG; labels live in the companion CSV.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::CliResult;

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

const BAR: u32 = 14;
const GAP: u32 = 12;
const HEIGHT: u32 = 240;
const MARGIN: u32 = 16;

/// `values[g][s]` is series `s` in group `g`. Bars start at zero; the tallest bar fills the plot.
pub fn grouped_bars(values: &[Vec<f64>], path: &Path) -> CliResult<()> {
    let series = values.iter().map(Vec::len).max().unwrap_or(0).max(1) as u32;
    let groups = values.len().max(1) as u32;
    let width = 2 * MARGIN + groups * series * BAR + (groups - 1) * GAP;
    let height = HEIGHT + 2 * MARGIN;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let top = values
        .iter()
        .flatten()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let base = MARGIN + HEIGHT;
    for (g, group) in values.iter().enumerate() {
        for (s, &v) in group.iter().enumerate() {
            if !(v.is_finite() && v > 0.0 && top > 0.0) {
                continue;
            }
            let h = ((v / top) * HEIGHT as f64).round() as u32;
            let x0 = MARGIN + g as u32 * (series * BAR + GAP) + s as u32 * BAR;
            let color = Rgb(PALETTE[s % PALETTE.len()]);
            for x in x0..x0 + BAR - 2 {
                for y in base - h..base {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    for x in MARGIN / 2..width - MARGIN / 2 {
        img.put_pixel(x, base, Rgb([0, 0, 0]));
    }
    img.save(path)?;
    Ok(())
}
