//! Synthetic complex-valued brain-like phantoms built from rotated ellipses.

use std::fmt;
use std::str::FromStr;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{check_dims, ComplexImage};

/// Synthetic contrast class; each class draws ellipse intensities from different statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contrast {
    T1,
    T2,
    Flair,
}

impl Contrast {
    pub const ALL: [Contrast; 3] = [Contrast::T1, Contrast::T2, Contrast::Flair];

    pub fn name(self) -> &'static str {
        match self {
            Contrast::T1 => "t1",
            Contrast::T2 => "t2",
            Contrast::Flair => "flair",
        }
    }

    /// (rim, tissue) base intensities and the interior-ellipse intensity range.
    fn statistics(self) -> (f64, f64, (f64, f64)) {
        match self {
            Contrast::T1 => (1.0, 0.55, (-0.25, 0.3)),
            Contrast::T2 => (0.35, 0.45, (0.1, 0.5)),
            Contrast::Flair => (0.5, 0.5, (-0.35, 0.4)),
        }
    }
}

impl fmt::Display for Contrast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Contrast {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown contrast `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    /// Total ellipse count including the two outer head ellipses; 3..=12.
    pub n_ellipses: usize,
    pub contrast: Contrast,
    /// Overrides the contrast's interior intensity range.
    pub intensity_range: Option<(f64, f64)>,
    /// Peak amplitude (radians) of the smooth background phase field.
    pub phase_smoothness: f64,
    /// Edge transition width in pixels.
    pub edge_width: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(height: usize, width: usize, contrast: Contrast, seed: u64) -> Self {
        Self {
            height,
            width,
            n_ellipses: 3 + (seed % 4) as usize,
            contrast,
            intensity_range: None,
            phase_smoothness: 0.8,
            edge_width: 1.0,
            seed,
        }
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
    angle: f64,
    amplitude: Complex64,
}

impl Ellipse {
    /// Soft membership in [0, 1]; the transition spans `edge_px` pixels across the boundary.
    fn coverage(&self, y: f64, x: f64, half_side: f64, edge_px: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = (c * dx + s * dy) / self.ax;
        let v = (-s * dx + c * dy) / self.ay;
        let rho = (u * u + v * v).sqrt();
        let scale_px = self.ax.min(self.ay) * half_side;
        ((1.0 - rho) * scale_px / edge_px + 0.5).clamp(0.0, 1.0)
    }
}

/// Renders the phantom and normalizes it to unit peak magnitude.
pub fn gen_phantom(spec: &PhantomSpec) -> Result<ComplexImage> {
    check_dims(spec.height, spec.width)?;
    if !(3..=12).contains(&spec.n_ellipses) {
        return Err(Error::InvalidArgument(format!(
            "n_ellipses must be in 3..=12, got {}",
            spec.n_ellipses
        )));
    }
    if spec.edge_width <= 0.0 {
        return Err(Error::InvalidArgument("edge_width must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9a47_0000);
    let (rim, tissue, range) = spec.contrast.statistics();
    let (lo, hi) = spec.intensity_range.unwrap_or(range);

    let head_ay: f64 = rng.gen_range(0.78..0.9);
    let head_ax: f64 = rng.gen_range(0.62..0.76);
    let head_angle: f64 = rng.gen_range(-0.15..0.15);
    let (hcy, hcx): (f64, f64) = (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
    let thickness: f64 = rng.gen_range(0.06..0.1);
    let mut ellipses = vec![
        Ellipse {
            cy: hcy,
            cx: hcx,
            ay: head_ay,
            ax: head_ax,
            angle: head_angle,
            amplitude: Complex64::new(rim, 0.0),
        },
        Ellipse {
            cy: hcy,
            cx: hcx,
            ay: head_ay - thickness,
            ax: head_ax - thickness,
            angle: head_angle,
            amplitude: Complex64::new(tissue - rim, 0.0),
        },
    ];
    for _ in 2..spec.n_ellipses {
        let r: f64 = rng.gen_range(0.0..0.5);
        let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let mag: f64 = rng.gen_range(lo..hi);
        let phase: f64 = rng.gen_range(-0.3..0.3);
        ellipses.push(Ellipse {
            cy: hcy + r * t.sin() * head_ay,
            cx: hcx + r * t.cos() * head_ax,
            ay: rng.gen_range(0.08..0.3),
            ax: rng.gen_range(0.06..0.22),
            angle: rng.gen_range(0.0..std::f64::consts::PI),
            amplitude: Complex64::from_polar(mag, phase),
        });
    }

    // smooth phase: a few low-frequency cosines
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.3..1.0),
            )
        })
        .collect();
    let wave_norm: f64 = waves.iter().map(|w| w.3).sum();

    let (h, w) = (spec.height, spec.width);
    let half = 0.5 * h.min(w) as f64;
    ComplexImage::from_fn(h, w, |i, j| {
        let y = (i as f64 + 0.5 - h as f64 / 2.0) / (h as f64 / 2.0);
        let x = (j as f64 + 0.5 - w as f64 / 2.0) / (w as f64 / 2.0);
        let mut v = Complex64::new(0.0, 0.0);
        for e in &ellipses {
            v += e.amplitude * e.coverage(y, x, half, spec.edge_width);
        }
        let phi: f64 = waves
            .iter()
            .map(|&(fy, fx, p, a)| a * (std::f64::consts::PI * (fy * y + fx * x) + p).cos())
            .sum::<f64>()
            * spec.phase_smoothness
            / wave_norm;
        let v = v * Complex64::from_polar(1.0, phi);
        Complex32::new(v.re as f32, v.im as f32)
    })
    .map(ComplexImage::normalized)
}
