//! Undersampling masks for the four sampling patterns and nested acceleration pyramids.
//!
//! Every mask selects exactly `round(H*W/R)` k-space locations. Locations are indexed in the
//! centered (fftshifted) convention, so the k-space origin sits at `(H/2, W/2)`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::check_dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPattern {
    CartesianX,
    CartesianY,
    Radial,
    GaussianVd,
}

impl MaskPattern {
    pub const ALL: [MaskPattern; 4] = [
        MaskPattern::CartesianX,
        MaskPattern::CartesianY,
        MaskPattern::Radial,
        MaskPattern::GaussianVd,
    ];

    /// Code used by the MRMK file format and the label table.
    pub fn code(self) -> u32 {
        match self {
            MaskPattern::CartesianX => 0,
            MaskPattern::CartesianY => 1,
            MaskPattern::Radial => 2,
            MaskPattern::GaussianVd => 3,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.code() == code)
            .ok_or_else(|| Error::UnknownPattern(format!("code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskPattern::CartesianX => "cartesian_x",
            MaskPattern::CartesianY => "cartesian_y",
            MaskPattern::Radial => "radial",
            MaskPattern::GaussianVd => "gaussian_vd",
        }
    }
}

impl fmt::Display for MaskPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPattern(s.to_string()))
    }
}

/// Acceleration level of the pyramid; `Full` is the fully sampled level (R = 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Acceleration {
    R32,
    R16,
    R8,
    R4,
    R2,
    Full,
}

impl Acceleration {
    /// Coarse-to-fine pyramid order.
    pub const SCHEDULE: [Acceleration; 6] = [
        Acceleration::R32,
        Acceleration::R16,
        Acceleration::R8,
        Acceleration::R4,
        Acceleration::R2,
        Acceleration::Full,
    ];

    pub fn factor(self) -> u32 {
        match self {
            Acceleration::R32 => 32,
            Acceleration::R16 => 16,
            Acceleration::R8 => 8,
            Acceleration::R4 => 4,
            Acceleration::R2 => 2,
            Acceleration::Full => 1,
        }
    }

    pub fn from_factor(r: u32) -> Result<Self> {
        Self::SCHEDULE
            .into_iter()
            .find(|a| a.factor() == r)
            .ok_or(Error::UnknownAcceleration(r))
    }

    /// Position in [`Acceleration::SCHEDULE`].
    pub fn level_index(self) -> usize {
        Self::SCHEDULE.iter().position(|&a| a == self).unwrap()
    }

    pub fn from_level_index(index: usize) -> Option<Self> {
        Self::SCHEDULE.get(index).copied()
    }

    pub fn label(self) -> String {
        match self {
            Acceleration::Full => "FS".to_string(),
            a => format!("{}x", a.factor()),
        }
    }
}

impl fmt::Display for Acceleration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Binary k-space selection, row-major, 1 = acquired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    pub pattern: MaskPattern,
    pub acceleration: Acceleration,
    pub height: usize,
    pub width: usize,
    pub seed: u32,
    selected: Vec<u8>,
}

/// `round(H*W/R)`, rounding halves up.
pub fn sample_budget(height: usize, width: usize, acceleration: Acceleration) -> usize {
    let r = acceleration.factor() as usize;
    (2 * height * width + r) / (2 * r)
}

impl SamplingMask {
    pub fn from_selected(
        pattern: MaskPattern,
        acceleration: Acceleration,
        height: usize,
        width: usize,
        seed: u32,
        selected: Vec<u8>,
    ) -> Result<Self> {
        check_dims(height, width)?;
        if selected.len() != height * width {
            return Err(Error::Length {
                what: "mask",
                expected: height * width,
                actual: selected.len(),
            });
        }
        if selected.iter().any(|&v| v > 1) {
            return Err(Error::Format("mask entries must be 0 or 1".into()));
        }
        Ok(Self {
            pattern,
            acceleration,
            height,
            width,
            seed,
            selected,
        })
    }

    pub fn full(pattern: MaskPattern, height: usize, width: usize, seed: u32) -> Result<Self> {
        Self::from_selected(
            pattern,
            Acceleration::Full,
            height,
            width,
            seed,
            vec![1; height * width],
        )
    }

    pub fn selected(&self) -> &[u8] {
        &self.selected
    }

    pub fn is_selected(&self, i: usize, j: usize) -> bool {
        self.selected[i * self.width + j] == 1
    }

    pub fn count(&self) -> usize {
        self.selected.iter().map(|&v| v as usize).sum()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_subset_of(&self, other: &SamplingMask) -> bool {
        self.shape() == other.shape()
            && self
                .selected
                .iter()
                .zip(&other.selected)
                .all(|(&a, &b)| a <= b)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MASK_HEADER_LEN + self.selected.len());
        out.extend_from_slice(MASK_MAGIC);
        for v in [
            MASK_VERSION,
            self.height as u32,
            self.width as u32,
            self.pattern.code(),
            self.acceleration.factor(),
            self.seed,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.selected);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MASK_HEADER_LEN {
            return Err(Error::Length {
                what: "MRMK header",
                expected: MASK_HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != MASK_MAGIC {
            return Err(Error::BadMagic {
                what: "MRMK",
                expected: *MASK_MAGIC,
                found: magic,
            });
        }
        let field = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
        let version = field(0);
        if version != MASK_VERSION {
            return Err(Error::Version {
                what: "MRMK",
                found: version,
                supported: MASK_VERSION,
            });
        }
        let (height, width) = (field(1) as usize, field(2) as usize);
        let pattern = MaskPattern::from_code(field(3))?;
        let acceleration = Acceleration::from_factor(field(4))?;
        let seed = field(5);
        let expected = MASK_HEADER_LEN + height * width;
        if bytes.len() != expected {
            return Err(Error::Length {
                what: "MRMK",
                expected,
                actual: bytes.len(),
            });
        }
        Self::from_selected(
            pattern,
            acceleration,
            height,
            width,
            seed,
            bytes[MASK_HEADER_LEN..].to_vec(),
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

const MASK_MAGIC: &[u8; 4] = b"MRMK";
const MASK_VERSION: u32 = 1;
const MASK_HEADER_LEN: usize = 4 + 6 * 4;

/// Draws a mask of exactly `round(H*W/R)` points for the given pattern.
///
/// Deterministic in `(pattern, acceleration, shape, seed)`.
pub fn make_mask(
    pattern: MaskPattern,
    acceleration: Acceleration,
    shape: (usize, usize),
    seed: u32,
) -> Result<SamplingMask> {
    let (height, width) = shape;
    check_dims(height, width)?;
    if acceleration == Acceleration::Full {
        return SamplingMask::full(pattern, height, width, seed);
    }
    let budget = checked_budget(height, width, acceleration)?;
    let selected = match pattern {
        MaskPattern::CartesianX | MaskPattern::CartesianY => {
            let r = acceleration.factor() as usize;
            let n_lines = line_count(pattern, height, width);
            check_lines(pattern, height, width, r)?;
            let offset = seed as usize % r;
            let lines: Vec<usize> = (offset..n_lines).step_by(r).collect();
            cartesian_selection(pattern, height, width, &lines)
        }
        MaskPattern::GaussianVd => {
            let keys = gaussian_keys(height, width, seed);
            top_keys(&keys, budget, |_| true)
        }
        MaskPattern::Radial => {
            let everything = vec![1u8; height * width];
            radial_from_parent(height, width, budget, seed, &everything)
        }
    };
    debug_assert_eq!(selected.iter().filter(|&&v| v == 1).count(), budget);
    SamplingMask::from_selected(pattern, acceleration, height, width, seed, selected)
}

fn checked_budget(height: usize, width: usize, acceleration: Acceleration) -> Result<usize> {
    let budget = sample_budget(height, width, acceleration);
    if budget == 0 {
        return Err(Error::ZeroBudget {
            height,
            width,
            acceleration: acceleration.factor(),
        });
    }
    Ok(budget)
}

fn line_count(pattern: MaskPattern, height: usize, width: usize) -> usize {
    match pattern {
        MaskPattern::CartesianX => height,
        _ => width,
    }
}

fn check_lines(pattern: MaskPattern, height: usize, width: usize, r: usize) -> Result<()> {
    if line_count(pattern, height, width) % r != 0 {
        return Err(Error::InvalidShape {
            height,
            width,
            reason: "Cartesian line count must be divisible by the acceleration",
        });
    }
    Ok(())
}

/// cartesian_x samples whole rows, cartesian_y whole columns.
fn cartesian_selection(
    pattern: MaskPattern,
    height: usize,
    width: usize,
    lines: &[usize],
) -> Vec<u8> {
    let mut sel = vec![0u8; height * width];
    for &line in lines {
        match pattern {
            MaskPattern::CartesianX => sel[line * width..(line + 1) * width].fill(1),
            _ => (0..height).for_each(|i| sel[i * width + line] = 1),
        }
    }
    sel
}

fn pattern_rng(seed: u32, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(((seed as u64) << 8) ^ tag)
}

/// Efraimidis-Spirakis keys `ln(u)/w`: the `n` largest keys form a weighted sample of size `n`
/// without replacement, and the samples for increasing `n` are nested.
fn gaussian_keys(height: usize, width: usize, seed: u32) -> Vec<f64> {
    let sigma = 0.25 * height.min(width) as f64;
    let (cy, cx) = ((height / 2) as f64, (width / 2) as f64);
    let mut rng = pattern_rng(seed, 0x9a);
    let mut keys = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            let r2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
            let w = (-r2 / (2.0 * sigma * sigma)).exp();
            let u: f64 = 1.0 - rng.gen::<f64>();
            keys.push(u.ln() / w);
        }
    }
    keys
}

fn uniform_keys(height: usize, width: usize, seed: u32) -> Vec<f64> {
    let mut rng = pattern_rng(seed, 0x2d);
    (0..height * width).map(|_| rng.gen::<f64>()).collect()
}

/// Selects the `n` eligible indices with the largest keys (ties broken by lower index).
fn top_keys(keys: &[f64], n: usize, eligible: impl Fn(usize) -> bool) -> Vec<u8> {
    let mut order: Vec<usize> = (0..keys.len()).filter(|&k| eligible(k)).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    let mut sel = vec![0u8; keys.len()];
    for &k in order.iter().take(n) {
        sel[k] = 1;
    }
    sel
}

/// Rasterized union of `n` equiangular spokes through the k-space center.
fn rasterize_spokes(height: usize, width: usize, n: usize, phase: f64) -> Vec<u8> {
    let mut sel = vec![0u8; height * width];
    let (cy, cx) = ((height / 2) as f64, (width / 2) as f64);
    let reach = height.max(width) as f64;
    let steps = (4.0 * reach) as i64;
    for s in 0..n {
        let theta = std::f64::consts::PI * (phase + s as f64) / n as f64;
        let (sin, cos) = theta.sin_cos();
        for t in -steps..=steps {
            let t = t as f64 * 0.25;
            let i = (cy + t * sin).round();
            let j = (cx + t * cos).round();
            if i >= 0.0 && j >= 0.0 && (i as usize) < height && (j as usize) < width {
                sel[i as usize * width + j as usize] = 1;
            }
        }
    }
    sel
}

fn ones(sel: &[u8]) -> usize {
    sel.iter().filter(|&&v| v == 1).count()
}

/// Spokes (restricted to the parent set) plus uniformly random parent points up to `budget`.
///
/// The spoke count is the largest `n` whose rasterized union fits the budget; the scan stops
/// at the first count that overflows it.
fn radial_from_parent(
    height: usize,
    width: usize,
    budget: usize,
    seed: u32,
    parent: &[u8],
) -> Vec<u8> {
    let phase: f64 = pattern_rng(seed, 0x51).gen();
    let mut spokes = vec![0u8; height * width];
    let max_spokes = 4 * height.max(width);
    for n in 1..=max_spokes {
        let candidate = rasterize_spokes(height, width, n, phase);
        if ones(&candidate) > budget {
            break;
        }
        spokes = candidate;
    }
    let mut sel: Vec<u8> = spokes
        .iter()
        .zip(parent)
        .map(|(&s, &p)| s & p)
        .collect();
    let missing = budget - ones(&sel);
    if missing > 0 {
        let keys = uniform_keys(height, width, seed);
        let fill = top_keys(&keys, missing, |k| parent[k] == 1 && sel[k] == 0);
        for (s, f) in sel.iter_mut().zip(fill) {
            *s |= f;
        }
    }
    sel
}

/// Six masks ordered `[32, 16, 8, 4, 2, FS]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPyramid {
    pub masks: Vec<SamplingMask>,
}

impl MaskPyramid {
    pub fn level(&self, acceleration: Acceleration) -> &SamplingMask {
        &self.masks[acceleration.level_index()]
    }

    /// True when every level is contained in the next finer level.
    pub fn is_nested(&self) -> bool {
        self.masks.windows(2).all(|w| w[0].is_subset_of(&w[1]))
    }
}

/// Builds the acceleration pyramid top-down from the fully sampled mask.
///
/// With `independent == false` each level subsamples its parent under the pattern's rule, so
/// `selected(R) ⊆ selected(R/2)`. With `independent == true` every level is drawn by
/// [`make_mask`] with a level-specific seed and no containment is guaranteed.
pub fn make_pyramid(
    pattern: MaskPattern,
    shape: (usize, usize),
    seed: u32,
    independent: bool,
) -> Result<MaskPyramid> {
    let (height, width) = shape;
    check_dims(height, width)?;
    if independent {
        let masks = Acceleration::SCHEDULE
            .iter()
            .enumerate()
            .map(|(k, &a)| make_mask(pattern, a, shape, seed.wrapping_add(k as u32)))
            .collect::<Result<Vec<_>>>()?;
        return Ok(MaskPyramid { masks });
    }

    let gaussian = (pattern == MaskPattern::GaussianVd).then(|| gaussian_keys(height, width, seed));
    let mut fine_to_coarse = vec![SamplingMask::full(pattern, height, width, seed)?];
    for (depth, &acc) in Acceleration::SCHEDULE[..5].iter().rev().enumerate() {
        let parent = fine_to_coarse.last().unwrap();
        let budget = checked_budget(height, width, acc)?;
        let selected = match pattern {
            MaskPattern::CartesianX | MaskPattern::CartesianY => {
                check_lines(pattern, height, width, acc.factor() as usize)?;
                let n_lines = line_count(pattern, height, width);
                let parent_lines: Vec<usize> = (0..n_lines)
                    .filter(|&l| match pattern {
                        MaskPattern::CartesianX => parent.is_selected(l, 0),
                        _ => parent.is_selected(0, l),
                    })
                    .collect();
                // Keeping the parent lines whose rank has parity bit `depth` of the seed
                // reproduces the standalone offset `seed mod R` at every level.
                let start = ((seed >> depth) & 1) as usize;
                let lines: Vec<usize> = parent_lines.iter().copied().skip(start).step_by(2).collect();
                cartesian_selection(pattern, height, width, &lines)
            }
            MaskPattern::GaussianVd => {
                let keys = gaussian.as_ref().unwrap();
                top_keys(keys, budget, |k| parent.selected()[k] == 1)
            }
            MaskPattern::Radial => radial_from_parent(height, width, budget, seed, parent.selected()),
        };
        fine_to_coarse.push(SamplingMask::from_selected(
            pattern, acc, height, width, seed, selected,
        )?);
    }
    fine_to_coarse.reverse();
    Ok(MaskPyramid {
        masks: fine_to_coarse,
    })
}
