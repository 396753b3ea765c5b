//! Turning per-position logits into token indices.

use candle_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeKind {
    Argmax,
    Multinomial,
    TopKP,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeStrategy {
    pub kind: DecodeKind,
    pub top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DecodeStrategy {
    fn default() -> Self {
        Self::argmax()
    }
}

impl DecodeStrategy {
    pub fn argmax() -> Self {
        Self {
            kind: DecodeKind::Argmax,
            top_k: 900,
            top_p: 0.96,
            temperature: 1.0,
            seed: 0,
        }
    }

    pub fn multinomial(seed: u64) -> Self {
        Self {
            kind: DecodeKind::Multinomial,
            seed,
            ..Self::argmax()
        }
    }

    pub fn top_k_p(top_k: usize, top_p: f64, seed: u64) -> Self {
        Self {
            kind: DecodeKind::TopKP,
            top_k,
            top_p,
            seed,
            ..Self::argmax()
        }
    }

    /// `top_k` is only checked against the vocabulary for [`DecodeKind::TopKP`].
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.kind == DecodeKind::TopKP && (self.top_k == 0 || self.top_k > vocab) {
            return Err(Error::Config(format!(
                "top_k must be in 1..={vocab}, got {}",
                self.top_k
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

fn check_row(row: &[f32]) -> Result<()> {
    if row.is_empty() {
        return Err(Error::InvalidArgument("empty logit row".into()));
    }
    if row.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            what: "decode logits".into(),
            step: 0,
        });
    }
    Ok(())
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> Result<u32> {
    check_row(row)?;
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    Ok(best as u32)
}

/// `softmax(row / temperature)` in f64.
pub fn softmax(row: &[f32], temperature: f64) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let e: Vec<f64> = row.iter().map(|&v| ((v as f64 - max) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// The distribution a strategy samples from (argmax yields a one-hot vector).
pub fn filtered_distribution(row: &[f32], strategy: &DecodeStrategy) -> Result<Vec<f64>> {
    check_row(row)?;
    let v = row.len();
    match strategy.kind {
        DecodeKind::Argmax => {
            let mut p = vec![0.0; v];
            p[argmax(row)? as usize] = 1.0;
            Ok(p)
        }
        DecodeKind::Multinomial => Ok(softmax(row, strategy.temperature)),
        DecodeKind::TopKP => {
            strategy.validate(v)?;
            let p = softmax(row, strategy.temperature);
            let mut order: Vec<usize> = (0..v).collect();
            // descending probability, ties by lower index
            order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
            order.truncate(strategy.top_k);
            let kept: f64 = order.iter().map(|&k| p[k]).sum();
            let mut cum = 0.0;
            let mut n = 0;
            for &k in &order {
                cum += p[k] / kept;
                n += 1;
                if cum >= strategy.top_p {
                    break;
                }
            }
            order.truncate(n);
            let mass: f64 = order.iter().map(|&k| p[k]).sum();
            let mut out = vec![0.0; v];
            for &k in &order {
                out[k] = p[k] / mass;
            }
            Ok(out)
        }
    }
}

fn sample(p: &[f64], rng: &mut ChaCha8Rng) -> u32 {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = 0;
    for (k, &q) in p.iter().enumerate() {
        if q > 0.0 {
            cum += q;
            last = k;
            if u < cum {
                return k as u32;
            }
        }
    }
    last as u32
}

pub fn decode_row(row: &[f32], strategy: &DecodeStrategy, rng: &mut ChaCha8Rng) -> Result<u32> {
    match strategy.kind {
        DecodeKind::Argmax => argmax(row),
        _ => Ok(sample(&filtered_distribution(row, strategy)?, rng)),
    }
}

/// Decodes every row of a `(..., V)` logit tensor, in row-major order.
pub fn decode_tokens(logits: &Tensor, strategy: &DecodeStrategy, rng: &mut ChaCha8Rng) -> Result<Vec<u32>> {
    let v = *logits.dims().last().unwrap();
    strategy.validate(v)?;
    let flat = logits.flatten_all()?.to_vec1::<f32>()?;
    flat.chunks(v).map(|row| decode_row(row, strategy, rng)).collect()
}
