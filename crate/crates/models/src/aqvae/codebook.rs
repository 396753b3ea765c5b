//! Shared codebook: exact nearest-neighbour assignment, EMA statistics and the rotation trick.

use candle_core::{Device, Tensor};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    size: usize,
    dim: usize,
    /// Model-facing vectors; also the values used for nearest-neighbour search.
    vectors: Vec<f32>,
    /// Full-precision `sums / (counts + eps)`.
    exact: Vec<f64>,
    ema_counts: Vec<f64>,
    ema_sums: Vec<f64>,
    pub decay: f64,
    pub eps: f64,
}

impl Codebook {
    /// Codebook whose EMA state is consistent with `vectors` (unit counts).
    pub fn from_vectors(size: usize, dim: usize, vectors: Vec<f32>, decay: f64, eps: f64) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(Error::InvalidArgument("empty codebook".into()));
        }
        if vectors.len() != size * dim {
            return Err(Error::InvalidArgument(format!(
                "codebook {size}x{dim} needs {} values, got {}",
                size * dim,
                vectors.len()
            )));
        }
        let exact: Vec<f64> = vectors.iter().map(|&v| v as f64).collect();
        let ema_counts = vec![1.0; size];
        let ema_sums = exact.iter().map(|v| v * (1.0 + eps)).collect();
        Ok(Self {
            size,
            dim,
            vectors,
            exact,
            ema_counts,
            ema_sums,
            decay,
            eps,
        })
    }

    /// Initializes entries from randomly chosen rows of `rows` (`n x dim`), drawing without
    /// replacement when there are enough rows.
    pub fn from_samples(size: usize, dim: usize, rows: &[f32], seed: u64, decay: f64, eps: f64) -> Result<Self> {
        let n = rows.len() / dim;
        if n == 0 {
            return Err(Error::InvalidArgument("no latents to initialize the codebook".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks: Vec<usize> = if n >= size {
            sample(&mut rng, n, size).into_vec()
        } else {
            (0..size).map(|k| k % n).collect()
        };
        let mut vectors = Vec::with_capacity(size * dim);
        for (k, &p) in picks.iter().enumerate() {
            for j in 0..dim {
                // repeated rows get a tiny deterministic offset so they stay distinct
                let jitter = if k >= n { 1e-3 * ((k * 31 + j * 7) % 13) as f32 / 13.0 } else { 0.0 };
                vectors.push(rows[p * dim + j] + jitter);
            }
        }
        Self::from_vectors(size, dim, vectors, decay, eps)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, v: usize) -> &[f32] {
        &self.vectors[v * self.dim..(v + 1) * self.dim]
    }

    pub fn exact_vectors(&self) -> &[f64] {
        &self.exact
    }

    pub fn ema_counts(&self) -> &[f64] {
        &self.ema_counts
    }

    pub fn ema_sums(&self) -> &[f64] {
        &self.ema_sums
    }

    pub fn tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.vectors, (self.size, self.dim), &Device::Cpu)?)
    }

    /// Index of the nearest entry in squared l2 distance, computed in f64; ties go to the lowest
    /// index.
    pub fn nearest(&self, z: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for v in 0..self.size {
            let c = self.vector(v);
            let d: f64 = z
                .iter()
                .zip(c)
                .map(|(&a, &b)| {
                    let t = a as f64 - b as f64;
                    t * t
                })
                .sum();
            if d < best_d {
                best_d = d;
                best = v;
            }
        }
        best
    }

    /// Nearest entries for each row of a row-major `n x dim` buffer.
    pub fn assign(&self, rows: &[f32]) -> Vec<u32> {
        rows.chunks_exact(self.dim).map(|z| self.nearest(z) as u32).collect()
    }

    /// EMA step: `counts = decay*counts + (1-decay)*n_v`, `sums = decay*sums + (1-decay)*sum z`,
    /// `vectors = sums / (counts + eps)`. Codes without assignments only decay.
    pub fn ema_update(&mut self, indices: &[u32], rows: &[f32]) -> Result<()> {
        if rows.len() != indices.len() * self.dim {
            return Err(Error::InvalidArgument("assignment rows do not match indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= self.size) {
            return Err(Error::InvalidArgument(format!(
                "code index {bad} out of range for a codebook of {}",
                self.size
            )));
        }
        let d = self.dim;
        let mut counts = vec![0.0f64; self.size];
        let mut sums = vec![0.0f64; self.size * d];
        for (&i, z) in indices.iter().zip(rows.chunks_exact(d)) {
            let i = i as usize;
            counts[i] += 1.0;
            for (s, &v) in sums[i * d..(i + 1) * d].iter_mut().zip(z) {
                *s += v as f64;
            }
        }
        let a = self.decay;
        for v in 0..self.size {
            self.ema_counts[v] = a * self.ema_counts[v] + (1.0 - a) * counts[v];
            let denom = self.ema_counts[v] + self.eps;
            for j in 0..d {
                let k = v * d + j;
                self.ema_sums[k] = a * self.ema_sums[k] + (1.0 - a) * sums[k];
                self.exact[k] = self.ema_sums[k] / denom;
                self.vectors[k] = self.exact[k] as f32;
            }
        }
        if self.vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "codebook after EMA update".into(),
                step: 0,
            });
        }
        Ok(())
    }

    /// `exp(-sum p log p)` of the empirical code usage.
    pub fn perplexity(&self, indices: &[u32]) -> f64 {
        if indices.is_empty() {
            return 0.0;
        }
        let mut counts = vec![0usize; self.size];
        for &i in indices {
            counts[i as usize] += 1;
        }
        let n = indices.len() as f64;
        let h: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum();
        h.exp()
    }
}

/// Rotation-trick quantization of rows `z: (N, d)` onto the selected codes `q: (N, d)`.
///
/// The forward value is exactly `q`. The gradient w.r.t. `z` is that of `lambda * R z`, where
/// `R` rotates the direction of `z` onto the direction of `q` and `lambda = |q| / |z|`, with
/// `R` and `lambda` held constant.
pub fn rotation_trick(z: &Tensor, q: &Tensor) -> Result<Tensor> {
    let q = q.detach();
    let zd = z.detach();
    let eps = 1e-12;
    let z_norm = (zd.sqr()?.sum_keepdim(1)? + eps)?.sqrt()?;
    let q_norm = (q.sqr()?.sum_keepdim(1)? + eps)?.sqrt()?;
    let z_hat = zd.broadcast_div(&z_norm)?;
    let q_hat = q.broadcast_div(&q_norm)?;
    let r = (&z_hat + &q_hat)?;
    let r = r.broadcast_div(&(r.sqr()?.sum_keepdim(1)? + eps)?.sqrt()?)?;
    let lambda = q_norm.broadcast_div(&z_norm)?;
    // R z = z - 2 r (r.z) + 2 q_hat (z_hat.z)
    let rz = r.broadcast_mul(z)?.sum_keepdim(1)?;
    let zz = z_hat.broadcast_mul(z)?.sum_keepdim(1)?;
    let rotated = ((z - (r.broadcast_mul(&rz)? * 2.0)?)? + (q_hat.broadcast_mul(&zz)? * 2.0)?)?;
    let scaled = rotated.broadcast_mul(&lambda)?;
    Ok((q + (&scaled - scaled.detach())?)?)
}
