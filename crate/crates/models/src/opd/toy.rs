//! An 8-token problem separating reverse from forward KL: a two-mode teacher and a unimodal
//! student `softmax(-(i - mu)^2 / (2 sigma^2))`.

use candle_core::{Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};

use super::kl::reverse_kl_positions;
use crate::error::Result;
use crate::nn::scalar;

pub const TOY_TOKENS: usize = 8;

/// Teacher logits: equal-weight narrow bumps at tokens 1 and 6.
pub fn toy_teacher() -> Vec<f32> {
    (0..TOY_TOKENS)
        .map(|i| {
            let x = i as f64;
            let p = (-(x - 1.0).powi(2) / 0.5).exp() + (-(x - 6.0).powi(2) / 0.5).exp() + 1e-6;
            p.ln() as f32
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ToyResult {
    pub student: Vec<f64>,
    /// Student mass on tokens `0..4` and `4..8`, the two teacher basins.
    pub basin_mass: [f64; 2],
    pub final_kl: f64,
}

impl ToyResult {
    pub fn dominant_mass(&self) -> f64 {
        self.basin_mass[0].max(self.basin_mass[1])
    }
}

fn student_logits(mu: &Var, log_sigma: &Var) -> Result<Tensor> {
    let x = Tensor::arange(0f32, TOY_TOKENS as f32, &Device::Cpu)?;
    let d = x.broadcast_sub(mu.as_tensor())?.sqr()?;
    let two_var = (log_sigma.as_tensor() * 2.0)?.exp()? * 2.0;
    Ok(d.broadcast_div(&two_var?)?.neg()?)
}

/// Fits the student, started at `mu0` with unit width, by minimizing `KL(student || teacher)` (`reverse = true`) or
/// `KL(teacher || student)`.
pub fn fit_toy(reverse: bool, mu0: f64, steps: usize) -> Result<ToyResult> {
    let mu = Var::new(&[mu0 as f32], &Device::Cpu)?;
    let log_sigma = Var::new(&[1f32.ln()], &Device::Cpu)?;
    let teacher = Tensor::from_vec(toy_teacher(), TOY_TOKENS, &Device::Cpu)?;
    let mut opt = AdamW::new(
        vec![mu.clone(), log_sigma.clone()],
        ParamsAdamW {
            lr: 0.05,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut last = f64::NAN;
    for _ in 0..steps {
        let s = student_logits(&mu, &log_sigma)?;
        let kl = if reverse {
            reverse_kl_positions(&s, &teacher)?
        } else {
            reverse_kl_positions(&teacher, &s)?
        };
        last = scalar(&kl)?;
        opt.backward_step(&kl)?;
    }
    let s = student_logits(&mu, &log_sigma)?;
    let p: Vec<f64> = candle_nn::ops::softmax(&s, 0)?
        .to_vec1::<f32>()?
        .into_iter()
        .map(f64::from)
        .collect();
    let lo: f64 = p[..TOY_TOKENS / 2].iter().sum();
    Ok(ToyResult {
        basin_mass: [lo, 1.0 - lo],
        student: p,
        final_kl: last,
    })
}
