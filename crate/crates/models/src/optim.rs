//! Learning-rate schedules, global-norm gradient clipping and an AdamW wrapper.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};

use crate::error::{Error, Result};
use crate::nn::scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decay {
    Cosine,
    Linear,
}

/// Linear warmup to `peak`, then cosine or linear decay towards `floor` at `total` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub peak: f64,
    pub floor: f64,
    pub warmup: usize,
    pub total: usize,
    pub decay: Decay,
}

impl Schedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.warmup > 0 && step < self.warmup {
            return self.peak * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).max(1) as f64;
        let t = ((step - self.warmup.min(step)) as f64 / span).min(1.0);
        let f = match self.decay {
            Decay::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * t).cos()),
            Decay::Linear => 1.0 - t,
        };
        self.floor + (self.peak - self.floor) * f
    }
}

/// Global L2 norm of the gradients of `vars`.
pub fn grad_norm(grads: &GradStore, vars: &[Var]) -> Result<f64> {
    let mut total = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            total += scalar(&g.sqr()?.sum_all()?)?;
        }
    }
    Ok(total.sqrt())
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the norm before
/// clipping. A non-finite norm is an error.
pub fn clip_grads(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let norm = grad_norm(grads, vars)?;
    if !norm.is_finite() {
        return Err(Error::NonFinite {
            what: "gradient norm".into(),
            step: 0,
        });
    }
    if norm > max_norm && max_norm > 0.0 {
        let f = max_norm / (norm + 1e-6);
        for v in vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                let scaled = (g * f)?;
                grads.insert(v.as_tensor(), scaled);
            }
        }
    }
    Ok(norm)
}

pub struct Trainer {
    opt: AdamW,
    vars: Vec<Var>,
    schedule: Schedule,
    clip: f64,
    step: usize,
}

impl Trainer {
    pub fn new(vars: Vec<Var>, schedule: Schedule, betas: (f64, f64), weight_decay: f64, clip: f64) -> Result<Self> {
        let params = ParamsAdamW {
            lr: schedule.lr(0),
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            weight_decay,
        };
        Ok(Self {
            opt: AdamW::new(vars.clone(), params)?,
            vars,
            schedule,
            clip,
            step: 0,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr(self.step)
    }

    /// Backward, clip, update. Returns `(grad_norm, lr)`.
    pub fn backward_step(&mut self, loss: &Tensor) -> Result<(f64, f64)> {
        let mut grads = loss.backward()?;
        let norm = clip_grads(&mut grads, &self.vars, self.clip).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { what, step: self.step },
            e => e,
        })?;
        let lr = self.schedule.lr(self.step);
        self.opt.set_learning_rate(lr);
        self.opt.step(&grads)?;
        self.step += 1;
        Ok((norm, lr))
    }
}
