//! Reverse KL between student and teacher token distributions.

use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::nn::{scalar, softmax_last};

/// Probability floor applied in log space.
pub const PROB_FLOOR: f64 = 1e-12;

fn floored_log_softmax(logits: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::log_softmax(logits, D::Minus1)?.maximum(PROB_FLOOR.ln())?)
}

/// Per-position `KL(p_s || p_t)` for `(..., V)` logits, shape `(...)`.
pub fn reverse_kl_positions(student: &Tensor, teacher: &Tensor) -> Result<Tensor> {
    if student.dims() != teacher.dims() {
        return Err(Error::InvalidArgument(format!(
            "student logits {:?} and teacher logits {:?} do not align",
            student.dims(),
            teacher.dims()
        )));
    }
    let ls = floored_log_softmax(student)?;
    let lt = floored_log_softmax(teacher)?;
    let ps = softmax_last(student)?;
    Ok((ps * (ls - lt)?)?.sum(D::Minus1)?)
}

/// Mean over positions within each scale, then mean over scales. Returns the scalar loss and
/// the per-scale values.
pub fn reverse_kl(student: &[Tensor], teacher: &[Tensor]) -> Result<(Tensor, Vec<f64>)> {
    if student.is_empty() || student.len() != teacher.len() {
        return Err(Error::InvalidArgument(format!(
            "{} student scales vs {} teacher scales",
            student.len(),
            teacher.len()
        )));
    }
    let mut per_scale = Vec::with_capacity(student.len());
    let mut terms = Vec::with_capacity(student.len());
    for (s, t) in student.iter().zip(teacher) {
        let kl = reverse_kl_positions(s, t)?.mean_all()?;
        let v = scalar(&kl)?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "reverse KL".into(),
                step: 0,
            });
        }
        per_scale.push(v);
        terms.push(kl);
    }
    let n = terms.len() as f64;
    let total = (Tensor::stack(&terms, 0)?.sum_all()? / n)?;
    Ok((total, per_scale))
}
