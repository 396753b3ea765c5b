//! Differentiable tokenizer objectives.

use candle_core::{Device, Tensor};
use nasp_core::metrics::{gaussian_window, SSIM_K1, SSIM_K2};

use crate::error::{Error, Result};

/// `(n - 10, n)` matrix applying the 11-tap SSIM window with "valid" support.
fn window_matrix(n: usize) -> Result<Tensor> {
    let taps = gaussian_window();
    let k = taps.len();
    let m = n + 1 - k;
    let mut a = vec![0.0f32; m * n];
    for i in 0..m {
        for (t, &v) in taps.iter().enumerate() {
            a[i * n + i + t] = v as f32;
        }
    }
    Ok(Tensor::from_vec(a, (m, n), &Device::Cpu)?)
}

fn filter(x: &Tensor, gh: &Tensor, gw: &Tensor) -> Result<Tensor> {
    let (b, h, w) = x.dims3()?;
    let mw = gw.dim(0)?;
    let y = x.reshape((b * h, w))?.matmul(&gw.t()?)?.reshape((b, h, mw))?;
    let y = y.transpose(1, 2)?.contiguous()?.reshape((b * mw, h))?;
    let mh = gh.dim(0)?;
    Ok(y.matmul(&gh.t()?)?.reshape((b, mw, mh))?)
}

/// Per-image windowed SSIM of `x` against `reference`, both `(B, H, W)` magnitudes; the dynamic
/// range is each reference's peak.
pub fn ssim(x: &Tensor, reference: &Tensor) -> Result<Tensor> {
    let (b, h, w) = x.dims3()?;
    let (gh, gw) = (window_matrix(h)?, window_matrix(w)?);
    let l = reference.detach().reshape((b, h * w))?.max_keepdim(1)?.maximum(1e-6)?.reshape((b, 1, 1))?;
    let c1 = (l.sqr()? * (SSIM_K1 * SSIM_K1))?;
    let c2 = (l.sqr()? * (SSIM_K2 * SSIM_K2))?;
    let mx = filter(x, &gh, &gw)?;
    let my = filter(reference, &gh, &gw)?;
    let xx = filter(&x.sqr()?, &gh, &gw)?;
    let yy = filter(&reference.sqr()?, &gh, &gw)?;
    let xy = filter(&(x * reference)?, &gh, &gw)?;
    let mxy = (&mx * &my)?;
    let (mx2, my2) = (mx.sqr()?, my.sqr()?);
    let vx = (xx - &mx2)?;
    let vy = (yy - &my2)?;
    let cov = (xy - &mxy)?;
    let num = ((mxy * 2.0)?.broadcast_add(&c1)? * (cov * 2.0)?.broadcast_add(&c2)?)?;
    let den = ((mx2 + my2)?.broadcast_add(&c1)? * (vx + vy)?.broadcast_add(&c2)?)?;
    Ok((num / den)?.flatten_from(1)?.mean(1)?)
}

/// `1 - mean SSIM` over the batch.
pub fn ssim_loss(x: &Tensor, reference: &Tensor) -> Result<Tensor> {
    Ok(ssim(x, reference)?.mean_all()?.affine(-1.0, 1.0)?)
}

fn unit_channels(f: &Tensor) -> Result<Tensor> {
    let n = (f.sqr()?.sum_keepdim(0)?.sqrt()? + 1e-10)?;
    Ok(f.broadcast_div(&n)?)
}

/// Mean over depths of the position-averaged squared distance between channel-normalized
/// features (`(C, B, H, W)` maps).
pub fn perceptual_loss(fake: &[Tensor], real: &[Tensor]) -> Result<Tensor> {
    if fake.is_empty() || fake.len() != real.len() {
        return Err(Error::InvalidArgument("feature depth mismatch".into()));
    }
    let mut total: Option<Tensor> = None;
    for (a, b) in fake.iter().zip(real) {
        let d = (unit_channels(a)? - unit_channels(b)?)?.sqr()?.sum(0)?.mean_all()?;
        total = Some(match total {
            Some(t) => (t + d)?,
            None => d,
        });
    }
    Ok((total.unwrap() / fake.len() as f64)?)
}

fn mse_to(x: &Tensor, target: f64) -> Result<Tensor> {
    Ok((x - target)?.sqr()?.mean_all()?)
}

fn sum_scalars(v: Vec<Tensor>) -> Result<Tensor> {
    let mut it = v.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::InvalidArgument("no discriminator heads".into()))?;
    it.try_fold(first, |acc, t| Ok((acc + t)?))
}

/// `L_D = sum_heads 0.5 * (MSE(D(real), 1) + MSE(D(fake), 0))`; pass detached fake scores.
pub fn discriminator_loss(real_scores: &[Tensor], fake_scores: &[Tensor]) -> Result<Tensor> {
    if real_scores.len() != fake_scores.len() {
        return Err(Error::InvalidArgument("head count mismatch".into()));
    }
    let terms = real_scores
        .iter()
        .zip(fake_scores)
        .map(|(r, f)| Ok(((mse_to(r, 1.0)? + mse_to(f, 0.0)?)? * 0.5)?))
        .collect::<Result<Vec<_>>>()?;
    sum_scalars(terms)
}

/// `L_adv = sum_heads MSE(D(fake), 1)`.
pub fn generator_adv_loss(fake_scores: &[Tensor]) -> Result<Tensor> {
    sum_scalars(fake_scores.iter().map(|f| mse_to(f, 1.0)).collect::<Result<Vec<_>>>()?)
}

/// Mean over levels of `beta * MSE(z_k, stopgrad(q_k))`.
pub fn commitment_loss(z: &[Tensor], q: &[Tensor], beta: f64) -> Result<Tensor> {
    if z.is_empty() || z.len() != q.len() {
        return Err(Error::InvalidArgument(format!(
            "commitment needs matched levels, got {} latents and {} codes",
            z.len(),
            q.len()
        )));
    }
    let terms = z
        .iter()
        .zip(q)
        .map(|(z, q)| Ok(((z - q.detach())?.sqr()?.mean_all()? * beta)?))
        .collect::<Result<Vec<_>>>()?;
    Ok((sum_scalars(terms)? / z.len() as f64)?)
}
