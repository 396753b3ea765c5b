//! Layers built from differentiable tensor primitives.
//!
//! Convolutional feature maps use a channel-first `(C, B, H, W)` layout so that a 3x3
//! convolution is a single `(O, 9C) x (9C, B*H*W)` matrix product after im2col.

use candle_core::{CpuStorage, CustomOp1, DType, Device, IndexOp, Layout, Shape, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{Init, ParamStore};

#[derive(Debug, Clone)]
pub struct Linear {
    w: Tensor,
    b: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &ParamStore, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        Self::with_init(ps, in_dim, out_dim, bias, Init::FanIn(in_dim))
    }

    pub fn with_init(
        ps: &ParamStore,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let w = ps.get("weight", &[out_dim, in_dim], init)?;
        let b = if bias {
            Some(ps.get("bias", &[out_dim], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn weight(&self) -> &Tensor {
        &self.w
    }

    /// Applies to the last dimension of any-rank input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().unwrap();
        let rows = x.elem_count() / in_dim;
        let y = x.reshape((rows, in_dim))?.matmul(&self.w.t()?)?;
        let y = match &self.b {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out = dims;
        *out.last_mut().unwrap() = self.w.dim(0)?;
        Ok(y.reshape(out)?)
    }
}

/// Same-padded square convolution with stride 1 on `(C, B, H, W)` maps.
#[derive(Debug, Clone)]
pub struct Conv2d {
    w: Tensor,
    b: Tensor,
    kernel: usize,
}

impl Conv2d {
    pub fn new(ps: &ParamStore, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        Self::with_init(ps, c_in, c_out, kernel, Init::FanIn(c_in * kernel * kernel))
    }

    pub fn with_init(
        ps: &ParamStore,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        init: Init,
    ) -> Result<Self> {
        assert!(kernel % 2 == 1, "odd kernels only");
        let w = ps.get("weight", &[c_out, c_in * kernel * kernel], init)?;
        let b = ps.get("bias", &[c_out], Init::Zeros)?;
        Ok(Self { w, b, kernel })
    }

    pub fn zeros(ps: &ParamStore, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        Self::with_init(ps, c_in, c_out, kernel, Init::Zeros)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (c, b, h, w) = x.dims4()?;
        let cols = if self.kernel == 1 {
            x.reshape((c, b * h * w))?
        } else {
            let p = self.kernel / 2;
            let padded = x.pad_with_zeros(2, p, p)?.pad_with_zeros(3, p, p)?;
            let mut taps = Vec::with_capacity(self.kernel * self.kernel);
            for dy in 0..self.kernel {
                for dx in 0..self.kernel {
                    taps.push(padded.narrow(2, dy, h)?.narrow(3, dx, w)?);
                }
            }
            // (C, k*k, B, H, W): row index c*k*k + tap matches the weight layout
            Tensor::stack(&taps, 1)?.reshape((c * self.kernel * self.kernel, b * h * w))?
        };
        let o = self.w.dim(0)?;
        let y = self.w.matmul(&cols)?.broadcast_add(&self.b.reshape((o, 1))?)?;
        Ok(y.reshape((o, b, h, w))?)
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    gamma: Tensor,
    beta: Tensor,
    groups: usize,
}

impl GroupNorm {
    pub fn new(ps: &ParamStore, channels: usize, groups: usize) -> Result<Self> {
        assert!(channels % groups == 0, "{channels} channels, {groups} groups");
        Ok(Self {
            gamma: ps.get("weight", &[channels], Init::Ones)?,
            beta: ps.get("bias", &[channels], Init::Zeros)?,
            groups,
        })
    }

    /// Normalizes without the affine part.
    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        let (c, b, h, w) = x.dims4()?;
        let g = self.groups;
        let xg = x.reshape((g, c / g, b, h * w))?;
        let mean = xg.mean_keepdim(3)?.mean_keepdim(1)?;
        let centered = xg.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(3)?.mean_keepdim(1)?;
        let y = centered.broadcast_div(&(var + 1e-6)?.sqrt()?)?;
        Ok(y.reshape((c, b, h, w))?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(0)?;
        let y = self.normalize(x)?;
        Ok(y
            .broadcast_mul(&self.gamma.reshape((c, 1, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((c, 1, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(ps: &ParamStore, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.get("weight", &[dim], Init::Ones)?,
            beta: ps.get("bias", &[dim], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let y = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(y.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// `(C, B, H, W) -> (C*f*f, B, H/f, W/f)`.
pub fn space_to_depth(x: &Tensor, f: usize) -> Result<Tensor> {
    if f == 1 {
        return Ok(x.clone());
    }
    let (c, b, h, w) = x.dims4()?;
    let y = x
        .reshape((c, b, h / f, f, w / f, f))?
        .permute((0, 3, 5, 1, 2, 4))?
        .contiguous()?;
    Ok(y.reshape((c * f * f, b, h / f, w / f))?)
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space(x: &Tensor, f: usize) -> Result<Tensor> {
    if f == 1 {
        return Ok(x.clone());
    }
    let (cff, b, h, w) = x.dims4()?;
    let c = cff / (f * f);
    let y = x
        .reshape((c, f, f, b, h, w))?
        .permute((0, 3, 4, 1, 5, 2))?
        .contiguous()?;
    Ok(y.reshape((c, b, h * f, w * f))?)
}

pub fn upsample_nearest2(x: &Tensor) -> Result<Tensor> {
    let (c, b, h, w) = x.dims4()?;
    let y = x
        .reshape((c, b, h, 1, w, 1))?
        .broadcast_as((c, b, h, 2, w, 2))?
        .contiguous()?;
    Ok(y.reshape((c, b, 2 * h, 2 * w))?)
}

/// Adaptive average pooling weights from `n` to `m` cells (PyTorch bin convention).
pub fn area_matrix(m: usize, n: usize) -> Vec<f32> {
    let mut a = vec![0.0f32; m * n];
    for i in 0..m {
        let start = (i * n) / m;
        let end = ((i + 1) * n).div_ceil(m);
        let len = (end - start) as f32;
        for j in start..end {
            a[i * n + j] = 1.0 / len;
        }
    }
    a
}

/// Bilinear interpolation weights from `n` to `m` cells (half-pixel centers, edge clamped).
pub fn bilinear_matrix(m: usize, n: usize) -> Vec<f32> {
    let mut a = vec![0.0f32; m * n];
    let scale = n as f64 / m as f64;
    for i in 0..m {
        let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let j0 = (src.floor() as usize).min(n - 1);
        let j1 = (j0 + 1).min(n - 1);
        let t = src - j0 as f64;
        a[i * n + j0] += (1.0 - t) as f32;
        a[i * n + j1] += t as f32;
    }
    a
}

/// Kronecker product of two row-major matrices, giving the separable 2D operator on
/// row-major flattened grids.
pub fn kron(a: &[f32], (am, an): (usize, usize), b: &[f32], (bm, bn): (usize, usize)) -> Vec<f32> {
    let mut out = vec![0.0f32; am * bm * an * bn];
    let cols = an * bn;
    for i in 0..am {
        for k in 0..bm {
            for j in 0..an {
                for l in 0..bn {
                    out[(i * bm + k) * cols + j * bn + l] = a[i * an + j] * b[k * bn + l];
                }
            }
        }
    }
    out
}

/// 2D resampling operator `(to*to, from*from)` as a tensor.
pub fn resample_2d(to: usize, from: usize, bilinear: bool) -> Result<Tensor> {
    let a = if bilinear {
        bilinear_matrix(to, from)
    } else {
        area_matrix(to, from)
    };
    let k = kron(&a, (to, from), &a, (to, from));
    Ok(Tensor::from_vec(k, (to * to, from * from), &Device::Cpu)?)
}

/// Applies a `(m2, n2)` grid operator to `(C, B, n, n)` maps, giving `(C, B, m, m)`.
pub fn apply_grid_op(x: &Tensor, op: &Tensor) -> Result<Tensor> {
    let (c, b, h, w) = x.dims4()?;
    let m2 = op.dim(0)?;
    let m = (m2 as f64).sqrt().round() as usize;
    let y = x.reshape((c * b, h * w))?.matmul(&op.t()?)?;
    Ok(y.reshape((c, b, m, m))?)
}

/// Multi-head attention with separate query and key/value sources.
#[derive(Debug, Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(ps: &ParamStore, dim: usize, kv_dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(&ps.pp("q"), dim, dim, true)?,
            k: Linear::new(&ps.pp("k"), kv_dim, dim, true)?,
            v: Linear::new(&ps.pp("v"), kv_dim, dim, true)?,
            out: Linear::new(&ps.pp("out"), dim, dim, true)?,
            heads,
        })
    }

    pub fn out_proj(&self) -> &Linear {
        &self.out
    }

    /// `x: (B, T, E)`, `kv: (B, S, E_kv)`, additive `mask: (T, S)` (0 or a large negative).
    pub fn forward(&self, x: &Tensor, kv: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, t, e) = x.dims3()?;
        let s = kv.dim(1)?;
        let h = self.heads;
        let dh = e / h;
        let split = |y: Tensor, n: usize| -> Result<Tensor> {
            Ok(y.reshape((b, n, h, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split((self.q.forward(x)? * (1.0 / (dh as f64).sqrt()))?, t)?;
        let k = split(self.k.forward(kv)?, s)?;
        let v = split(self.v.forward(kv)?, s)?;
        let mut scores = q.matmul(&k.t()?)?;
        if let Some(m) = mask {
            scores = scores.broadcast_add(m)?;
        }
        let attn = softmax_last(&scores)?;
        let y = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, t, e))?;
        self.out.forward(&y)
    }
}

struct SoftmaxLast;

impl CustomOp1 for SoftmaxLast {
    fn name(&self) -> &'static str {
        "softmax-last"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let CpuStorage::F32(src) = storage else {
            candle_core::bail!("softmax-last: f32 input expected");
        };
        let Some((start, end)) = layout.contiguous_offsets() else {
            candle_core::bail!("softmax-last: input must be contiguous");
        };
        let n = layout.dims().last().copied().unwrap_or(1).max(1);
        let src = &src[start..end];
        let mut dst = vec![0f32; src.len()];
        for (x, y) in src.chunks_exact(n).zip(dst.chunks_exact_mut(n)) {
            let m = x.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let mut sum = 0f32;
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = (xi - m).exp();
                sum += *yi;
            }
            for yi in y.iter_mut() {
                *yi /= sum;
            }
        }
        Ok((CpuStorage::F32(dst), layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let dot = (grad * res)?.sum_keepdim(D::Minus1)?;
        Ok(Some((res * grad.broadcast_sub(&dot)?)?))
    }
}

/// Softmax over the last dimension in one pass, with a backward pass (the fused candle op has
/// none).
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(SoftmaxLast)?)
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.gelu()?)
}

pub fn silu(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

/// Stochastic depth on a residual branch `(B, ...)`: each sample's branch is dropped with
/// probability `p` and the survivors are rescaled by `1/(1-p)`.
pub fn drop_path(branch: &Tensor, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
    let Some(rng) = rng else {
        return Ok(branch.clone());
    };
    if p <= 0.0 {
        return Ok(branch.clone());
    }
    let b = branch.dim(0)?;
    let keep: Vec<f32> = (0..b)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { (1.0 / (1.0 - p)) as f32 })
        .collect();
    let mut shape = vec![1usize; branch.rank()];
    shape[0] = b;
    let mask = Tensor::from_vec(keep, shape, branch.device())?;
    Ok(branch.broadcast_mul(&mask)?)
}

/// Stores `(C, B, H, W)` as `(B, C, H, W)` or back (the permutation is its own inverse).
pub fn swap_cb(x: &Tensor) -> Result<Tensor> {
    Ok(x.transpose(0, 1)?.contiguous()?)
}

/// Scalar value of a rank-0 or single-element tensor.
pub fn scalar(x: &Tensor) -> Result<f64> {
    Ok(x.flatten_all()?.to_dtype(DType::F64)?.i(0)?.to_scalar::<f64>()?)
}
