//! Tensor ops that need a backward pass the stock kernels lack.

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType, D};

use crate::error::Result;

struct SoftmaxLastDim;

fn softmax_rows<T: WithDType>(src: &[T], dim: usize, exp: impl Fn(T) -> T) -> Vec<T> {
    let mut dst = vec![T::zero(); src.len()];
    for (s, d) in src.chunks(dim).zip(dst.chunks_mut(dim)) {
        let max = s.iter().copied().fold(s[0], |m, v| if v > m { v } else { m });
        let mut sum = T::zero();
        for (x, y) in s.iter().zip(d.iter_mut()) {
            *y = exp(*x - max);
            sum += *y;
        }
        for y in d.iter_mut() {
            *y = *y / sum;
        }
    }
    dst
}

impl CustomOp1 for SoftmaxLastDim {
    fn name(&self) -> &'static str {
        "h2r-softmax-last-dim"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let Some((start, end)) = layout.contiguous_offsets() else {
            candle_core::bail!("softmax input must be contiguous")
        };
        let dims = layout.shape().dims();
        let dim = dims[dims.len() - 1];
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(softmax_rows(&v[start..end], dim, f32::exp)),
            CpuStorage::F64(v) => CpuStorage::F64(softmax_rows(&v[start..end], dim, f64::exp)),
            _ => candle_core::bail!("softmax: only f32 and f64 are supported"),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let dot = (grad_res * res)?.sum_keepdim(D::Minus1)?;
        Ok(Some((res * grad_res.broadcast_sub(&dot)?)?))
    }
}

/// Softmax over the last dimension with an analytic gradient.
pub fn softmax_last_dim(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(SoftmaxLastDim)?)
}

/// LayerNorm over the last dimension, built from differentiable primitives.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    let y = xc.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(y.broadcast_mul(gamma)?.broadcast_add(beta)?)
}

/// Classic transformer sinusoid of a scalar position into `dim` features
/// (sines in the first half, cosines in the second).
pub fn sinusoid(pos: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out[i] = (pos * freq).sin();
        out[half + i] = (pos * freq).cos();
    }
    out
}

/// Split of a model width into the three positional sub-bands (t, y, x), each even.
pub fn position_bands(width: usize) -> [usize; 3] {
    let base = (width / 3) & !1;
    [width - 2 * base, base, base]
}

/// Factorized 3-D position features: concatenated sinusoids of t, y and x.
pub fn position_features(t: usize, y: usize, x: usize, width: usize) -> Vec<f64> {
    let [bt, by, bx] = position_bands(width);
    let mut out = sinusoid(t as f64, bt);
    out.extend(sinusoid(y as f64, by));
    out.extend(sinusoid(x as f64, bx));
    out
}
