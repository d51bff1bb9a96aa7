//! Flow-matching objective and the Euler ODE sampler.

use candle_core::{DType, Device, Tensor};
use h2r_core::VideoArray;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::network::{Conditioning, ForwardOptions, Generator, VelocityField};
use crate::tokenizer::{LatentGrid, LatentTokens, TokenizerConfig};

/// Stack the videos' latents as `[B, N, C]` in model space (`2x - 1`).
pub fn latents(tokenizer: &TokenizerConfig, videos: &[&VideoArray], device: &Device, dtype: DType) -> Result<(Tensor, LatentGrid)> {
    let first = videos.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
    let grid = tokenizer.grid(first.frames(), first.height(), first.width())?;
    let c = tokenizer.channels();
    let mut data = Vec::with_capacity(videos.len() * grid.len() * c);
    for v in videos {
        let tok = tokenizer.encode(v)?;
        if tok.grid != grid {
            return Err(Error::Contract(format!("batch mixes latent grids {:?} and {:?}", grid, tok.grid)));
        }
        data.extend(tok.data.iter().map(|x| 2.0 * x - 1.0));
    }
    let t = Tensor::from_vec(data, (videos.len(), grid.len(), c), device)?.to_dtype(dtype)?;
    Ok((t, grid))
}

/// Inverse of [`latents`]: map back to `[0, 1]`, clamp, and decode each batch item.
pub fn videos_from_latents(tokenizer: &TokenizerConfig, z: &Tensor, grid: LatentGrid) -> Result<Vec<VideoArray>> {
    let (b, n, c) = z.dims3()?;
    if n != grid.len() || c != tokenizer.channels() {
        return Err(Error::Contract(format!("latent block {:?} does not fit grid {grid:?}", z.dims())));
    }
    let flat: Vec<f64> = z.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    flat.chunks(n * c)
        .take(b)
        .map(|chunk| {
            let data = chunk.iter().map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)).collect();
            tokenizer.decode(&LatentTokens { grid, channels: c, data })
        })
        .collect()
}

/// Unit Gaussian noise of `shape`, reproducible from `seed`.
pub fn noise(shape: &[usize], seed: u64, device: &Device, dtype: DType) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?)
}

/// `z_t = (1 - t) z_0 + t z_1` with one `t` per batch item.
pub fn interpolate(z0: &Tensor, z1: &Tensor, t: &Tensor) -> Result<Tensor> {
    let b = z0.dim(0)?;
    let t = t.reshape((b, 1, 1))?;
    let one_minus = (t.ones_like()? - &t)?;
    Ok((z0.broadcast_mul(&one_minus)? + z1.broadcast_mul(&t)?)?)
}

/// Mean squared error between the predicted velocity at `z_t` and `z_1 - z_0`,
/// over target tokens only.
pub fn flow_matching_loss<F: VelocityField + ?Sized>(
    field: &F,
    z0: &Tensor,
    z1: &Tensor,
    t: &Tensor,
    cond: &Conditioning,
) -> Result<Tensor> {
    weighted_flow_matching_loss(field, z0, z1, t, cond, None)
}

/// [`flow_matching_loss`] with a per-item weight (`[B]`) on each item's squared error.
pub fn weighted_flow_matching_loss<F: VelocityField + ?Sized>(
    field: &F,
    z0: &Tensor,
    z1: &Tensor,
    t: &Tensor,
    cond: &Conditioning,
    weight: Option<&Tensor>,
) -> Result<Tensor> {
    let zt = interpolate(z0, z1, t)?;
    let target = (z1 - z0)?;
    let pred = field.velocity(&zt, t, cond)?;
    let err = (pred - target)?.sqr()?;
    match weight {
        None => Ok(err.mean_all()?),
        Some(w) => Ok(err.broadcast_mul(&w.reshape((z0.dim(0)?, 1, 1))?)?.mean_all()?),
    }
}

/// Euler integration of `dz/dt = u(z, t)` from `t = 1` down to `t = 0` in `steps` uniform steps.
pub fn euler_integrate<F: VelocityField + ?Sized>(field: &F, z1: &Tensor, cond: &Conditioning, steps: usize) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::Contract("sampler needs at least one step".into()));
    }
    let b = z1.dim(0)?;
    let dt = 1.0 / steps as f64;
    let mut z = z1.clone();
    for k in 0..steps {
        let t = 1.0 - k as f64 * dt;
        let tt = Tensor::full(t, b, z.device())?.to_dtype(z.dtype())?;
        let u = field.velocity(&z, &tt, cond)?;
        z = (z - (u * dt)?)?;
    }
    Ok(z)
}

/// Translate an indicator video into a generated video.
pub fn sample(generator: &Generator, h2rep: &VideoArray, prompt: &str, steps: usize, seed: u64) -> Result<VideoArray> {
    let tk = generator.config.tokenizer;
    let (cond, grid) = latents(&tk, &[h2rep], generator.device(), generator.dtype())?;
    let cond = Conditioning::new(cond, grid, vec![generator.config.prompt_id(prompt)?]);
    let z1 = noise(cond.tokens.dims(), seed, generator.device(), generator.dtype())?;
    let z0 = euler_integrate(&generator.field(ForwardOptions::INFERENCE), &z1, &cond, steps)?;
    Ok(videos_from_latents(&tk, &z0, grid)?.remove(0))
}
