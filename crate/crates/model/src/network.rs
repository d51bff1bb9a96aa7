//! In-context diffusion transformer over `[text ; condition ; target]` tokens.

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hasher};

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{layer_norm, position_features, sinusoid, softmax_last_dim};
use crate::tokenizer::{LatentGrid, TokenizerConfig};

pub const ROLE_TEXT: usize = 0;
pub const ROLE_CONDITION: usize = 1;
pub const ROLE_TARGET: usize = 2;
const LN_EPS: f64 = 1e-5;
/// Scale applied to `t` before the sinusoidal timestep features.
const TIME_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub tokenizer: TokenizerConfig,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    /// One learned text token per entry.
    pub prompts: Vec<String>,
    /// Predict the clean target as the aligned condition token plus a learned residual.
    pub condition_anchor: bool,
    /// Add the aligned condition token's embedding to each target token's input.
    pub condition_injection: bool,
    /// Lower clamp on `t` when converting a clean-sample prediction to a velocity.
    pub min_t: f64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            tokenizer: TokenizerConfig::default(),
            width: 64,
            layers: 4,
            heads: 4,
            mlp_ratio: 4,
            lora_rank: 4,
            lora_alpha: 4.0,
            prompts: vec![h2r_core::datapipe::ROBOT_TEXT_PROMPT.to_string()],
            condition_anchor: true,
            condition_injection: true,
            min_t: 0.05,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.tokenizer.validate()?;
        let mut bad = Vec::new();
        if self.width < 6 || self.width % 2 != 0 {
            bad.push(format!("width {} must be even and at least 6", self.width));
        }
        if self.heads == 0 || self.width % self.heads.max(1) != 0 {
            bad.push(format!("heads {} must divide width {}", self.heads, self.width));
        }
        if self.layers == 0 {
            bad.push("layers must be positive".into());
        }
        if self.mlp_ratio == 0 {
            bad.push("mlp_ratio must be positive".into());
        }
        if self.prompts.is_empty() {
            bad.push("at least one prompt is required".into());
        }
        if !(self.min_t > 0.0 && self.min_t <= 1.0) {
            bad.push(format!("min_t {} must lie in (0, 1]", self.min_t));
        }
        if self.lora_rank > 0 && !self.lora_alpha.is_finite() {
            bad.push("lora_alpha must be finite".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    pub fn lora_scale(&self) -> f64 {
        if self.lora_rank == 0 {
            0.0
        } else {
            self.lora_alpha / self.lora_rank as f64
        }
    }

    pub fn prompt_id(&self, prompt: &str) -> Result<usize> {
        self.prompts
            .iter()
            .position(|p| p == prompt)
            .ok_or_else(|| Error::Contract(format!("prompt {prompt:?} has no embedding")))
    }

    /// Tokens in one forward pass: text, condition and target streams.
    pub fn sequence_len(&self, grid: &LatentGrid) -> usize {
        2 * grid.len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Base,
    Lora,
    Prompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    #[default]
    Full,
    LoraOnly,
}

impl TrainMode {
    pub fn trains(self, role: ParamRole) -> bool {
        match self {
            TrainMode::Full => true,
            TrainMode::LoraOnly => role != ParamRole::Base,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub var: Var,
    pub role: ParamRole,
}

#[derive(Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

/// Deep copy: the clone owns fresh storage, so updating one store never moves the other.
impl Clone for ParamStore {
    fn clone(&self) -> Self {
        let params = self
            .params
            .iter()
            .map(|(n, p)| {
                let var = Var::from_tensor(&p.var.as_tensor().copy().expect("cpu copy")).expect("cpu var");
                (n.clone(), Param { var, role: p.role })
            })
            .collect();
        Self { params }
    }
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, tensor: &Tensor, role: ParamRole) -> Result<()> {
        self.params.insert(name.into(), Param { var: Var::from_tensor(tensor)?, role });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params.get(name).ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self, role: ParamRole) -> Vec<String> {
        self.params.iter().filter(|(_, p)| p.role == role).map(|(n, _)| n.clone()).collect()
    }

    /// Order-sensitive hash of the exact bits of every parameter with `role`.
    pub fn checksum(&self, role: ParamRole) -> Result<u64> {
        let mut h = DefaultHasher::new();
        for (name, p) in self.params.iter().filter(|(_, p)| p.role == role) {
            h.write(name.as_bytes());
            for v in p.var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
                h.write_u64(v.to_bits());
            }
        }
        Ok(h.finish())
    }
}

/// How parameters enter a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Parameters whose role this mode trains are tracked for gradients; `None` tracks nothing.
    pub grad: Option<TrainMode>,
    /// Include the LoRA update on Q/K/V.
    pub lora: bool,
}

impl ForwardOptions {
    pub const INFERENCE: ForwardOptions = ForwardOptions { grad: None, lora: true };

    pub fn train(mode: TrainMode) -> Self {
        Self { grad: Some(mode), lora: true }
    }
}

/// Condition stream plus the text prompt, one per batch item.
#[derive(Debug, Clone)]
pub struct Conditioning {
    /// `[B, N_c, C]` clean condition latents.
    pub tokens: Tensor,
    /// Grid position id of each condition token.
    pub positions: Vec<usize>,
    pub grid: LatentGrid,
    pub prompt_ids: Vec<usize>,
}

impl Conditioning {
    pub fn new(tokens: Tensor, grid: LatentGrid, prompt_ids: Vec<usize>) -> Self {
        Self { tokens, positions: (0..grid.len()).collect(), grid, prompt_ids }
    }
}

/// Anything that maps `(z_t, t, condition)` to a velocity of the same shape as `z_t`.
pub trait VelocityField {
    fn velocity(&self, z_t: &Tensor, t: &Tensor, cond: &Conditioning) -> Result<Tensor>;
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub config: ModelConfig,
    pub params: ParamStore,
    device: Device,
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64, device: &Device, dtype: DType) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng)).collect::<Vec<f64>>();
    Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?)
}

impl Generator {
    /// Fresh parameters drawn from `seed`. LoRA `B` factors start at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let dt = config.precision.dtype();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, c, r) = (config.width, config.tokenizer.channels(), config.lora_rank);
        let hidden = d * config.mlp_ratio;
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        let resid = inv(2 * config.layers);
        let mut ps = ParamStore::default();
        let zeros = |shape: &[usize]| Tensor::zeros(shape, dt, &device);
        let ones = |shape: &[usize]| Tensor::ones(shape, dt, &device);
        use ParamRole::*;
        ps.insert("base.in_proj.w", &normal(&mut rng, &[c, d], inv(c), &device, dt)?, Base)?;
        ps.insert("base.in_proj.b", &zeros(&[d])?, Base)?;
        ps.insert("base.role", &normal(&mut rng, &[3, d], 0.5, &device, dt)?, Base)?;
        if config.condition_injection {
            ps.insert("base.cond_in.w", &normal(&mut rng, &[c, d], inv(c), &device, dt)?, Base)?;
            ps.insert("base.cond_in.b", &zeros(&[d])?, Base)?;
        }
        ps.insert("base.time.w1", &normal(&mut rng, &[d, d], inv(d), &device, dt)?, Base)?;
        ps.insert("base.time.b1", &zeros(&[d])?, Base)?;
        ps.insert("base.time.w2", &normal(&mut rng, &[d, d], inv(d), &device, dt)?, Base)?;
        ps.insert("base.time.b2", &zeros(&[d])?, Base)?;
        for l in 0..config.layers {
            let p = format!("base.blocks.{l}");
            ps.insert(format!("{p}.ln1.g"), &ones(&[d])?, Base)?;
            ps.insert(format!("{p}.ln1.b"), &zeros(&[d])?, Base)?;
            for proj in ["q", "k", "v"] {
                ps.insert(format!("{p}.attn.{proj}.w"), &normal(&mut rng, &[d, d], inv(d), &device, dt)?, Base)?;
                ps.insert(format!("{p}.attn.{proj}.b"), &zeros(&[d])?, Base)?;
                if r > 0 {
                    let lp = format!("lora.blocks.{l}.{proj}");
                    ps.insert(format!("{lp}.a"), &normal(&mut rng, &[d, r], inv(d), &device, dt)?, Lora)?;
                    ps.insert(format!("{lp}.b"), &zeros(&[r, d])?, Lora)?;
                }
            }
            ps.insert(format!("{p}.attn.o.w"), &normal(&mut rng, &[d, d], inv(d) * resid, &device, dt)?, Base)?;
            ps.insert(format!("{p}.attn.o.b"), &zeros(&[d])?, Base)?;
            ps.insert(format!("{p}.ln2.g"), &ones(&[d])?, Base)?;
            ps.insert(format!("{p}.ln2.b"), &zeros(&[d])?, Base)?;
            ps.insert(format!("{p}.mlp.w1"), &normal(&mut rng, &[d, hidden], inv(d), &device, dt)?, Base)?;
            ps.insert(format!("{p}.mlp.b1"), &zeros(&[hidden])?, Base)?;
            ps.insert(format!("{p}.mlp.w2"), &normal(&mut rng, &[hidden, d], inv(hidden) * resid, &device, dt)?, Base)?;
            ps.insert(format!("{p}.mlp.b2"), &zeros(&[d])?, Base)?;
        }
        ps.insert("base.ln_f.g", &ones(&[d])?, Base)?;
        ps.insert("base.ln_f.b", &zeros(&[d])?, Base)?;
        ps.insert("base.head.w", &normal(&mut rng, &[d, c], 0.1 * inv(d), &device, dt)?, Base)?;
        ps.insert("base.head.b", &zeros(&[c])?, Base)?;
        ps.insert("prompt.table", &normal(&mut rng, &[config.prompts.len(), d], 0.5, &device, dt)?, Prompt)?;
        Ok(Self { config, params: ps, device })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let reference = Generator::new(config.clone(), 0)?;
        for (name, p) in reference.params.iter() {
            let got = params.get(name)?;
            if got.role != p.role || got.var.shape() != p.var.shape() || got.var.dtype() != p.var.dtype() {
                return Err(Error::Contract(format!(
                    "parameter {name}: {:?} {:?} {:?} does not match config ({:?} {:?} {:?})",
                    got.role,
                    got.var.shape(),
                    got.var.dtype(),
                    p.role,
                    p.var.shape(),
                    p.var.dtype()
                )));
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::Contract(format!(
                "{} parameters given, config defines {}",
                params.len(),
                reference.params.len()
            )));
        }
        Ok(Self { config, params, device: Device::Cpu })
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.config.precision.dtype()
    }

    fn p(&self, name: &str, opts: ForwardOptions) -> Result<Tensor> {
        let p = self.params.get(name)?;
        Ok(match opts.grad {
            Some(mode) if mode.trains(p.role) => p.var.as_tensor().clone(),
            _ => p.var.as_detached_tensor(),
        })
    }

    fn linear(&self, x: &Tensor, w: &str, b: &str, opts: ForwardOptions) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.p(w, opts)?)?.broadcast_add(&self.p(b, opts)?)?)
    }

    fn qkv(&self, x: &Tensor, layer: usize, proj: &str, opts: ForwardOptions) -> Result<Tensor> {
        let base = format!("base.blocks.{layer}.attn.{proj}");
        let y = self.linear(x, &format!("{base}.w"), &format!("{base}.b"), opts)?;
        if !opts.lora || self.config.lora_rank == 0 {
            return Ok(y);
        }
        let lp = format!("lora.blocks.{layer}.{proj}");
        let delta = x.broadcast_matmul(&self.p(&format!("{lp}.a"), opts)?)?.broadcast_matmul(&self.p(&format!("{lp}.b"), opts)?)?;
        Ok((y + (delta * self.config.lora_scale())?)?)
    }

    fn block(&self, h: &Tensor, l: usize, opts: ForwardOptions) -> Result<Tensor> {
        let (b, s, d) = h.dims3()?;
        let heads = self.config.heads;
        let dh = d / heads;
        let pre = format!("base.blocks.{l}");
        let x = layer_norm(h, &self.p(&format!("{pre}.ln1.g"), opts)?, &self.p(&format!("{pre}.ln1.b"), opts)?, LN_EPS)?;
        let split = |t: Tensor| -> Result<Tensor> { Ok(t.reshape((b, s, heads, dh))?.transpose(1, 2)?.contiguous()?) };
        let q = split(self.qkv(&x, l, "q", opts)?)?;
        let k = split(self.qkv(&x, l, "k", opts)?)?;
        let v = split(self.qkv(&x, l, "v", opts)?)?;
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * (1.0 / (dh as f64).sqrt()))?;
        let attn = softmax_last_dim(&scores)?.matmul(&v)?;
        let attn = attn.transpose(1, 2)?.reshape((b, s, d))?;
        let h = (h + self.linear(&attn, &format!("{pre}.attn.o.w"), &format!("{pre}.attn.o.b"), opts)?)?;
        let x = layer_norm(&h, &self.p(&format!("{pre}.ln2.g"), opts)?, &self.p(&format!("{pre}.ln2.b"), opts)?, LN_EPS)?;
        let m = self.linear(&x, &format!("{pre}.mlp.w1"), &format!("{pre}.mlp.b1"), opts)?.gelu()?;
        Ok((h + self.linear(&m, &format!("{pre}.mlp.w2"), &format!("{pre}.mlp.b2"), opts)?)?)
    }

    fn position_table(&self, grid: &LatentGrid, ids: &[usize]) -> Result<Tensor> {
        let d = self.config.width;
        let mut v = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= grid.len() {
                return Err(Error::Contract(format!("position id {i} outside grid of {} tokens", grid.len())));
            }
            let (t, y, x) = grid.coords(i);
            v.extend(position_features(t, y, x, d));
        }
        Ok(Tensor::from_vec(v, (ids.len(), d), &self.device)?.to_dtype(self.dtype())?)
    }

    fn time_embedding(&self, t: &Tensor, opts: ForwardOptions) -> Result<Tensor> {
        let d = self.config.width;
        let ts: Vec<f64> = t.to_dtype(DType::F64)?.to_vec1()?;
        let feats: Vec<f64> = ts.iter().flat_map(|&t| sinusoid(t * TIME_SCALE, d)).collect();
        let f = Tensor::from_vec(feats, (ts.len(), d), &self.device)?.to_dtype(self.dtype())?;
        let h = self.linear(&f, "base.time.w1", "base.time.b1", opts)?.silu()?;
        self.linear(&h, "base.time.w2", "base.time.b2", opts)
    }

    fn role(&self, i: usize, opts: ForwardOptions) -> Result<Tensor> {
        Ok(self.p("base.role", opts)?.narrow(0, i, 1)?)
    }

    /// Text token for each prompt id, `[B, 1, d]`.
    pub fn text_tokens(&self, prompt_ids: &[usize], opts: ForwardOptions) -> Result<Tensor> {
        let n = self.config.prompts.len();
        if let Some(&bad) = prompt_ids.iter().find(|&&i| i >= n) {
            return Err(Error::Contract(format!("prompt id {bad} outside table of {n}")));
        }
        let ids = Tensor::from_vec(prompt_ids.iter().map(|&i| i as u32).collect::<Vec<_>>(), prompt_ids.len(), &self.device)?;
        let t = self.p("prompt.table", opts)?.index_select(&ids, 0)?;
        Ok(t.broadcast_add(&self.role(ROLE_TEXT, opts)?)?.unsqueeze(1)?)
    }

    /// Velocity for target tokens `z_t` (`[B, N, C]`, grid order) at times `t` (`[B]`).
    pub fn forward(&self, z_t: &Tensor, t: &Tensor, cond: &Conditioning, opts: ForwardOptions) -> Result<Tensor> {
        let (b, n, c) = z_t.dims3()?;
        let (cb, nc, cc) = cond.tokens.dims3()?;
        let channels = self.config.tokenizer.channels();
        if c != channels || cc != channels {
            return Err(Error::Contract(format!("token channels {c}/{cc}, model expects {channels}")));
        }
        if cb != b || t.dims() != [b] || cond.prompt_ids.len() != b {
            return Err(Error::Contract(format!(
                "batch sizes disagree: target {b}, condition {cb}, t {:?}, prompts {}",
                t.dims(),
                cond.prompt_ids.len()
            )));
        }
        if n != cond.grid.len() || cond.positions.len() != nc {
            return Err(Error::Contract(format!(
                "target has {n} tokens for a grid of {}; condition has {nc} tokens and {} positions",
                cond.grid.len(),
                cond.positions.len()
            )));
        }
        let target_ids: Vec<usize> = (0..n).collect();
        let aligned = if self.config.condition_anchor || self.config.condition_injection {
            Some(self.aligned_condition(cond, n)?)
        } else {
            None
        };
        let xc = self
            .linear(&cond.tokens, "base.in_proj.w", "base.in_proj.b", opts)?
            .broadcast_add(&self.position_table(&cond.grid, &cond.positions)?)?
            .broadcast_add(&self.role(ROLE_CONDITION, opts)?)?;
        let xt = self
            .linear(z_t, "base.in_proj.w", "base.in_proj.b", opts)?
            .broadcast_add(&self.position_table(&cond.grid, &target_ids)?)?
            .broadcast_add(&self.role(ROLE_TARGET, opts)?)?
            .broadcast_add(&self.time_embedding(t, opts)?.unsqueeze(1)?)?;
        let xt = match (&aligned, self.config.condition_injection) {
            (Some(a), true) => (xt + self.linear(a, "base.cond_in.w", "base.cond_in.b", opts)?)?,
            _ => xt,
        };
        let text = self.text_tokens(&cond.prompt_ids, opts)?;
        let mut h = Tensor::cat(&[&text, &xc, &xt], 1)?;
        for l in 0..self.config.layers {
            h = self.block(&h, l, opts)?;
        }
        let h = layer_norm(&h.narrow(1, 1 + nc, n)?, &self.p("base.ln_f.g", opts)?, &self.p("base.ln_f.b", opts)?, LN_EPS)?;
        let mut x0 = self.linear(&h, "base.head.w", "base.head.b", opts)?;
        if let Some(aligned) = &aligned {
            if self.config.condition_anchor {
                x0 = (x0 + aligned)?;
            }
        }
        let scale = t.maximum(self.config.min_t)?.reshape((b, 1, 1))?;
        Ok((z_t - x0)?.broadcast_div(&scale)?)
    }

    /// Condition token at each target position, `[B, n, C]`.
    fn aligned_condition(&self, cond: &Conditioning, n: usize) -> Result<Tensor> {
        let mut idx = vec![u32::MAX; n];
        for (j, &p) in cond.positions.iter().enumerate() {
            if p < n {
                idx[p] = j as u32;
            }
        }
        if let Some(missing) = idx.iter().position(|&i| i == u32::MAX) {
            return Err(Error::Contract(format!("no condition token at position {missing} to align with")));
        }
        let idx = Tensor::from_vec(idx, n, &self.device)?;
        Ok(cond.tokens.index_select(&idx, 1)?)
    }

    pub fn field(&self, opts: ForwardOptions) -> GeneratorField<'_> {
        GeneratorField { generator: self, opts }
    }

    /// Sum of squares of all parameters, for diagnostics.
    pub fn param_norm(&self) -> Result<f64> {
        let mut s = 0.0;
        for (_, p) in self.params.iter() {
            s += p.var.as_tensor().to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
        Ok(s.sqrt())
    }
}

/// A generator bound to forward options.
pub struct GeneratorField<'a> {
    pub generator: &'a Generator,
    pub opts: ForwardOptions,
}

impl VelocityField for GeneratorField<'_> {
    fn velocity(&self, z_t: &Tensor, t: &Tensor, cond: &Conditioning) -> Result<Tensor> {
        self.generator.forward(z_t, t, cond, self.opts)
    }
}
