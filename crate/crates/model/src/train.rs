//! Seeded, resumable training loop.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use h2r_core::datapipe::{conforming_len, TrainingPair, MAX_CLIP_FRAMES};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::flow::{latents, noise, weighted_flow_matching_loss};
use crate::network::{Conditioning, ForwardOptions, Generator, TrainMode};
use crate::optim::{Adam, AdamConfig};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint.safetensors";

/// Per-sample weight on the velocity error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossWeighting {
    /// Plain velocity MSE.
    #[default]
    Uniform,
    /// Weight `max(t, min_t)^2`, which turns the velocity error of a
    /// clean-sample predictor into its clean-sample error.
    CleanSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub accumulation: usize,
    pub mode: TrainMode,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub max_frames: usize,
    /// `t` is drawn from `U(t_eps, 1 - t_eps)`.
    pub t_eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub weighting: LossWeighting,
    /// Write a numbered checkpoint every this many steps (0: final only).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 4,
            accumulation: 2,
            mode: TrainMode::Full,
            optimizer: AdamConfig::default(),
            seed: 0,
            max_frames: MAX_CLIP_FRAMES,
            t_eps: 1e-3,
            grad_clip: Some(1.0),
            weighting: LossWeighting::Uniform,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.batch_size == 0 {
            bad.push("batch_size must be positive".to_string());
        }
        if self.accumulation == 0 {
            bad.push("accumulation must be positive".to_string());
        }
        if !(self.optimizer.lr > 0.0) {
            bad.push(format!("learning rate {} must be positive", self.optimizer.lr));
        }
        if !(0.0..0.5).contains(&self.t_eps) {
            bad.push(format!("t_eps {} must lie in [0, 0.5)", self.t_eps));
        }
        if self.max_frames == 0 {
            bad.push("max_frames must be positive".to_string());
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            bad.push("grad_clip must be positive".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub t_mean: f64,
}

/// One micro-batch: indicator latents as condition, clip latents as `z_0`.
pub struct MicroBatch {
    pub cond: Conditioning,
    pub z0: Tensor,
    pub z1: Tensor,
    pub t: Tensor,
}

pub struct Trainer {
    pub generator: Generator,
    pub optimizer: Adam,
    pub config: TrainConfig,
    pub step: u64,
    pub last_checkpoint: Option<PathBuf>,
}

impl Trainer {
    pub fn new(generator: Generator, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { generator, optimizer: Adam::new(config.optimizer), config, step: 0, last_checkpoint: None })
    }

    /// Continue from a checkpoint written by [`Trainer::run`]; the given config
    /// replaces the stored one except for the optimizer moments.
    pub fn resume(path: &Path, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let ck = load_checkpoint(path)?;
        let mut optimizer = ck.optimizer.unwrap_or_else(|| Adam::new(config.optimizer));
        optimizer.config = config.optimizer;
        Ok(Self { generator: ck.generator, optimizer, config, step: ck.step, last_checkpoint: Some(path.to_path_buf()) })
    }

    /// Micro-batch `micro` of step `step`, a pure function of the seed.
    pub fn micro_batch(&self, pairs: &[TrainingPair], step: u64, micro: usize) -> Result<MicroBatch> {
        if pairs.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let draw = step * cfg.accumulation as u64 + micro as u64;
        rng.set_stream(draw);
        // Epoch-style order: consecutive draws walk a per-epoch shuffle.
        let n = pairs.len();
        let first = draw as usize * cfg.batch_size;
        let picks: Vec<usize> = (first..first + cfg.batch_size)
            .map(|g| {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ (g / n) as u64 ^ 0x9e37_79b9_7f4a_7c15));
                order[g % n]
            })
            .collect();
        let shortest = picks.iter().map(|&i| pairs[i].frame_count()).min().unwrap();
        let len = conforming_len(shortest.min(cfg.max_frames));
        let mut conds = Vec::new();
        let mut targets = Vec::new();
        let mut prompt_ids = Vec::new();
        for &i in &picks {
            let p = &pairs[i];
            let start = rng.random_range(0..=p.frame_count() - len);
            conds.push(p.h2rep.window(start, len));
            targets.push(p.target.window(start, len));
            prompt_ids.push(self.generator.config.prompt_id(&p.prompt)?);
        }
        let tk = self.generator.config.tokenizer;
        let (dev, dt) = (self.generator.device(), self.generator.dtype());
        let (cond, grid) = latents(&tk, &conds.iter().collect::<Vec<_>>(), dev, dt)?;
        let (z0, _) = latents(&tk, &targets.iter().collect::<Vec<_>>(), dev, dt)?;
        let ts: Vec<f64> = (0..picks.len()).map(|_| rng.random_range(cfg.t_eps..=1.0 - cfg.t_eps)).collect();
        let t = Tensor::from_vec(ts, picks.len(), dev)?.to_dtype(dt)?;
        let z1 = noise(z0.dims(), rng.random(), dev, dt)?;
        Ok(MicroBatch { cond: Conditioning::new(cond, grid, prompt_ids), z0, z1, t })
    }

    /// Accumulated gradients and mean loss for one optimizer step.
    pub fn gradients(&self, pairs: &[TrainingPair], step: u64) -> Result<(BTreeMap<String, Tensor>, f64, f64)> {
        let mode = self.config.mode;
        let field = self.generator.field(ForwardOptions::train(mode));
        let accum = self.config.accumulation;
        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        let (mut loss_sum, mut t_sum) = (0.0, 0.0);
        for micro in 0..accum {
            let mb = self.micro_batch(pairs, step, micro)?;
            let weight = match self.config.weighting {
                LossWeighting::Uniform => None,
                LossWeighting::CleanSample => Some(mb.t.maximum(self.generator.config.min_t)?.sqr()?),
            };
            let loss = weighted_flow_matching_loss(&field, &mb.z0, &mb.z1, &mb.t, &mb.cond, weight.as_ref())?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            let t_mean = mb.t.to_dtype(DType::F64)?.mean_all()?.to_scalar::<f64>()?;
            if !value.is_finite() {
                let latent_norm = mb.z1.to_dtype(DType::F64)?.sqr()?.sum_all()?.sqrt()?.to_scalar::<f64>()?;
                return Err(Error::Numeric { step, t_mean, latent_norm, last_checkpoint: self.last_checkpoint.clone() });
            }
            loss_sum += value;
            t_sum += t_mean;
            let store = (loss / accum as f64)?.backward()?;
            for (name, p) in self.generator.params.iter() {
                if !mode.trains(p.role) {
                    continue;
                }
                if let Some(g) = store.get(p.var.as_tensor()) {
                    let g = g.detach();
                    let acc = match grads.remove(name) {
                        Some(prev) => (prev + g)?,
                        None => g,
                    };
                    grads.insert(name.clone(), acc);
                }
            }
        }
        if let Some(clip) = self.config.grad_clip {
            let mut sq = 0.0;
            for g in grads.values() {
                sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
            }
            let norm = sq.sqrt();
            if norm > clip {
                for g in grads.values_mut() {
                    *g = (&*g * (clip / norm))?;
                }
            }
        }
        Ok((grads, loss_sum / accum as f64, t_sum / accum as f64))
    }

    pub fn train_step(&mut self, pairs: &[TrainingPair]) -> Result<StepLog> {
        let (grads, loss, t_mean) = self.gradients(pairs, self.step)?;
        self.optimizer.apply(&self.generator.params, &grads)?;
        self.step += 1;
        Ok(StepLog { step: self.step, loss, lr: self.optimizer.config.lr, t_mean })
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        let extra = serde_json::to_value(&self.config).expect("train config serializes");
        save_checkpoint(path, &self.generator, Some(&self.optimizer), self.step, self.config.seed, &extra)?;
        self.last_checkpoint = Some(path.to_path_buf());
        Ok(())
    }

    /// Train until `config.steps`, logging each step to `out_dir/train_log.jsonl`
    /// and leaving `out_dir/checkpoint.safetensors` behind.
    pub fn run(&mut self, pairs: &[TrainingPair], out_dir: Option<&Path>) -> Result<Vec<StepLog>> {
        let mut log_file = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(LOG_FILE);
                let f = OpenOptions::new()
                    .create(true)
                    .append(self.step > 0)
                    .write(true)
                    .truncate(self.step == 0)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                Some((path, f))
            }
            None => None,
        };
        let mut logs = Vec::new();
        while self.step < self.config.steps {
            let log = self.train_step(pairs)?;
            tracing::debug!(step = log.step, loss = log.loss, t_mean = log.t_mean, "train step");
            if let Some((path, f)) = log_file.as_mut() {
                let line = serde_json::to_string(&log).expect("log serializes");
                writeln!(f, "{line}").map_err(|e| Error::io(&*path, e))?;
            }
            logs.push(log);
            if let (Some(dir), true) = (out_dir, self.config.checkpoint_every > 0 && self.step % self.config.checkpoint_every == 0) {
                self.save(&dir.join(format!("checkpoint_{:06}.safetensors", self.step)))?;
            }
        }
        if let Some(dir) = out_dir {
            self.save(&dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(logs)
    }
}
