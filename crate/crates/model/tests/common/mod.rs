#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use h2r_core::datapipe::{Split, TrainingPair, ROBOT_TEXT_PROMPT};
use h2r_core::geometry::Pose2D;
use h2r_core::VideoArray;
use h2r_model::flow::latents;
use h2r_model::{Conditioning, Generator, ModelConfig, Precision};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_config(precision: Precision) -> ModelConfig {
    ModelConfig {
        width: 16,
        layers: 2,
        heads: 2,
        mlp_ratio: 2,
        lora_rank: 2,
        lora_alpha: 2.0,
        precision,
        ..Default::default()
    }
}

pub fn random_video(seed: u64, frames: usize, h: usize, w: usize) -> VideoArray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * h * w * 3).map(|_| rng.random::<f64>()).collect();
    VideoArray::from_data(frames, h, w, data).unwrap()
}

/// A pair whose target is a smooth function of the indicator video.
pub fn pair(seed: u64, frames: usize) -> TrainingPair {
    let h2rep = random_video(seed, frames, 16, 16);
    let mut target = h2rep.clone();
    for v in target.data_mut() {
        *v = 0.25 + 0.5 * *v;
    }
    TrainingPair {
        id: format!("p{seed}"),
        h2rep,
        target,
        prompt: ROBOT_TEXT_PROMPT.to_string(),
        source_id: format!("s{seed}"),
        fps: 10.0,
        poses: vec![Pose2D { u: 0.0, v: 0.0, d: [1.0, 0.0], valid: false }; frames],
        camera: None,
        source_seed: Some(seed),
        split: Split::Train,
    }
}

pub struct Batch {
    pub cond: Conditioning,
    pub z0: Tensor,
    pub z1: Tensor,
    pub t: Tensor,
}

pub fn batch(gen: &Generator, seed: u64, b: usize, frames: usize) -> Batch {
    let dt = gen.dtype();
    let conds: Vec<VideoArray> = (0..b as u64).map(|i| random_video(seed * 97 + i, frames, 16, 16)).collect();
    let targets: Vec<VideoArray> = (0..b as u64).map(|i| random_video(seed * 89 + i + 1000, frames, 16, 16)).collect();
    let tk = gen.config.tokenizer;
    let (c, grid) = latents(&tk, &conds.iter().collect::<Vec<_>>(), &Device::Cpu, dt).unwrap();
    let (z0, _) = latents(&tk, &targets.iter().collect::<Vec<_>>(), &Device::Cpu, dt).unwrap();
    let z1 = h2r_model::flow::noise(z0.dims(), seed + 7, &Device::Cpu, dt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts: Vec<f64> = (0..b).map(|_| rng.random_range(0.1..0.9)).collect();
    let t = Tensor::from_vec(ts, b, &Device::Cpu).unwrap().to_dtype(dt).unwrap();
    Batch { cond: Conditioning::new(c, grid, vec![0; b]), z0, z1, t }
}

pub fn to_vec(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    to_vec(a).iter().zip(to_vec(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
