//! Exactly invertible spatio-temporal patch rearrangement.
//!
//! Frame 0 forms the first latent slot on its own (replicated to fill the
//! temporal group); every following group of `temporal` frames forms one slot.
//! Each `patch × patch` tile of a slot becomes one token.

use h2r_core::VideoArray;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub patch: usize,
    pub temporal: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { patch: 8, temporal: 4 }
    }
}

/// Shape of the latent token grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentGrid {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl LatentGrid {
    pub fn len(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(t, y, x)` of token `i` in row-major order.
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        (i / (self.h * self.w), (i / self.w) % self.h, i % self.w)
    }
}

/// Row-major `[tokens, channels]` latent values.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTokens {
    pub grid: LatentGrid,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl LatentTokens {
    pub fn token(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.temporal == 0 {
            return Err(Error::Config("patch and temporal factor must be positive".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.temporal * self.patch * self.patch * 3
    }

    pub fn latent_frames(&self, frames: usize) -> Result<usize> {
        if frames == 0 || (frames - 1) % self.temporal != 0 {
            return Err(Error::Contract(format!(
                "frame count {frames} must be 1 mod {}",
                self.temporal
            )));
        }
        Ok(1 + (frames - 1) / self.temporal)
    }

    pub fn grid(&self, frames: usize, height: usize, width: usize) -> Result<LatentGrid> {
        let t = self.latent_frames(frames)?;
        for (name, v) in [("height", height), ("width", width)] {
            if v == 0 || v % self.patch != 0 {
                return Err(Error::Contract(format!("{name} {v} is not a positive multiple of patch size {}", self.patch)));
            }
        }
        Ok(LatentGrid { t, h: height / self.patch, w: width / self.patch })
    }

    /// Source frame for temporal slot `s` of latent frame `lt`.
    fn source_frame(&self, lt: usize, s: usize) -> usize {
        if lt == 0 {
            0
        } else {
            1 + (lt - 1) * self.temporal + s
        }
    }

    pub fn encode(&self, video: &VideoArray) -> Result<LatentTokens> {
        let (n, h, w) = video.shape();
        let grid = self.grid(n, h, w)?;
        let (p, c) = (self.patch, self.channels());
        let mut data = vec![0.0; grid.len() * c];
        for i in 0..grid.len() {
            let (lt, gy, gx) = grid.coords(i);
            let tok = &mut data[i * c..(i + 1) * c];
            let mut k = 0;
            for s in 0..self.temporal {
                let frame = video.frame_slice(self.source_frame(lt, s));
                for py in 0..p {
                    let row = (gy * p + py) * w + gx * p;
                    tok[k..k + p * 3].copy_from_slice(&frame[row * 3..(row + p) * 3]);
                    k += p * 3;
                }
            }
        }
        Ok(LatentTokens { grid, channels: c, data })
    }

    /// Inverse of [`encode`](Self::encode). The replicated copies of frame 0
    /// are averaged, which is exact when they agree.
    pub fn decode(&self, tokens: &LatentTokens) -> Result<VideoArray> {
        let (p, c) = (self.patch, self.channels());
        if tokens.channels != c || tokens.data.len() != tokens.grid.len() * c {
            return Err(Error::Contract(format!(
                "token block of {} values with {} channels does not fit grid {:?} with {c} channels",
                tokens.data.len(),
                tokens.channels,
                tokens.grid
            )));
        }
        let grid = tokens.grid;
        let (h, w) = (grid.h * p, grid.w * p);
        let frames = 1 + (grid.t - 1) * self.temporal;
        let mut video = VideoArray::zeros(frames, h, w);
        let slot = p * p * 3;
        for i in 0..grid.len() {
            let (lt, gy, gx) = grid.coords(i);
            let tok = tokens.token(i);
            let slots: Vec<usize> = if lt == 0 { vec![0] } else { (0..self.temporal).collect() };
            for s in slots {
                let frame = video.frame_slice_mut(self.source_frame(lt, s));
                for py in 0..p {
                    let row = (gy * p + py) * w + gx * p;
                    for j in 0..p * 3 {
                        let off = py * p * 3 + j;
                        frame[row * 3 + j] = if lt == 0 {
                            mean_of_copies(tok, off, slot, self.temporal)
                        } else {
                            tok[s * slot + off]
                        };
                    }
                }
            }
        }
        Ok(video)
    }
}

/// Mean of the `n` replicated copies of one value; a copy that all agree on is returned as is.
fn mean_of_copies(tok: &[f64], off: usize, slot: usize, n: usize) -> f64 {
    let first = tok[off];
    if (1..n).all(|s| tok[s * slot + off] == first) {
        return first;
    }
    (0..n).map(|s| tok[s * slot + off]).sum::<f64>() / n as f64
}
