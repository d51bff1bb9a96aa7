use std::fs;
use std::path::Path;

use image::GrayImage;

use crate::error::{Error, Result};
use crate::video::{count_numbered_pngs, frame_file_name};

/// Per-frame boolean rasters aligned with a video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSequence {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl MaskSequence {
    pub fn empty(frames: usize, height: usize, width: usize) -> Self {
        Self { frames, height, width, data: vec![false; frames * height * width] }
    }

    pub fn from_data(frames: usize, height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != frames * height * width {
            return Err(Error::Contract(format!(
                "mask buffer holds {} values, expected {frames}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self { frames, height, width, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize) -> bool {
        self.data[(t * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, t: usize, y: usize, x: usize, v: bool) {
        self.data[(t * self.height + y) * self.width + x] = v;
    }

    pub fn frame_slice(&self, t: usize) -> &[bool] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_slice_mut(&mut self, t: usize) -> &mut [bool] {
        let n = self.height * self.width;
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn count(&self, t: usize) -> usize {
        self.frame_slice(t).iter().filter(|&&b| b).count()
    }

    pub fn total(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Grow every set pixel into a Euclidean disk of `radius` pixels.
    pub fn dilate(&self, radius: usize) -> MaskSequence {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as isize;
        let offsets: Vec<(isize, isize)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
            .filter(|(dy, dx)| dy * dy + dx * dx <= r * r)
            .collect();
        let mut out = MaskSequence::empty(self.frames, self.height, self.width);
        let (h, w) = (self.height as isize, self.width as isize);
        for t in 0..self.frames {
            for y in 0..h {
                for x in 0..w {
                    if !self.get(t, y as usize, x as usize) {
                        continue;
                    }
                    for &(dy, dx) in &offsets {
                        let (yy, xx) = (y + dy, x + dx);
                        if yy >= 0 && yy < h && xx >= 0 && xx < w {
                            out.set(t, yy as usize, xx as usize, true);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn union(&self, other: &MaskSequence) -> Result<MaskSequence> {
        if self.shape() != other.shape() {
            return Err(Error::Contract(format!(
                "mask shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect();
        Ok(MaskSequence { data, ..*self })
    }

    pub fn select_frames(&self, indices: &[usize]) -> MaskSequence {
        let mut data = Vec::with_capacity(indices.len() * self.height * self.width);
        for &i in indices {
            data.extend_from_slice(self.frame_slice(i));
        }
        MaskSequence { frames: indices.len(), height: self.height, width: self.width, data }
    }

    pub fn window(&self, start: usize, len: usize) -> MaskSequence {
        let idx: Vec<usize> = (start..start + len).collect();
        self.select_frames(&idx)
    }

    /// Nearest-neighbor resize (pixel centers).
    pub fn resize_nearest(&self, height: usize, width: usize) -> MaskSequence {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = MaskSequence::empty(self.frames, height, width);
        for t in 0..self.frames {
            for y in 0..height {
                let sy = (((y as f64 + 0.5) * self.height as f64 / height as f64) as usize).min(self.height - 1);
                for x in 0..width {
                    let sx = (((x as f64 + 0.5) * self.width as f64 / width as f64) as usize).min(self.width - 1);
                    out.set(t, y, x, self.get(t, sy, sx));
                }
            }
        }
        out
    }

    pub fn save_png_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for t in 0..self.frames {
            let raw = self.frame_slice(t).iter().map(|&b| if b { 255 } else { 0 }).collect();
            let img = GrayImage::from_raw(self.width as u32, self.height as u32, raw)
                .expect("buffer sized from mask dims");
            let path = dir.join(frame_file_name(t));
            img.save(&path).map_err(|source| Error::Image { path, source })?;
        }
        Ok(())
    }

    pub fn load_png_dir(dir: &Path) -> Result<MaskSequence> {
        let count = count_numbered_pngs(dir)?;
        let mut data = Vec::new();
        let (mut h, mut w) = (0, 0);
        for t in 0..count {
            let path = dir.join(frame_file_name(t));
            let img = image::open(&path)
                .map_err(|source| Error::Image { path: path.clone(), source })?
                .to_luma8();
            let (iw, ih) = img.dimensions();
            if t == 0 {
                (h, w) = (ih as usize, iw as usize);
            } else if (ih as usize, iw as usize) != (h, w) {
                return Err(Error::Load { path, reason: "mask frame size mismatch".into() });
            }
            data.extend(img.as_raw().iter().map(|&b| b >= 128));
        }
        if count == 0 {
            return Err(Error::Load { path: dir.to_path_buf(), reason: "no mask frames".into() });
        }
        MaskSequence::from_data(count, h, w, data)
    }
}
