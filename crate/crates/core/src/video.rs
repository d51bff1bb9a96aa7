//! Dense RGB frame sequences and their on-disk form (one PNG per frame).

use std::fs;
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};

/// A single RGB frame, row-major `H×W×3`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width * 3] }
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// A `T×H×W×3` video with real values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoArray {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl VideoArray {
    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Self { frames, height, width, data: vec![0.0; frames * height * width * 3] }
    }

    pub fn from_data(frames: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * height * width * 3 {
            return Err(Error::Contract(format!(
                "video buffer holds {} values, expected {frames}x{height}x{width}x3",
                data.len()
            )));
        }
        Ok(Self { frames, height, width, data })
    }

    pub fn from_frames(frames: Vec<Frame>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Contract("video needs at least one frame".into()));
        };
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(frames.len() * h * w * 3);
        for (t, f) in frames.iter().enumerate() {
            if f.height != h || f.width != w {
                return Err(Error::Contract(format!(
                    "frame {t} is {}x{}, expected {h}x{w}",
                    f.height, f.width
                )));
            }
            data.extend_from_slice(&f.data);
        }
        Ok(Self { frames: frames.len(), height: h, width: w, data })
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(frames, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn frame_len(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn frame_slice(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_slice_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn frame(&self, t: usize) -> Frame {
        Frame { height: self.height, width: self.width, data: self.frame_slice(t).to_vec() }
    }

    pub fn set_frame(&mut self, t: usize, frame: &Frame) -> Result<()> {
        if frame.height != self.height || frame.width != self.width {
            return Err(Error::Contract(format!(
                "frame is {}x{}, video is {}x{}",
                frame.height, frame.width, self.height, self.width
            )));
        }
        self.frame_slice_mut(t).copy_from_slice(&frame.data);
        Ok(())
    }

    pub fn iter_frames(&self) -> impl Iterator<Item = Frame> + '_ {
        (0..self.frames).map(|t| self.frame(t))
    }

    #[inline]
    pub fn pixel(&self, t: usize, y: usize, x: usize) -> [f64; 3] {
        let i = ((t * self.height + y) * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, t: usize, y: usize, x: usize, rgb: [f64; 3]) {
        let i = ((t * self.height + y) * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &VideoArray) -> bool {
        self.shape() == other.shape()
    }

    /// New video made of the given source frame indices, in order.
    pub fn select_frames(&self, indices: &[usize]) -> VideoArray {
        let n = self.frame_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.frame_slice(i));
        }
        VideoArray { frames: indices.len(), height: self.height, width: self.width, data }
    }

    /// Contiguous window `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> VideoArray {
        let idx: Vec<usize> = (start..start + len).collect();
        self.select_frames(&idx)
    }

    /// Bilinear resize with half-pixel centers. Same-size requests return an exact copy.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> VideoArray {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut out = VideoArray::zeros(self.frames, height, width);
        let taps = |dst: usize, scale: f64, src_len: usize| {
            let c = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let i0 = c.floor() as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, c - i0 as f64)
        };
        for t in 0..self.frames {
            for y in 0..height {
                let (y0, y1, fy) = taps(y, sy, self.height);
                for x in 0..width {
                    let (x0, x1, fx) = taps(x, sx, self.width);
                    let (a, b) = (self.pixel(t, y0, x0), self.pixel(t, y0, x1));
                    let (c, d) = (self.pixel(t, y1, x0), self.pixel(t, y1, x1));
                    let mut px = [0.0; 3];
                    for k in 0..3 {
                        let top = a[k] + (b[k] - a[k]) * fx;
                        let bot = c[k] + (d[k] - c[k]) * fx;
                        px[k] = top + (bot - top) * fy;
                    }
                    out.set_pixel(t, y, x, px);
                }
            }
        }
        out
    }

    /// Snap every value onto the 8-bit grid `k / 255`.
    pub fn quantized_u8(&self) -> VideoArray {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = quantize_u8(*v);
        }
        out
    }

    /// Write frames as `dir/00000.png, dir/00001.png, ...`, quantizing to 8 bits.
    pub fn save_png_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for t in 0..self.frames {
            let mut img = RgbImage::new(self.width as u32, self.height as u32);
            for (i, px) in img.pixels_mut().enumerate() {
                let s = &self.frame_slice(t)[i * 3..i * 3 + 3];
                px.0 = [to_u8(s[0]), to_u8(s[1]), to_u8(s[2])];
            }
            let path = dir.join(frame_file_name(t));
            img.save(&path).map_err(|source| Error::Image { path, source })?;
        }
        Ok(())
    }

    /// Load a numbered PNG directory written by [`VideoArray::save_png_dir`].
    pub fn load_png_dir(dir: &Path) -> Result<VideoArray> {
        let count = count_numbered_pngs(dir)?;
        if count == 0 {
            return Err(Error::Load { path: dir.to_path_buf(), reason: "no frames".into() });
        }
        let mut frames = Vec::with_capacity(count);
        for t in 0..count {
            let path = dir.join(frame_file_name(t));
            if !path.exists() {
                return Err(Error::Load { path, reason: "missing frame".into() });
            }
            let img = image::open(&path)
                .map_err(|source| Error::Image { path: path.clone(), source })?
                .to_rgb8();
            let (w, h) = img.dimensions();
            let data = img.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
            frames.push(Frame { height: h as usize, width: w as usize, data });
        }
        VideoArray::from_frames(frames).map_err(|e| Error::Load {
            path: dir.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

pub fn frame_file_name(t: usize) -> String {
    format!("{t:05}.png")
}

pub(crate) fn count_numbered_pngs(dir: &Path) -> Result<usize> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut n = 0;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.len() == 9 && name.ends_with(".png") && name[..5].bytes().all(|b| b.is_ascii_digit()) {
            n += 1;
        }
    }
    Ok(n)
}

#[inline]
pub fn quantize_u8(v: f64) -> f64 {
    f64::from(to_u8(v)) / 255.0
}

#[inline]
pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// An 8-bit color as a grid-exact `[0, 1]` triple.
pub const fn rgb8(r: u8, g: u8, b: u8) -> [f64; 3] {
    [r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_grid() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = VideoArray::zeros(3, 5, 7);
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x = f64::from((i * 37 % 256) as u8) / 255.0;
        }
        v.save_png_dir(dir.path()).unwrap();
        let back = VideoArray::load_png_dir(dir.path()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn quantize_is_identity_on_grid() {
        for k in 0..=255u8 {
            let x = f64::from(k) / 255.0;
            assert_eq!(quantize_u8(x).to_bits(), x.to_bits());
        }
    }

    #[test]
    fn same_size_resize_is_exact() {
        let mut v = VideoArray::zeros(2, 4, 4);
        v.set_pixel(1, 2, 3, [0.1, 0.2, 0.3]);
        assert_eq!(v.resize_bilinear(4, 4), v);
    }

    #[test]
    fn downsample_constant_stays_constant() {
        let f = Frame::filled(8, 8, [0.25, 0.5, 0.75]);
        let v = VideoArray::from_frames(vec![f]).unwrap();
        let r = v.resize_bilinear(3, 5);
        assert!(r.data().chunks(3).all(|p| (p[0] - 0.25).abs() < 1e-12 && (p[2] - 0.75).abs() < 1e-12));
    }

    #[test]
    fn mismatched_frames_rejected() {
        let err = VideoArray::from_frames(vec![Frame::zeros(2, 2), Frame::zeros(3, 2)]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
