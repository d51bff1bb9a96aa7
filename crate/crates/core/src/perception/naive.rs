//! Static-camera inpainting: each masked pixel takes the temporal median of
//! its own unmasked observations; pixels never seen fall back to the nearest
//! unmasked pixel in the same frame, then to the clip-mean color.

use crate::mask::MaskSequence;
use crate::video::VideoArray;

use super::InpaintReport;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        let (a, b) = (values[n / 2 - 1], values[n / 2]);
        if a == b { a } else { 0.5 * (a + b) }
    }
}

pub fn inpaint_temporal_median(video: &VideoArray, mask: &MaskSequence) -> (VideoArray, InpaintReport) {
    let (frames, h, w) = video.shape();
    let mut out = video.clone();
    let mut report = InpaintReport { masked_pixels: mask.total(), ..Default::default() };
    let mut unresolved: Vec<(usize, usize, usize)> = Vec::new();
    let mut samples: [Vec<f64>; 3] = Default::default();

    for y in 0..h {
        for x in 0..w {
            if !(0..frames).any(|t| mask.get(t, y, x)) {
                continue;
            }
            for s in &mut samples {
                s.clear();
            }
            for t in 0..frames {
                if !mask.get(t, y, x) {
                    let p = video.pixel(t, y, x);
                    for k in 0..3 {
                        samples[k].push(p[k]);
                    }
                }
            }
            for t in 0..frames {
                if !mask.get(t, y, x) {
                    continue;
                }
                if samples[0].is_empty() {
                    unresolved.push((t, y, x));
                    continue;
                }
                let px = [median(&mut samples[0]), median(&mut samples[1]), median(&mut samples[2])];
                out.set_pixel(t, y, x, px);
                report.temporal_fills += 1;
            }
        }
    }

    if unresolved.is_empty() {
        return (out, report);
    }

    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for t in 0..frames {
        for y in 0..h {
            for x in 0..w {
                if !mask.get(t, y, x) {
                    let p = video.pixel(t, y, x);
                    (0..3).for_each(|k| sum[k] += p[k]);
                    count += 1;
                }
            }
        }
    }
    let clip_mean = if count > 0 {
        sum.map(|s| s / count as f64)
    } else {
        // Nothing observable at all: average whatever is there.
        let n = (frames * h * w) as f64;
        let mut m = [0.0; 3];
        for p in video.data().chunks(3) {
            (0..3).for_each(|k| m[k] += p[k] / n);
        }
        m
    };

    for (t, y, x) in unresolved {
        match nearest_unmasked(mask, t, y, x) {
            Some((ny, nx)) => {
                out.set_pixel(t, y, x, video.pixel(t, ny, nx));
                report.spatial_fills += 1;
            }
            None => {
                out.set_pixel(t, y, x, clip_mean);
                report.mean_fills += 1;
            }
        }
    }
    (out, report)
}

/// Closest unmasked pixel in frame `t` by Euclidean distance (ties in scan order).
fn nearest_unmasked(mask: &MaskSequence, t: usize, y: usize, x: usize) -> Option<(usize, usize)> {
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let max_r = h.max(w);
    let mut best: Option<(isize, (usize, usize))> = None;
    for r in 1..=max_r {
        if let Some((d2, _)) = best {
            if r * r > d2 {
                break;
            }
        }
        for dy in -r..=r {
            for dx in -r..=r {
                if dy.abs() != r && dx.abs() != r {
                    continue;
                }
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy < 0 || yy >= h || xx < 0 || xx >= w || mask.get(t, yy as usize, xx as usize) {
                    continue;
                }
                let d2 = dy * dy + dx * dx;
                let cand = (yy as usize, xx as usize);
                if best.is_none_or(|(bd, bp)| d2 < bd || (d2 == bd && cand < bp)) {
                    best = Some((d2, cand));
                }
            }
        }
    }
    best.map(|(_, p)| p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut [0.3, 0.3]), 0.3);
    }

    #[test]
    fn fills_from_other_frames() {
        let mut v = VideoArray::zeros(3, 2, 2);
        for t in 0..3 {
            v.set_pixel(t, 0, 0, [0.5, 0.25, 0.125]);
        }
        v.set_pixel(1, 0, 0, [1.0, 1.0, 1.0]);
        let mut m = MaskSequence::empty(3, 2, 2);
        m.set(1, 0, 0, true);
        let (out, rep) = inpaint_temporal_median(&v, &m);
        assert_eq!(out.pixel(1, 0, 0), [0.5, 0.25, 0.125]);
        assert_eq!(rep.temporal_fills, 1);
    }

    #[test]
    fn always_masked_pixel_uses_spatial_neighbor() {
        let mut v = VideoArray::zeros(2, 1, 3);
        for t in 0..2 {
            v.set_pixel(t, 0, 0, [0.2, 0.2, 0.2]);
            v.set_pixel(t, 0, 2, [0.9, 0.9, 0.9]);
        }
        let mut m = MaskSequence::empty(2, 1, 3);
        m.set(0, 0, 1, true);
        m.set(1, 0, 1, true);
        let (out, rep) = inpaint_temporal_median(&v, &m);
        // both neighbors at distance 1; scan order picks the left one
        assert_eq!(out.pixel(0, 0, 1), [0.2, 0.2, 0.2]);
        assert_eq!(rep.spatial_fills, 2);
        assert!(!rep.flagged());
    }

    #[test]
    fn fully_masked_frame_gets_clip_mean_and_flag() {
        let mut v = VideoArray::zeros(2, 1, 2);
        v.set_pixel(0, 0, 0, [0.4, 0.4, 0.4]);
        v.set_pixel(0, 0, 1, [0.6, 0.6, 0.6]);
        let mut m = MaskSequence::empty(2, 1, 2);
        m.set(1, 0, 0, true);
        m.set(1, 0, 1, true);
        m.set(0, 0, 1, true);
        let (out, rep) = inpaint_temporal_median(&v, &m);
        // (1,0,0) has a temporal observation; (1,0,1) has none and no neighbor in frame 1
        assert_eq!(out.pixel(1, 0, 0), [0.4, 0.4, 0.4]);
        assert_eq!(out.pixel(1, 0, 1), [0.4, 0.4, 0.4]);
        assert_eq!(rep.mean_fills, 1);
        assert!(rep.flagged());
    }
}
