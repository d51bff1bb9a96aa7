//! Flat, non-antialiased rasterization. A pixel `(x, y)` is covered when its
//! center `(x + 0.5, y + 0.5)` lies inside the primitive.

fn clip_range(lo: f64, hi: f64, len: usize) -> Option<(usize, usize)> {
    let a = (lo - 0.5).floor().max(0.0);
    let b = (hi - 0.5).ceil().min(len as f64 - 1.0);
    if a > b || len == 0 {
        return None;
    }
    Some((a as usize, b as usize))
}

pub fn disk(cx: f64, cy: f64, r: f64, width: usize, height: usize, mut plot: impl FnMut(usize, usize)) {
    let (Some((x0, x1)), Some((y0, y1))) = (clip_range(cx - r, cx + r, width), clip_range(cy - r, cy + r, height)) else {
        return;
    };
    let r2 = r * r;
    for y in y0..=y1 {
        let dy = y as f64 + 0.5 - cy;
        for x in x0..=x1 {
            let dx = x as f64 + 0.5 - cx;
            if dx * dx + dy * dy <= r2 {
                plot(x, y);
            }
        }
    }
}

/// Segment `a → b` thickened to `thickness` pixels, with round caps.
pub fn capsule(a: [f64; 2], b: [f64; 2], thickness: f64, width: usize, height: usize, mut plot: impl FnMut(usize, usize)) {
    let hw = thickness * 0.5;
    let (Some((x0, x1)), Some((y0, y1))) = (
        clip_range(a[0].min(b[0]) - hw, a[0].max(b[0]) + hw, width),
        clip_range(a[1].min(b[1]) - hw, a[1].max(b[1]) + hw, height),
    ) else {
        return;
    };
    let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
    let len2 = ex * ex + ey * ey;
    for y in y0..=y1 {
        let py = y as f64 + 0.5;
        for x in x0..=x1 {
            let px = x as f64 + 0.5;
            let s = if len2 > 0.0 { (((px - a[0]) * ex + (py - a[1]) * ey) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (dx, dy) = (px - (a[0] + s * ex), py - (a[1] + s * ey));
            if dx * dx + dy * dy <= hw * hw {
                plot(x, y);
            }
        }
    }
}

pub fn triangle(p: [[f64; 2]; 3], width: usize, height: usize, mut plot: impl FnMut(usize, usize)) {
    let xs = [p[0][0], p[1][0], p[2][0]];
    let ys = [p[0][1], p[1][1], p[2][1]];
    let (Some((x0, x1)), Some((y0, y1))) = (
        clip_range(xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max), width),
        clip_range(ys.iter().cloned().fold(f64::INFINITY, f64::min), ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max), height),
    ) else {
        return;
    };
    let edge = |a: [f64; 2], b: [f64; 2], x: f64, y: f64| (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    let area = edge(p[0], p[1], p[2][0], p[2][1]);
    if area == 0.0 {
        return;
    }
    for y in y0..=y1 {
        let py = y as f64 + 0.5;
        for x in x0..=x1 {
            let px = x as f64 + 0.5;
            let w0 = edge(p[1], p[2], px, py) * area.signum();
            let w1 = edge(p[2], p[0], px, py) * area.signum();
            let w2 = edge(p[0], p[1], px, py) * area.signum();
            if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                plot(x, y);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(f: impl FnOnce(&mut dyn FnMut(usize, usize))) -> usize {
        let mut n = 0;
        f(&mut |_, _| n += 1);
        n
    }

    #[test]
    fn disk_matches_enumeration() {
        for &(cx, cy, r) in &[(10.0, 10.0, 3.0), (10.3, 9.7, 2.5), (0.2, 0.1, 3.0)] {
            let got = count(|p| disk(cx, cy, r, 20, 20, p));
            let mut want = 0;
            for y in 0..20 {
                for x in 0..20 {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if dx * dx + dy * dy <= r * r {
                        want += 1;
                    }
                }
            }
            assert_eq!(got, want, "disk at ({cx},{cy}) r={r}");
        }
    }

    #[test]
    fn offscreen_primitives_draw_nothing() {
        assert_eq!(count(|p| disk(-10.0, -10.0, 3.0, 8, 8, p)), 0);
        assert_eq!(count(|p| capsule([-9.0, -9.0], [-5.0, -5.0], 2.0, 8, 8, p)), 0);
        assert_eq!(count(|p| triangle([[20.0, 20.0], [25.0, 20.0], [20.0, 25.0]], 8, 8, p)), 0);
    }

    #[test]
    fn horizontal_capsule_covers_row() {
        let mut hits = vec![];
        capsule([1.5, 3.5], [6.5, 3.5], 1.0, 8, 8, |x, y| hits.push((x, y)));
        assert!(hits.iter().all(|&(_, y)| y == 3));
        assert_eq!(hits.len(), 6);
    }
}
