//! Classical box-prompted segmenter: Otsu threshold, centre-seeded 8-connected
//! component, 3×3 closing.

use crowdseg_core::{BinaryPlane, GrayImage, PixelRect};

/// Crops whose intensity variance is below this return the whole box.
pub const DEGENERATE_VARIANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinOutput {
    pub plane: BinaryPlane,
    /// Otsu separability (between-class over total variance); 1.0 for the
    /// degenerate full-box case.
    pub score: f64,
    pub threshold: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("box {rect:?} does not fit a {width}x{height} image")]
pub struct BoxOutOfBounds {
    pub rect: PixelRect,
    pub width: u32,
    pub height: u32,
}

pub fn histogram(values: &[u8]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in values {
        h[v as usize] += 1;
    }
    h
}

/// Between-class variance ω₀ω₁(μ₀−μ₁)² for the split `value <= t`.
pub fn between_class_variance(hist: &[u64; 256], t: u8) -> f64 {
    let total: u64 = hist.iter().sum();
    let (mut n0, mut s0) = (0u64, 0f64);
    for (v, &c) in hist.iter().enumerate().take(t as usize + 1) {
        n0 += c;
        s0 += c as f64 * v as f64;
    }
    let s: f64 = hist.iter().enumerate().map(|(v, &c)| c as f64 * v as f64).sum();
    let n1 = total - n0;
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let (w0, w1) = (n0 as f64 / total as f64, n1 as f64 / total as f64);
    let (m0, m1) = (s0 / n0 as f64, (s - s0) / n1 as f64);
    w0 * w1 * (m0 - m1) * (m0 - m1)
}

/// Otsu threshold over a 256-bin histogram, single cumulative pass. Returns
/// the smallest `t` maximising between-class variance; `None` if fewer than
/// two intensities occur.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    let sum: f64 = hist.iter().enumerate().map(|(v, &c)| c as f64 * v as f64).sum();
    let (mut n0, mut s0) = (0u64, 0f64);
    let mut best: Option<(u8, f64)> = None;
    for (t, &count) in hist.iter().enumerate().take(255) {
        n0 += count;
        s0 += count as f64 * t as f64;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = s0 / n0 as f64 - (sum - s0) / n1 as f64;
        let var = n0 as f64 * n1 as f64 * diff * diff;
        if best.is_none_or(|(_, b)| var > b) {
            best = Some((t as u8, var));
        }
    }
    best.map(|(t, _)| t)
}

fn crop(image: &GrayImage, r: PixelRect) -> Vec<u8> {
    let mut out = Vec::with_capacity(r.area() as usize);
    for y in r.y0..r.y0 + r.h {
        for x in r.x0..r.x0 + r.w {
            out.push(image.get(x, y));
        }
    }
    out
}

/// Labels of 8-connected components; 0 is unset.
fn components(mask: &[bool], w: usize, h: usize) -> (Vec<u32>, Vec<u64>) {
    let mut labels = vec![0u32; mask.len()];
    let mut sizes = vec![0u64];
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        sizes.push(0);
        labels[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            sizes[id as usize] += 1;
            let (x, y) = ((p % w) as i64, (p / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask[q] && labels[q] == 0 {
                        labels[q] = id;
                        stack.push(q);
                    }
                }
            }
        }
    }
    (labels, sizes)
}

/// 3×3 window test; cells past the canvas count as unset.
fn window(mask: &[bool], w: usize, h: usize, x: usize, y: usize, all: bool) -> bool {
    let (x, y) = (x as i64, y as i64);
    let mut hits = 0;
    for ny in y - 1..=y + 1 {
        for nx in x - 1..=x + 1 {
            if nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 && mask[ny as usize * w + nx as usize] {
                hits += 1;
            }
        }
    }
    if all {
        hits == 9
    } else {
        hits > 0
    }
}

/// 3×3 closing inside a one-pixel background frame, so shapes touching the
/// box edge are not eroded away and nothing leaks outside the box.
fn close(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let (pw, ph) = (w + 2, h + 2);
    let mut padded = vec![false; pw * ph];
    for y in 0..h {
        padded[(y + 1) * pw + 1..(y + 1) * pw + 1 + w].copy_from_slice(&mask[y * w..(y + 1) * w]);
    }
    let dilated: Vec<bool> = (0..pw * ph).map(|p| window(&padded, pw, ph, p % pw, p / pw, false)).collect();
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = window(&dilated, pw, ph, x + 1, y + 1, true);
        }
    }
    out
}

pub fn builtin_predict(image: &GrayImage, rect: PixelRect) -> Result<BuiltinOutput, BoxOutOfBounds> {
    let (iw, ih) = image.dims();
    if !rect.fits_in(iw, ih) {
        return Err(BoxOutOfBounds { rect, width: iw, height: ih });
    }
    let (w, h) = (rect.w as usize, rect.h as usize);
    let values = crop(image, rect);
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let variance = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;

    let (local, score, threshold) = if variance < DEGENERATE_VARIANCE {
        (vec![true; w * h], 1.0, None)
    } else {
        let hist = histogram(&values);
        let t = otsu_threshold(&hist).expect("non-zero variance has two intensities");
        let centre = (h / 2) * w + w / 2;
        let bright = values[centre] > t;
        let side: Vec<bool> = values.iter().map(|&v| (v > t) == bright).collect();
        let (labels, sizes) = components(&side, w, h);
        let keep = if labels[centre] != 0 {
            labels[centre]
        } else {
            (1..sizes.len()).max_by_key(|&i| (sizes[i], std::cmp::Reverse(i))).unwrap_or(0) as u32
        };
        let cc: Vec<bool> = labels.iter().map(|&l| l != 0 && l == keep).collect();
        (close(&cc, w, h), between_class_variance(&hist, t) / variance, Some(t))
    };

    let mut plane = BinaryPlane::empty(iw, ih);
    for y in 0..h {
        for x in 0..w {
            if local[y * w + x] {
                plane.set(rect.x0 + x as u32, rect.y0 + y as u32, true);
            }
        }
    }
    Ok(BuiltinOutput { plane, score: score.clamp(0.0, 1.0), threshold })
}
