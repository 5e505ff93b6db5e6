use serde::{Deserialize, Serialize};

use super::DiffImage;

/// Threshold used by [`ThresholdPolicy::Fixed`] when none is given.
pub const DEFAULT_FIXED_THRESHOLD: f32 = 0.08;
/// Components smaller than this many pixels are treated as noise.
pub const MIN_BLOB_AREA: usize = 25;
/// Otsu never thresholds below this magnitude, so an untouched noisy frame
/// does not get split into "contact" and "background" noise.
pub const OTSU_FLOOR: f32 = 0.04;

const HISTOGRAM_BINS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    Otsu,
    Fixed(f32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentOptions {
    pub policy: ThresholdPolicy,
    pub min_area: usize,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            policy: ThresholdPolicy::Otsu,
            min_area: MIN_BLOB_AREA,
        }
    }
}

/// One connected set of foreground pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    /// Position in the area-sorted output of [`segment`].
    pub id: usize,
    /// `(row, col)` pixel coordinates.
    pub pixels: Vec<(usize, usize)>,
}

impl Mask {
    pub fn new(id: usize, pixels: Vec<(usize, usize)>) -> Self {
        Mask { id, pixels }
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// Otsu's threshold on a 256-bin histogram over [0, 1], returned as the
/// upper edge of the last background bin.
pub fn otsu_threshold(values: &[f32]) -> f32 {
    let mut hist = [0u64; HISTOGRAM_BINS];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * HISTOGRAM_BINS as f32) as usize).min(HISTOGRAM_BINS - 1);
        hist[b] += 1;
    }
    let total = values.len() as f64;
    let centre = |b: usize| (b as f64 + 0.5) / HISTOGRAM_BINS as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(b, &n)| n as f64 * centre(b)).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let (mut best, mut best_bin) = (-1.0f64, 0usize);
    for (b, &n) in hist.iter().enumerate().take(HISTOGRAM_BINS - 1) {
        w0 += n as f64;
        sum0 += n as f64 * centre(b);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let d = sum0 / w0 - (sum_all - sum0) / w1;
        let between = w0 * w1 * d * d;
        if between > best {
            best = between;
            best_bin = b;
        }
    }
    (best_bin + 1) as f32 / HISTOGRAM_BINS as f32
}

/// Binarizes by `options.policy` (foreground = magnitude above the
/// threshold), labels 8-connected components, drops those smaller than
/// `options.min_area` and returns the rest by descending area.
pub fn segment(diff: &DiffImage, options: &SegmentOptions) -> Vec<Mask> {
    let threshold = match options.policy {
        ThresholdPolicy::Fixed(t) => t,
        ThresholdPolicy::Otsu => otsu_threshold(&diff.magnitude).max(OTSU_FLOOR),
    };
    let (h, w) = (diff.height, diff.width);
    let mut visited: Vec<bool> = diff.magnitude.iter().map(|&v| v.is_nan() || v <= threshold).collect();
    let mut masks = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            pixels.push((r, c));
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if !visited[j] {
                        visited[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if pixels.len() >= options.min_area {
            pixels.sort_unstable();
            masks.push(Mask::new(0, pixels));
        }
    }
    // Stable sort keeps raster order of first pixels among equal areas.
    masks.sort_by_key(|m| std::cmp::Reverse(m.area()));
    for (i, m) in masks.iter_mut().enumerate() {
        m.id = i;
    }
    masks
}
