//! Contact-area estimation: difference imaging against a reference frame,
//! blob segmentation and moment-based ellipse fitting.

mod ellipse;
mod segment;

pub use ellipse::{fit_ellipse, ContactRegion};
pub use segment::{otsu_threshold, segment, Mask, SegmentOptions, ThresholdPolicy, DEFAULT_FIXED_THRESHOLD, MIN_BLOB_AREA, OTSU_FLOOR};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensors::Frame;

/// Per-pixel distance between a frame and its reference, scaled to [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct DiffImage {
    pub height: usize,
    pub width: usize,
    /// Row-major magnitudes.
    pub magnitude: Vec<f32>,
}

impl DiffImage {
    pub fn new(height: usize, width: usize, magnitude: Vec<f32>) -> Result<Self> {
        if magnitude.len() != height * width {
            return Err(Error::Shape(format!(
                "diff image {height}x{width} needs {} values, got {}",
                height * width,
                magnitude.len()
            )));
        }
        Ok(DiffImage {
            height,
            width,
            magnitude,
        })
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.magnitude[row * self.width + col]
    }

    pub fn max(&self) -> f32 {
        self.magnitude.iter().copied().fold(0.0, f32::max)
    }
}

/// Euclidean distance across channels between `frame` and `reference`,
/// divided by the largest possible distance `255 * sqrt(channels)`.
pub fn diff(frame: &Frame, reference: &Frame) -> Result<DiffImage> {
    frame.ensure_same_profile(reference)?;
    let c = frame.channels();
    let scale = 1.0 / (255.0 * (c as f64).sqrt());
    let magnitude = frame
        .pixels()
        .chunks_exact(c)
        .zip(reference.pixels().chunks_exact(c))
        .map(|(a, b)| {
            let sq: f64 = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum();
            (sq.sqrt() * scale) as f32
        })
        .collect();
    DiffImage::new(frame.height(), frame.width(), magnitude)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactEstimate {
    /// Regions by descending area.
    pub regions: Vec<ContactRegion>,
    /// Segments dropped because their pixels were collinear.
    pub skipped_degenerate: usize,
}

/// `diff -> segment -> fit_ellipse`, skipping degenerate segments.
pub fn estimate_contacts(frame: &Frame, reference: &Frame, options: &SegmentOptions) -> Result<ContactEstimate> {
    let d = diff(frame, reference)?;
    let mut out = ContactEstimate::default();
    for mask in segment(&d, options) {
        match fit_ellipse(&mask) {
            Ok(region) => out.regions.push(region),
            Err(Error::DegenerateRegion { .. }) => out.skipped_degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    if out.skipped_degenerate > 0 {
        log::warn!("skipped {} degenerate contact segment(s)", out.skipped_degenerate);
    }
    Ok(out)
}
