use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::segment::Mask;
use crate::error::{Error, Result};

/// Equivalent ellipse of one contact blob, in pixel units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactRegion {
    pub centroid_row: f64,
    pub centroid_col: f64,
    /// Semi-major axis `a = 2 sqrt(lambda_max)`.
    pub semi_major: f64,
    /// Semi-minor axis `b = 2 sqrt(lambda_min)`.
    pub semi_minor: f64,
    /// Angle of the major axis from the column axis towards increasing rows,
    /// in `[0, pi)`.
    pub orientation: f64,
    pub area: usize,
    pub mask_id: usize,
}

/// Second-moment ellipse of the mask. A solid disk of radius `r` maps to
/// `a = b = r`.
pub fn fit_ellipse(mask: &Mask) -> Result<ContactRegion> {
    let n = mask.area();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot fit an ellipse to an empty mask".into()));
    }
    let m00 = n as f64;
    let (m10, m01) = mask
        .pixels
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &(r, c)| (sx + c as f64, sy + r as f64));
    let (cx, cy) = (m10 / m00, m01 / m00);
    let (mut mu20, mut mu02, mut mu11) = (0.0, 0.0, 0.0);
    for &(r, c) in &mask.pixels {
        let (dx, dy) = (c as f64 - cx, r as f64 - cy);
        mu20 += dx * dx;
        mu02 += dy * dy;
        mu11 += dx * dy;
    }
    let (mu20, mu02, mu11) = (mu20 / m00, mu02 / m00, mu11 / m00);
    let half_trace = 0.5 * (mu20 + mu02);
    let spread = (0.25 * (mu20 - mu02).powi(2) + mu11 * mu11).sqrt();
    let (l_max, l_min) = (half_trace + spread, half_trace - spread);
    let semi_major = 2.0 * l_max.max(0.0).sqrt();
    if l_min.is_nan() || l_min <= 1e-12 * l_max.max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateRegion {
            centroid_row: cy,
            centroid_col: cx,
            semi_major,
        });
    }
    let mut theta = 0.5 * (2.0 * mu11).atan2(mu20 - mu02);
    if theta < 0.0 {
        theta += PI;
    }
    if theta >= PI {
        theta -= PI;
    }
    Ok(ContactRegion {
        centroid_row: cy,
        centroid_col: cx,
        semi_major,
        semi_minor: 2.0 * l_min.sqrt(),
        orientation: theta,
        area: n,
        mask_id: mask.id,
    })
}
