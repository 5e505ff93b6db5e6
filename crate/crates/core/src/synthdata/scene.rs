use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng;
use crate::sensors::{lookup_profile, to_grayscale, Frame, SensorProfile};

/// Press amplitudes drawn by the dataset generators, in 8-bit units.
pub const AMPLITUDE_RANGE: (f32, f32) = (30.0, 150.0);
/// Largest pixel noise the dataset generators use.
pub const MAX_NOISE_SIGMA: f32 = 6.0;

/// Per-channel planar gradient: `base + row_gradient * (r / (h-1) - 1/2)
/// + col_gradient * (c / (w-1) - 1/2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Illumination {
    pub base: [f32; 3],
    pub row_gradient: [f32; 3],
    pub col_gradient: [f32; 3],
}

/// FNV-1a, stable across platforms and releases.
pub(crate) fn name_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Illumination {
    /// Lighting of one device: a per-profile look, shifted per serial.
    pub fn for_device(profile: &str, serial: &str) -> Self {
        let root = profile.trim_end_matches(crate::sensors::MONO_SUFFIX);
        let mut ill = match root {
            "digit" => Illumination {
                base: [90.0, 115.0, 140.0],
                row_gradient: [30.0, -12.0, 6.0],
                col_gradient: [-18.0, 24.0, 10.0],
            },
            "omnitact" => Illumination {
                base: [140.0, 105.0, 85.0],
                row_gradient: [-10.0, 20.0, 25.0],
                col_gradient: [15.0, -8.0, 30.0],
            },
            "gelsight" => Illumination {
                base: [75.0, 85.0, 80.0],
                row_gradient: [12.0, 12.0, -20.0],
                col_gradient: [28.0, -16.0, 4.0],
            },
            other => {
                let mut r = rng::seeded(name_hash(other));
                let mut v = |lo: f32, hi: f32| [r.random_range(lo..hi), r.random_range(lo..hi), r.random_range(lo..hi)];
                Illumination {
                    base: v(70.0, 150.0),
                    row_gradient: v(-30.0, 30.0),
                    col_gradient: v(-30.0, 30.0),
                }
            }
        };
        let mut r = rng::seeded(name_hash(serial) ^ name_hash(root).rotate_left(17));
        for c in 0..3 {
            ill.base[c] += r.random_range(-12.0..12.0);
            ill.row_gradient[c] += r.random_range(-8.0..8.0);
            ill.col_gradient[c] += r.random_range(-8.0..8.0);
        }
        ill
    }
}

/// An elliptical press: a solid ellipse blurred by a Gaussian of width
/// `edge_sigma`, so the half-amplitude contour is the ellipse itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center_row: f64,
    pub center_col: f64,
    pub r_major: f64,
    pub r_minor: f64,
    /// Major-axis angle from the column axis towards increasing rows.
    pub rotation: f64,
    /// Peak intensity change in 8-bit units, before channel gains.
    pub amplitude: f32,
    pub edge_sigma: f64,
}

impl Blob {
    /// Half extents `(rows, cols)` of the ellipse's bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let (a2, b2) = (self.r_major.powi(2), self.r_minor.powi(2));
        ((a2 * s * s + b2 * c * c).sqrt(), (a2 * c * c + b2 * s * s).sqrt())
    }

    pub fn truth(&self) -> BlobTruth {
        BlobTruth {
            center_row: self.center_row,
            center_col: self.center_col,
            r_major: self.r_major,
            r_minor: self.r_minor,
            rotation: self.rotation.rem_euclid(PI),
        }
    }
}

/// Geometry of a rendered press.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobTruth {
    pub center_row: f64,
    pub center_col: f64,
    pub r_major: f64,
    pub r_minor: f64,
    /// In `[0, pi)`.
    pub rotation: f64,
}

/// Surface texture of an object, fixed in the object's own frame so it
/// moves and turns with the press.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub seed: u64,
    /// Relative intensity modulation, in `[0, 1)`.
    pub strength: f32,
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
}

impl Texture {
    fn waves(&self, scale: f64) -> Vec<Wave> {
        let mut r = rng::seeded(self.seed);
        (0..4)
            .map(|_| {
                let wavelength = r.random_range(5.0..14.0) * scale;
                let dir: f64 = r.random_range(0.0..PI);
                let k = 2.0 * PI / wavelength;
                Wave {
                    kx: k * dir.cos(),
                    ky: k * dir.sin(),
                    phase: r.random_range(0.0..2.0 * PI),
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightingMode {
    #[default]
    Rgb,
    /// Rendered in colour, then collapsed to luminance.
    Mono,
}

#[derive(Clone, Debug)]
pub struct SceneConfig {
    /// An RGB profile; Mono output uses its `-mono` sibling.
    pub profile: Arc<SensorProfile>,
    pub illumination: Illumination,
    pub blob: Blob,
    /// Per-channel response to pressure.
    pub gain: [f32; 3],
    pub texture: Option<Texture>,
    /// Pixel noise standard deviation, 8-bit units.
    pub noise_sigma: f32,
    pub lighting: LightingMode,
    pub seed: u64,
}

impl SceneConfig {
    /// Centred mid-sized press on the profile's default lighting.
    pub fn new(profile: Arc<SensorProfile>, serial: &str, seed: u64) -> Self {
        let (h, w) = profile.native_resolution;
        let scale = h.min(w) as f64 / 240.0;
        SceneConfig {
            illumination: Illumination::for_device(&profile.name, serial),
            blob: Blob {
                center_row: (h as f64 - 1.0) / 2.0,
                center_col: (w as f64 - 1.0) / 2.0,
                r_major: 30.0 * scale,
                r_minor: 20.0 * scale,
                rotation: 0.0,
                amplitude: 90.0,
                edge_sigma: 1.5 * scale,
            },
            profile,
            gain: [1.0, 0.8, 0.6],
            texture: None,
            noise_sigma: 2.0,
            lighting: LightingMode::Rgb,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.profile.channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "scenes render on RGB profiles; `{}` has {} channel(s)",
                self.profile.name, self.profile.channels
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        let b = &self.blob;
        if !(b.amplitude.is_finite() && b.edge_sigma > 0.0 && b.r_minor > 0.0 && b.r_minor <= b.r_major) {
            return Err(Error::InvalidArgument(format!("invalid blob geometry {b:?}")));
        }
        Ok(())
    }

    /// Profile of the rendered frames.
    pub fn output_profile(&self) -> Result<Arc<SensorProfile>> {
        match self.lighting {
            LightingMode::Rgb => Ok(self.profile.clone()),
            LightingMode::Mono => {
                let mono = self.profile.mono()?;
                match lookup_profile(&mono.name) {
                    Ok(p) if p.native_resolution == mono.native_resolution => Ok(p),
                    _ => Ok(Arc::new(mono)),
                }
            }
        }
    }

    /// Errors unless the press ellipse lies inside the frame.
    pub fn check_in_bounds(&self, blob: &Blob) -> Result<()> {
        let (h, w) = self.profile.native_resolution;
        let (er, ec) = blob.half_extents();
        let inside = blob.center_row - er >= 0.0
            && blob.center_row + er <= h as f64 - 1.0
            && blob.center_col - ec >= 0.0
            && blob.center_col + ec <= w as f64 - 1.0;
        if inside {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "blob at ({:.1}, {:.1}) with half extents ({er:.1}, {ec:.1}) leaves the {h}x{w} frame",
                blob.center_row, blob.center_col
            )))
        }
    }

    /// Renders the scene with `blob` pressed (or nothing pressed), using
    /// `noise_seed` for the pixel noise.
    pub(crate) fn render(&self, blob: Option<&Blob>, noise_seed: u64, noise_sigma: f32) -> Result<Frame> {
        self.validate()?;
        let (h, w) = self.profile.native_resolution;
        let mut acc = vec![0.0f32; h * w * 3];
        let ill = &self.illumination;
        let (hs, ws) = ((h.max(2) - 1) as f32, (w.max(2) - 1) as f32);
        for r in 0..h {
            let fr = r as f32 / hs - 0.5;
            let row = &mut acc[r * w * 3..(r + 1) * w * 3];
            for c in 0..w {
                let fc = c as f32 / ws - 0.5;
                for ch in 0..3 {
                    row[c * 3 + ch] = ill.base[ch] + ill.row_gradient[ch] * fr + ill.col_gradient[ch] * fc;
                }
            }
        }
        if let Some(b) = blob {
            self.check_in_bounds(b)?;
            self.add_blob(&mut acc, b);
        }
        if noise_sigma > 0.0 {
            let normal = Normal::new(0.0f32, noise_sigma).expect("finite sigma");
            let mut r = rng::seeded(noise_seed);
            for v in acc.iter_mut() {
                *v += normal.sample(&mut r);
            }
        }
        let pixels = acc.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        let frame = Frame::new(self.profile.clone(), pixels)?;
        match self.lighting {
            LightingMode::Rgb => Ok(frame),
            LightingMode::Mono => to_grayscale(&frame),
        }
    }

    fn add_blob(&self, acc: &mut [f32], b: &Blob) {
        let (h, w) = self.profile.native_resolution;
        let (er, ec) = b.half_extents();
        let reach = 4.0 * b.edge_sigma + 1.0;
        let r0 = (b.center_row - er - reach).floor().max(0.0) as usize;
        let r1 = ((b.center_row + er + reach).ceil() as usize).min(h - 1);
        let c0 = (b.center_col - ec - reach).floor().max(0.0) as usize;
        let c1 = ((b.center_col + ec + reach).ceil() as usize).min(w - 1);
        let (sin, cos) = b.rotation.sin_cos();
        let scale = h.min(w) as f64 / 240.0;
        let waves = self.texture.as_ref().map(|t| (t.strength as f64, t.waves(scale)));
        for r in r0..=r1 {
            for c in c0..=c1 {
                let (x, y) = (c as f64 - b.center_col, r as f64 - b.center_row);
                let u = x * cos + y * sin;
                let v = -x * sin + y * cos;
                let rho = ((u / b.r_major).powi(2) + (v / b.r_minor).powi(2)).sqrt();
                // Distance to the ellipse along the ray from its centre.
                let d = if rho < 1e-12 { -b.r_minor } else { (u * u + v * v).sqrt() * (1.0 - 1.0 / rho) };
                let mut value = b.amplitude as f64 * 0.5 * libm::erfc(d / (SQRT_2 * b.edge_sigma));
                if value < 1e-4 {
                    continue;
                }
                if let Some((strength, waves)) = &waves {
                    let t: f64 = waves.iter().map(|wv| (wv.kx * u + wv.ky * v + wv.phase).sin()).sum::<f64>() / 4.0;
                    value *= 1.0 + strength * t;
                }
                for ch in 0..3 {
                    acc[(r * w + c) * 3 + ch] += (value * self.gain[ch] as f64) as f32;
                }
            }
        }
    }

    /// Noise-free, unpressed frame of this device: what averaging many
    /// idle frames converges to.
    pub fn reference_frame(&self) -> Result<Frame> {
        self.render(None, 0, 0.0)
    }
}

/// One frame of the scene, pressed or not, and the press geometry when
/// pressed.
pub fn gen_touch_frame(config: &SceneConfig, pressed: bool) -> Result<(Frame, Option<BlobTruth>)> {
    let blob = pressed.then_some(&config.blob);
    let frame = config.render(blob, config.seed, config.noise_sigma)?;
    Ok((frame, blob.map(Blob::truth)))
}
