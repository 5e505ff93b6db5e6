use std::path::Path;
use std::sync::Arc;

use super::profile::{lookup_profile, SensorProfile};
use crate::error::{Error, Result};

/// One raw sensor image, row-major `height x width x channels` bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pixels: Vec<u8>,
    profile: Arc<SensorProfile>,
    pub timestamp_ms: Option<u64>,
    pub device_serial: Option<String>,
}

impl Frame {
    pub fn new(profile: Arc<SensorProfile>, pixels: Vec<u8>) -> Result<Frame> {
        let (h, w) = profile.native_resolution;
        if pixels.len() != profile.frame_len() {
            return Err(Error::Shape(format!(
                "{} frame must hold {h}x{w}x{} = {} bytes, got {}",
                profile.name,
                profile.channels,
                profile.frame_len(),
                pixels.len()
            )));
        }
        Ok(Frame {
            pixels,
            profile,
            timestamp_ms: None,
            device_serial: None,
        })
    }

    pub fn filled(profile: Arc<SensorProfile>, value: u8) -> Frame {
        let len = profile.frame_len();
        Frame {
            pixels: vec![value; len],
            profile,
            timestamp_ms: None,
            device_serial: None,
        }
    }

    pub fn with_serial(mut self, serial: impl Into<String>) -> Frame {
        self.device_serial = Some(serial.into());
        self
    }

    pub fn with_timestamp(mut self, ms: u64) -> Frame {
        self.timestamp_ms = Some(ms);
        self
    }

    pub fn profile(&self) -> &Arc<SensorProfile> {
        &self.profile
    }

    pub fn height(&self) -> usize {
        self.profile.native_resolution.0
    }

    pub fn width(&self) -> usize {
        self.profile.native_resolution.1
    }

    pub fn channels(&self) -> usize {
        self.profile.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.pixels[(row * self.width() + col) * self.channels() + channel]
    }

    pub(crate) fn ensure_same_profile(&self, other: &Frame) -> Result<()> {
        if self.profile.name != other.profile.name {
            return Err(Error::ProfileMismatch {
                expected: self.profile.name.clone(),
                actual: other.profile.name.clone(),
            });
        }
        Ok(())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = if self.channels() == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        image::save_buffer_with_format(
            path,
            &self.pixels,
            self.width() as u32,
            self.height() as u32,
            color,
            image::ImageFormat::Png,
        )?;
        Ok(())
    }

    /// Reads a PNG as a frame of `profile`, converting colour layout to the
    /// profile's channel count.
    pub fn load_png(path: &Path, profile: Arc<SensorProfile>) -> Result<Frame> {
        let img = image::open(path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if (h, w) != profile.native_resolution {
            return Err(Error::Shape(format!(
                "{} is {h}x{w}, profile {} expects {:?}",
                path.display(),
                profile.name,
                profile.native_resolution
            )));
        }
        let pixels = if profile.channels == 3 {
            img.into_rgb8().into_raw()
        } else {
            img.into_luma8().into_raw()
        };
        Frame::new(profile, pixels)
    }

    pub fn load_png_named(path: &Path, profile: &str) -> Result<Frame> {
        Frame::load_png(path, lookup_profile(profile)?)
    }
}
