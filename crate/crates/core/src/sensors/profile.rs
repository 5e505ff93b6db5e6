use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Suffix of the single-channel profile derived from an RGB profile.
pub const MONO_SUFFIX: &str = "-mono";

/// How raw frames become model input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    /// (height, width) after resampling.
    pub target_size: (usize, usize),
    /// Per-channel mean of `pixel / 255`, one entry per channel of the live
    /// frame (after grayscale conversion, if any).
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    /// Append the reference frame as extra channels.
    pub concat_reference: bool,
    /// Collapse RGB input to luminance before anything else.
    pub grayscale: bool,
}

impl PreprocessSpec {
    pub fn new(target_size: (usize, usize), channels: usize, concat_reference: bool) -> Self {
        PreprocessSpec {
            target_size,
            mean: vec![0.5; channels],
            std: vec![0.25; channels],
            concat_reference,
            grayscale: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_size.0 == 0 || self.target_size.1 == 0 {
            return Err(Error::InvalidArgument(format!(
                "target size must be positive, got {:?}",
                self.target_size
            )));
        }
        if self.mean.is_empty() || self.mean.len() != self.std.len() {
            return Err(Error::InvalidArgument(format!(
                "normalization needs one mean and std per channel, got {} and {}",
                self.mean.len(),
                self.std.len()
            )));
        }
        if let Some(s) = self.std.iter().find(|s| **s <= 0.0 || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("standard deviations must be positive, got {s}")));
        }
        Ok(())
    }

    /// Channels of the live frame after optional grayscale conversion.
    pub fn frame_channels(&self) -> usize {
        self.mean.len()
    }

    /// Channels of the produced tensor.
    pub fn output_channels(&self) -> usize {
        self.frame_channels() * if self.concat_reference { 2 } else { 1 }
    }

    /// `(channels, height, width)` of the produced tensor.
    pub fn output_shape(&self) -> [usize; 3] {
        [self.output_channels(), self.target_size.0, self.target_size.1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorProfile {
    pub name: String,
    /// (height, width) in pixels.
    pub native_resolution: (usize, usize),
    pub channels: usize,
    pub supports_reference: bool,
    pub default_preprocess: PreprocessSpec,
}

impl SensorProfile {
    pub fn new(name: impl Into<String>, native_resolution: (usize, usize), channels: usize, supports_reference: bool) -> Self {
        SensorProfile {
            name: name.into(),
            native_resolution,
            channels,
            supports_reference,
            default_preprocess: PreprocessSpec::new((64, 64), channels, supports_reference),
        }
    }

    pub fn digit() -> Self {
        SensorProfile::new("digit", (240, 320), 3, true)
    }

    pub fn omnitact() -> Self {
        SensorProfile::new("omnitact", (480, 640), 3, true)
    }

    /// Stored height-first like the others: 960 high, 1280 wide.
    pub fn gelsight() -> Self {
        SensorProfile::new("gelsight", (960, 1280), 3, false)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::InvalidArgument("profile name must not be empty".into()));
        }
        if self.native_resolution.0 == 0 || self.native_resolution.1 == 0 {
            return Err(Error::InvalidArgument(format!(
                "profile {} has non-positive resolution {:?}",
                self.name, self.native_resolution
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "profile {} must have 1 or 3 channels, got {}",
                self.name, self.channels
            )));
        }
        self.default_preprocess.validate()
    }

    pub fn frame_len(&self) -> usize {
        self.native_resolution.0 * self.native_resolution.1 * self.channels
    }

    /// Single-channel twin used for monochromatic lighting.
    pub fn mono(&self) -> Result<SensorProfile> {
        if self.channels != 3 {
            return Err(Error::InvalidArgument(format!("profile {} is already single-channel", self.name)));
        }
        let mut p = self.clone();
        p.name = format!("{}{MONO_SUFFIX}", self.name);
        p.channels = 1;
        p.default_preprocess.mean.truncate(1);
        p.default_preprocess.std.truncate(1);
        Ok(p)
    }
}

fn table() -> &'static RwLock<BTreeMap<String, Arc<SensorProfile>>> {
    static TABLE: OnceLock<RwLock<BTreeMap<String, Arc<SensorProfile>>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let map = [SensorProfile::digit(), SensorProfile::omnitact(), SensorProfile::gelsight()]
            .into_iter()
            .map(|p| (p.name.clone(), Arc::new(p)))
            .collect();
        RwLock::new(map)
    })
}

/// Adds a profile to the process-wide table.
pub fn register_profile(profile: SensorProfile) -> Result<Arc<SensorProfile>> {
    profile.validate()?;
    let mut map = table().write().expect("profile table poisoned");
    if map.contains_key(&profile.name) {
        return Err(Error::DuplicateProfile(profile.name));
    }
    let handle = Arc::new(profile);
    map.insert(handle.name.clone(), handle.clone());
    Ok(handle)
}

/// Looks a profile up by name. `<name>-mono` resolves to the single-channel
/// twin of a registered RGB profile.
pub fn lookup_profile(name: &str) -> Result<Arc<SensorProfile>> {
    if let Some(p) = table().read().expect("profile table poisoned").get(name) {
        return Ok(p.clone());
    }
    if let Some(base) = name.strip_suffix(MONO_SUFFIX) {
        let base = lookup_profile(base)?;
        let mono = base.mono()?;
        let mut map = table().write().expect("profile table poisoned");
        let handle = map.entry(mono.name.clone()).or_insert_with(|| Arc::new(mono));
        return Ok(handle.clone());
    }
    Err(Error::UnknownProfile(name.to_string()))
}

pub fn registered_profiles() -> Vec<String> {
    table().read().expect("profile table poisoned").keys().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_have_documented_geometry() {
        let d = lookup_profile("digit").unwrap();
        assert_eq!((d.native_resolution, d.channels), ((240, 320), 3));
        let o = lookup_profile("omnitact").unwrap();
        assert_eq!((o.native_resolution, o.channels), ((480, 640), 3));
        let g = lookup_profile("gelsight").unwrap();
        assert_eq!((g.native_resolution, g.channels), ((960, 1280), 3));
        assert!(!g.supports_reference && d.supports_reference && o.supports_reference);
    }

    #[test]
    fn duplicates_are_rejected() {
        assert!(matches!(
            register_profile(SensorProfile::digit()),
            Err(Error::DuplicateProfile(_))
        ));
    }

    #[test]
    fn custom_profile_round_trips() {
        let p = SensorProfile::new("unit-test-square", (100, 100), 1, true);
        let h = register_profile(p.clone()).unwrap();
        assert_eq!(*h, p);
        assert_eq!(*lookup_profile("unit-test-square").unwrap(), p);
    }

    #[test]
    fn mono_twin_resolves() {
        let m = lookup_profile("omnitact-mono").unwrap();
        assert_eq!(m.channels, 1);
        assert_eq!(m.native_resolution, (480, 640));
        assert!(lookup_profile("nope-mono").is_err());
        assert!(lookup_profile("unit-test-nothing").is_err());
    }

    #[test]
    fn invalid_profiles_fail_validation() {
        assert!(register_profile(SensorProfile::new("zero", (0, 10), 3, true)).is_err());
        assert!(register_profile(SensorProfile::new("two-channel", (10, 10), 2, true)).is_err());
        let mut p = SensorProfile::new("bad-std", (10, 10), 3, true);
        p.default_preprocess.std[1] = 0.0;
        assert!(p.validate().is_err());
    }
}
