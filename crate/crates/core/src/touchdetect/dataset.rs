use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensors::{lookup_profile, FrameHandle};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Debug)]
pub struct TouchSample {
    pub image: FrameHandle,
    /// 0 = no touch, 1 = touch.
    pub label: u8,
    pub device_serial: String,
    pub reference: Option<FrameHandle>,
}

impl TouchSample {
    pub fn profile_name(&self) -> &str {
        &self.image.profile().name
    }

    /// Stratification key: label and device serial.
    pub fn stratum(&self) -> String {
        format!("label={}/serial={}", self.label, self.device_serial)
    }
}

/// One row of `manifest.csv`. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub label: u8,
    pub device_serial: String,
    pub sensor_profile: String,
    #[serde(default)]
    pub reference_path: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TouchDataset {
    samples: Vec<TouchSample>,
}

impl TouchDataset {
    pub fn new(samples: Vec<TouchSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Dataset("a touch dataset needs at least one sample".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.label > 1 {
                return Err(Error::Dataset(format!("sample {i}: label {} is not 0 or 1", s.label)));
            }
            if let Some(r) = &s.reference {
                if !s.image.profile().supports_reference {
                    return Err(Error::Dataset(format!(
                        "sample {i}: profile `{}` does not use reference frames",
                        s.profile_name()
                    )));
                }
                if r.profile().name != s.image.profile().name {
                    return Err(Error::ProfileMismatch {
                        expected: s.image.profile().name.clone(),
                        actual: r.profile().name.clone(),
                    });
                }
            }
        }
        Ok(TouchDataset { samples })
    }

    /// Reads `manifest.csv` from `path`, which may be the file or its directory.
    pub fn load_manifest(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader = csv::Reader::from_path(&file)?;
        let mut samples = Vec::new();
        for row in reader.deserialize() {
            let row: ManifestRow = row?;
            let profile = lookup_profile(&row.sensor_profile)?;
            let handle = |p: &str| FrameHandle::Png {
                path: resolve(&base, p),
                profile: profile.clone(),
            };
            samples.push(TouchSample {
                image: handle(&row.path),
                label: row.label,
                device_serial: row.device_serial.clone(),
                reference: row.reference_path.as_deref().filter(|p| !p.is_empty()).map(handle),
            });
        }
        Self::new(samples)
    }

    pub fn samples(&self) -> &[TouchSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label as usize).collect()
    }

    pub fn strata(&self) -> Vec<String> {
        self.samples.iter().map(TouchSample::stratum).collect()
    }

    /// Distinct profile names, sorted.
    pub fn profiles(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.samples.iter().map(|s| s.profile_name()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// `[no-touch, touch]` counts per device serial.
    pub fn class_counts(&self) -> BTreeMap<String, [usize; 2]> {
        let mut out: BTreeMap<String, [usize; 2]> = BTreeMap::new();
        for s in &self.samples {
            out.entry(s.device_serial.clone()).or_default()[s.label as usize] += 1;
        }
        out
    }

    pub fn has_both_classes(&self) -> bool {
        let mut seen = [false; 2];
        for s in &self.samples {
            seen[s.label as usize] = true;
        }
        seen[0] && seen[1]
    }

    pub fn all_have_references(&self) -> bool {
        self.samples.iter().all(|s| s.reference.is_some())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("sample index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    /// Concatenates datasets in order.
    pub fn union(datasets: &[TouchDataset]) -> Result<Self> {
        Self::new(datasets.iter().flat_map(|d| d.samples.iter().cloned()).collect())
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
