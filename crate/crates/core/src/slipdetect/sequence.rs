use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng;
use crate::sensors::{Frame, SensorProfile, SequenceFile};

pub const DEFAULT_SEQUENCE_LENGTH: usize = 128;
pub const SLIP_MANIFEST_FILE: &str = "slip_manifest.csv";

/// Random access to the frames of one recording.
pub trait FrameStore: Send + Sync {
    fn profile(&self) -> &Arc<SensorProfile>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Frame `index`, 0-based.
    fn frame(&self, index: usize) -> Result<Frame>;
}

struct MemoryStore {
    profile: Arc<SensorProfile>,
    frames: Vec<Frame>,
}

impl FrameStore for MemoryStore {
    fn profile(&self) -> &Arc<SensorProfile> {
        &self.profile
    }
    fn len(&self) -> usize {
        self.frames.len()
    }
    fn frame(&self, index: usize) -> Result<Frame> {
        Ok(self.frames[index].clone())
    }
}

/// Frames read from a sequence file on demand.
struct FileStore {
    path: PathBuf,
    profile: Arc<SensorProfile>,
    len: usize,
}

impl FrameStore for FileStore {
    fn profile(&self) -> &Arc<SensorProfile> {
        &self.profile
    }
    fn len(&self) -> usize {
        self.len
    }
    fn frame(&self, index: usize) -> Result<Frame> {
        SequenceFile::open(&self.path)?.frame_at(index)
    }
}

/// A labeled frame sequence, or a window of one. Frames are fetched from
/// the backing store on demand.
#[derive(Clone)]
pub struct SlipSequence {
    store: Arc<dyn FrameStore>,
    offset: usize,
    len: usize,
    /// 1 = slip, 0 = no slip. Rotational and translational slip share the
    /// positive label.
    pub label: u8,
    /// Slip start and end, 1-based frame numbers of the full recording.
    pub t_s: Option<usize>,
    pub t_e: Option<usize>,
    pub object_id: String,
    pub fps: f32,
}

impl fmt::Debug for SlipSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SlipSequence")
            .field("profile", &self.store.profile().name)
            .field("start", &self.start())
            .field("len", &self.len)
            .field("label", &self.label)
            .field("t_s", &self.t_s)
            .field("t_e", &self.t_e)
            .field("object_id", &self.object_id)
            .finish()
    }
}

impl SlipSequence {
    pub fn from_store(
        store: Arc<dyn FrameStore>,
        label: u8,
        t_s: Option<usize>,
        t_e: Option<usize>,
        object_id: impl Into<String>,
        fps: f32,
    ) -> Result<Self> {
        let len = store.len();
        if len == 0 {
            return Err(Error::Dataset("a slip sequence needs at least one frame".into()));
        }
        match (label, t_s, t_e) {
            (1, Some(s), Some(e)) if 1 <= s && s < e && e <= len => {}
            (1, ..) => {
                return Err(Error::Dataset(format!(
                    "slip sequence needs 1 <= t_s < t_e <= {len}, got t_s={t_s:?}, t_e={t_e:?}"
                )))
            }
            (0, None, None) => {}
            (0, ..) => return Err(Error::Dataset("non-slip sequences carry no t_s/t_e".into())),
            (l, ..) => return Err(Error::Dataset(format!("label {l} is not 0 or 1"))),
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Dataset(format!("fps must be positive, got {fps}")));
        }
        Ok(SlipSequence {
            store,
            offset: 0,
            len,
            label,
            t_s,
            t_e,
            object_id: object_id.into(),
            fps,
        })
    }

    pub fn new(
        frames: Vec<Frame>,
        label: u8,
        t_s: Option<usize>,
        t_e: Option<usize>,
        object_id: impl Into<String>,
        fps: f32,
    ) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Dataset("a slip sequence needs at least one frame".into()))?;
        for f in &frames {
            first.ensure_same_profile(f)?;
        }
        let profile = first.profile().clone();
        Self::from_store(Arc::new(MemoryStore { profile, frames }), label, t_s, t_e, object_id, fps)
    }

    /// Sequence backed by a frame-sequence file; fps comes from the file.
    pub fn from_file(path: &Path, label: u8, t_s: Option<usize>, t_e: Option<usize>, object_id: impl Into<String>) -> Result<Self> {
        let file = SequenceFile::open(path)?;
        let store = FileStore {
            path: path.to_path_buf(),
            profile: crate::sensors::FrameSource::profile(&file).clone(),
            len: file.header().frame_count as usize,
        };
        Self::from_store(Arc::new(store), label, t_s, t_e, object_id, file.fps())
    }

    pub fn profile(&self) -> &Arc<SensorProfile> {
        self.store.profile()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// 1-based frame number of the first frame within the full recording.
    pub fn start(&self) -> usize {
        self.offset + 1
    }

    /// Frame `index` of this sequence, 0-based.
    pub fn frame(&self, index: usize) -> Result<Frame> {
        if index >= self.len {
            return Err(Error::InvalidArgument(format!("frame {index} of a {}-frame sequence", self.len)));
        }
        self.store.frame(self.offset + index)
    }

    pub fn frames(&self) -> Result<Vec<Frame>> {
        (0..self.len).map(|i| self.frame(i)).collect()
    }

    /// Frames `start ..= start + length - 1` (1-based, relative to this
    /// sequence). Label, object and fps carry over.
    pub fn extract_window(&self, start: usize, length: usize) -> Result<SlipSequence> {
        let end = (start + length).saturating_sub(1);
        if start < 1 || length == 0 || end > self.len {
            return Err(Error::WindowOutOfRange {
                start,
                end,
                len: self.len,
            });
        }
        let mut w = self.clone();
        w.offset = self.offset + start - 1;
        w.len = length;
        Ok(w)
    }

    /// The evaluation window: starting at `t_s` for slip sequences, at a
    /// uniformly drawn start for non-slip ones.
    pub fn canonical_window(&self, length: usize, seed: u64) -> Result<SlipSequence> {
        let start = match self.t_s {
            Some(t_s) if self.label == 1 => (t_s + 1).checked_sub(self.start()).ok_or(Error::WindowOutOfRange {
                start: t_s,
                end: t_s + length - 1,
                len: self.len,
            })?,
            _ => {
                if length > self.len {
                    return Err(Error::WindowOutOfRange {
                        start: 1,
                        end: length,
                        len: self.len,
                    });
                }
                rng::seeded(seed).random_range(1..=self.len - length + 1)
            }
        };
        self.extract_window(start, length)
    }
}

/// One row of `slip_manifest.csv`; `t_s`/`t_e` are empty for non-slip rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlipManifestRow {
    pub path: String,
    pub label: u8,
    pub object_id: String,
    pub t_s: Option<usize>,
    pub t_e: Option<usize>,
    pub fps: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SplitMode {
    /// Holds out a share of every object's slip and non-slip sequences.
    BySequence { test_fraction: f64, seed: u64 },
    /// Holds out whole objects.
    ByObject { test_fraction: f64, seed: u64 },
}

impl SplitMode {
    pub fn by_sequence(seed: u64) -> Self {
        SplitMode::BySequence {
            test_fraction: 0.2,
            seed,
        }
    }

    pub fn by_object(seed: u64) -> Self {
        SplitMode::ByObject {
            test_fraction: 0.2,
            seed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SplitMode::BySequence { .. } => "by_sequence",
            SplitMode::ByObject { .. } => "by_object",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SlipDataset {
    sequences: Vec<SlipSequence>,
}

impl SlipDataset {
    pub fn new(sequences: Vec<SlipSequence>) -> Result<Self> {
        let first = sequences
            .first()
            .ok_or_else(|| Error::Dataset("a slip dataset needs at least one sequence".into()))?;
        if let Some(s) = sequences.iter().find(|s| s.profile().name != first.profile().name) {
            return Err(Error::ProfileMismatch {
                expected: first.profile().name.clone(),
                actual: s.profile().name.clone(),
            });
        }
        Ok(SlipDataset { sequences })
    }

    /// Reads `slip_manifest.csv` from `path`, the file or its directory.
    pub fn load_manifest(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(SLIP_MANIFEST_FILE) } else { path.to_path_buf() };
        let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader = csv::Reader::from_path(&file)?;
        let mut sequences = Vec::new();
        for row in reader.deserialize() {
            let row: SlipManifestRow = row?;
            let p = Path::new(&row.path);
            let p = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
            let mut s = SlipSequence::from_file(&p, row.label, row.t_s, row.t_e, row.object_id)?;
            s.fps = row.fps;
            sequences.push(s);
        }
        Self::new(sequences)
    }

    pub fn sequences(&self) -> &[SlipSequence] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn profile(&self) -> &Arc<SensorProfile> {
        self.sequences[0].profile()
    }

    /// Distinct object ids, sorted.
    pub fn objects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.sequences.iter().map(|s| s.object_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.sequences[i].clone()).collect())
    }

    /// Deterministic train/test partition of sequence indices.
    pub fn split(&self, mode: SplitMode) -> Result<Split> {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        match mode {
            SplitMode::BySequence { test_fraction, seed } => {
                check_fraction(test_fraction)?;
                let mut strata: BTreeMap<(&str, u8), Vec<usize>> = BTreeMap::new();
                for (i, s) in self.sequences.iter().enumerate() {
                    strata.entry((&s.object_id, s.label)).or_default().push(i);
                }
                let mut r = rng::stream(seed, 0x53455121);
                for members in strata.values_mut() {
                    members.shuffle(&mut r);
                    let n = (test_fraction * members.len() as f64).ceil() as usize;
                    test.extend_from_slice(&members[..n]);
                    train.extend_from_slice(&members[n..]);
                }
            }
            SplitMode::ByObject { test_fraction, seed } => {
                check_fraction(test_fraction)?;
                let mut objects = self.objects();
                if objects.len() < 5 {
                    return Err(Error::Dataset(format!(
                        "split by object needs at least 5 objects, got {}",
                        objects.len()
                    )));
                }
                objects.shuffle(&mut rng::stream(seed, 0x4f424a));
                let n = (test_fraction * objects.len() as f64).round() as usize;
                let held: BTreeSet<&str> = objects[..n].iter().map(String::as_str).collect();
                for (i, s) in self.sequences.iter().enumerate() {
                    if held.contains(s.object_id.as_str()) {
                        test.push(i);
                    } else {
                        train.push(i);
                    }
                }
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::Dataset(format!(
                "{} split leaves {} training and {} test sequences",
                mode.name(),
                train.len(),
                test.len()
            )));
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok(Split { train, test })
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("test fraction must be in (0, 1), got {f}")))
    }
}

