use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sequence::{SlipDataset, SplitMode};
use crate::error::{Error, Result};
use crate::numerics::train::{accuracy, decide, train_classifier};
use crate::numerics::{
    resnet_2d, resnet_3d, rng, softmax_rows, Budget, EpochStats, Network, ResNetConfig, SampleSet, Tensor,
    TrainOptions, DEFAULT_LEARNING_RATE,
};
use crate::registry::{self, ArtifactMetadata, Provenance, Task};
use crate::sensors::preprocess::resampled_unit_planes;
use crate::sensors::{Frame, PreprocessSpec};

pub const DEFAULT_WINDOW: usize = 12;
/// Frames are resampled to this square size.
pub const SLIP_INPUT_SIZE: usize = 112;
/// Two temporal stride-2 stages need at least this many frames.
pub const MIN_CONV3D_WINDOW: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlipArch {
    /// Window frames stacked along channels into the 2D network.
    Frames2D,
    /// `(channels, frames, height, width)` volume into the 3D network.
    Conv3D,
}

impl SlipArch {
    pub fn as_str(self) -> &'static str {
        match self {
            SlipArch::Frames2D => "frames2d",
            SlipArch::Conv3D => "conv3d",
        }
    }
}

impl fmt::Display for SlipArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SlipArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "frames2d" => Ok(SlipArch::Frames2D),
            "conv3d" => Ok(SlipArch::Conv3D),
            other => Err(Error::InvalidArgument(format!("unknown architecture `{other}` (frames2d or conv3d)"))),
        }
    }
}

fn check_arch(arch: SlipArch, window: usize) -> Result<()> {
    if window == 0 {
        return Err(Error::InvalidArgument("window length must be positive".into()));
    }
    if arch == SlipArch::Conv3D && window < MIN_CONV3D_WINDOW {
        return Err(Error::Unsupported(format!(
            "conv3d needs windows of at least {MIN_CONV3D_WINDOW} frames, got {window}"
        )));
    }
    Ok(())
}

/// Input shape of one window.
pub fn window_shape(arch: SlipArch, window: usize, channels: usize, size: (usize, usize)) -> Vec<usize> {
    match arch {
        SlipArch::Frames2D => vec![window * channels, size.0, size.1],
        SlipArch::Conv3D => vec![channels, window, size.0, size.1],
    }
}

/// Offset of `(frame t, channel c)` planes inside a window sample.
fn plane_index(arch: SlipArch, window: usize, channels: usize, t: usize, c: usize) -> usize {
    match arch {
        SlipArch::Frames2D => t * channels + c,
        SlipArch::Conv3D => c * window + t,
    }
}

/// Writes `pixel / 255` planes of each frame into their slots.
fn stack_raw(frames: &[Frame], arch: SlipArch, size: (usize, usize), out: &mut [f32]) -> Result<()> {
    let channels = frames[0].channels();
    let plane = size.0 * size.1;
    let unit = PreprocessSpec {
        target_size: size,
        mean: vec![0.0; channels],
        std: vec![1.0; channels],
        concat_reference: false,
        grayscale: false,
    };
    for (t, f) in frames.iter().enumerate() {
        frames[0].ensure_same_profile(f)?;
        for (c, values) in resampled_unit_planes(f, &unit)?.into_iter().enumerate() {
            let p = plane_index(arch, frames.len(), channels, t, c);
            for (d, v) in out[p * plane..(p + 1) * plane].iter_mut().zip(values) {
                *d = v as f32;
            }
        }
    }
    Ok(())
}

fn normalize(sample: &mut [f32], arch: SlipArch, window: usize, spec: &PreprocessSpec) {
    let channels = spec.frame_channels();
    let plane = spec.target_size.0 * spec.target_size.1;
    for t in 0..window {
        for c in 0..channels {
            let p = plane_index(arch, window, channels, t, c);
            let (m, s) = (spec.mean[c] as f64, spec.std[c] as f64);
            for v in &mut sample[p * plane..(p + 1) * plane] {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
    }
}

/// Normalized model input for one window of frames, batch of one.
pub fn stack_window(frames: &[Frame], spec: &PreprocessSpec, arch: SlipArch) -> Result<Tensor> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty window".into()))?;
    if first.channels() != spec.frame_channels() {
        return Err(Error::Shape(format!(
            "spec expects {} channels, frames have {}",
            spec.frame_channels(),
            first.channels()
        )));
    }
    let mut shape = vec![1];
    shape.extend(window_shape(arch, frames.len(), first.channels(), spec.target_size));
    let mut data = vec![0.0f32; shape.iter().product()];
    stack_raw(frames, arch, spec.target_size, &mut data)?;
    normalize(&mut data, arch, frames.len(), spec);
    Tensor::new(shape, data)
}

/// Materialized evaluation windows of a set of sequences.
pub struct WindowSet {
    pub data: SampleSet,
    pub spec: PreprocessSpec,
    pub fingerprint: String,
}

/// Extracts the canonical window of every sequence in `indices` (seeded per
/// sequence), resamples, and normalizes with `spec` or with statistics
/// fitted on the windows of `fit_on` when `spec` is `None`.
#[allow(clippy::too_many_arguments)]
pub fn build_windows(
    dataset: &SlipDataset,
    indices: &[usize],
    arch: SlipArch,
    window: usize,
    size: (usize, usize),
    seed: u64,
    spec: Option<&PreprocessSpec>,
    fit_on: &[usize],
) -> Result<WindowSet> {
    let channels = dataset.profile().channels;
    let plane = size.0 * size.1;
    let mut data = SampleSet::with_capacity(window_shape(arch, window, channels, size), indices.len());
    let mut buf = vec![0.0f32; data.sample_len()];
    let (mut sum, mut sq, mut count) = (vec![0.0f64; channels], vec![0.0f64; channels], 0usize);
    let fit: std::collections::BTreeSet<usize> = fit_on.iter().copied().collect();
    for &i in indices {
        let seq = &dataset.sequences()[i];
        let w = seq.canonical_window(window, rng::derive_seed(seed, i as u64))?;
        stack_raw(&w.frames()?, arch, size, &mut buf)?;
        if spec.is_none() && fit.contains(&i) {
            for t in 0..window {
                for c in 0..channels {
                    let p = plane_index(arch, window, channels, t, c);
                    for &v in &buf[p * plane..(p + 1) * plane] {
                        sum[c] += v as f64;
                        sq[c] += (v as f64) * (v as f64);
                    }
                }
            }
            count += window * plane;
        }
        data.push(&buf, seq.label as usize)?;
    }
    let spec = match spec {
        Some(s) => s.clone(),
        None => {
            if count == 0 {
                return Err(Error::Dataset("no windows to fit normalization on".into()));
            }
            let n = count as f64;
            PreprocessSpec {
                target_size: size,
                mean: sum.iter().map(|s| (s / n) as f32).collect(),
                std: sq
                    .iter()
                    .zip(&sum)
                    .map(|(q, s)| ((q / n - (s / n).powi(2)).max(0.0).sqrt() as f32).max(1e-3))
                    .collect(),
                concat_reference: false,
                grayscale: false,
            }
        }
    };
    let mut h = Sha256::new();
    for k in 0..data.len() {
        normalize(data.sample_mut(k), arch, window, &spec);
        for v in data.sample(k) {
            h.update(v.to_le_bytes());
        }
    }
    Ok(WindowSet {
        data,
        spec,
        fingerprint: hex::encode(h.finalize()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlipTrainConfig {
    pub budget: Budget,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub input_size: (usize, usize),
}

impl Default for SlipTrainConfig {
    fn default() -> Self {
        SlipTrainConfig {
            budget: Budget::Steps(600),
            batch_size: 8,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            input_size: (SLIP_INPUT_SIZE, SLIP_INPUT_SIZE),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlipReport {
    pub arch: SlipArch,
    pub window: usize,
    pub split: SplitMode,
    pub train_windows: usize,
    pub test_windows: usize,
    pub test_accuracy: f64,
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
    pub wall_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlipDecision {
    pub slipping: bool,
    pub certainty: f64,
    /// `[no slip, slip]` probabilities.
    pub probabilities: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct SlipDetector {
    network: Network,
    spec: PreprocessSpec,
    arch: SlipArch,
    window: usize,
    profile: String,
    provenance: Provenance,
}

/// Trains on the training side of `split` and reports accuracy on the
/// test side. Every sequence contributes its canonical window.
pub fn train(
    dataset: &SlipDataset,
    arch: SlipArch,
    window: usize,
    split: SplitMode,
    config: &SlipTrainConfig,
) -> Result<(SlipDetector, SlipReport)> {
    check_arch(arch, window)?;
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let parts = dataset.split(split)?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let windows = build_windows(dataset, &all, arch, window, config.input_size, config.seed, None, &parts.train)?;
    let channels = dataset.profile().channels;
    let spec = match arch {
        SlipArch::Frames2D => resnet_2d(&ResNetConfig::lite(), window * channels, config.input_size, 2),
        SlipArch::Conv3D => resnet_3d(&ResNetConfig::lite(), channels, window, config.input_size, 2),
    };
    let mut network = Network::new(spec, rng::derive_seed(config.seed, 1))?;
    let options = TrainOptions {
        budget: config.budget,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        seed: rng::derive_seed(config.seed, 2),
    };
    let log = train_classifier(&mut network, &windows.data, &parts.train, &options)?;
    let test_accuracy = accuracy(&network, &windows.data, &parts.test)?;
    let report = SlipReport {
        arch,
        window,
        split,
        train_windows: parts.train.len(),
        test_windows: parts.test.len(),
        test_accuracy,
        epochs: log.epochs,
        steps: log.steps,
        wall_ms: log.wall_ms,
    };
    let detector = SlipDetector {
        network,
        spec: windows.spec,
        arch,
        window,
        profile: dataset.profile().name.clone(),
        provenance: Provenance {
            seed: config.seed,
            steps: log.steps,
            dataset_fingerprint: windows.fingerprint,
        },
    };
    Ok((detector, report))
}

impl SlipDetector {
    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn arch(&self) -> SlipArch {
        self.arch
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn profile(&self) -> &str {
        &self.profile
    }

    pub fn spec(&self) -> &PreprocessSpec {
        &self.spec
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Test-set accuracy of this detector on `indices` of `dataset`, using
    /// the same windowing as training.
    pub fn evaluate(&self, dataset: &SlipDataset, indices: &[usize], seed: u64) -> Result<f64> {
        let w = build_windows(dataset, indices, self.arch, self.window, self.spec.target_size, seed, Some(&self.spec), &[])?;
        let local: Vec<usize> = (0..indices.len()).collect();
        accuracy(&self.network, &w.data, &local)
    }

    pub fn is_slipping(&self, frames: &[Frame]) -> Result<SlipDecision> {
        if frames.len() != self.window {
            return Err(Error::WindowLength {
                expected: self.window,
                actual: frames.len(),
            });
        }
        if let Some(f) = frames.iter().find(|f| f.profile().name != self.profile) {
            return Err(Error::ProfileMismatch {
                expected: self.profile.clone(),
                actual: f.profile().name.clone(),
            });
        }
        let input = stack_window(frames, &self.spec, self.arch)?;
        let probs = softmax_rows(&self.network.infer(&input)?).remove(0);
        let p = decide(&probs);
        Ok(SlipDecision {
            slipping: p.class == 1,
            certainty: p.certainty,
            probabilities: [probs[0], probs[1]],
        })
    }

    pub fn metadata(&self) -> ArtifactMetadata {
        ArtifactMetadata {
            sensor: self.profile.clone(),
            task: Task::SlipDetect,
            modality: self.arch.as_str().to_string(),
            window_length: Some(self.window),
            architecture: self.network.spec().clone(),
            preprocess: [(self.profile.clone(), self.spec.clone())].into_iter().collect(),
            provenance: self.provenance.clone(),
            tensors: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        registry::save(&self.network, &self.metadata(), path)
    }

    pub fn from_artifact(artifact: registry::ModelArtifact) -> Result<Self> {
        let meta = artifact.metadata;
        if meta.task != Task::SlipDetect {
            return Err(Error::TaskMismatch {
                model: meta.task.to_string(),
                requested: Task::SlipDetect.to_string(),
            });
        }
        let window = meta
            .window_length
            .ok_or_else(|| Error::IncompleteMetadata("slip model without a window length".into()))?;
        let (profile, spec) = meta
            .preprocess
            .into_iter()
            .next()
            .ok_or_else(|| Error::IncompleteMetadata("no preprocess spec".into()))?;
        Ok(SlipDetector {
            network: artifact.network,
            spec,
            arch: meta.modality.parse()?,
            window,
            profile,
            provenance: meta.provenance,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_artifact(registry::load(path)?)
    }
}
