use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::TouchDataset;
use super::folds::{stratified_folds, stratified_split, stratified_subsample};
use crate::error::{Error, Result};
use crate::numerics::train::{accuracy, predict, train_classifier};
use crate::numerics::{
    resnet_2d, rng, softmax_rows, Budget, EpochStats, Network, Prediction, ResNetConfig, SampleSet, TrainOptions,
    DEFAULT_LEARNING_RATE,
};
use crate::registry::{self, apply_freeze, ArtifactMetadata, FreezePolicy, Provenance, Task};
use crate::sensors::preprocess::resampled_unit_planes;
use crate::sensors::{Frame, FrameHandle, PreprocessSpec};

pub const DEFAULT_INPUT_SIZE: usize = 64;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.2;
/// Sensor binding name of multi-profile models.
pub const JOINT: &str = "joint";

const EVAL_BATCH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    /// The live frame and the device's reference frame, stacked on channels.
    WithReference,
    NoReference,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::WithReference => "with_reference",
            Modality::NoReference => "no_reference",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with_reference" | "reference" => Ok(Modality::WithReference),
            "no_reference" | "none" => Ok(Modality::NoReference),
            other => Err(Error::InvalidArgument(format!(
                "unknown modality `{other}` (expected with_reference or no_reference)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub budget: Budget,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Share of every (label, serial) stratum held out for validation.
    pub validation_fraction: f64,
    pub folds: usize,
    /// Model input (height, width).
    pub input_size: (usize, usize),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            budget: Budget::Steps(2000),
            batch_size: 8,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            folds: DEFAULT_FOLDS,
            input_size: (DEFAULT_INPUT_SIZE, DEFAULT_INPUT_SIZE),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidArgument(format!("k must be at least 2, got {}", self.folds)));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return Err(Error::InvalidArgument("input size must be positive".into()));
        }
        Ok(())
    }

    fn options(&self, stream: u64) -> TrainOptions {
        TrainOptions {
            budget: self.budget,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: rng::derive_seed(self.seed, stream),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorBinding {
    Single(String),
    Joint(Vec<String>),
}

impl SensorBinding {
    fn from_profiles(mut profiles: Vec<String>) -> Self {
        profiles.sort();
        profiles.dedup();
        if profiles.len() == 1 {
            SensorBinding::Single(profiles.remove(0))
        } else {
            SensorBinding::Joint(profiles)
        }
    }

    pub fn name(&self) -> &str {
        match self {
            SensorBinding::Single(p) => p,
            SensorBinding::Joint(_) => JOINT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchDecision {
    pub touching: bool,
    /// Softmax probability of the returned class, in [0.5, 1].
    pub certainty: f64,
    /// `[no touch, touch]` probabilities.
    pub probabilities: [f64; 2],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
    pub wall_ms: f64,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub validation_accuracy: Option<f64>,
    pub per_profile_accuracy: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator) of the fold accuracies.
    pub std: f64,
    pub folds: Vec<f64>,
    pub fold_sizes: Vec<usize>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub fraction: f64,
    pub samples: usize,
    /// Mean and sample std over every fold of every seed.
    pub mean: f64,
    pub std: f64,
    pub accuracies: Vec<f64>,
}

/// `fraction,samples,mean,std` with a header line.
pub fn ablation_csv(points: &[AblationPoint]) -> String {
    let mut out = String::from("fraction,samples,mean,std\n");
    for p in points {
        out.push_str(&format!("{},{},{:.6},{:.6}\n", p.fraction, p.samples, p.mean, p.std));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineTuneReport {
    pub policy: FreezePolicy,
    pub trainable_units: usize,
    pub train: TrainReport,
    /// Parameter tensors whose values differ from the base model.
    pub changed: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct TouchDetector {
    network: Network,
    specs: BTreeMap<String, PreprocessSpec>,
    modality: Modality,
    binding: SensorBinding,
    provenance: Provenance,
}

/// Normalized model inputs for a dataset, with per-sample profile indices.
struct Prepared {
    data: SampleSet,
    profile_of: Vec<usize>,
    profiles: Vec<String>,
    specs: BTreeMap<String, PreprocessSpec>,
    fingerprint: String,
}

fn check_modality(dataset: &TouchDataset, modality: Modality) -> Result<()> {
    if modality == Modality::WithReference {
        if let Some(s) = dataset.samples().iter().find(|s| !s.image.profile().supports_reference) {
            return Err(Error::Unsupported(format!(
                "the reference modality is not available for profile `{}`",
                s.profile_name()
            )));
        }
        if !dataset.all_have_references() {
            return Err(Error::MissingReference);
        }
    }
    Ok(())
}

fn unit_spec(size: (usize, usize), channels: usize) -> PreprocessSpec {
    PreprocessSpec {
        target_size: size,
        mean: vec![0.0; channels],
        std: vec![1.0; channels],
        concat_reference: false,
        grayscale: false,
    }
}

/// Resamples every frame, fits per-profile normalization where `known`
/// has no spec, then normalizes in place.
fn prepare(
    dataset: &TouchDataset,
    modality: Modality,
    size: (usize, usize),
    known: &BTreeMap<String, PreprocessSpec>,
) -> Result<Prepared> {
    check_modality(dataset, modality)?;
    let profiles = dataset.profiles();
    let channels = dataset.samples()[0].image.profile().channels;
    if let Some(s) = dataset.samples().iter().find(|s| s.image.profile().channels != channels) {
        return Err(Error::Dataset(format!(
            "profile `{}` has {} channels, others have {channels}",
            s.profile_name(),
            s.image.profile().channels
        )));
    }
    let with_ref = modality == Modality::WithReference;
    let plane = size.0 * size.1;
    let half = channels * plane;
    let raw = unit_spec(size, channels);
    let mut data = SampleSet::with_capacity(vec![if with_ref { 2 * channels } else { channels }, size.0, size.1], dataset.len());
    let mut profile_of = Vec::with_capacity(dataset.len());
    let mut sums = vec![(vec![0.0f64; channels], vec![0.0f64; channels], 0usize); profiles.len()];
    let mut ref_cache: Vec<(FrameHandle, Vec<f32>)> = Vec::new();
    let mut buf = vec![0.0f32; data.sample_len()];
    let fill = |frame: &Frame, out: &mut [f32]| -> Result<()> {
        for (ch, values) in resampled_unit_planes(frame, &raw)?.into_iter().enumerate() {
            for (d, v) in out[ch * plane..(ch + 1) * plane].iter_mut().zip(values) {
                *d = v as f32;
            }
        }
        Ok(())
    };
    for s in dataset.samples() {
        let p = profiles.binary_search_by(|n| n.as_str().cmp(s.profile_name())).expect("profile listed");
        let frame = s.image.load()?;
        fill(&frame, &mut buf[..half])?;
        if with_ref {
            let handle = s.reference.as_ref().ok_or(Error::MissingReference)?;
            let cached = ref_cache.iter().position(|(h, _)| h.same_source(handle));
            let idx = match cached {
                Some(i) => i,
                None => {
                    let r = handle.load()?;
                    frame.ensure_same_profile(&r)?;
                    let mut planes = vec![0.0f32; half];
                    fill(&r, &mut planes)?;
                    ref_cache.push((handle.clone(), planes));
                    ref_cache.len() - 1
                }
            };
            buf[half..].copy_from_slice(&ref_cache[idx].1);
        }
        let (sum, sq, count) = &mut sums[p];
        for ch in 0..channels {
            for &v in &buf[ch * plane..(ch + 1) * plane] {
                sum[ch] += v as f64;
                sq[ch] += (v as f64) * (v as f64);
            }
        }
        *count += plane;
        data.push(&buf, s.label as usize)?;
        profile_of.push(p);
    }
    let mut specs = BTreeMap::new();
    for (p, name) in profiles.iter().enumerate() {
        let spec = match known.get(name) {
            Some(spec) => {
                if spec.target_size != size || spec.frame_channels() != channels || spec.concat_reference != with_ref {
                    return Err(Error::Shape(format!(
                        "model expects {:?} input for `{name}`, dataset provides {:?}",
                        spec.output_shape(),
                        [if with_ref { 2 * channels } else { channels }, size.0, size.1]
                    )));
                }
                spec.clone()
            }
            None => {
                let (sum, sq, count) = &sums[p];
                let n = *count as f64;
                let mean: Vec<f32> = sum.iter().map(|s| (s / n) as f32).collect();
                let std = sq
                    .iter()
                    .zip(sum)
                    .map(|(q, s)| ((q / n - (s / n).powi(2)).max(0.0).sqrt() as f32).max(1e-3))
                    .collect();
                PreprocessSpec {
                    target_size: size,
                    mean,
                    std,
                    concat_reference: with_ref,
                    grayscale: false,
                }
            }
        };
        specs.insert(name.clone(), spec);
    }
    let total = data.sample_len();
    for i in 0..data.len() {
        let spec = &specs[&profiles[profile_of[i]]];
        let sample = data.sample_mut(i);
        for (j, v) in sample[..total].iter_mut().enumerate() {
            let ch = (j / plane) % channels;
            *v = ((*v as f64 - spec.mean[ch] as f64) / spec.std[ch] as f64) as f32;
        }
    }
    let mut h = Sha256::new();
    for i in 0..data.len() {
        for v in data.sample(i) {
            h.update(v.to_le_bytes());
        }
    }
    for &l in data.labels() {
        h.update([l as u8]);
    }
    Ok(Prepared {
        data,
        profile_of,
        profiles,
        specs,
        fingerprint: hex::encode(h.finalize()),
    })
}

fn strata_of(dataset: &TouchDataset) -> Vec<String> {
    // Profiles can reuse serial strings, so the profile is part of the key.
    dataset
        .samples()
        .iter()
        .map(|s| format!("{}/{}", s.profile_name(), s.stratum()))
        .collect()
}

fn new_network(channels: usize, size: (usize, usize), seed: u64) -> Result<Network> {
    Network::new(resnet_2d(&ResNetConfig::lite(), channels, size, 2), seed)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Validation accuracy overall and per profile.
fn evaluate(network: &Network, prep: &Prepared, indices: &[usize], report: &mut TrainReport) -> Result<()> {
    report.validation_samples = indices.len();
    if indices.is_empty() {
        return Ok(());
    }
    let preds = predict(network, &prep.data, indices, EVAL_BATCH)?;
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for (p, &i) in preds.iter().zip(indices) {
        let hit = (p.class == prep.data.labels()[i]) as usize;
        correct += hit;
        let e = per.entry(prep.profile_of[i]).or_default();
        e.0 += hit;
        e.1 += 1;
    }
    report.validation_accuracy = Some(correct as f64 / indices.len() as f64);
    report.per_profile_accuracy = per
        .into_iter()
        .map(|(p, (c, n))| (prep.profiles[p].clone(), c as f64 / n as f64))
        .collect();
    Ok(())
}

fn fit(dataset: &TouchDataset, config: &TrainConfig, modality: Modality) -> Result<(TouchDetector, TrainReport)> {
    config.validate()?;
    if !dataset.has_both_classes() {
        return Err(Error::Dataset("training needs samples of both classes".into()));
    }
    let prep = prepare(dataset, modality, config.input_size, &BTreeMap::new())?;
    let (train_idx, val_idx) = stratified_split(&strata_of(dataset), config.validation_fraction, config.seed)?;
    let mut network = new_network(prep.data.sample_shape()[0], config.input_size, rng::derive_seed(config.seed, 1))?;
    let log = train_classifier(&mut network, &prep.data, &train_idx, &config.options(2))?;
    let mut report = TrainReport {
        epochs: log.epochs,
        steps: log.steps,
        wall_ms: log.wall_ms,
        train_samples: train_idx.len(),
        ..Default::default()
    };
    evaluate(&network, &prep, &val_idx, &mut report)?;
    let detector = TouchDetector {
        network,
        binding: SensorBinding::from_profiles(prep.profiles.clone()),
        specs: prep.specs,
        modality,
        provenance: Provenance {
            seed: config.seed,
            steps: log.steps,
            dataset_fingerprint: prep.fingerprint,
        },
    };
    Ok((detector, report))
}

/// Trains a single-profile detector, holding out
/// `config.validation_fraction` of every (label, serial) stratum.
pub fn train(dataset: &TouchDataset, config: &TrainConfig, modality: Modality) -> Result<(TouchDetector, TrainReport)> {
    let profiles = dataset.profiles();
    if profiles.len() > 1 {
        return Err(Error::Dataset(format!(
            "dataset mixes profiles {profiles:?}; use train_joint for multi-profile models"
        )));
    }
    fit(dataset, config, modality)
}

/// Trains one detector on the union of datasets from two or more profiles.
/// Each profile keeps its own normalization.
pub fn train_joint(datasets: &[TouchDataset], config: &TrainConfig, modality: Modality) -> Result<(TouchDetector, TrainReport)> {
    let union = TouchDataset::union(datasets)?;
    let profiles = union.profiles();
    if profiles.len() < 2 {
        return Err(Error::Dataset(format!(
            "joint training needs at least two profiles, got {profiles:?}; use train for a single profile"
        )));
    }
    fit(&union, config, modality)
}

fn cross_validate_prepared(prep: &Prepared, strata: &[String], subset: &[usize], config: &TrainConfig) -> Result<CrossValReport> {
    let start = Instant::now();
    let local: Vec<String> = subset.iter().map(|&i| strata[i].clone()).collect();
    let folds = stratified_folds(&local, config.folds, config.seed)?;
    let mut accuracies = Vec::with_capacity(folds.len());
    for (f, fold) in folds.iter().enumerate() {
        let test: Vec<usize> = fold.iter().map(|&j| subset[j]).collect();
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, other)| other.iter().map(|&j| subset[j]))
            .collect();
        let mut network = new_network(
            prep.data.sample_shape()[0],
            config.input_size,
            rng::derive_seed(config.seed, 100 + f as u64),
        )?;
        train_classifier(&mut network, &prep.data, &train_idx, &config.options(200 + f as u64))?;
        let acc = accuracy(&network, &prep.data, &test)?;
        log::info!("fold {}/{}: accuracy {acc:.4}", f + 1, folds.len());
        accuracies.push(acc);
    }
    let (mean, std) = mean_std(&accuracies);
    Ok(CrossValReport {
        mean,
        std,
        folds: accuracies,
        fold_sizes: folds.iter().map(Vec::len).collect(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// k-fold cross-validation with folds stratified by (label, serial).
pub fn cross_validate(dataset: &TouchDataset, config: &TrainConfig, modality: Modality) -> Result<CrossValReport> {
    config.validate()?;
    if !dataset.has_both_classes() {
        return Err(Error::Dataset("cross-validation needs samples of both classes".into()));
    }
    let prep = prepare(dataset, modality, config.input_size, &BTreeMap::new())?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    cross_validate_prepared(&prep, &strata_of(dataset), &all, config)
}

/// Cross-validates stratified subsamples of the dataset. Every seed in
/// `seeds` draws its own subsample and folds.
pub fn ablate_dataset_size(
    dataset: &TouchDataset,
    fractions: &[f64],
    config: &TrainConfig,
    modality: Modality,
    seeds: &[u64],
) -> Result<Vec<AblationPoint>> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one seed".into()));
    }
    let strata = strata_of(dataset);
    let labels = dataset.labels();
    // Check every fraction up front so a bad one fails before any training.
    for &f in fractions {
        for &seed in seeds {
            let keep = stratified_subsample(&strata, f, seed)?;
            let ones = keep.iter().filter(|&&i| labels[i] == 1).count();
            if ones < 2 || keep.len() - ones < 2 {
                return Err(Error::Dataset(format!(
                    "fraction {f} leaves {} no-touch and {ones} touch samples; need at least 2 of each",
                    keep.len() - ones
                )));
            }
        }
    }
    let prep = prepare(dataset, modality, config.input_size, &BTreeMap::new())?;
    let mut points = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let mut accuracies = Vec::new();
        let mut samples = 0;
        for &seed in seeds {
            let keep = stratified_subsample(&strata, f, seed)?;
            samples = keep.len();
            let cfg = TrainConfig { seed, ..config.clone() };
            accuracies.extend(cross_validate_prepared(&prep, &strata, &keep, &cfg)?.folds);
        }
        let (mean, std) = mean_std(&accuracies);
        points.push(AblationPoint {
            fraction: f,
            samples,
            mean,
            std,
            accuracies,
        });
    }
    Ok(points)
}

/// Continues training `base` on `dataset` with only the layers allowed by
/// `policy` updated. Profiles unknown to the base get their own fitted
/// normalization; the returned detector accepts them too.
pub fn fine_tune(
    base: &TouchDetector,
    dataset: &TouchDataset,
    config: &TrainConfig,
    policy: FreezePolicy,
) -> Result<(TouchDetector, FineTuneReport)> {
    config.validate()?;
    let size = base.input_size();
    let prep = prepare(dataset, base.modality, size, &base.specs)?;
    if prep.data.sample_shape() != base.network.input_shape() {
        return Err(Error::Shape(format!(
            "base model takes {:?}, dataset provides {:?}",
            base.network.input_shape(),
            prep.data.sample_shape()
        )));
    }
    let mut network = base.network.clone();
    let mask = apply_freeze(&network, policy)?;
    network.set_trainable_mask(&mask)?;
    let (train_idx, val_idx) = stratified_split(&strata_of(dataset), config.validation_fraction, config.seed)?;
    let mut report = TrainReport {
        train_samples: train_idx.len(),
        ..Default::default()
    };
    if !matches!(config.budget, Budget::Steps(0)) && !train_idx.is_empty() {
        let log = train_classifier(&mut network, &prep.data, &train_idx, &config.options(3))?;
        report.epochs = log.epochs;
        report.steps = log.steps;
        report.wall_ms = log.wall_ms;
    }
    let all = network.trainable_mask().units.iter().map(|_| true).collect();
    network.set_trainable_mask(&crate::numerics::TrainableMask { units: all })?;
    evaluate(&network, &prep, &val_idx, &mut report)?;
    let changed = network
        .param_names()
        .iter()
        .zip(network.params().iter().zip(base.network.params()))
        .filter(|(_, (a, b))| a.data().iter().zip(b.data()).any(|(x, y)| x.to_bits() != y.to_bits()))
        .map(|(n, _)| n.clone())
        .collect();
    let mut specs = base.specs.clone();
    specs.extend(prep.specs.clone());
    let detector = TouchDetector {
        network,
        binding: SensorBinding::from_profiles(specs.keys().cloned().collect()),
        specs,
        modality: base.modality,
        provenance: Provenance {
            seed: config.seed,
            steps: base.provenance.steps + report.steps,
            dataset_fingerprint: prep.fingerprint,
        },
    };
    let report = FineTuneReport {
        policy,
        trainable_units: mask.trainable_count(),
        train: report,
        changed,
    };
    Ok((detector, report))
}

impl TouchDetector {
    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn binding(&self) -> &SensorBinding {
        &self.binding
    }

    pub fn specs(&self) -> &BTreeMap<String, PreprocessSpec> {
        &self.specs
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn input_size(&self) -> (usize, usize) {
        let s = self.network.input_shape();
        (s[1], s[2])
    }

    pub fn accepts(&self, profile: &str) -> bool {
        self.specs.contains_key(profile)
    }

    fn spec_for(&self, frame: &Frame) -> Result<&PreprocessSpec> {
        self.specs.get(&frame.profile().name).ok_or_else(|| Error::ProfileMismatch {
            expected: match &self.binding {
                SensorBinding::Single(p) => p.clone(),
                SensorBinding::Joint(ps) => ps.join("|"),
            },
            actual: frame.profile().name.clone(),
        })
    }

    /// Model input for one frame.
    pub fn preprocess(&self, frame: &Frame, reference: Option<&Frame>) -> Result<crate::numerics::Tensor> {
        let spec = self.spec_for(frame)?;
        let t = crate::sensors::preprocess(frame, spec, reference)?;
        let shape = t.shape().to_vec();
        t.reshape([&[1], &shape[..]].concat())
    }

    pub fn is_touched(&self, frame: &Frame, reference: Option<&Frame>) -> Result<TouchDecision> {
        let input = self.preprocess(frame, reference)?;
        let logits = self.network.infer(&input)?;
        let probs = softmax_rows(&logits).remove(0);
        let Prediction { class, certainty } = crate::numerics::train::decide(&probs);
        Ok(TouchDecision {
            touching: class == 1,
            certainty,
            probabilities: [probs[0], probs[1]],
        })
    }

    pub fn metadata(&self) -> ArtifactMetadata {
        ArtifactMetadata {
            sensor: self.binding.name().to_string(),
            task: Task::TouchDetect,
            modality: self.modality.as_str().to_string(),
            window_length: None,
            architecture: self.network.spec().clone(),
            preprocess: self.specs.clone(),
            provenance: self.provenance.clone(),
            tensors: Vec::new(),
        }
    }

    /// Writes a model artifact and returns its digest.
    pub fn save(&self, path: &Path) -> Result<String> {
        registry::save(&self.network, &self.metadata(), path)
    }

    pub fn from_artifact(artifact: registry::ModelArtifact) -> Result<Self> {
        let meta = artifact.metadata;
        if meta.task != Task::TouchDetect {
            return Err(Error::TaskMismatch {
                model: meta.task.to_string(),
                requested: Task::TouchDetect.to_string(),
            });
        }
        Ok(TouchDetector {
            network: artifact.network,
            modality: meta.modality.parse()?,
            binding: SensorBinding::from_profiles(meta.preprocess.keys().cloned().collect()),
            specs: meta.preprocess,
            provenance: meta.provenance,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_artifact(registry::load(path)?)
    }
}
