use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{gen_touch_frame, Blob, Illumination, LightingMode, SceneConfig, Texture, AMPLITUDE_RANGE, MAX_NOISE_SIGMA};
use super::slip::{gen_slip_sequence, Pose, SlipScript};
use crate::error::{Error, Result};
use crate::numerics::rng;
use crate::sensors::{lookup_profile, write_sequence, FrameHandle, SensorProfile};
use crate::slipdetect::{SlipDataset, SlipManifestRow, SLIP_MANIFEST_FILE};
use crate::touchdetect::{ManifestRow, TouchDataset, TouchSample, MANIFEST_FILE};

/// Serial of the device used for every synthetic slip recording.
pub const SLIP_RIG_SERIAL: &str = "rig-0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouchGenOptions {
    /// An RGB profile name.
    pub profile: String,
    pub per_class: usize,
    /// Devices of this profile the samples are spread over.
    pub serials: usize,
    pub lighting: LightingMode,
    pub with_reference: bool,
    pub seed: u64,
}

impl TouchGenOptions {
    pub fn new(profile: impl Into<String>, per_class: usize, seed: u64) -> Self {
        TouchGenOptions {
            profile: profile.into(),
            per_class,
            serials: 4,
            lighting: LightingMode::Rgb,
            with_reference: true,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlipGenOptions {
    pub profile: String,
    pub objects: usize,
    /// Slip and non-slip sequences per object, each.
    pub per_class: usize,
    pub length: usize,
    pub lighting: LightingMode,
    pub seed: u64,
}

impl SlipGenOptions {
    pub fn new(profile: impl Into<String>, objects: usize, per_class: usize, seed: u64) -> Self {
        SlipGenOptions {
            profile: profile.into(),
            objects,
            per_class,
            length: crate::slipdetect::DEFAULT_SEQUENCE_LENGTH,
            lighting: LightingMode::Rgb,
            seed,
        }
    }
}

fn rgb_profile(name: &str) -> Result<Arc<SensorProfile>> {
    let p = lookup_profile(name)?;
    if p.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "generate from the RGB profile and pick mono lighting instead of `{name}`"
        )));
    }
    Ok(p)
}

fn device_serial(profile: &str, k: usize) -> String {
    format!("{profile}-{k:03}")
}

/// Random press fully inside a `h x w` frame.
fn random_blob(r: &mut impl Rng, (h, w): (usize, usize), radius: (f64, f64), amplitude: (f32, f32)) -> Blob {
    let side = h.min(w) as f64;
    let scale = side / 240.0;
    let r_major = r.random_range(radius.0..radius.1) * side;
    let mut blob = Blob {
        center_row: 0.0,
        center_col: 0.0,
        r_major,
        r_minor: r_major * r.random_range(0.55..1.0),
        rotation: r.random_range(0.0..PI),
        amplitude: r.random_range(amplitude.0..=amplitude.1),
        edge_sigma: r.random_range(1.0..3.0) * scale,
    };
    let (er, ec) = blob.half_extents();
    blob.center_row = r.random_range(er + 1.0..h as f64 - 2.0 - er);
    blob.center_col = r.random_range(ec + 1.0..w as f64 - 2.0 - ec);
    blob
}

fn jittered_gain(r: &mut impl Rng) -> [f32; 3] {
    let mut g = [1.0, 0.8, 0.6];
    for v in &mut g {
        *v += r.random_range(-0.1..0.1);
    }
    g
}

/// Scene, label and serial of touch sample `i`. Labels alternate starting
/// with 0 and serials cycle over consecutive label pairs.
pub fn touch_scene(opts: &TouchGenOptions, i: usize) -> Result<(SceneConfig, u8, String)> {
    let profile = rgb_profile(&opts.profile)?;
    let seed = rng::derive_seed(opts.seed, i as u64);
    let mut r = rng::stream(seed, 1);
    let label = (i % 2) as u8;
    let serial = device_serial(&opts.profile, (i / 2) % opts.serials.max(1));
    let mut config = SceneConfig::new(profile.clone(), &serial, seed);
    config.blob = random_blob(&mut r, profile.native_resolution, (0.06, 0.15), AMPLITUDE_RANGE);
    config.gain = jittered_gain(&mut r);
    config.noise_sigma = r.random_range(0.0..=MAX_NOISE_SIGMA);
    config.lighting = opts.lighting;
    Ok((config, label, serial))
}

/// Balanced touch dataset whose frames are rendered on demand.
pub fn touch_dataset(opts: &TouchGenOptions) -> Result<TouchDataset> {
    if opts.per_class == 0 || opts.serials == 0 {
        return Err(Error::InvalidArgument("need at least one sample per class and one device".into()));
    }
    let base = SceneConfig::new(rgb_profile(&opts.profile)?, "", opts.seed);
    let out_profile = SceneConfig {
        lighting: opts.lighting,
        ..base.clone()
    }
    .output_profile()?;
    let with_reference = opts.with_reference && out_profile.supports_reference;
    let references: Vec<FrameHandle> = (0..opts.serials)
        .map(|k| {
            let serial = device_serial(&opts.profile, k);
            let config = SceneConfig {
                illumination: Illumination::for_device(&opts.profile, &serial),
                lighting: opts.lighting,
                ..base.clone()
            };
            FrameHandle::rendered(out_profile.clone(), move || Ok(config.reference_frame()?.with_serial(serial.clone())))
        })
        .collect();
    let samples = (0..2 * opts.per_class)
        .map(|i| {
            let (config, label, serial) = touch_scene(opts, i)?;
            let s = serial.clone();
            let image = FrameHandle::rendered(out_profile.clone(), move || {
                Ok(gen_touch_frame(&config, label == 1)?.0.with_serial(s.clone()))
            });
            Ok(TouchSample {
                image,
                label,
                device_serial: serial,
                reference: with_reference.then(|| references[(i / 2) % opts.serials].clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TouchDataset::new(samples)
}

/// Scene shared by every sequence of object `k`: press shape, strength and
/// surface texture.
fn object_scene(opts: &SlipGenOptions, k: usize) -> Result<SceneConfig> {
    let profile = rgb_profile(&opts.profile)?;
    let seed = rng::derive_seed(opts.seed, k as u64);
    let mut r = rng::stream(seed, 1);
    let mut config = SceneConfig::new(profile.clone(), SLIP_RIG_SERIAL, seed);
    let (h, w) = profile.native_resolution;
    let mut blob = random_blob(&mut r, (h, w), (0.08, 0.14), (60.0, 150.0));
    blob.center_row = (h as f64 - 1.0) / 2.0;
    blob.center_col = (w as f64 - 1.0) / 2.0;
    config.blob = blob;
    config.gain = jittered_gain(&mut r);
    config.texture = Some(Texture {
        seed: r.random(),
        strength: r.random_range(0.2..0.5),
    });
    config.lighting = opts.lighting;
    Ok(config)
}

/// Range of centre offsets that keep a press of radius up to `r_major`
/// inside the frame.
fn offset_range(config: &SceneConfig) -> [(f64, f64); 2] {
    let (h, w) = config.profile.native_resolution;
    let reach = config.blob.r_major + 1.0;
    let b = &config.blob;
    [
        (reach - b.center_row, h as f64 - 1.0 - reach - b.center_row),
        (reach - b.center_col, w as f64 - 1.0 - reach - b.center_col),
    ]
}

/// Script of sequence `j` of an object: slips on even `j`, holds still on
/// odd `j`. Slips translate, rotate, or both.
fn object_script(config: &SceneConfig, length: usize, seed: u64) -> Result<SlipScript> {
    let mut r = rng::stream(seed, 2);
    let ranges = offset_range(config);
    let slip = seed & 1 == 0;
    if !slip || length < 2 {
        let pose = Pose {
            d_row: r.random_range(ranges[0].0..=ranges[0].1),
            d_col: r.random_range(ranges[1].0..=ranges[1].1),
            d_rotation: r.random_range(-0.5..0.5),
        };
        return Ok(SlipScript::stationary(length, pose));
    }
    let d_max = (length - 1).clamp(1, 40);
    let d_min = 12.min(d_max);
    let duration = r.random_range(d_min..=d_max);
    let t_s = r.random_range(1..=length - duration);
    let t_e = t_s + duration;
    let scale = config.profile.native_resolution.0.min(config.profile.native_resolution.1) as f64 / 240.0;
    let kind = r.random_range(0..3);
    let mut delta = Pose::default();
    if kind != 1 {
        let speed = r.random_range(0.5..2.0) * scale;
        let dir: f64 = r.random_range(0.0..2.0 * PI);
        delta.d_row = speed * duration as f64 * dir.sin();
        delta.d_col = speed * duration as f64 * dir.cos();
        // Shrink paths longer than the room available.
        let fit = [delta.d_row, delta.d_col]
            .iter()
            .zip(&ranges)
            .map(|(d, (lo, hi))| if d.abs() > 0.0 { ((hi - lo) * 0.9 / d.abs()).min(1.0) } else { 1.0 })
            .fold(1.0, f64::min);
        delta.d_row *= fit;
        delta.d_col *= fit;
    }
    if kind != 0 {
        let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
        delta.d_rotation = sign * r.random_range(0.01..0.04) * duration as f64;
    }
    let start = |d: f64, (lo, hi): (f64, f64), r: &mut rng::Rng| r.random_range(lo - d.min(0.0)..=hi - d.max(0.0));
    let from = Pose {
        d_row: start(delta.d_row, ranges[0], &mut r),
        d_col: start(delta.d_col, ranges[1], &mut r),
        d_rotation: r.random_range(-0.5..0.5),
    };
    let to = Pose {
        d_row: from.d_row + delta.d_row,
        d_col: from.d_col + delta.d_col,
        d_rotation: from.d_rotation + delta.d_rotation,
    };
    SlipScript::moving(length, from, to, t_s, t_e)
}

/// Scene and script of sequence `j` of object `k`.
pub fn slip_scene(opts: &SlipGenOptions, k: usize, j: usize) -> Result<(SceneConfig, SlipScript)> {
    let mut config = object_scene(opts, k)?;
    // The low bit of the sequence seed carries the label.
    let seed = (rng::derive_seed(config.seed, 1 + j as u64) & !1) | (j as u64 & 1);
    let script = object_script(&config, opts.length, seed)?;
    config.seed = seed;
    config.noise_sigma = rng::stream(seed, 3).random_range(1.0..4.0);
    Ok((config, script))
}

pub fn object_id(k: usize) -> String {
    format!("obj{k:03}")
}

/// `objects x 2 * per_class` sequences, rendered on demand, ordered by
/// object. Within an object, slips and still sequences alternate.
pub fn slip_dataset(opts: &SlipGenOptions) -> Result<SlipDataset> {
    if opts.objects == 0 || opts.per_class == 0 || opts.length < 2 {
        return Err(Error::InvalidArgument(
            "need at least one object, one sequence per class and two frames".into(),
        ));
    }
    let mut sequences = Vec::with_capacity(opts.objects * 2 * opts.per_class);
    for k in 0..opts.objects {
        for j in 0..2 * opts.per_class {
            let (config, script) = slip_scene(opts, k, j)?;
            sequences.push(gen_slip_sequence(&config, &script, &object_id(k))?);
        }
    }
    SlipDataset::new(sequences)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Touch,
    Slip,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Touch => "touch",
            DatasetKind::Slip => "slip",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "touch" => Ok(DatasetKind::Touch),
            "slip" => Ok(DatasetKind::Slip),
            other => Err(Error::InvalidArgument(format!("unknown dataset kind `{other}`, expected touch or slip"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    pub profiles: Vec<String>,
    pub per_class: usize,
    /// Touch: devices per profile.
    pub serials: usize,
    /// Slip: number of objects and frames per sequence.
    pub objects: usize,
    pub length: usize,
    pub lighting: LightingMode,
    pub seed: u64,
    pub workers: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            profiles: vec!["digit".into()],
            per_class: 500,
            serials: 4,
            objects: 40,
            length: crate::slipdetect::DEFAULT_SEQUENCE_LENGTH,
            lighting: LightingMode::Rgb,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub kind: DatasetKind,
    pub manifest: PathBuf,
    /// Touch: one extra manifest per profile, inside its directory.
    pub profile_manifests: Vec<PathBuf>,
    pub samples: usize,
    pub positives: usize,
}

/// Runs `task(i)` for `i < n` on up to `workers` threads.
fn for_each_index(n: usize, workers: usize, task: impl Fn(usize) -> Result<()> + Sync) -> Result<()> {
    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<(usize, Error)>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n || failure.lock().expect("poisoned").is_some() {
                    break;
                }
                if let Err(e) = task(i) {
                    let mut slot = failure.lock().expect("poisoned");
                    // Report the lowest failing index so errors do not depend on scheduling.
                    if slot.as_ref().is_none_or(|(j, _)| i < *j) {
                        *slot = Some((i, e));
                    }
                }
            });
        }
    });
    match failure.into_inner().expect("poisoned") {
        Some((_, e)) => Err(e),
        None => Ok(()),
    }
}

fn write_csv_atomically<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let tmp = crate::fsio::staging_file(dir)?;
    {
        let mut w = csv::Writer::from_writer(tmp.as_file());
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn relative(path: &Path, base: &Path) -> String {
    let rel = path.strip_prefix(base).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// Writes PNG frames, per-device references and `manifest.csv` under `dir`.
pub fn write_touch_dataset(dataset: &TouchDataset, dir: &Path, workers: usize) -> Result<GenSummary> {
    let samples = dataset.samples();
    let mut rows = Vec::with_capacity(samples.len());
    let mut jobs: Vec<(FrameHandle, PathBuf)> = Vec::new();
    let mut seen_refs: Vec<(FrameHandle, String)> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let profile = s.profile_name().to_string();
        let image = dir.join(&profile).join("images").join(format!("{i:06}.png"));
        let reference_path = match &s.reference {
            Some(r) => {
                let path = match seen_refs.iter().find(|(h, _)| h.same_source(r)) {
                    Some((_, p)) => p.clone(),
                    None => {
                        let stem = format!("{}-{}", s.device_serial, seen_refs.len());
                        let p = dir.join(&profile).join("references").join(format!("{stem}.png"));
                        let rel = relative(&p, dir);
                        jobs.push((r.clone(), p));
                        seen_refs.push((r.clone(), rel.clone()));
                        rel
                    }
                };
                Some(path)
            }
            None => None,
        };
        rows.push(ManifestRow {
            path: relative(&image, dir),
            label: s.label,
            device_serial: s.device_serial.clone(),
            sensor_profile: profile,
            reference_path,
        });
        jobs.push((s.image.clone(), image));
    }
    for (_, p) in &jobs {
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    for_each_index(jobs.len(), workers, |i| {
        let (handle, path) = &jobs[i];
        handle.load()?.save_png(path)
    })?;
    let manifest = dir.join(MANIFEST_FILE);
    write_csv_atomically(&manifest, &rows)?;
    let mut profile_manifests = Vec::new();
    for profile in dataset.profiles() {
        let sub = dir.join(&profile);
        let prefix = format!("{profile}/");
        let local: Vec<ManifestRow> = rows
            .iter()
            .filter(|r| r.sensor_profile == profile)
            .map(|r| ManifestRow {
                path: r.path.strip_prefix(&prefix).unwrap_or(&r.path).to_string(),
                reference_path: r.reference_path.as_ref().map(|p| p.strip_prefix(&prefix).unwrap_or(p).to_string()),
                ..r.clone()
            })
            .collect();
        let path = sub.join(MANIFEST_FILE);
        write_csv_atomically(&path, &local)?;
        profile_manifests.push(path);
    }
    Ok(GenSummary {
        kind: DatasetKind::Touch,
        manifest,
        profile_manifests,
        samples: samples.len(),
        positives: samples.iter().filter(|s| s.label == 1).count(),
    })
}

/// Writes one sequence file per recording and `slip_manifest.csv` under
/// `dir`.
pub fn write_slip_dataset(dataset: &SlipDataset, dir: &Path, workers: usize) -> Result<GenSummary> {
    let seq_dir = dir.join("sequences");
    std::fs::create_dir_all(&seq_dir).map_err(|e| Error::io(&seq_dir, e))?;
    let sequences = dataset.sequences();
    let paths: Vec<PathBuf> = (0..sequences.len()).map(|i| seq_dir.join(format!("{i:04}.tkseq"))).collect();
    for_each_index(sequences.len(), workers, |i| {
        let s = &sequences[i];
        write_sequence(&paths[i], &s.frames()?, s.fps)
    })?;
    let rows: Vec<SlipManifestRow> = sequences
        .iter()
        .zip(&paths)
        .map(|(s, p)| SlipManifestRow {
            path: relative(p, dir),
            label: s.label,
            object_id: s.object_id.clone(),
            t_s: s.t_s,
            t_e: s.t_e,
            fps: s.fps,
        })
        .collect();
    let manifest = dir.join(SLIP_MANIFEST_FILE);
    write_csv_atomically(&manifest, &rows)?;
    Ok(GenSummary {
        kind: DatasetKind::Slip,
        manifest,
        profile_manifests: Vec::new(),
        samples: sequences.len(),
        positives: sequences.iter().filter(|s| s.label == 1).count(),
    })
}

/// Generates a labeled dataset and writes it under `dir` in the layout the
/// matching detector reads. Touch datasets may mix profiles; slip datasets
/// take exactly one.
pub fn gen_dataset(kind: DatasetKind, dir: &Path, opts: &GenOptions) -> Result<GenSummary> {
    if opts.per_class == 0 {
        return Err(Error::InvalidArgument("count per class must be at least 1".into()));
    }
    if opts.profiles.is_empty() {
        return Err(Error::InvalidArgument("name at least one sensor profile".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match kind {
        DatasetKind::Touch => {
            let parts = opts
                .profiles
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    touch_dataset(&TouchGenOptions {
                        profile: p.clone(),
                        per_class: opts.per_class,
                        serials: opts.serials,
                        lighting: opts.lighting,
                        with_reference: true,
                        seed: rng::derive_seed(opts.seed, k as u64),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            write_touch_dataset(&TouchDataset::union(&parts)?, dir, opts.workers)
        }
        DatasetKind::Slip => {
            let [profile] = opts.profiles.as_slice() else {
                return Err(Error::InvalidArgument(format!(
                    "slip datasets use one profile, got {}",
                    opts.profiles.len()
                )));
            };
            let dataset = slip_dataset(&SlipGenOptions {
                profile: profile.clone(),
                objects: opts.objects,
                per_class: opts.per_class,
                length: opts.length,
                lighting: opts.lighting,
                seed: opts.seed,
            })?;
            write_slip_dataset(&dataset, dir, opts.workers)
        }
    }
}
