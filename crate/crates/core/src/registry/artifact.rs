use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Network, NetworkSpec, Tensor};
use crate::sensors::PreprocessSpec;

pub const ARTIFACT_MAGIC: &[u8; 6] = b"TKMDL1";
pub const FORMAT_VERSION: u16 = 1;

const DIGEST_LEN: usize = 32;
const HEADER_LEN: usize = 6 + 2 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    TouchDetect,
    SlipDetect,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::TouchDetect => "touch_detect",
            Task::SlipDetect => "slip_detect",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "touch_detect" | "touch" => Ok(Task::TouchDetect),
            "slip_detect" | "slip" => Ok(Task::SlipDetect),
            other => Err(Error::InvalidArgument(format!(
                "unknown task `{other}` (expected touch_detect or slip_detect)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub steps: u64,
    /// Hex digest identifying the training data.
    pub dataset_fingerprint: String,
}

/// Name and shape of one stored blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    /// Profile name, or `joint` for multi-profile models.
    pub sensor: String,
    pub task: Task,
    /// Input modality, e.g. `with_reference`, `no_reference`, `frames2d`.
    pub modality: String,
    /// Frames per window for sequence models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_length: Option<usize>,
    pub architecture: NetworkSpec,
    /// Preprocessing per accepted profile, including normalization stats.
    pub preprocess: BTreeMap<String, PreprocessSpec>,
    pub provenance: Provenance,
    /// Parameters followed by batch-norm buffers, in network order. Filled
    /// in by [`save`].
    #[serde(default)]
    pub tensors: Vec<TensorEntry>,
}

impl ArtifactMetadata {
    pub fn validate(&self) -> Result<()> {
        if self.sensor.is_empty() {
            return Err(Error::IncompleteMetadata("sensor binding is empty".into()));
        }
        if self.modality.is_empty() {
            return Err(Error::IncompleteMetadata("modality is empty".into()));
        }
        if self.preprocess.is_empty() {
            return Err(Error::IncompleteMetadata("no preprocess spec".into()));
        }
        for (profile, spec) in &self.preprocess {
            if spec.mean.is_empty() || spec.std.is_empty() {
                return Err(Error::IncompleteMetadata(format!("missing normalization stats for `{profile}`")));
            }
            spec.validate()
                .map_err(|e| Error::IncompleteMetadata(format!("preprocess spec for `{profile}`: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ModelArtifact {
    pub metadata: ArtifactMetadata,
    pub network: Network,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode(network: &Network, metadata: &ArtifactMetadata) -> Result<Vec<u8>> {
    metadata.validate()?;
    if &metadata.architecture != network.spec() {
        return Err(Error::InvalidArgument(
            "metadata architecture differs from the network's own spec".into(),
        ));
    }
    let mut meta = metadata.clone();
    meta.tensors = network
        .param_names()
        .iter()
        .zip(network.params())
        .chain(network.buffer_names().iter().zip(network.buffers()))
        .map(|(name, t)| TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
        })
        .collect();
    let json = serde_json::to_vec(&meta)?;
    let json_len = u32::try_from(json.len()).map_err(|_| Error::InvalidArgument("metadata too large".into()))?;
    let weights: usize = network.params().iter().chain(network.buffers()).map(|t| t.len() * 4).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + weights + DIGEST_LEN);
    out.extend_from_slice(ARTIFACT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    for t in network.params().iter().chain(network.buffers()) {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Writes the artifact atomically and returns the hex SHA-256 of the whole
/// file, the value registry entries record.
pub fn save(network: &Network, metadata: &ArtifactMetadata, path: &Path) -> Result<String> {
    let bytes = encode(network, metadata)?;
    let digest = sha256_hex(&bytes);
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = crate::fsio::staging_file(dir)?;
    tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(digest)
}

/// Checks magic, version and digest, returning the metadata and the weight
/// region.
fn parse<'a>(bytes: &'a [u8], path: &Path) -> Result<(ArtifactMetadata, &'a [u8])> {
    let corrupt = |reason: &str| Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < HEADER_LEN + DIGEST_LEN || &bytes[..6] != ARTIFACT_MAGIC {
        return Err(corrupt("not a model artifact"));
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("digest mismatch"));
    }
    let meta_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let weights_start = HEADER_LEN
        .checked_add(meta_len)
        .filter(|&end| end <= body.len())
        .ok_or_else(|| corrupt("metadata length exceeds file"))?;
    let meta: ArtifactMetadata = serde_json::from_slice(&body[HEADER_LEN..weights_start])
        .map_err(|e| corrupt(&format!("metadata: {e}")))?;
    Ok((meta, &body[weights_start..]))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Metadata of a verified artifact, without building the network.
pub fn inspect(path: &Path) -> Result<ArtifactMetadata> {
    let bytes = read(path)?;
    parse(&bytes, path).map(|(m, _)| m)
}

pub fn load(path: &Path) -> Result<ModelArtifact> {
    let bytes = read(path)?;
    let (metadata, mut weights) = parse(&bytes, path)?;
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let template = Network::new(metadata.architecture.clone(), 0)?;
    let expected: Vec<&[usize]> = template
        .params()
        .iter()
        .chain(template.buffers())
        .map(|t| t.shape())
        .collect();
    if expected.len() != metadata.tensors.len()
        || expected.iter().zip(&metadata.tensors).any(|(s, e)| *s != e.shape.as_slice())
    {
        return Err(corrupt("tensor manifest does not match the architecture".into()));
    }
    let mut tensors = Vec::with_capacity(expected.len());
    for entry in &metadata.tensors {
        let n: usize = entry.shape.iter().product();
        if weights.len() < n * 4 {
            return Err(corrupt(format!("weight region ends inside `{}`", entry.name)));
        }
        let (blob, rest) = weights.split_at(n * 4);
        weights = rest;
        let data = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        tensors.push(Tensor::new(entry.shape.clone(), data)?);
    }
    if !weights.is_empty() {
        return Err(corrupt(format!("{} trailing bytes after the weights", weights.len())));
    }
    let buffers = tensors.split_off(template.params().len());
    let network = Network::from_parts(metadata.architecture.clone(), tensors, buffers)?;
    Ok(ModelArtifact { metadata, network })
}
