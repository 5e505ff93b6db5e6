use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artifact::{sha256_hex, Task};
use crate::error::{Error, Result};

/// Overrides the cache directory.
pub const CACHE_ENV: &str = "TACTILEKIT_CACHE";
pub const INDEX_FILE: &str = "registry.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub sensor: String,
    pub task: Task,
    pub version: u32,
    /// `http(s)://` URL, `file://` URL, or a path relative to the index.
    pub uri: String,
    /// Hex SHA-256 of the artifact.
    pub digest: String,
    pub size: u64,
}

impl RegistryEntry {
    fn key(&self) -> String {
        format!("{}/{}@{}", self.sensor, self.task, self.version)
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct IndexFile {
    entries: Vec<RegistryEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fetched {
    pub path: PathBuf,
    /// True when a verified cached copy was reused.
    pub from_cache: bool,
}

#[derive(Clone, Debug)]
pub struct RegistryIndex {
    entries: BTreeMap<(String, Task, u32), RegistryEntry>,
    base_dir: PathBuf,
    cache_dir: PathBuf,
}

/// `$TACTILEKIT_CACHE`, else `$HOME/.cache/tactilekit`, else a directory
/// under the system temp dir.
pub fn default_cache_dir() -> PathBuf {
    if let Some(dir) = env::var_os(CACHE_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(dir);
    }
    match env::var_os("HOME").filter(|v| !v.is_empty()) {
        Some(home) => PathBuf::from(home).join(".cache").join("tactilekit"),
        None => env::temp_dir().join("tactilekit-cache"),
    }
}

impl RegistryIndex {
    pub fn new(base_dir: impl Into<PathBuf>, cache_dir: impl Into<PathBuf>) -> Self {
        RegistryIndex {
            entries: BTreeMap::new(),
            base_dir: base_dir.into(),
            cache_dir: cache_dir.into(),
        }
    }

    /// Reads an index file; relative URIs resolve against its directory.
    pub fn load(path: &Path, cache_dir: impl Into<PathBuf>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: IndexFile = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut index = RegistryIndex::new(base, cache_dir);
        for e in file.entries {
            index.insert(e)?;
        }
        Ok(index)
    }

    /// The index shipped with the library, cached in [`default_cache_dir`].
    pub fn bundled() -> Result<Self> {
        Self::load(&Self::bundled_path(), default_cache_dir())
    }

    pub fn bundled_path() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models").join(INDEX_FILE)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = IndexFile {
            entries: self.entries.values().cloned().collect(),
        };
        let json = serde_json::to_string_pretty(&file)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn cache_dir(&self) -> &Path {
        &self.cache_dir
    }

    pub fn set_cache_dir(&mut self, dir: impl Into<PathBuf>) {
        self.cache_dir = dir.into();
    }

    pub fn insert(&mut self, entry: RegistryEntry) -> Result<()> {
        let key = (entry.sensor.clone(), entry.task, entry.version);
        if self.entries.contains_key(&key) {
            return Err(Error::InvalidArgument(format!("duplicate registry entry {}", entry.key())));
        }
        self.entries.insert(key, entry);
        Ok(())
    }

    /// Entries ordered by sensor, task, then version.
    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The requested version, or the highest one when `version` is `None`.
    pub fn resolve(&self, sensor: &str, task: Task, version: Option<u32>) -> Result<&RegistryEntry> {
        let found = match version {
            Some(v) => self.entries.get(&(sensor.to_string(), task, v)),
            None => self
                .entries
                .range((sensor.to_string(), task, 0)..=(sensor.to_string(), task, u32::MAX))
                .next_back()
                .map(|(_, e)| e),
        };
        found.ok_or_else(|| Error::NotFound {
            key: match version {
                Some(v) => format!("{sensor}/{task}@{v}"),
                None => format!("{sensor}/{task}"),
            },
            available: self.entries.values().map(RegistryEntry::key).collect(),
        })
    }

    fn cache_path(&self, e: &RegistryEntry) -> PathBuf {
        let prefix = &e.digest[..e.digest.len().min(16)];
        self.cache_dir
            .join(&e.sensor)
            .join(e.task.as_str())
            .join(format!("v{}-{prefix}.tkmdl", e.version))
    }

    /// Returns a digest-verified local copy, downloading into the cache when
    /// needed. A cached copy that fails verification is evicted and fetched
    /// again.
    pub fn fetch(&self, sensor: &str, task: Task, version: Option<u32>) -> Result<Fetched> {
        let entry = self.resolve(sensor, task, version)?;
        let path = self.cache_path(entry);
        if path.exists() {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if sha256_hex(&bytes) == entry.digest {
                return Ok(Fetched { path, from_cache: true });
            }
            log::warn!("cached {} failed verification; fetching again", path.display());
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
        let bytes = self.download(&entry.uri)?;
        let digest = sha256_hex(&bytes);
        if digest != entry.digest || bytes.len() as u64 != entry.size {
            return Err(Error::Corrupt {
                path: PathBuf::from(&entry.uri),
                reason: format!(
                    "downloaded {} bytes with digest {digest}, index expects {} bytes with {}",
                    bytes.len(),
                    entry.size,
                    entry.digest
                ),
            });
        }
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = crate::fsio::staging_file(dir)?;
        tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(Fetched { path, from_cache: false })
    }

    fn download(&self, uri: &str) -> Result<Vec<u8>> {
        if uri.starts_with("http://") || uri.starts_with("https://") {
            let fail = |reason: String| Error::Download {
                uri: uri.to_string(),
                reason,
            };
            let mut resp = ureq::get(uri).call().map_err(|e| fail(e.to_string()))?;
            let mut out = Vec::new();
            io::copy(&mut resp.body_mut().as_reader(), &mut out).map_err(|e| fail(e.to_string()))?;
            return Ok(out);
        }
        let path = match uri.strip_prefix("file://") {
            Some(p) => PathBuf::from(p),
            None => self.base_dir.join(uri),
        };
        fs::read(&path).map_err(|e| Error::io(&path, e))
    }
}
