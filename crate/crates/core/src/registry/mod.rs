//! Model artifacts, the registry index with its local cache, and freeze
//! policies for transfer learning.

mod artifact;
mod freeze;
mod index;

pub use artifact::{
    inspect, load, save, sha256_hex, ArtifactMetadata, ModelArtifact, Provenance, Task, TensorEntry, ARTIFACT_MAGIC,
    FORMAT_VERSION,
};
pub use freeze::{apply_freeze, FreezePolicy};
pub use index::{default_cache_dir, Fetched, RegistryEntry, RegistryIndex, CACHE_ENV, INDEX_FILE};
