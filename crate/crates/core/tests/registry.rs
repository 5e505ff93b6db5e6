use std::collections::BTreeMap;
use std::fs;

use proptest::prelude::*;
use tactilekit::numerics::{resnet_2d, Network, ResNetConfig, Tensor, UnitKind};
use tactilekit::registry::*;
use tactilekit::sensors::PreprocessSpec;
use tactilekit::Error;

fn network(seed: u64) -> Network {
    Network::new(resnet_2d(&ResNetConfig::lite(), 3, (8, 8), 2), seed).unwrap()
}

fn metadata(net: &Network) -> ArtifactMetadata {
    let mut preprocess = BTreeMap::new();
    preprocess.insert("digit".to_string(), PreprocessSpec::new((8, 8), 3, false));
    ArtifactMetadata {
        sensor: "digit".into(),
        task: Task::TouchDetect,
        modality: "no_reference".into(),
        window_length: None,
        architecture: net.spec().clone(),
        preprocess,
        provenance: Provenance {
            seed: 3,
            steps: 10,
            dataset_fingerprint: "abc".into(),
        },
        tensors: Vec::new(),
    }
}

fn random_input(seed: u64) -> Tensor {
    use rand::Rng;
    let mut r = tactilekit::numerics::rng::seeded(seed);
    Tensor::from_fn(&[2, 3, 8, 8], |_| r.random_range(-2.0..2.0))
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tkmdl");
    let net = network(5);
    let digest = save(&net, &metadata(&net), &path).unwrap();
    assert_eq!(digest.len(), 64);
    let back = load(&path).unwrap();
    for (a, b) in net.params().iter().zip(back.network.params()) {
        assert_eq!(a.data(), b.data());
    }
    for (a, b) in net.buffers().iter().zip(back.network.buffers()) {
        assert_eq!(a.data(), b.data());
    }
    for s in 0..10 {
        let x = random_input(s);
        let y0 = net.infer(&x).unwrap();
        let y1 = back.network.infer(&x).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&y0), bits(&y1));
    }
    assert_eq!(back.metadata.provenance.seed, 3);
    assert_eq!(back.metadata.tensors.len(), net.params().len() + net.buffers().len());
}

#[cfg(unix)]
#[test]
fn saved_artifacts_are_world_readable() {
    use std::os::unix::fs::PermissionsExt;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tkmdl");
    let net = network(1);
    save(&net, &metadata(&net), &path).unwrap();
    assert_eq!(fs::metadata(&path).unwrap().permissions().mode() & 0o777, 0o644);
}

#[test]
fn digest_covers_the_file_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let net = network(1);
    let d1 = save(&net, &metadata(&net), &dir.path().join("a")).unwrap();
    let d2 = save(&net, &metadata(&net), &dir.path().join("b")).unwrap();
    assert_eq!(d1, d2);
    let bytes = fs::read(dir.path().join("a")).unwrap();
    assert_eq!(&bytes[..6], ARTIFACT_MAGIC);
    assert_eq!(sha256_hex(&bytes), d1);
    // The trailing 32 bytes are the digest of everything before them.
    let tail = hex::encode(&bytes[bytes.len() - 32..]);
    assert_eq!(sha256_hex(&bytes[..bytes.len() - 32]), tail);
}

#[test]
fn missing_normalization_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let net = network(1);
    let mut meta = metadata(&net);
    meta.preprocess.get_mut("digit").unwrap().mean.clear();
    assert!(matches!(save(&net, &meta, &dir.path().join("x")), Err(Error::IncompleteMetadata(_))));
    meta.preprocess.clear();
    assert!(matches!(save(&net, &meta, &dir.path().join("x")), Err(Error::IncompleteMetadata(_))));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn flipped_weight_byte_is_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m");
    let net = network(2);
    save(&net, &metadata(&net), &path).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 32 - 100] ^= 0x01;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load(&path), Err(Error::Corrupt { .. })));
    assert!(matches!(inspect(&path), Err(Error::Corrupt { .. })));
}

#[test]
fn unknown_version_is_rejected_without_touching_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m");
    let net = network(2);
    save(&net, &metadata(&net), &path).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes[6] = 99;
    bytes[7] = 0;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load(&path), Err(Error::UnsupportedVersion(99))));
    assert_eq!(fs::read(&path).unwrap(), bytes);
}

#[test]
fn inspect_reads_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m");
    let net = network(2);
    save(&net, &metadata(&net), &path).unwrap();
    let meta = inspect(&path).unwrap();
    assert_eq!(meta.task, Task::TouchDetect);
    assert_eq!(meta.sensor, "digit");
}

struct Fixture {
    _dir: tempfile::TempDir,
    index: RegistryIndex,
    root: std::path::PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let models = root.join("models");
    fs::create_dir_all(&models).unwrap();
    let mut index = RegistryIndex::new(&models, root.join("cache"));
    for version in [1u32, 3, 2] {
        let net = network(version as u64);
        let name = format!("digit-touch-v{version}.tkmdl");
        let digest = save(&net, &metadata(&net), &models.join(&name)).unwrap();
        let size = fs::metadata(models.join(&name)).unwrap().len();
        index
            .insert(RegistryEntry {
                sensor: "digit".into(),
                task: Task::TouchDetect,
                version,
                uri: name,
                digest,
                size,
            })
            .unwrap();
    }
    index.save(&models.join(INDEX_FILE)).unwrap();
    Fixture {
        _dir: dir,
        index: RegistryIndex::load(&models.join(INDEX_FILE), root.join("cache")).unwrap(),
        root,
    }
}

#[test]
fn fetch_resolves_highest_version_and_hits_cache() {
    let f = fixture();
    let first = f.index.fetch("digit", Task::TouchDetect, None).unwrap();
    assert!(!first.from_cache);
    assert!(first.path.starts_with(f.root.join("cache")));
    assert!(first.path.to_string_lossy().contains("v3-"));
    let second = f.index.fetch("digit", Task::TouchDetect, None).unwrap();
    assert!(second.from_cache);
    assert_eq!(first.path, second.path);
    let v2 = f.index.fetch("digit", Task::TouchDetect, Some(2)).unwrap();
    assert!(v2.path.to_string_lossy().contains("v2-"));
    assert!(load(&v2.path).is_ok());
}

#[test]
fn tampered_cache_is_evicted_and_refetched() {
    let f = fixture();
    let path = f.index.fetch("digit", Task::TouchDetect, None).unwrap().path;
    let mut bytes = fs::read(&path).unwrap();
    bytes[200] ^= 0xff;
    fs::write(&path, &bytes).unwrap();
    let again = f.index.fetch("digit", Task::TouchDetect, None).unwrap();
    assert!(!again.from_cache);
    assert!(load(&again.path).is_ok());
}

#[test]
fn tampered_source_never_reaches_the_cache() {
    let f = fixture();
    let src = f.root.join("models").join("digit-touch-v3.tkmdl");
    let mut bytes = fs::read(&src).unwrap();
    bytes[300] ^= 0x10;
    fs::write(&src, &bytes).unwrap();
    assert!(matches!(f.index.fetch("digit", Task::TouchDetect, None), Err(Error::Corrupt { .. })));
    assert!(!f.root.join("cache").join("digit").join("touch_detect").exists()
        || fs::read_dir(f.root.join("cache").join("digit").join("touch_detect")).unwrap().count() == 0);
}

#[test]
fn unknown_key_lists_available() {
    let f = fixture();
    match f.index.fetch("gelsight", Task::SlipDetect, None) {
        Err(Error::NotFound { available, .. }) => assert_eq!(available.len(), 3),
        other => panic!("expected not found, got {other:?}"),
    }
    assert!(f.index.fetch("digit", Task::TouchDetect, Some(9)).is_err());
}

#[test]
fn duplicate_entries_are_rejected() {
    let mut index = RegistryIndex::new("/", "/tmp");
    let e = RegistryEntry {
        sensor: "digit".into(),
        task: Task::TouchDetect,
        version: 1,
        uri: "x".into(),
        digest: "00".into(),
        size: 0,
    };
    index.insert(e.clone()).unwrap();
    assert!(index.insert(e).is_err());
}

#[test]
fn freeze_last_one_leaves_only_the_dense_head() {
    let net = network(0);
    let mask = apply_freeze(&net, FreezePolicy::FreezeAllButLast(1)).unwrap();
    assert_eq!(mask.trainable_count(), 1);
    let last = net.units().last().unwrap();
    assert_eq!(last.kind, UnitKind::FullyConnected);
    assert_eq!(last.params.len(), 2);
    assert!(*mask.units.last().unwrap());
    assert_eq!(apply_freeze(&net, FreezePolicy::FreezeNone).unwrap().trainable_count(), net.units().len());
    assert_eq!(apply_freeze(&net, FreezePolicy::FreezeAll).unwrap().trainable_count(), 0);
    assert!(apply_freeze(&net, FreezePolicy::FreezeAllButLast(net.units().len() + 1)).is_err());
    assert!(apply_freeze(&net, FreezePolicy::FreezeAllButLast(0)).is_err());
}

#[test]
fn freeze_policy_parsing() {
    assert_eq!("last:3".parse::<FreezePolicy>().unwrap(), FreezePolicy::FreezeAllButLast(3));
    assert_eq!("none".parse::<FreezePolicy>().unwrap(), FreezePolicy::FreezeNone);
    assert_eq!("all".parse::<FreezePolicy>().unwrap(), FreezePolicy::FreezeAll);
    assert!("last:x".parse::<FreezePolicy>().is_err());
    assert_eq!(FreezePolicy::FreezeAllButLast(2).to_string(), "last:2");
}

proptest! {
    #[test]
    fn freeze_marks_exactly_n_trailing_units(n in 1usize..40) {
        let net = network(0);
        let units = net.units().len();
        prop_assume!(n <= units);
        let mask = apply_freeze(&net, FreezePolicy::FreezeAllButLast(n)).unwrap();
        prop_assert_eq!(mask.trainable_count(), n);
        prop_assert!(mask.units[units - n..].iter().all(|&t| t));
    }
}
