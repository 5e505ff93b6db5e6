use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use proptest::prelude::*;
use tactilekit::contact::{diff, estimate_contacts, SegmentOptions, ThresholdPolicy};
use tactilekit::sensors::{lookup_profile, to_grayscale, Frame};
use tactilekit::slipdetect::SlipDataset;
use tactilekit::synthdata::*;
use tactilekit::touchdetect::TouchDataset;

fn scene(profile: &str, seed: u64) -> SceneConfig {
    SceneConfig::new(lookup_profile(profile).unwrap(), "unit-0", seed)
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Magnitude of the diff image where the press is at half strength.
fn half_peak(config: &SceneConfig) -> f32 {
    let g: f32 = config.gain.iter().map(|g| g * g).sum::<f32>().sqrt();
    0.5 * config.blob.amplitude * g / (255.0 * 3f32.sqrt())
}

#[test]
fn same_seed_same_frame() {
    let c = scene("digit", 7);
    let (a, ta) = gen_touch_frame(&c, true).unwrap();
    let (b, tb) = gen_touch_frame(&c, true).unwrap();
    assert_eq!(a.pixels(), b.pixels());
    assert_eq!(ta, tb);
    let (other, _) = gen_touch_frame(&scene("digit", 8), true).unwrap();
    assert_ne!(a.pixels(), other.pixels());
    assert!(gen_touch_frame(&c, false).unwrap().1.is_none());
}

#[test]
fn untouched_frames_stay_within_noise_bound() {
    for sigma in [0.5f32, 1.0, 2.0, 4.0, 6.0] {
        for seed in 0..4 {
            let mut c = scene("digit", seed);
            c.noise_sigma = sigma;
            let (frame, _) = gen_touch_frame(&c, false).unwrap();
            let d = diff(&frame, &c.reference_frame().unwrap()).unwrap();
            assert!(d.max() <= (4.0 * sigma + 1.0) / 255.0, "sigma {sigma} seed {seed}: {}", d.max());
        }
    }
}

#[test]
fn noisy_press_centroid_is_recovered() {
    for seed in 0..5 {
        let mut c = scene("digit", seed);
        c.blob.amplitude = 120.0;
        c.noise_sigma = 2.0;
        c.blob.center_row = 101.3;
        c.blob.center_col = 170.6;
        c.blob.rotation = 0.4;
        let (frame, truth) = gen_touch_frame(&c, true).unwrap();
        let truth = truth.unwrap();
        let est = estimate_contacts(&frame, &c.reference_frame().unwrap(), &SegmentOptions::default()).unwrap();
        assert_eq!(est.regions.len(), 1, "seed {seed}");
        let r = &est.regions[0];
        assert!((r.centroid_row - truth.center_row).abs() < 0.5, "{r:?} vs {truth:?}");
        assert!((r.centroid_col - truth.center_col).abs() < 0.5, "{r:?} vs {truth:?}");
    }
}

#[test]
fn mono_is_luminance_of_rgb() {
    for profile in ["digit", "omnitact", "gelsight"] {
        let rgb = scene(profile, 3);
        let mono = SceneConfig {
            lighting: LightingMode::Mono,
            ..rgb.clone()
        };
        let (a, _) = gen_touch_frame(&rgb, true).unwrap();
        let (b, _) = gen_touch_frame(&mono, true).unwrap();
        assert_eq!(b.channels(), 1);
        assert_eq!(to_grayscale(&a).unwrap().pixels(), b.pixels());
        assert_eq!(mono.output_profile().unwrap().name, format!("{profile}-mono"));
    }
}

#[test]
fn out_of_frame_press_is_an_error() {
    let mut c = scene("digit", 0);
    c.blob.center_col = 5.0;
    assert!(gen_touch_frame(&c, true).is_err());
    // An unpressed frame ignores the blob.
    assert!(gen_touch_frame(&c, false).is_ok());
    let mut c = scene("digit", 0);
    c.noise_sigma = -1.0;
    assert!(gen_touch_frame(&c, false).is_err());
    let mono_profile = SceneConfig::new(lookup_profile("digit-mono").unwrap(), "x", 0);
    assert!(gen_touch_frame(&mono_profile, false).is_err());
}

#[test]
fn profiles_look_different() {
    let refs: Vec<Frame> = ["digit", "omnitact", "gelsight"]
        .iter()
        .map(|p| scene(p, 0).reference_frame().unwrap())
        .collect();
    let mean = |f: &Frame| f.pixels().iter().map(|&v| v as f64).sum::<f64>() / f.pixels().len() as f64;
    let means: Vec<f64> = refs.iter().map(mean).collect();
    assert!((means[0] - means[1]).abs() > 3.0 || refs[0].width() != refs[1].width());
    assert_ne!(
        Illumination::for_device("digit", "a"),
        Illumination::for_device("digit", "b")
    );
}

#[test]
fn still_script_gives_identical_noiseless_frames() {
    let mut c = scene("digit", 1);
    c.noise_sigma = 0.0;
    let script = SlipScript::stationary(128, Pose { d_row: 4.0, d_col: -9.0, d_rotation: 0.2 });
    let s = gen_slip_sequence(&c, &script, "o").unwrap();
    assert_eq!(s.label, 0);
    assert_eq!(s.len(), 128);
    assert_eq!(s.fps, 30.0);
    let first = s.frame(0).unwrap();
    for i in [1, 50, 127] {
        assert_eq!(s.frame(i).unwrap().pixels(), first.pixels());
    }
    // With noise the frames differ, but only by noise.
    c.noise_sigma = 2.0;
    let s = gen_slip_sequence(&c, &script, "o").unwrap();
    let (a, b) = (s.frame(3).unwrap(), s.frame(4).unwrap());
    assert_ne!(a.pixels(), b.pixels());
    assert!(diff(&a, &b).unwrap().max() < 2.0 * (4.0 * 2.0 + 1.0) / 255.0);
}

#[test]
fn moving_press_follows_the_script() {
    let mut c = scene("digit", 2);
    c.noise_sigma = 0.0;
    let from = Pose::default();
    let to = Pose { d_row: 0.0, d_col: 30.0, d_rotation: 0.0 };
    let script = SlipScript::moving(128, from, to, 41, 71).unwrap();
    assert_eq!(script.label(), 1);
    let s = gen_slip_sequence(&c, &script, "o").unwrap();
    assert_eq!((s.label, s.t_s, s.t_e), (1, Some(41), Some(71)));
    let reference = c.reference_frame().unwrap();
    let opts = SegmentOptions {
        policy: ThresholdPolicy::Fixed(half_peak(&c)),
        ..SegmentOptions::default()
    };
    let col = |i: usize| estimate_contacts(&s.frame(i).unwrap(), &reference, &opts).unwrap().regions[0].centroid_col;
    let base = c.blob.center_col;
    // 1 px per frame between frames 41 and 71 (1-based).
    for (t, expected) in [(1, 0.0), (41, 0.0), (42, 1.0), (56, 15.0), (71, 30.0), (128, 30.0)] {
        assert!((col(t - 1) - base - expected).abs() < 0.5, "frame {t}: {}", col(t - 1) - base);
    }
}

#[test]
fn bad_scripts_are_rejected() {
    let c = scene("digit", 0);
    let p = Pose::default();
    assert!(SlipScript::moving(10, p, p, 2, 5).is_err());
    let q = Pose { d_col: 1.0, ..p };
    assert!(SlipScript::moving(10, p, q, 5, 5).is_err());
    assert!(SlipScript::moving(10, p, q, 0, 5).is_err());
    assert!(SlipScript::moving(10, p, q, 3, 11).is_err());
    let mut s = SlipScript::stationary(10, p);
    s.poses[4] = q;
    assert!(s.validate().is_err());
    assert!(gen_slip_sequence(&c, &s, "o").is_err());
    let mut s = SlipScript::moving(10, p, q, 3, 6).unwrap();
    s.poses[8].d_row = 2.0;
    assert!(s.validate().is_err());
    let far = Pose { d_col: 500.0, ..p };
    let s = SlipScript::moving(10, p, far, 3, 6).unwrap();
    assert!(gen_slip_sequence(&c, &s, "o").is_err());
}

#[test]
fn full_size_counts() {
    let touch = touch_dataset(&TouchGenOptions::new("digit", 500, 0)).unwrap();
    assert_eq!(touch.len(), 1000);
    assert_eq!(touch.samples().iter().filter(|s| s.label == 1).count(), 500);
    let mut per_stratum: BTreeMap<String, usize> = BTreeMap::new();
    for s in touch.samples() {
        *per_stratum.entry(s.stratum()).or_default() += 1;
    }
    assert_eq!(per_stratum.len(), 8);
    assert!(per_stratum.values().all(|&n| n == 125));

    let slip = slip_dataset(&SlipGenOptions::new("digit", 40, 10, 0)).unwrap();
    assert_eq!(slip.len(), 800);
    assert_eq!(slip.objects().len(), 40);
    assert_eq!(slip.sequences().iter().filter(|s| s.label == 1).count(), 400);
    assert!(slip.sequences().iter().all(|s| s.len() == 128));
    for obj in slip.objects() {
        let n = slip.sequences().iter().filter(|s| s.object_id == obj && s.label == 1).count();
        assert_eq!(n, 10);
    }
}

#[test]
fn generated_touch_ground_truth_is_in_range() {
    let opts = TouchGenOptions::new("digit", 50, 11);
    let (mut lo, mut hi) = (f32::MAX, f32::MIN);
    for i in 0..100 {
        let (c, label, _) = touch_scene(&opts, i).unwrap();
        assert_eq!(label as usize, i % 2);
        assert!(c.noise_sigma >= 0.0 && c.noise_sigma <= MAX_NOISE_SIGMA);
        c.check_in_bounds(&c.blob).unwrap();
        lo = lo.min(c.blob.amplitude);
        hi = hi.max(c.blob.amplitude);
    }
    assert!(lo >= AMPLITUDE_RANGE.0 && hi <= AMPLITUDE_RANGE.1);
    assert!(lo < 45.0 && hi > 135.0);
}

#[test]
fn slip_sets_include_rotation_only_slips() {
    let opts = SlipGenOptions::new("digit", 6, 10, 5);
    let (mut rotation_only, mut translating) = (0, 0);
    for k in 0..6 {
        for j in 0..20 {
            let (_, script) = slip_scene(&opts, k, j).unwrap();
            if script.label() == 0 {
                continue;
            }
            let (a, b) = (script.poses[0], *script.poses.last().unwrap());
            if a.d_row == b.d_row && a.d_col == b.d_col {
                assert_ne!(a.d_rotation, b.d_rotation);
                rotation_only += 1;
            } else {
                translating += 1;
            }
            let d = script.t_e.unwrap() - script.t_s.unwrap();
            assert!((12..=40).contains(&d));
        }
    }
    assert!(rotation_only > 0 && translating > 0);
}

fn dir_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn touch_dataset_on_disk_is_reproducible_and_loadable() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = GenOptions {
        profiles: vec!["digit".into(), "omnitact".into()],
        per_class: 3,
        serials: 2,
        seed: 9,
        ..GenOptions::default()
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let summary = gen_dataset(DatasetKind::Touch, &a, &opts).unwrap();
    gen_dataset(DatasetKind::Touch, &b, &GenOptions { workers: 3, ..opts.clone() }).unwrap();
    assert_eq!(summary.samples, 12);
    assert_eq!(summary.positives, 6);
    let (ba, bb) = (dir_bytes(&a), dir_bytes(&b));
    // Images, references, the joint manifest and one per profile.
    assert_eq!(ba.len(), 12 + 4 + 1 + 2);
    assert_eq!(summary.profile_manifests.len(), 2);
    let omni = TouchDataset::load_manifest(&a.join("omnitact")).unwrap();
    assert_eq!(omni.profiles(), vec!["omnitact".to_string()]);
    assert_eq!(omni.len(), 6);
    assert_eq!(ba, bb);

    let loaded = TouchDataset::load_manifest(&a).unwrap();
    assert_eq!(loaded.len(), 12);
    assert!(loaded.all_have_references());
    let direct = touch_dataset(&TouchGenOptions {
        serials: 2,
        seed: tactilekit::numerics::rng::derive_seed(9, 1),
        ..TouchGenOptions::new("omnitact", 3, 0)
    })
    .unwrap();
    for (l, d) in loaded.samples()[6..].iter().zip(direct.samples()) {
        assert_eq!(l.label, d.label);
        assert_eq!(l.image.load().unwrap().pixels(), d.image.load().unwrap().pixels());
        assert_eq!(
            l.reference.as_ref().unwrap().load().unwrap().pixels(),
            d.reference.as_ref().unwrap().load().unwrap().pixels()
        );
    }
    assert!(gen_dataset(DatasetKind::Touch, &a, &GenOptions { per_class: 0, ..opts }).is_err());
}

#[test]
fn slip_dataset_on_disk_is_reproducible_and_loadable() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = GenOptions {
        per_class: 1,
        objects: 2,
        length: 6,
        seed: 4,
        lighting: LightingMode::Mono,
        ..GenOptions::default()
    };
    let a = tmp.path().join("a");
    let summary = gen_dataset(DatasetKind::Slip, &a, &opts).unwrap();
    assert_eq!((summary.samples, summary.positives), (4, 2));
    let b = tmp.path().join("b");
    gen_dataset(DatasetKind::Slip, &b, &GenOptions { workers: 2, ..opts.clone() }).unwrap();
    assert_eq!(dir_bytes(&a), dir_bytes(&b));

    let loaded = SlipDataset::load_manifest(&a).unwrap();
    let direct = slip_dataset(&SlipGenOptions {
        length: 6,
        lighting: LightingMode::Mono,
        ..SlipGenOptions::new("digit", 2, 1, 4)
    })
    .unwrap();
    assert_eq!(loaded.profile().name, "digit-mono");
    for (l, d) in loaded.sequences().iter().zip(direct.sequences()) {
        assert_eq!((l.label, l.t_s, l.t_e, &l.object_id), (d.label, d.t_s, d.t_e, &d.object_id));
        assert_eq!(l.frame(5).unwrap().pixels(), d.frame(5).unwrap().pixels());
    }
    let two = GenOptions {
        profiles: vec!["digit".into(), "gelsight".into()],
        ..opts
    };
    assert!(gen_dataset(DatasetKind::Slip, &tmp.path().join("c"), &two).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noiseless_press_geometry_is_recovered(
        seed in any::<u64>(),
        a_frac in 0.06f64..0.15,
        aspect in 0.55f64..1.0,
        rotation in 0.0f64..PI,
        amplitude in 40.0f32..150.0,
        edge in 1.0f64..3.0,
        fr in 0.0f64..1.0,
        fc in 0.0f64..1.0,
    ) {
        let mut c = scene("digit", seed);
        c.noise_sigma = 0.0;
        let a = a_frac * 240.0;
        c.blob = Blob { center_row: 0.0, center_col: 0.0, r_major: a, r_minor: a * aspect, rotation, amplitude, edge_sigma: edge };
        let (er, ec) = c.blob.half_extents();
        c.blob.center_row = er + 1.0 + fr * (237.0 - 2.0 * er);
        c.blob.center_col = ec + 1.0 + fc * (317.0 - 2.0 * ec);
        let (frame, truth) = gen_touch_frame(&c, true).unwrap();
        let truth = truth.unwrap();
        let opts = SegmentOptions { policy: ThresholdPolicy::Fixed(half_peak(&c)), ..SegmentOptions::default() };
        let est = estimate_contacts(&frame, &c.reference_frame().unwrap(), &opts).unwrap();
        prop_assert_eq!(est.regions.len(), 1);
        let r = &est.regions[0];
        prop_assert!((r.centroid_row - truth.center_row).abs() < 0.5);
        prop_assert!((r.centroid_col - truth.center_col).abs() < 0.5);
        prop_assert!((r.semi_major / truth.r_major - 1.0).abs() < 0.03, "{} vs {}", r.semi_major, truth.r_major);
        prop_assert!((r.semi_minor / truth.r_minor - 1.0).abs() < 0.03, "{} vs {}", r.semi_minor, truth.r_minor);
        if aspect < 0.85 {
            prop_assert!(angle_gap(r.orientation, truth.rotation) < 0.05);
        }
    }

    #[test]
    fn slip_label_matches_motion(seed in any::<u64>(), k in 0usize..40, j in 0usize..20, length in 2usize..140) {
        let opts = SlipGenOptions { length, ..SlipGenOptions::new("digit", 40, 10, seed) };
        let (config, script) = slip_scene(&opts, k, j).unwrap();
        script.validate().unwrap();
        prop_assert_eq!(script.label() == 1, script.moves());
        prop_assert_eq!(script.label() as usize, 1 - j % 2);
        for p in &script.poses {
            config.check_in_bounds(&p.apply(&config.blob)).unwrap();
        }
    }

    #[test]
    fn constructed_scripts_are_labeled_by_motion(
        length in 2usize..64,
        s in 1usize..63,
        span in 1usize..63,
        dr in -3.0f64..3.0,
        dc in -3.0f64..3.0,
        dt in -0.5f64..0.5,
        still in any::<bool>(),
    ) {
        let from = Pose::default();
        let to = Pose { d_row: dr, d_col: dc, d_rotation: dt };
        let script = if still {
            SlipScript::stationary(length, to)
        } else {
            match SlipScript::moving(length, from, to, s, s + span) {
                Ok(sc) => sc,
                Err(_) => return Ok(()),
            }
        };
        script.validate().unwrap();
        prop_assert_eq!(script.label() == 1, script.moves());
    }
}
