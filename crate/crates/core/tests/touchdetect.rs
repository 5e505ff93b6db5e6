use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use tactilekit::numerics::Budget;
use tactilekit::registry::FreezePolicy;
use tactilekit::sensors::lookup_profile;
use tactilekit::synthdata::{gen_touch_frame, touch_dataset, touch_scene, LightingMode, TouchGenOptions};
use tactilekit::touchdetect::folds::{stratified_folds, stratified_split, stratified_subsample};
use tactilekit::touchdetect::*;
use tactilekit::Error;

fn tiny(steps: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        budget: Budget::Steps(steps),
        batch_size: 4,
        seed,
        input_size: (16, 16),
        ..TrainConfig::default()
    }
}

fn data(profile: &str, per_class: usize, seed: u64) -> TouchDataset {
    touch_dataset(&TouchGenOptions {
        serials: 2,
        ..TouchGenOptions::new(profile, per_class, seed)
    })
    .unwrap()
}

fn labels_strata(counts: &[usize]) -> Vec<String> {
    counts.iter().enumerate().flat_map(|(s, &n)| std::iter::repeat_n(format!("s{s}"), n)).collect()
}

#[test]
fn paper_sized_partition() {
    // Three sensors, two classes, a handful of devices each.
    let counts = [190, 190, 190, 190, 190, 189, 190, 190, 190, 190, 190, 189];
    assert_eq!(counts.iter().sum::<usize>(), 2278);
    let folds = stratified_folds(&labels_strata(&counts), 5, 3).unwrap();
    let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(sizes, vec![456, 456, 456, 455, 455]);
}

#[test]
fn ten_samples_five_folds_one_of_each_class() {
    let strata: Vec<String> = (0..10).map(|i| format!("label={}", i % 2)).collect();
    for seed in 0..5 {
        let folds = stratified_folds(&strata, 5, seed).unwrap();
        for f in &folds {
            assert_eq!(f.len(), 2);
            let classes: BTreeSet<usize> = f.iter().map(|i| i % 2).collect();
            assert_eq!(classes.len(), 2);
        }
    }
    assert_eq!(DEFAULT_FOLDS, 5);
}

#[test]
fn infeasible_stratification_names_the_stratum() {
    let mut strata = labels_strata(&[10, 10]);
    strata.extend(std::iter::repeat_n("lonely".to_string(), 3));
    match stratified_folds(&strata, 5, 0) {
        Err(Error::Stratification { stratum, count, k }) => {
            assert_eq!((stratum.as_str(), count, k), ("lonely", 3, 5));
        }
        other => panic!("expected stratification error, got {other:?}"),
    }
    let tiny_set = data("digit", 2, 0);
    assert!(matches!(
        cross_validate(&tiny_set, &tiny(1, 0), Modality::WithReference),
        Err(Error::Stratification { .. })
    ));
}

#[test]
fn training_preconditions() {
    let d = data("digit", 4, 0);
    let ones: Vec<usize> = (0..d.len()).filter(|&i| d.labels()[i] == 1).collect();
    let only_touch = d.subset(&ones).unwrap();
    assert!(matches!(train(&only_touch, &tiny(1, 0), Modality::NoReference), Err(Error::Dataset(_))));

    let gel = data("gelsight", 4, 0);
    assert!(!gel.all_have_references());
    assert!(matches!(train(&gel, &tiny(1, 0), Modality::WithReference), Err(Error::Unsupported(_))));
    assert!(train(&gel, &tiny(1, 0), Modality::NoReference).is_ok());

    let joint = TouchDataset::union(&[d.clone(), data("omnitact", 4, 1)]).unwrap();
    assert!(train(&joint, &tiny(1, 0), Modality::NoReference).is_err());
    assert!(train_joint(std::slice::from_ref(&d), &tiny(1, 0), Modality::NoReference).is_err());

    let bad = TrainConfig { folds: 1, ..tiny(1, 0) };
    assert!(cross_validate(&d, &bad, Modality::NoReference).is_err());
}

#[test]
fn input_channels_follow_modality_and_lighting() {
    let cases = [
        (LightingMode::Rgb, Modality::WithReference, 6),
        (LightingMode::Rgb, Modality::NoReference, 3),
        (LightingMode::Mono, Modality::WithReference, 2),
        (LightingMode::Mono, Modality::NoReference, 1),
    ];
    for (lighting, modality, channels) in cases {
        let d = touch_dataset(&TouchGenOptions {
            lighting,
            serials: 2,
            ..TouchGenOptions::new("digit", 3, 0)
        })
        .unwrap();
        let (det, _) = train(&d, &tiny(1, 0), modality).unwrap();
        assert_eq!(det.network().input_shape()[0], channels, "{lighting:?} {modality:?}");
    }
}

#[test]
fn training_is_deterministic_and_reports_shape() {
    let d = data("digit", 10, 2);
    let (a, ra) = train(&d, &tiny(6, 5), Modality::WithReference).unwrap();
    let (b, rb) = train(&d, &tiny(6, 5), Modality::WithReference).unwrap();
    assert_eq!(ra.validation_accuracy, rb.validation_accuracy);
    assert_eq!(ra.steps, 6);
    assert_eq!(ra.train_samples + ra.validation_samples, 20);
    // 20% of each of the four 5-sample strata.
    assert_eq!(ra.validation_samples, 4);
    for (x, y) in a.network().params().iter().zip(b.network().params()) {
        assert_eq!(x.data(), y.data());
    }
    assert_eq!(a.provenance(), b.provenance());
    assert_eq!(ra.per_profile_accuracy.keys().collect::<Vec<_>>(), vec!["digit"]);
}

#[test]
fn cross_validation_shape_and_determinism() {
    let d = data("digit", 10, 3);
    let cfg = tiny(4, 9);
    let r = cross_validate(&d, &cfg, Modality::WithReference).unwrap();
    assert_eq!(r.folds.len(), 5);
    assert_eq!(r.fold_sizes, vec![4; 5]);
    let mean = r.folds.iter().sum::<f64>() / 5.0;
    assert!((r.mean - mean).abs() < 1e-12);
    let var = r.folds.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4.0;
    assert!((r.std - var.sqrt()).abs() < 1e-12);
    let again = cross_validate(&d, &cfg, Modality::WithReference).unwrap();
    assert_eq!(r.folds, again.folds);
}

#[test]
fn ablation_at_full_fraction_matches_cross_validation() {
    let d = data("digit", 10, 4);
    let cfg = tiny(3, 21);
    let cv = cross_validate(&d, &cfg, Modality::NoReference).unwrap();
    let points = ablate_dataset_size(&d, &[1.0], &cfg, Modality::NoReference, &[21]).unwrap();
    assert_eq!(points[0].accuracies, cv.folds);
    assert_eq!(points[0].samples, 20);
    assert!(ablation_csv(&points).starts_with("fraction,samples,mean,std\n1,20,"));
    // 10% of 5-sample strata keeps one per stratum: two per class, too few folds.
    assert!(ablate_dataset_size(&d, &[0.1], &cfg, Modality::NoReference, &[21]).is_err());
    assert!(ablate_dataset_size(&d, &[0.0], &cfg, Modality::NoReference, &[21]).is_err());
}

#[test]
fn fine_tune_respects_every_freeze_depth() {
    let d = data("digit", 6, 5);
    let (base, _) = train(&d, &tiny(2, 1), Modality::WithReference).unwrap();
    let target = data("digit", 6, 6);
    let units = base.network().units();
    let depth = units.len();
    for n in 1..=depth {
        let (tuned, report) = fine_tune(&base, &target, &tiny(3, 2), FreezePolicy::FreezeAllButLast(n)).unwrap();
        assert_eq!(report.trainable_units, n);
        let names = base.network().param_names();
        let open: BTreeSet<usize> = units[depth - n..].iter().flat_map(|u| u.params.iter().copied()).collect();
        for (i, (a, b)) in base.network().params().iter().zip(tuned.network().params()).enumerate() {
            let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            if !open.contains(&i) {
                assert!(same, "n={n}: frozen {} changed", names[i]);
            }
        }
        let frozen_bufs: BTreeSet<usize> = units[..depth - n].iter().flat_map(|u| u.buffers.iter().copied()).collect();
        for &i in &frozen_bufs {
            assert_eq!(base.network().buffers()[i].data(), tuned.network().buffers()[i].data());
        }
        for c in &report.changed {
            let i = names.iter().position(|x| x == c).unwrap();
            assert!(open.contains(&i));
        }
        if n == 1 {
            let fc: BTreeSet<&String> = units[depth - 1].params.iter().map(|&i| &names[i]).collect();
            assert_eq!(report.changed.iter().collect::<BTreeSet<_>>(), fc);
        }
    }
    assert!(fine_tune(&base, &target, &tiny(1, 2), FreezePolicy::FreezeAllButLast(depth + 1)).is_err());
}

#[test]
fn zero_step_or_fully_frozen_fine_tune_is_identity() {
    let d = data("digit", 6, 7);
    let (base, _) = train(&d, &tiny(2, 1), Modality::NoReference).unwrap();
    for (steps, policy) in [(0, FreezePolicy::FreezeNone), (3, FreezePolicy::FreezeAll)] {
        let (tuned, report) = fine_tune(&base, &data("digit", 6, 8), &tiny(steps, 3), policy).unwrap();
        assert!(report.changed.is_empty(), "{policy}");
        for (a, b) in base.network().params().iter().zip(tuned.network().params()) {
            assert_eq!(a.data(), b.data());
        }
        for (a, b) in base.network().buffers().iter().zip(tuned.network().buffers()) {
            assert_eq!(a.data(), b.data());
        }
    }
}

#[test]
fn fine_tune_onto_a_new_profile_extends_the_binding() {
    let (base, _) = train_joint(&[data("digit", 4, 0), data("omnitact", 4, 1)], &tiny(2, 0), Modality::NoReference).unwrap();
    assert!(!base.accepts("gelsight"));
    let (tuned, _) = fine_tune(&base, &data("gelsight", 4, 2), &tiny(2, 0), FreezePolicy::FreezeAllButLast(3)).unwrap();
    for p in ["digit", "omnitact", "gelsight"] {
        assert!(tuned.accepts(p));
    }
    assert_eq!(tuned.specs()["digit"], base.specs()["digit"]);
    let mono = touch_dataset(&TouchGenOptions {
        lighting: LightingMode::Mono,
        serials: 2,
        ..TouchGenOptions::new("omnitact", 4, 0)
    })
    .unwrap();
    assert!(fine_tune(&base, &mono, &tiny(1, 0), FreezePolicy::FreezeNone).is_err());
}

#[test]
fn joint_model_answers_only_for_its_profiles() {
    let sets = [data("digit", 4, 0), data("omnitact", 4, 1)];
    let (det, report) = train_joint(&sets, &tiny(3, 0), Modality::WithReference).unwrap();
    assert_eq!(det.binding(), &SensorBinding::Joint(vec!["digit".into(), "omnitact".into()]));
    assert_eq!(report.per_profile_accuracy.len(), 2);
    for s in sets.iter().map(|d| &d.samples()[0]) {
        let f = s.image.load().unwrap();
        let r = s.reference.as_ref().unwrap().load().unwrap();
        assert!(det.is_touched(&f, Some(&r)).is_ok());
        assert!(matches!(det.is_touched(&f, None), Err(Error::MissingReference)));
    }
    let gel = data("gelsight", 1, 0);
    let g = gel.samples()[0].image.load().unwrap();
    assert!(matches!(det.is_touched(&g, Some(&g)), Err(Error::ProfileMismatch { .. })));
}

#[test]
fn detector_round_trips_through_an_artifact() {
    let d = data("digit", 6, 11);
    let (det, _) = train(&d, &tiny(4, 2), Modality::WithReference).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("touch.tkmdl");
    det.save(&path).unwrap();
    let back = TouchDetector::load(&path).unwrap();
    assert_eq!(back.modality(), Modality::WithReference);
    assert_eq!(back.binding(), det.binding());
    for s in d.samples() {
        let f = s.image.load().unwrap();
        let r = s.reference.as_ref().unwrap().load().unwrap();
        let (a, b) = (det.is_touched(&f, Some(&r)).unwrap(), back.is_touched(&f, Some(&r)).unwrap());
        assert_eq!(a.probabilities[0].to_bits(), b.probabilities[0].to_bits());
    }
}

#[test]
fn decisions_are_coherent() {
    let d = data("digit", 8, 12);
    let (det, _) = train(&d, &tiny(5, 4), Modality::WithReference).unwrap();
    let opts = TouchGenOptions { serials: 2, ..TouchGenOptions::new("digit", 8, 99) };
    for i in 0..16 {
        let (config, label, _) = touch_scene(&opts, i).unwrap();
        let (frame, _) = gen_touch_frame(&config, label == 1).unwrap();
        let r = config.reference_frame().unwrap();
        let dec = det.is_touched(&frame, Some(&r)).unwrap();
        let [p0, p1] = dec.probabilities;
        assert!((p0 + p1 - 1.0).abs() <= 1e-5);
        assert!(dec.certainty >= 0.5 && dec.certainty <= 1.0);
        let expected = if dec.touching { p1 } else { p0 };
        assert_eq!(dec.certainty, expected);
        assert_eq!(dec.touching, p1 > p0);
    }
    let wrong = tactilekit::sensors::Frame::filled(lookup_profile("digit-mono").unwrap(), 0);
    assert!(det.is_touched(&wrong, Some(&wrong)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn folds_partition_and_stratify(counts in prop::collection::vec(1usize..40, 1..8), k in 2usize..8, seed in any::<u64>()) {
        let counts: Vec<usize> = counts.into_iter().map(|c| c + k).collect();
        let strata = labels_strata(&counts);
        let folds = stratified_folds(&strata, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0u8; strata.len()];
        for f in &folds {
            for &i in f {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in &folds {
            let mut per: BTreeMap<&str, usize> = BTreeMap::new();
            for &i in f {
                *per.entry(strata[i].as_str()).or_default() += 1;
            }
            for (s, &n) in counts.iter().enumerate() {
                let got = per.get(format!("s{s}").as_str()).copied().unwrap_or(0) as f64;
                prop_assert!((got - n as f64 / k as f64).abs() < 1.0);
            }
        }
        prop_assert_eq!(&folds, &stratified_folds(&strata, k, seed).unwrap());
    }

    #[test]
    fn holdout_and_subsample_are_stratified(counts in prop::collection::vec(2usize..50, 1..6), f in 0.05f64..0.95, seed in any::<u64>()) {
        let strata = labels_strata(&counts);
        let (train_idx, hold) = stratified_split(&strata, f, seed).unwrap();
        prop_assert_eq!(train_idx.len() + hold.len(), strata.len());
        prop_assert!(train_idx.iter().all(|i| hold.binary_search(i).is_err()));
        let keep = stratified_subsample(&strata, f, seed).unwrap();
        for (s, &n) in counts.iter().enumerate() {
            let name = format!("s{s}");
            let held = hold.iter().filter(|&&i| strata[i] == name).count();
            let expected = ((f * n as f64).round() as usize).max(1);
            prop_assert_eq!(held, expected);
            let kept = keep.iter().filter(|&&i| strata[i] == name).count();
            prop_assert_eq!(kept, (f * n as f64).round() as usize);
        }
    }
}
