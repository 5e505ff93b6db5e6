//! Stratified partitioning shared by touch and slip experiments.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numerics::rng;

/// Members of each stratum in first-appearance order of the strata, each
/// list shuffled with `seed`.
fn shuffled_strata(strata: &[String], seed: u64) -> Vec<(String, Vec<usize>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        let g = groups.entry(s).or_default();
        if g.is_empty() {
            order.push(s.clone());
        }
        g.push(i);
    }
    let mut r = rng::stream(seed, 0x464f4c44);
    order
        .into_iter()
        .map(|s| {
            let mut members = groups.remove(s.as_str()).expect("stratum present");
            members.shuffle(&mut r);
            (s, members)
        })
        .collect()
}

/// Splits `0..strata.len()` into `k` disjoint folds covering everything.
/// Strata are laid end to end and dealt round-robin, so fold sizes differ
/// by at most one overall and within every stratum.
pub fn stratified_folds(strata: &[String], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let groups = shuffled_strata(strata, seed);
    if let Some((s, m)) = groups.iter().find(|(_, m)| m.len() < k) {
        return Err(Error::Stratification {
            stratum: s.clone(),
            count: m.len(),
            k,
        });
    }
    let mut folds = vec![Vec::new(); k];
    for (slot, i) in groups.into_iter().flat_map(|(_, m)| m).enumerate() {
        folds[slot % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Holds out `round(fraction * n)` members of every stratum (at least one
/// when the stratum has two or more). Returns `(train, holdout)`, sorted.
pub fn stratified_split(strata: &[String], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("holdout fraction must be in [0, 1), got {fraction}")));
    }
    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    for (_, members) in shuffled_strata(strata, seed) {
        let mut n = (fraction * members.len() as f64).round() as usize;
        if fraction > 0.0 && n == 0 && members.len() >= 2 {
            n = 1;
        }
        holdout.extend_from_slice(&members[..n]);
        train.extend_from_slice(&members[n..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    Ok((train, holdout))
}

/// Keeps `round(fraction * n)` members of every stratum. A fraction of 1
/// returns every index in order.
pub fn stratified_subsample(strata: &[String], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must be in (0, 1], got {fraction}")));
    }
    if fraction == 1.0 {
        return Ok((0..strata.len()).collect());
    }
    let mut keep = Vec::new();
    for (_, members) in shuffled_strata(strata, seed) {
        let n = (fraction * members.len() as f64).round() as usize;
        keep.extend_from_slice(&members[..n]);
    }
    keep.sort_unstable();
    Ok(keep)
}
