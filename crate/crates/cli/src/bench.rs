use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tactilekit::sensors::{lookup_profile, Frame, MONO_SUFFIX};
use tactilekit::synthdata::{gen_touch_frame, LightingMode, SceneConfig};
use tactilekit::touchdetect::{Modality, TouchDetector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub iterations: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    /// `1000 / mean_ms`.
    pub fps: f64,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl LatencyReport {
    pub fn from_samples(samples_ms: &[f64], warmup: usize) -> Self {
        let n = samples_ms.len() as f64;
        let mean = samples_ms.iter().sum::<f64>() / n;
        let var = samples_ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let mut sorted = samples_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        LatencyReport {
            iterations: samples_ms.len(),
            warmup,
            mean_ms: mean,
            std_ms: var.sqrt(),
            p50_ms: percentile(&sorted, 0.5),
            p99_ms: percentile(&sorted, 0.99),
            fps: 1000.0 / mean,
        }
    }
}

/// Runs `op` `warmup` times untimed, then `iterations` timed runs.
pub fn measure<E>(iterations: usize, warmup: usize, mut op: impl FnMut() -> Result<(), E>) -> Result<Vec<f64>, E> {
    for _ in 0..warmup {
        op()?;
    }
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        op()?;
        out.push(duration_ms(t.elapsed()));
    }
    Ok(out)
}

fn duration_ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// A pressed synthetic frame and its reference for `profile`.
pub fn sample_frame(profile: &str, seed: u64) -> tactilekit::Result<(Frame, Frame)> {
    let (base, lighting) = match profile.strip_suffix(MONO_SUFFIX) {
        Some(b) => (b, LightingMode::Mono),
        None => (profile, LightingMode::Rgb),
    };
    let config = SceneConfig {
        lighting,
        ..SceneConfig::new(lookup_profile(base)?, "bench-0", seed)
    };
    let (frame, _) = gen_touch_frame(&config, true)?;
    Ok((frame, config.reference_frame()?))
}

/// Preprocess + forward latency of one frame through a touch model.
pub fn bench_touch(detector: &TouchDetector, iterations: usize, warmup: usize, seed: u64) -> tactilekit::Result<LatencyReport> {
    let profile = detector.specs().keys().next().expect("a detector has at least one profile").clone();
    let (frame, reference) = sample_frame(&profile, seed)?;
    let reference = (detector.modality() == Modality::WithReference).then_some(&reference);
    let samples = measure(iterations, warmup, || detector.is_touched(&frame, reference).map(|_| ()))?;
    Ok(LatencyReport::from_samples(&samples, warmup))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fps_is_inverse_mean() {
        let r = LatencyReport::from_samples(&[4.0, 6.0, 5.0, 5.0], 5);
        assert_eq!(r.mean_ms, 5.0);
        assert_eq!(r.fps, 200.0);
        assert_eq!(r.p50_ms, 5.0);
        assert_eq!(r.p99_ms, 6.0);
        assert!((r.std_ms - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&s, 0.5), 50.0);
        assert_eq!(percentile(&s, 0.99), 99.0);
        assert_eq!(percentile(&[3.0], 0.99), 3.0);
    }

    #[test]
    fn warmup_is_not_timed() {
        let mut calls = 0;
        let samples = measure::<()>(30, 5, || {
            calls += 1;
            if calls == 1 {
                std::thread::sleep(Duration::from_millis(200));
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 35);
        assert_eq!(samples.len(), 30);
        assert!(samples.iter().all(|&ms| ms < 100.0));
    }
}
