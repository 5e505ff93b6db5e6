use std::sync::Arc;

use super::frame::Frame;
use super::profile::{lookup_profile, PreprocessSpec};
use super::source::FrameSource;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Luminance weights for RGB to gray.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Frames averaged by [`acquire_reference`] when no count is given.
pub const DEFAULT_REFERENCE_FRAMES: usize = 8;

/// Source taps and weights for each output index along one axis.
///
/// Shrinking averages the exact source area each output pixel covers, so the
/// image mean is preserved; enlarging interpolates linearly between pixel
/// centres.
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|j| {
            if src >= dst {
                let (lo, hi) = (j as f64 * scale, (j + 1) as f64 * scale);
                let mut taps = Vec::new();
                let mut i = lo.floor() as usize;
                while (i as f64) < hi && i < src {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    if overlap > 0.0 {
                        taps.push((i, overlap / scale));
                    }
                    i += 1;
                }
                taps
            } else {
                let x = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = x.floor() as usize;
                let f = x - i0 as f64;
                if f == 0.0 || i0 + 1 >= src {
                    vec![(i0, 1.0)]
                } else {
                    vec![(i0, 1.0 - f), (i0 + 1, f)]
                }
            }
        })
        .collect()
}

/// Resamples every channel of an interleaved `h x w x c` byte image to
/// `target`, returning planar values in the original 0..255 scale.
fn resample_planes(pixels: &[u8], h: usize, w: usize, c: usize, target: (usize, usize)) -> Vec<Vec<f64>> {
    let (th, tw) = target;
    let cols = axis_weights(w, tw);
    let rows = axis_weights(h, th);
    let mut horizontal = vec![vec![0.0f64; h * tw]; c];
    for r in 0..h {
        let line = &pixels[r * w * c..(r + 1) * w * c];
        for (j, taps) in cols.iter().enumerate() {
            for (ch, plane) in horizontal.iter_mut().enumerate() {
                plane[r * tw + j] = taps.iter().map(|&(i, wt)| line[i * c + ch] as f64 * wt).sum();
            }
        }
    }
    horizontal
        .iter()
        .map(|plane| {
            let mut out = vec![0.0f64; th * tw];
            for (i, taps) in rows.iter().enumerate() {
                let dst = &mut out[i * tw..(i + 1) * tw];
                for &(r, wt) in taps {
                    for (d, &v) in dst.iter_mut().zip(&plane[r * tw..(r + 1) * tw]) {
                        *d += v * wt;
                    }
                }
            }
            out
        })
        .collect()
}

fn luminance(rgb: &[u8]) -> u8 {
    let y: f64 = rgb.iter().zip(LUMA).map(|(&v, k)| v as f64 * k).sum();
    y.round().clamp(0.0, 255.0) as u8
}

/// Collapses an RGB frame to one luminance channel, rounding to the nearest
/// integer. The result carries the `-mono` twin of the source profile.
pub fn to_grayscale(frame: &Frame) -> Result<Frame> {
    if frame.channels() != 3 {
        return Err(Error::InvalidArgument(format!(
            "frame of profile {} is already single-channel",
            frame.profile().name
        )));
    }
    let base = frame.profile();
    let mono = base.mono()?;
    let profile = match lookup_profile(&mono.name) {
        Ok(p) if p.native_resolution == mono.native_resolution => p,
        _ => Arc::new(mono),
    };
    let pixels = frame.pixels().chunks_exact(3).map(luminance).collect();
    let mut out = Frame::new(profile, pixels)?;
    out.timestamp_ms = frame.timestamp_ms;
    out.device_serial = frame.device_serial.clone();
    Ok(out)
}

/// Planar `pixel / 255` values of the frame at the target size, after the
/// optional grayscale collapse.
pub(crate) fn resampled_unit_planes(frame: &Frame, spec: &PreprocessSpec) -> Result<Vec<Vec<f64>>> {
    let gray;
    let src = if spec.grayscale && frame.channels() == 3 {
        gray = to_grayscale(frame)?;
        &gray
    } else {
        frame
    };
    if src.channels() != spec.frame_channels() {
        return Err(Error::Shape(format!(
            "preprocess expects {} channel(s), frame of profile {} has {}",
            spec.frame_channels(),
            frame.profile().name,
            src.channels()
        )));
    }
    let mut planes = resample_planes(src.pixels(), src.height(), src.width(), src.channels(), spec.target_size);
    for plane in &mut planes {
        plane.iter_mut().for_each(|v| *v /= 255.0);
    }
    Ok(planes)
}

/// Writes the model input for `frame` into `out`, laid out
/// `(channels, height, width)`. The live frame fills channels `[0, C)` and
/// the reference, when concatenated, `[C, 2C)`.
pub fn preprocess_into(frame: &Frame, spec: &PreprocessSpec, reference: Option<&Frame>, out: &mut [f32]) -> Result<()> {
    spec.validate()?;
    let [c_out, th, tw] = spec.output_shape();
    if out.len() != c_out * th * tw {
        return Err(Error::Shape(format!(
            "output buffer holds {} values, preprocess produces {}",
            out.len(),
            c_out * th * tw
        )));
    }
    let reference = if spec.concat_reference {
        let r = reference.ok_or(Error::MissingReference)?;
        frame.ensure_same_profile(r)?;
        Some(r)
    } else {
        None
    };
    let plane = th * tw;
    let c = spec.frame_channels();
    let mut write = |offset: usize, f: &Frame| -> Result<()> {
        for (ch, values) in resampled_unit_planes(f, spec)?.into_iter().enumerate() {
            let (mean, std) = (spec.mean[ch] as f64, spec.std[ch] as f64);
            let dst = &mut out[(offset + ch) * plane..(offset + ch + 1) * plane];
            for (d, v) in dst.iter_mut().zip(values) {
                *d = ((v - mean) / std) as f32;
            }
        }
        Ok(())
    };
    write(0, frame)?;
    if let Some(r) = reference {
        write(c, r)?;
    }
    Ok(())
}

pub fn preprocess(frame: &Frame, spec: &PreprocessSpec, reference: Option<&Frame>) -> Result<Tensor> {
    let shape = spec.output_shape();
    let mut data = vec![0.0f32; shape.iter().product()];
    preprocess_into(frame, spec, reference, &mut data)?;
    Tensor::new(shape.to_vec(), data)
}

/// Per-channel mean and standard deviation of `pixel / 255` over the
/// resampled frames, for storing in a [`PreprocessSpec`].
pub fn fit_normalization<'a>(frames: impl IntoIterator<Item = &'a Frame>, spec: &PreprocessSpec) -> Result<(Vec<f32>, Vec<f32>)> {
    let c = spec.frame_channels();
    let (mut sum, mut sq, mut count) = (vec![0.0f64; c], vec![0.0f64; c], 0usize);
    for f in frames {
        for (ch, plane) in resampled_unit_planes(f, spec)?.iter().enumerate() {
            sum[ch] += plane.iter().sum::<f64>();
            sq[ch] += plane.iter().map(|v| v * v).sum::<f64>();
        }
        count += spec.target_size.0 * spec.target_size.1;
    }
    if count == 0 {
        return Err(Error::Dataset("cannot fit normalization on zero frames".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| ((q / count as f64 - m * m).max(0.0).sqrt() as f32).max(1e-3))
        .collect();
    Ok((mean.iter().map(|&m| m as f32).collect(), std))
}

/// Per-pixel mean of the first `n` frames, rounded to the nearest value.
pub fn acquire_reference(source: &mut dyn FrameSource, n: usize) -> Result<Frame> {
    if n == 0 {
        return Err(Error::InvalidArgument("reference needs at least one frame".into()));
    }
    let mut sums: Vec<u32> = Vec::new();
    let mut first: Option<Frame> = None;
    for got in 0..n {
        let frame = source.next_frame()?.ok_or(Error::NotEnoughFrames { wanted: n, got })?;
        match &first {
            None => {
                sums = frame.pixels().iter().map(|&v| v as u32).collect();
                first = Some(frame);
            }
            Some(f) => {
                f.ensure_same_profile(&frame)?;
                sums.iter_mut().zip(frame.pixels()).for_each(|(s, &v)| *s += v as u32);
            }
        }
    }
    let mut reference = first.expect("n >= 1");
    let n = n as u32;
    for (p, s) in reference.pixels_mut().iter_mut().zip(sums) {
        *p = ((s + n / 2) / n) as u8;
    }
    reference.timestamp_ms = None;
    Ok(reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_weights_sum_to_one_and_cover_source() {
        for (src, dst) in [(320, 64), (240, 64), (7, 3), (64, 64), (3, 8)] {
            let ws = axis_weights(src, dst);
            for taps in &ws {
                let s: f64 = taps.iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12, "{src}->{dst}: {s}");
            }
            if src >= dst {
                let mut per_src = vec![0.0; src];
                for taps in &ws {
                    for &(i, w) in taps {
                        per_src[i] += w;
                    }
                }
                for v in per_src {
                    assert!((v - dst as f64 / src as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn luminance_rounding() {
        assert_eq!(luminance(&[255, 255, 255]), 255);
        assert_eq!(luminance(&[255, 0, 0]), 76);
        assert_eq!(luminance(&[0, 255, 0]), 150);
        assert_eq!(luminance(&[0, 0, 255]), 29);
    }
}
