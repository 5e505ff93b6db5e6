use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::scene::{Blob, SceneConfig};
use crate::error::{Error, Result};
use crate::numerics::rng;
use crate::sensors::{Frame, SensorProfile, DEFAULT_FPS};
use crate::slipdetect::{FrameStore, SlipSequence};

/// Offset of the press from the scene's base blob.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub d_row: f64,
    pub d_col: f64,
    pub d_rotation: f64,
}

impl Pose {
    pub fn apply(&self, blob: &Blob) -> Blob {
        Blob {
            center_row: blob.center_row + self.d_row,
            center_col: blob.center_col + self.d_col,
            rotation: blob.rotation + self.d_rotation,
            ..*blob
        }
    }

    fn lerp(&self, other: &Pose, t: f64) -> Pose {
        Pose {
            d_row: self.d_row + (other.d_row - self.d_row) * t,
            d_col: self.d_col + (other.d_col - self.d_col) * t,
            d_rotation: self.d_rotation + (other.d_rotation - self.d_rotation) * t,
        }
    }
}

/// Per-frame press poses. The press moves only on `[t_s, t_e]` (1-based,
/// inclusive) and is still elsewhere; a script without `t_s` never moves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlipScript {
    pub poses: Vec<Pose>,
    pub t_s: Option<usize>,
    pub t_e: Option<usize>,
}

impl SlipScript {
    pub fn stationary(length: usize, pose: Pose) -> Self {
        SlipScript {
            poses: vec![pose; length],
            t_s: None,
            t_e: None,
        }
    }

    /// Holds `from` until `t_s`, moves linearly to reach `to` at `t_e`, then
    /// holds `to`.
    pub fn moving(length: usize, from: Pose, to: Pose, t_s: usize, t_e: usize) -> Result<Self> {
        if !(1 <= t_s && t_s < t_e && t_e <= length) {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= t_s < t_e <= {length}, got t_s={t_s}, t_e={t_e}"
            )));
        }
        if from == to {
            return Err(Error::InvalidArgument("a slip must move the press".into()));
        }
        let span = (t_e - t_s) as f64;
        let poses = (1..=length)
            .map(|t| match t {
                t if t <= t_s => from,
                t if t >= t_e => to,
                t => from.lerp(&to, (t - t_s) as f64 / span),
            })
            .collect();
        Ok(SlipScript {
            poses,
            t_s: Some(t_s),
            t_e: Some(t_e),
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn label(&self) -> u8 {
        self.t_s.is_some() as u8
    }

    /// True when some pose differs from its predecessor.
    pub fn moves(&self) -> bool {
        self.poses.windows(2).any(|w| w[0] != w[1])
    }

    /// Checks that motion happens exactly where the labels say it does.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty slip script".into()));
        }
        match (self.t_s, self.t_e) {
            (None, None) => {
                if self.moves() {
                    return Err(Error::InvalidArgument("non-slip script must be stationary".into()));
                }
            }
            (Some(s), Some(e)) if 1 <= s && s < e && e <= n => {
                let still = |range: std::ops::Range<usize>| range.clone().skip(1).all(|i| self.poses[i] == self.poses[range.start]);
                if !still(0..s) || !still(e - 1..n) {
                    return Err(Error::InvalidArgument("slip script moves outside [t_s, t_e]".into()));
                }
                if self.poses[s - 1] == self.poses[e - 1] {
                    return Err(Error::InvalidArgument("slip script does not move on [t_s, t_e]".into()));
                }
            }
            (s, e) => {
                return Err(Error::InvalidArgument(format!(
                    "invalid slip interval t_s={s:?}, t_e={e:?} for {n} frames"
                )))
            }
        }
        Ok(())
    }
}

struct RenderedStore {
    config: SceneConfig,
    script: SlipScript,
    profile: Arc<SensorProfile>,
}

impl FrameStore for RenderedStore {
    fn profile(&self) -> &Arc<SensorProfile> {
        &self.profile
    }

    fn len(&self) -> usize {
        self.script.len()
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        let blob = self.script.poses[index].apply(&self.config.blob);
        let mut frame = self
            .config
            .render(Some(&blob), rng::derive_seed(self.config.seed, index as u64), self.config.noise_sigma)?;
        frame.timestamp_ms = Some((index as f64 * 1000.0 / DEFAULT_FPS as f64).round() as u64);
        Ok(frame)
    }
}

/// A sequence whose frame `i` shows the press at script pose `i`. Frames
/// are rendered when read, each with noise seeded from `(seed, i)`.
pub fn gen_slip_sequence(config: &SceneConfig, script: &SlipScript, object_id: &str) -> Result<SlipSequence> {
    config.validate()?;
    script.validate()?;
    for (i, pose) in script.poses.iter().enumerate() {
        config
            .check_in_bounds(&pose.apply(&config.blob))
            .map_err(|e| Error::InvalidArgument(format!("frame {}: {e}", i + 1)))?;
    }
    let store = RenderedStore {
        profile: config.output_profile()?,
        config: config.clone(),
        script: script.clone(),
    };
    SlipSequence::from_store(Arc::new(store), script.label(), script.t_s, script.t_e, object_id, DEFAULT_FPS)
}
