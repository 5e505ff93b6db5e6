use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use super::frame::Frame;
use super::profile::SensorProfile;
use crate::error::Result;

type Render = dyn Fn() -> Result<Frame> + Send + Sync;

/// A frame that is either held in memory, stored as a PNG, or produced on
/// demand. Datasets keep handles so that large native-resolution frames are
/// only materialized while they are being preprocessed.
#[derive(Clone)]
pub enum FrameHandle {
    Loaded(Arc<Frame>),
    Png { path: PathBuf, profile: Arc<SensorProfile> },
    Rendered { profile: Arc<SensorProfile>, render: Arc<Render> },
}

impl FrameHandle {
    pub fn rendered(profile: Arc<SensorProfile>, render: impl Fn() -> Result<Frame> + Send + Sync + 'static) -> Self {
        FrameHandle::Rendered {
            profile,
            render: Arc::new(render),
        }
    }

    pub fn profile(&self) -> &Arc<SensorProfile> {
        match self {
            FrameHandle::Loaded(f) => f.profile(),
            FrameHandle::Png { profile, .. } | FrameHandle::Rendered { profile, .. } => profile,
        }
    }

    /// True when both handles name the same underlying frame.
    pub fn same_source(&self, other: &FrameHandle) -> bool {
        match (self, other) {
            (FrameHandle::Loaded(a), FrameHandle::Loaded(b)) => Arc::ptr_eq(a, b),
            (FrameHandle::Png { path: a, .. }, FrameHandle::Png { path: b, .. }) => a == b,
            (FrameHandle::Rendered { render: a, .. }, FrameHandle::Rendered { render: b, .. }) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }

    pub fn load(&self) -> Result<Arc<Frame>> {
        match self {
            FrameHandle::Loaded(f) => Ok(f.clone()),
            FrameHandle::Png { path, profile } => Ok(Arc::new(Frame::load_png(path, profile.clone())?)),
            FrameHandle::Rendered { render, profile } => {
                let f = render()?;
                if f.profile().name != profile.name {
                    return Err(crate::Error::ProfileMismatch {
                        expected: profile.name.clone(),
                        actual: f.profile().name.clone(),
                    });
                }
                Ok(Arc::new(f))
            }
        }
    }
}

impl From<Frame> for FrameHandle {
    fn from(f: Frame) -> Self {
        FrameHandle::Loaded(Arc::new(f))
    }
}

impl fmt::Debug for FrameHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameHandle::Loaded(frame) => write!(f, "Loaded({})", frame.profile().name),
            FrameHandle::Png { path, .. } => write!(f, "Png({})", path.display()),
            FrameHandle::Rendered { profile, .. } => write!(f, "Rendered({})", profile.name),
        }
    }
}
