//! One-call entry point: pick a sensor and the tasks you need, then feed
//! frames.

use std::sync::Arc;

use crate::contact::{estimate_contacts, ContactEstimate, SegmentOptions};
use crate::error::{Error, Result};
use crate::registry::{RegistryIndex, Task};
use crate::sensors::{acquire_reference, lookup_profile, Frame, FrameSource, SensorProfile};
use crate::slipdetect::{SlipDecision, SlipDetector};
use crate::touchdetect::{Modality, TouchDecision, TouchDetector};

/// Detectors for one sensor plus its current reference frame.
#[derive(Clone, Debug)]
pub struct TactileKit {
    sensor: Arc<SensorProfile>,
    touch: Option<TouchDetector>,
    slip: Option<SlipDetector>,
    reference: Option<Frame>,
}

impl TactileKit {
    /// Fetches the newest model for each task from the bundled registry.
    pub fn init(sensor: &str, tasks: &[Task]) -> Result<Self> {
        Self::init_with(sensor, tasks, &RegistryIndex::bundled()?)
    }

    pub fn init_with(sensor: &str, tasks: &[Task], index: &RegistryIndex) -> Result<Self> {
        let mut kit = Self::new(sensor)?;
        for &task in tasks {
            let fetched = index.fetch(sensor, task, None)?;
            match task {
                Task::TouchDetect => kit.set_touch(TouchDetector::load(&fetched.path)?)?,
                Task::SlipDetect => kit.set_slip(SlipDetector::load(&fetched.path)?)?,
            }
        }
        Ok(kit)
    }

    /// A kit with no detectors; contact estimation still works.
    pub fn new(sensor: &str) -> Result<Self> {
        Ok(TactileKit {
            sensor: lookup_profile(sensor)?,
            touch: None,
            slip: None,
            reference: None,
        })
    }

    pub fn sensor(&self) -> &Arc<SensorProfile> {
        &self.sensor
    }

    pub fn set_touch(&mut self, detector: TouchDetector) -> Result<()> {
        if !detector.accepts(&self.sensor.name) {
            return Err(Error::ProfileMismatch {
                expected: self.sensor.name.clone(),
                actual: detector.binding().name().to_string(),
            });
        }
        self.touch = Some(detector);
        Ok(())
    }

    pub fn set_slip(&mut self, detector: SlipDetector) -> Result<()> {
        if detector.profile() != self.sensor.name {
            return Err(Error::ProfileMismatch {
                expected: self.sensor.name.clone(),
                actual: detector.profile().to_string(),
            });
        }
        self.slip = Some(detector);
        Ok(())
    }

    pub fn touch_detector(&self) -> Option<&TouchDetector> {
        self.touch.as_ref()
    }

    pub fn slip_detector(&self) -> Option<&SlipDetector> {
        self.slip.as_ref()
    }

    pub fn set_reference(&mut self, frame: Frame) -> Result<()> {
        if frame.profile().name != self.sensor.name {
            return Err(Error::ProfileMismatch {
                expected: self.sensor.name.clone(),
                actual: frame.profile().name.clone(),
            });
        }
        self.reference = Some(frame);
        Ok(())
    }

    /// Averages the next `n` frames of an untouched sensor into the
    /// reference.
    pub fn capture_reference(&mut self, source: &mut dyn FrameSource, n: usize) -> Result<()> {
        let frame = acquire_reference(source, n)?;
        self.set_reference(frame)
    }

    pub fn reference(&self) -> Option<&Frame> {
        self.reference.as_ref()
    }

    fn task_missing(task: Task) -> Error {
        Error::InvalidArgument(format!("{task} was not requested when the kit was set up"))
    }

    pub fn is_touched(&self, frame: &Frame) -> Result<TouchDecision> {
        let det = self.touch.as_ref().ok_or_else(|| Self::task_missing(Task::TouchDetect))?;
        let reference = match det.modality() {
            Modality::WithReference => Some(self.reference.as_ref().ok_or(Error::MissingReference)?),
            Modality::NoReference => None,
        };
        det.is_touched(frame, reference)
    }

    pub fn is_slipping(&self, frames: &[Frame]) -> Result<SlipDecision> {
        self.slip
            .as_ref()
            .ok_or_else(|| Self::task_missing(Task::SlipDetect))?
            .is_slipping(frames)
    }

    /// Contact regions against the stored reference.
    pub fn contacts(&self, frame: &Frame) -> Result<ContactEstimate> {
        let reference = self.reference.as_ref().ok_or(Error::MissingReference)?;
        estimate_contacts(frame, reference, &SegmentOptions::default())
    }
}
