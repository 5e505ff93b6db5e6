use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::frame::Frame;
use super::profile::{lookup_profile, SensorProfile};
use crate::error::{Error, Result};

/// Magic bytes opening a frame-sequence file.
pub const SEQUENCE_MAGIC: &[u8; 6] = b"TKSEQ1";
pub const DEFAULT_FPS: f32 = 30.0;

/// Pull-based frame supply. Once `next_frame` has returned `Ok(None)` it
/// keeps doing so.
pub trait FrameSource {
    fn profile(&self) -> &Arc<SensorProfile>;
    fn next_frame(&mut self) -> Result<Option<Frame>>;
}

/// PNG files of one directory in lexicographic file-name order.
pub struct ImageDirectory {
    profile: Arc<SensorProfile>,
    paths: Vec<PathBuf>,
    cursor: usize,
}

impl ImageDirectory {
    pub fn open(dir: &Path, profile: Arc<SensorProfile>) -> Result<Self> {
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let is_png = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"));
            if is_png && path.is_file() {
                paths.push(path);
            }
        }
        paths.sort();
        Ok(ImageDirectory {
            profile,
            paths,
            cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

impl FrameSource for ImageDirectory {
    fn profile(&self) -> &Arc<SensorProfile> {
        &self.profile
    }

    fn next_frame(&mut self) -> Result<Option<Frame>> {
        let Some(path) = self.paths.get(self.cursor) else {
            return Ok(None);
        };
        self.cursor += 1;
        Frame::load_png(path, self.profile.clone()).map(Some)
    }
}

/// Header of a frame-sequence file.
///
/// Layout, little-endian: magic `TKSEQ1`, u16 profile-name length, the name
/// in UTF-8, u32 height, u32 width, u8 channels, u32 frame count, f32 fps,
/// then the frames as raw `height x width x channels` byte planes.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceHeader {
    pub profile: String,
    pub height: u32,
    pub width: u32,
    pub channels: u8,
    pub frame_count: u32,
    pub fps: f32,
}

impl SequenceHeader {
    fn frame_len(&self) -> usize {
        self.height as usize * self.width as usize * self.channels as usize
    }
}

pub fn write_sequence(path: &Path, frames: &[Frame], fps: f32) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("a sequence file needs at least one frame".into()))?;
    for f in frames {
        first.ensure_same_profile(f)?;
    }
    let p = first.profile();
    let name = p.name.as_bytes();
    let name_len = u16::try_from(name.len()).map_err(|_| Error::InvalidArgument("profile name too long".into()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(SEQUENCE_MAGIC)?;
    put(&name_len.to_le_bytes())?;
    put(name)?;
    put(&(p.native_resolution.0 as u32).to_le_bytes())?;
    put(&(p.native_resolution.1 as u32).to_le_bytes())?;
    put(&[p.channels as u8])?;
    put(&(frames.len() as u32).to_le_bytes())?;
    put(&fps.to_le_bytes())?;
    for f in frames {
        put(f.pixels())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Streaming reader over a frame-sequence file.
pub struct SequenceFile {
    path: PathBuf,
    header: SequenceHeader,
    profile: Arc<SensorProfile>,
    reader: BufReader<File>,
    data_offset: u64,
    read: u32,
}

impl SequenceFile {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let header = read_header(&mut reader, path)?;
        let profile = lookup_profile(&header.profile)?;
        let expected = (
            profile.native_resolution.0 as u32,
            profile.native_resolution.1 as u32,
            profile.channels as u8,
        );
        if (header.height, header.width, header.channels) != expected {
            return Err(Error::Shape(format!(
                "{} declares {}x{}x{} frames, profile {} is {:?}",
                path.display(),
                header.height,
                header.width,
                header.channels,
                profile.name,
                expected
            )));
        }
        let data_offset = 6 + 2 + header.profile.len() as u64 + 4 + 4 + 1 + 4 + 4;
        Ok(SequenceFile {
            path: path.to_path_buf(),
            header,
            profile,
            reader,
            data_offset,
            read: 0,
        })
    }

    pub fn header(&self) -> &SequenceHeader {
        &self.header
    }

    pub fn fps(&self) -> f32 {
        self.header.fps
    }

    /// Random access to frame `index` (0-based). The streaming position
    /// moves to the frame after it.
    pub fn frame_at(&mut self, index: usize) -> Result<Frame> {
        if index >= self.header.frame_count as usize {
            return Err(Error::InvalidArgument(format!(
                "frame {index} requested from a {}-frame sequence",
                self.header.frame_count
            )));
        }
        let pos = self.data_offset + (index * self.header.frame_len()) as u64;
        self.reader
            .seek(SeekFrom::Start(pos))
            .map_err(|e| Error::io(&self.path, e))?;
        self.read = index as u32;
        self.next_frame()?
            .ok_or_else(|| Error::Dataset(format!("{} ended early", self.path.display())))
    }

    /// Reads every remaining frame.
    pub fn read_all(&mut self) -> Result<Vec<Frame>> {
        let mut out = Vec::with_capacity((self.header.frame_count - self.read) as usize);
        while let Some(f) = self.next_frame()? {
            out.push(f);
        }
        Ok(out)
    }
}

fn read_header(r: &mut impl Read, path: &Path) -> Result<SequenceHeader> {
    let mut take = |n: usize| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        Ok(buf)
    };
    if take(6)? != SEQUENCE_MAGIC {
        return Err(Error::Dataset(format!("{} is not a frame-sequence file", path.display())));
    }
    let name_len = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
    let profile = String::from_utf8(take(name_len)?)
        .map_err(|_| Error::Dataset(format!("{}: profile name is not UTF-8", path.display())))?;
    let u32_at = |b: Vec<u8>| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let height = u32_at(take(4)?);
    let width = u32_at(take(4)?);
    let channels = take(1)?[0];
    let frame_count = u32_at(take(4)?);
    let fps = f32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    Ok(SequenceHeader {
        profile,
        height,
        width,
        channels,
        frame_count,
        fps: if fps > 0.0 && fps.is_finite() { fps } else { DEFAULT_FPS },
    })
}

impl FrameSource for SequenceFile {
    fn profile(&self) -> &Arc<SensorProfile> {
        &self.profile
    }

    fn next_frame(&mut self) -> Result<Option<Frame>> {
        if self.read >= self.header.frame_count {
            return Ok(None);
        }
        let mut pixels = vec![0u8; self.header.frame_len()];
        self.reader
            .read_exact(&mut pixels)
            .map_err(|e| Error::io(&self.path, e))?;
        let ms = (self.read as f64 * 1000.0 / self.header.fps as f64).round() as u64;
        self.read += 1;
        Ok(Some(Frame::new(self.profile.clone(), pixels)?.with_timestamp(ms)))
    }
}

/// Frames produced on demand by a closure called with the frame index.
/// The closure returning `None` ends the stream for good.
pub struct SyntheticStream<F> {
    profile: Arc<SensorProfile>,
    produce: F,
    index: usize,
    done: bool,
}

impl<F: FnMut(usize) -> Option<Frame>> SyntheticStream<F> {
    pub fn new(profile: Arc<SensorProfile>, produce: F) -> Self {
        SyntheticStream {
            profile,
            produce,
            index: 0,
            done: false,
        }
    }
}

impl<F: FnMut(usize) -> Option<Frame>> FrameSource for SyntheticStream<F> {
    fn profile(&self) -> &Arc<SensorProfile> {
        &self.profile
    }

    fn next_frame(&mut self) -> Result<Option<Frame>> {
        if self.done {
            return Ok(None);
        }
        match (self.produce)(self.index) {
            Some(f) => {
                if f.profile().name != self.profile.name {
                    return Err(Error::ProfileMismatch {
                        expected: self.profile.name.clone(),
                        actual: f.profile().name.clone(),
                    });
                }
                self.index += 1;
                Ok(Some(f))
            }
            None => {
                self.done = true;
                Ok(None)
            }
        }
    }
}

/// In-memory frames, handy for tests and for replaying captured windows.
pub struct FrameList {
    profile: Arc<SensorProfile>,
    frames: std::vec::IntoIter<Frame>,
}

impl FrameList {
    pub fn new(profile: Arc<SensorProfile>, frames: Vec<Frame>) -> Result<Self> {
        for f in &frames {
            if f.profile().name != profile.name {
                return Err(Error::ProfileMismatch {
                    expected: profile.name.clone(),
                    actual: f.profile().name.clone(),
                });
            }
        }
        Ok(FrameList {
            profile,
            frames: frames.into_iter(),
        })
    }
}

impl FrameSource for FrameList {
    fn profile(&self) -> &Arc<SensorProfile> {
        &self.profile
    }

    fn next_frame(&mut self) -> Result<Option<Frame>> {
        Ok(self.frames.next())
    }
}
