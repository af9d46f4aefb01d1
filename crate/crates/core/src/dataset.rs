//! TUM RGB-D benchmark ingestion: index files, groundtruth, timestamp
//! association and frame decoding.
//!
//! A sequence directory holds `rgb.txt`, `depth.txt` and optionally
//! `groundtruth.txt`, plus the `rgb/` and `depth/` image folders the index
//! files point into.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{GeometryError, RigidTransform};

pub const RGB_INDEX: &str = "rgb.txt";
pub const DEPTH_INDEX: &str = "depth.txt";
pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";

/// Tolerance on the groundtruth quaternion norm.
const QUATERNION_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed entry: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: duplicate timestamp {timestamp}")]
    DuplicateTimestamp { line: usize, timestamp: f64 },
    #[error("{path}: cannot decode image: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("color image is {rgb_width}x{rgb_height} but depth image is {depth_width}x{depth_height}")]
    DimensionMismatch {
        rgb_width: usize,
        rgb_height: usize,
        depth_width: usize,
        depth_height: usize,
    },
    #[error("frame index {0} out of range")]
    FrameOutOfRange(usize),
}

impl DatasetError {
    fn with_path(self, path: &Path) -> DatasetError {
        match self {
            DatasetError::MalformedLine { line, reason } => DatasetError::MalformedLine {
                line,
                reason: format!("{}: {reason}", path.display()),
            },
            other => other,
        }
    }
}

/// One `timestamp path` line of an index file.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    /// Seconds.
    pub timestamp: f64,
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundtruthPose {
    pub timestamp: f64,
    pub position: Vector3<f64>,
    /// `(qx, qy, qz, qw)`.
    pub orientation: [f64; 4],
}

impl GroundtruthPose {
    pub fn from_transform(timestamp: f64, pose: &RigidTransform) -> Self {
        Self {
            timestamp,
            position: pose.translation,
            orientation: pose.rotation.to_quaternion(),
        }
    }

    pub fn to_transform(&self) -> Result<RigidTransform, GeometryError> {
        RigidTransform::from_position_quaternion(self.position, self.orientation)
    }
}

/// One synchronized capture. Depth is kept in raw sensor units; 0 means no reading.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub width: usize,
    pub height: usize,
    /// Interleaved 8-bit RGB, row-major.
    pub rgb: Vec<u8>,
    /// Raw 16-bit depth, row-major.
    pub depth: Vec<u16>,
}

impl Frame {
    pub fn depth_at(&self, x: usize, y: usize) -> u16 {
        self.depth[y * self.width + x]
    }

    pub fn rgb_at(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_timestamp(token: &str, line: usize) -> Result<f64, DatasetError> {
    match token.parse::<f64>() {
        Ok(t) if t.is_finite() => Ok(t),
        _ => Err(DatasetError::MalformedLine {
            line,
            reason: format!("invalid timestamp {token:?}"),
        }),
    }
}

/// Sorts by timestamp and rejects duplicates, reporting the later line.
fn sort_unique<T>(
    mut items: Vec<(usize, T)>,
    timestamp: impl Fn(&T) -> f64,
) -> Result<Vec<T>, DatasetError> {
    items.sort_by(|a, b| timestamp(&a.1).total_cmp(&timestamp(&b.1)).then(a.0.cmp(&b.0)));
    if let Some(w) = items.windows(2).find(|w| timestamp(&w[0].1) == timestamp(&w[1].1)) {
        return Err(DatasetError::DuplicateTimestamp {
            line: w[0].0.max(w[1].0),
            timestamp: timestamp(&w[1].1),
        });
    }
    Ok(items.into_iter().map(|(_, t)| t).collect())
}

/// Parses an `rgb.txt` / `depth.txt` style index.
pub fn parse_index(text: &str) -> Result<Vec<IndexEntry>, DatasetError> {
    let mut entries = Vec::new();
    for (line, content) in data_lines(text) {
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(DatasetError::MalformedLine {
                line,
                reason: format!("expected `timestamp path`, found {} fields", fields.len()),
            });
        }
        let timestamp = parse_timestamp(fields[0], line)?;
        entries.push((
            line,
            IndexEntry {
                timestamp,
                path: fields[1].to_string(),
            },
        ));
    }
    sort_unique(entries, |e| e.timestamp)
}

pub fn serialize_index(entries: &[IndexEntry]) -> String {
    let mut out = String::from("# timestamp filename\n");
    for e in entries {
        let _ = writeln!(out, "{} {}", e.timestamp, e.path);
    }
    out
}

/// Parses `timestamp tx ty tz qx qy qz qw` lines.
pub fn parse_groundtruth(text: &str) -> Result<Vec<GroundtruthPose>, DatasetError> {
    let mut poses = Vec::new();
    for (line, content) in data_lines(text) {
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(DatasetError::MalformedLine {
                line,
                reason: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let timestamp = parse_timestamp(fields[0], line)?;
        let mut values = [0.0f64; 7];
        for (v, token) in values.iter_mut().zip(&fields[1..]) {
            *v = match token.parse::<f64>() {
                Ok(x) if x.is_finite() => x,
                _ => {
                    return Err(DatasetError::MalformedLine {
                        line,
                        reason: format!("invalid number {token:?}"),
                    })
                }
            };
        }
        let orientation = [values[3], values[4], values[5], values[6]];
        let norm = orientation.iter().map(|q| q * q).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(DatasetError::MalformedLine {
                line,
                reason: format!("quaternion norm {norm} is not 1"),
            });
        }
        poses.push((
            line,
            GroundtruthPose {
                timestamp,
                position: Vector3::new(values[0], values[1], values[2]),
                orientation,
            },
        ));
    }
    sort_unique(poses, |p| p.timestamp)
}

pub fn serialize_groundtruth(poses: &[GroundtruthPose]) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for p in poses {
        let [qx, qy, qz, qw] = p.orientation;
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            p.timestamp, p.position.x, p.position.y, p.position.z, qx, qy, qz, qw
        );
    }
    out
}

/// Greedy globally-nearest timestamp pairing.
///
/// Candidate pairs within `max_diff` are accepted in order of increasing
/// time difference (ties by index), each entry used at most once. The result
/// is sorted by the index into `a`. Both inputs must be sorted ascending.
pub fn associate(a: &[f64], b: &[f64], max_diff: f64) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    let mut start = 0;
    for (i, &ta) in a.iter().enumerate() {
        while start < b.len() && b[start] < ta - max_diff {
            start += 1;
        }
        for (j, &tb) in b.iter().enumerate().skip(start) {
            if tb > ta + max_diff {
                break;
            }
            let d = (ta - tb).abs();
            if d <= max_diff {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

fn decode_error(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn open_image(path: &Path) -> Result<image::DynamicImage, DatasetError> {
    let reader = image::ImageReader::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = reader.with_guessed_format().map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    reader.decode().map_err(|e| decode_error(path, e))
}

/// Decodes one color + depth image pair. Depth must be 16-bit single channel
/// and is stored unscaled.
pub fn load_frame(rgb_path: &Path, depth_path: &Path, timestamp: f64) -> Result<Frame, DatasetError> {
    let rgb = open_image(rgb_path)?.into_rgb8();
    let depth = match open_image(depth_path)? {
        image::DynamicImage::ImageLuma16(d) => d,
        other => {
            return Err(decode_error(
                depth_path,
                format!("expected 16-bit grayscale depth, found {:?}", other.color()),
            ))
        }
    };
    let (rw, rh) = (rgb.width() as usize, rgb.height() as usize);
    let (dw, dh) = (depth.width() as usize, depth.height() as usize);
    if (rw, rh) != (dw, dh) {
        return Err(DatasetError::DimensionMismatch {
            rgb_width: rw,
            rgb_height: rh,
            depth_width: dw,
            depth_height: dh,
        });
    }
    Ok(Frame {
        timestamp,
        width: rw,
        height: rh,
        rgb: rgb.into_raw(),
        depth: depth.into_raw(),
    })
}

/// Writes a frame as an 8-bit RGB PNG and a 16-bit grayscale PNG.
pub fn save_frame(frame: &Frame, rgb_path: &Path, depth_path: &Path) -> Result<(), DatasetError> {
    let (w, h) = (frame.width as u32, frame.height as u32);
    image::save_buffer(rgb_path, &frame.rgb, w, h, image::ExtendedColorType::Rgb8)
        .map_err(|e| decode_error(rgb_path, e))?;
    let depth = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w, h, frame.depth.clone())
        .ok_or_else(|| decode_error(depth_path, "depth buffer size mismatch"))?;
    depth.save(depth_path).map_err(|e| decode_error(depth_path, e))
}

/// Random access to an ordered sequence of frames.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;
    fn timestamp(&self, index: usize) -> f64;
    fn load(&self, index: usize) -> Result<Frame, DatasetError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FrameSource for [Frame] {
    fn len(&self) -> usize {
        <[Frame]>::len(self)
    }

    fn timestamp(&self, index: usize) -> f64 {
        self[index].timestamp
    }

    fn load(&self, index: usize) -> Result<Frame, DatasetError> {
        self.get(index).cloned().ok_or(DatasetError::FrameOutOfRange(index))
    }
}

impl FrameSource for Vec<Frame> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn timestamp(&self, index: usize) -> f64 {
        self[index].timestamp
    }

    fn load(&self, index: usize) -> Result<Frame, DatasetError> {
        self.as_slice().load(index)
    }
}

/// A view of selected frames of another source, in the given order.
pub struct FrameSubset<'a, S: ?Sized> {
    source: &'a S,
    indices: Vec<usize>,
}

impl<'a, S: FrameSource + ?Sized> FrameSubset<'a, S> {
    pub fn new(source: &'a S, indices: Vec<usize>) -> Result<Self, DatasetError> {
        if let Some(&i) = indices.iter().find(|&&i| i >= source.len()) {
            return Err(DatasetError::FrameOutOfRange(i));
        }
        Ok(Self { source, indices })
    }
}

impl<S: FrameSource + ?Sized> FrameSource for FrameSubset<'_, S> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn timestamp(&self, index: usize) -> f64 {
        self.source.timestamp(self.indices[index])
    }

    fn load(&self, index: usize) -> Result<Frame, DatasetError> {
        let i = *self.indices.get(index).ok_or(DatasetError::FrameOutOfRange(index))?;
        self.source.load(i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub timestamp: f64,
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
}

/// A TUM sequence on disk with color and depth associated by timestamp.
/// Frames carry the color timestamp.
#[derive(Debug, Clone)]
pub struct TumSequence {
    root: PathBuf,
    frames: Vec<FrameEntry>,
    rgb_count: usize,
    depth_count: usize,
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl TumSequence {
    pub fn open(root: impl AsRef<Path>, max_diff: f64) -> Result<Self, DatasetError> {
        let root = root.as_ref().to_path_buf();
        let rgb_path = root.join(RGB_INDEX);
        let depth_path = root.join(DEPTH_INDEX);
        let rgb = parse_index(&read_text(&rgb_path)?).map_err(|e| e.with_path(&rgb_path))?;
        let depth = parse_index(&read_text(&depth_path)?).map_err(|e| e.with_path(&depth_path))?;
        let rgb_times: Vec<f64> = rgb.iter().map(|e| e.timestamp).collect();
        let depth_times: Vec<f64> = depth.iter().map(|e| e.timestamp).collect();
        let frames = associate(&rgb_times, &depth_times, max_diff)
            .into_iter()
            .map(|(i, j)| FrameEntry {
                timestamp: rgb[i].timestamp,
                rgb_path: root.join(&rgb[i].path),
                depth_path: root.join(&depth[j].path),
            })
            .collect();
        Ok(Self {
            root,
            frames,
            rgb_count: rgb.len(),
            depth_count: depth.len(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn frames(&self) -> &[FrameEntry] {
        &self.frames
    }

    pub fn rgb_count(&self) -> usize {
        self.rgb_count
    }

    pub fn depth_count(&self) -> usize {
        self.depth_count
    }

    /// Groundtruth poses if `groundtruth.txt` exists.
    pub fn groundtruth(&self) -> Result<Option<Vec<GroundtruthPose>>, DatasetError> {
        let path = self.root.join(GROUNDTRUTH_FILE);
        if !path.exists() {
            return Ok(None);
        }
        parse_groundtruth(&read_text(&path)?)
            .map(Some)
            .map_err(|e| e.with_path(&path))
    }
}

impl FrameSource for TumSequence {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn timestamp(&self, index: usize) -> f64 {
        self.frames[index].timestamp
    }

    fn load(&self, index: usize) -> Result<Frame, DatasetError> {
        let entry = self.frames.get(index).ok_or(DatasetError::FrameOutOfRange(index))?;
        load_frame(&entry.rgb_path, &entry.depth_path, entry.timestamp)
    }
}
