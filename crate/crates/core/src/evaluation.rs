//! Error metrics against groundtruth and file exports: TUM trajectories,
//! error series as CSV and colored point clouds as PLY.

use std::collections::HashMap;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{associate, DatasetError, FrameSource, GroundtruthPose};
use crate::geometry::{CameraIntrinsics, GeometryError, RigidTransform};
use crate::pipeline::{PairEstimate, Trajectory};

/// Maximum timestamp difference when looking up a frame's pose for export.
pub const POSE_LOOKUP_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no estimated timestamps can be associated with groundtruth")]
    NoOverlap,
    #[error("groundtruth pose at {timestamp}: {source}")]
    BadGroundtruth {
        timestamp: f64,
        #[source]
        source: GeometryError,
    },
    #[error("no trajectory pose for frame at {0:.6}")]
    MissingPose(f64),
    #[error("point stride must be >= 1")]
    InvalidStride,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-frame errors in meters with their summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    per_frame: Vec<(f64, f64)>,
    mean: f64,
    max: f64,
}

impl ErrorSeries {
    /// # Panics
    /// If an error is negative or not finite.
    pub fn new(per_frame: Vec<(f64, f64)>) -> Self {
        assert!(
            per_frame.iter().all(|(_, e)| e.is_finite() && *e >= 0.0),
            "errors must be finite and non-negative"
        );
        let (mean, max) = if per_frame.is_empty() {
            (0.0, 0.0)
        } else {
            let sum: f64 = per_frame.iter().map(|(_, e)| e).sum();
            let max = per_frame.iter().map(|(_, e)| *e).fold(0.0, f64::max);
            (sum / per_frame.len() as f64, max)
        };
        Self { per_frame, mean, max }
    }

    pub fn per_frame(&self) -> &[(f64, f64)] {
        &self.per_frame
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn len(&self) -> usize {
        self.per_frame.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_frame.is_empty()
    }
}

fn gt_transform(p: &GroundtruthPose) -> Result<RigidTransform, EvalError> {
    p.to_transform().map_err(|source| EvalError::BadGroundtruth {
        timestamp: p.timestamp,
        source,
    })
}

/// Position error of the estimated trajectory after re-basing it so that its
/// first associated pose coincides with groundtruth.
pub fn global_position_error(
    est: &Trajectory,
    gt: &[GroundtruthPose],
    max_diff: f64,
) -> Result<ErrorSeries, EvalError> {
    let est_times = est.timestamps();
    let gt_times: Vec<f64> = gt.iter().map(|p| p.timestamp).collect();
    let pairs = associate(&est_times, &gt_times, max_diff);
    let Some(&(i0, j0)) = pairs.first() else {
        return Err(EvalError::NoOverlap);
    };
    let entries = est.entries();
    let rebase = gt_transform(&gt[j0])?.compose(&entries[i0].1.inverse());
    let mut per_frame = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let (t, pose) = entries[i];
        // The anchor coincides with groundtruth by construction.
        let error = if i == i0 {
            0.0
        } else {
            (rebase.compose(&pose).translation - gt[j].position).norm()
        };
        per_frame.push((t, error));
    }
    Ok(ErrorSeries::new(per_frame))
}

/// Translation error of each pair's motion against the groundtruth relative
/// motion, expressed in the earlier camera frame. Pairs without groundtruth
/// at both ends are skipped.
pub fn per_pair_error(
    pairs: &[PairEstimate],
    gt: &[GroundtruthPose],
    max_diff: f64,
) -> Result<ErrorSeries, EvalError> {
    let mut stamps: Vec<f64> = pairs
        .iter()
        .flat_map(|p| [p.prev_timestamp, p.curr_timestamp])
        .collect();
    stamps.sort_by(f64::total_cmp);
    stamps.dedup();
    let gt_times: Vec<f64> = gt.iter().map(|p| p.timestamp).collect();
    let lookup: HashMap<u64, usize> = associate(&stamps, &gt_times, max_diff)
        .into_iter()
        .map(|(i, j)| (stamps[i].to_bits(), j))
        .collect();

    let mut per_frame = Vec::new();
    for p in pairs {
        let (Some(&a), Some(&b)) = (
            lookup.get(&p.prev_timestamp.to_bits()),
            lookup.get(&p.curr_timestamp.to_bits()),
        ) else {
            continue;
        };
        let relative = gt_transform(&gt[a])?.inverse().compose(&gt_transform(&gt[b])?);
        let estimated = p.transform.inverse();
        per_frame.push((p.curr_timestamp, (estimated.translation - relative.translation).norm()));
    }
    if per_frame.is_empty() {
        return Err(EvalError::NoOverlap);
    }
    Ok(ErrorSeries::new(per_frame))
}

/// Fixed-point formatting without a `-0` rendering.
pub fn fixed(value: f64, decimals: usize) -> String {
    let s = format!("{value:.decimals$}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Writes `timestamp tx ty tz qx qy qz qw` lines.
pub fn export_trajectory(t: &Trajectory, mut sink: impl Write) -> io::Result<()> {
    for (timestamp, pose) in t.entries() {
        let [qx, qy, qz, qw] = pose.rotation.to_quaternion();
        let p = pose.translation;
        let values = [p.x, p.y, p.z, qx, qy, qz, qw].map(|v| fixed(v, 9));
        writeln!(sink, "{} {}", fixed(*timestamp, 6), values.join(" "))?;
    }
    sink.flush()
}

/// Writes `timestamp,error_m` rows followed by `# mean` and `# max` comments.
pub fn export_error_csv(series: &ErrorSeries, mut sink: impl Write) -> io::Result<()> {
    writeln!(sink, "timestamp,error_m")?;
    for (t, e) in series.per_frame() {
        writeln!(sink, "{},{}", fixed(*t, 6), fixed(*e, 9))?;
    }
    if !series.is_empty() {
        writeln!(sink, "# mean,{}", fixed(series.mean(), 9))?;
        writeln!(sink, "# max,{}", fixed(series.max(), 9))?;
    }
    sink.flush()
}

/// Per-pair diagnostics: counts, status and runtime in milliseconds.
pub fn export_diagnostics_csv(pairs: &[PairEstimate], mut sink: impl Write) -> io::Result<()> {
    writeln!(
        sink,
        "prev_timestamp,timestamp,keypoints_prev,keypoints_curr,matches,correspondences,inliers,status,runtime_ms"
    )?;
    for p in pairs {
        writeln!(
            sink,
            "{},{},{},{},{},{},{},{},{}",
            fixed(p.prev_timestamp, 6),
            fixed(p.curr_timestamp, 6),
            p.keypoint_counts.0,
            p.keypoint_counts.1,
            p.match_count,
            p.correspondence_count,
            p.inlier_count,
            p.status,
            fixed(p.elapsed.as_secs_f64() * 1e3, 3)
        )?;
    }
    sink.flush()
}

pub fn parse_error_csv(text: &str) -> Result<ErrorSeries, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| EvalError::Parse {
        line: 1,
        reason: e.to_string(),
    })?;
    if header != vec!["timestamp", "error_m"] {
        return Err(EvalError::Parse {
            line: 1,
            reason: "expected header `timestamp,error_m`".into(),
        });
    }
    let mut per_frame = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| EvalError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| -> Result<f64, EvalError> {
            record
                .get(k)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| EvalError::Parse {
                    line,
                    reason: format!("invalid number in column {}", k + 1),
                })
        };
        let (t, e) = (field(0)?, field(1)?);
        if e < 0.0 {
            return Err(EvalError::Parse {
                line,
                reason: "negative error".into(),
            });
        }
        per_frame.push((t, e));
    }
    Ok(ErrorSeries::new(per_frame))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: [f32; 3],
    pub color: [u8; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyFormat {
    #[default]
    BinaryLittleEndian,
    Ascii,
}

/// World-frame points of every valid-depth pixel on a `stride` grid of each
/// frame, in frame order.
pub fn colored_cloud<S: FrameSource + ?Sized>(
    frames: &S,
    traj: &Trajectory,
    k: &CameraIntrinsics,
    stride: usize,
) -> Result<Vec<ColoredPoint>, EvalError> {
    if stride == 0 {
        return Err(EvalError::InvalidStride);
    }
    let poses = (0..frames.len())
        .map(|i| {
            let t = frames.timestamp(i);
            traj.pose_near(t, POSE_LOOKUP_TOLERANCE)
                .copied()
                .ok_or(EvalError::MissingPose(t))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let clouds = (0..frames.len())
        .into_par_iter()
        .map(|i| -> Result<Vec<ColoredPoint>, EvalError> {
            let frame = frames.load(i)?;
            let pose = poses[i];
            let mut points = Vec::new();
            for y in (0..frame.height).step_by(stride) {
                for x in (0..frame.width).step_by(stride) {
                    let raw = frame.depth_at(x, y);
                    let Ok(p) = k.back_project(x as f64, y as f64, raw as f64) else {
                        continue;
                    };
                    let w = pose.apply(&p);
                    points.push(ColoredPoint {
                        position: [w.x as f32, w.y as f32, w.z as f32],
                        color: frame.rgb_at(x, y),
                    });
                }
            }
            Ok(points)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(clouds.into_iter().flatten().collect())
}

pub fn write_ply(points: &[ColoredPoint], format: PlyFormat, mut sink: impl Write) -> io::Result<()> {
    let format_name = match format {
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
        PlyFormat::Ascii => "ascii",
    };
    write!(
        sink,
        "ply\nformat {format_name} 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    )?;
    match format {
        PlyFormat::BinaryLittleEndian => {
            let mut buf = Vec::with_capacity(points.len() * 15);
            for p in points {
                for c in p.position {
                    buf.extend_from_slice(&c.to_le_bytes());
                }
                buf.extend_from_slice(&p.color);
            }
            sink.write_all(&buf)?;
        }
        PlyFormat::Ascii => {
            for p in points {
                let [x, y, z] = p.position;
                let [r, g, b] = p.color;
                writeln!(sink, "{x} {y} {z} {r} {g} {b}")?;
            }
        }
    }
    sink.flush()
}

/// Back-projects and writes the colored cloud; returns the vertex count.
pub fn export_ply<S: FrameSource + ?Sized>(
    frames: &S,
    traj: &Trajectory,
    k: &CameraIntrinsics,
    stride: usize,
    format: PlyFormat,
    sink: impl Write,
) -> Result<usize, EvalError> {
    let points = colored_cloud(frames, traj, k, stride)?;
    write_ply(&points, format, sink)?;
    Ok(points.len())
}
