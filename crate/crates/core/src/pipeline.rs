//! Frame-to-frame motion estimation and pose concatenation.

use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::align::CorrespondenceSet;
use crate::dataset::{DatasetError, Frame, FrameSource, GroundtruthPose};
use crate::features::{
    describe, detect, match_descriptors, Descriptor, DetectorParams, FeatureError, GrayImage,
    IntegralImage, Keypoint, MatcherParams,
};
use crate::geometry::{CameraIntrinsics, GeometryError, Point3, RigidTransform};
use crate::ransac::{ransac_rigid, RansacError, RansacParams, SAMPLE_SIZE};

/// Frames loaded and described together before their pairs are estimated.
const BATCH_SIZE: usize = 16;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("frame {index}: timestamp {timestamp} does not increase")]
    NonIncreasingTimestamp { index: usize, timestamp: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub intrinsics: CameraIntrinsics,
    pub detector: DetectorParams,
    pub matcher: MatcherParams,
    pub ransac: RansacParams,
    /// Use every `frame_stride`-th frame of the source.
    pub frame_stride: usize,
    /// Cap on the number of processed frames.
    pub max_frames: Option<usize>,
    pub initial_pose: RigidTransform,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::default(),
            detector: DetectorParams::default(),
            matcher: MatcherParams::default(),
            ransac: RansacParams::default(),
            frame_stride: 1,
            max_frames: None,
            initial_pose: RigidTransform::identity(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |e: String| Err(PipelineError::Config(e));
        if self.frame_stride < 1 {
            return invalid("frame_stride must be >= 1".into());
        }
        if self.max_frames == Some(0) {
            return invalid("max_frames must be >= 1".into());
        }
        if !(self.matcher.ratio > 0.0 && self.matcher.ratio <= 1.0) {
            return invalid("matcher ratio must lie in (0, 1]".into());
        }
        self.intrinsics.validate().or_else(|e| invalid(e.to_string()))?;
        self.detector.validate().or_else(|e| invalid(e.to_string()))?;
        self.ransac.validate().or_else(|e| invalid(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairStatus {
    Ok,
    Fallback,
}

impl fmt::Display for PairStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairStatus::Ok => "ok",
            PairStatus::Fallback => "fallback",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FallbackReason {
    DimensionMismatch,
    Features(FeatureError),
    TooFewCorrespondences { found: usize, required: usize },
    NoConsensus { best: usize, required: usize },
    InvalidParams(String),
}

impl fmt::Display for FallbackReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FallbackReason::DimensionMismatch => write!(f, "frame dimensions differ"),
            FallbackReason::Features(e) => write!(f, "feature extraction failed: {e}"),
            FallbackReason::TooFewCorrespondences { found, required } => {
                write!(f, "{found} correspondences, need {required}")
            }
            FallbackReason::NoConsensus { best, required } => {
                write!(f, "best model has {best} inliers, need {required}")
            }
            FallbackReason::InvalidParams(e) => write!(f, "{e}"),
        }
    }
}

/// Motion between two consecutive processed frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEstimate {
    pub prev_timestamp: f64,
    pub curr_timestamp: f64,
    /// Maps points in the previous camera frame to the current one.
    pub transform: RigidTransform,
    pub keypoint_counts: (usize, usize),
    pub match_count: usize,
    /// Matches with valid depth on both sides.
    pub correspondence_count: usize,
    pub inlier_count: usize,
    pub status: PairStatus,
    pub fallback_reason: Option<FallbackReason>,
    /// Wall time of the pair, including describing the current frame.
    pub elapsed: Duration,
}

impl PairEstimate {
    fn fallback(reason: FallbackReason) -> Self {
        Self {
            status: PairStatus::Fallback,
            fallback_reason: Some(reason),
            ..Self::accepted(RigidTransform::identity(), 0)
        }
    }

    fn accepted(transform: RigidTransform, inlier_count: usize) -> Self {
        Self {
            prev_timestamp: 0.0,
            curr_timestamp: 0.0,
            transform,
            keypoint_counts: (0, 0),
            match_count: 0,
            correspondence_count: 0,
            inlier_count,
            status: PairStatus::Ok,
            fallback_reason: None,
            elapsed: Duration::ZERO,
        }
    }
}

/// Camera poses (camera-to-world) with strictly increasing timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(f64, RigidTransform)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(f64, RigidTransform)>) -> Result<Self, PipelineError> {
        let mut t = Self::new();
        for (timestamp, pose) in entries {
            t.push(timestamp, pose)?;
        }
        Ok(t)
    }

    pub fn from_groundtruth(poses: &[GroundtruthPose]) -> Result<Self, TrajectoryParseError> {
        let mut t = Self::new();
        for (i, p) in poses.iter().enumerate() {
            let pose = p.to_transform().map_err(|e| TrajectoryParseError::BadPose(i, e))?;
            t.push(p.timestamp, pose).map_err(|_| TrajectoryParseError::Order(i))?;
        }
        Ok(t)
    }

    pub fn push(&mut self, timestamp: f64, pose: RigidTransform) -> Result<(), PipelineError> {
        let increasing = timestamp.is_finite() && self.entries.last().is_none_or(|(t, _)| timestamp > *t);
        if !increasing {
            return Err(PipelineError::NonIncreasingTimestamp {
                index: self.entries.len(),
                timestamp,
            });
        }
        self.entries.push((timestamp, pose));
        Ok(())
    }

    pub fn entries(&self) -> &[(f64, RigidTransform)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.entries.iter().map(|(t, _)| *t).collect()
    }

    /// Pose whose timestamp is closest to `timestamp`, if within `tolerance`.
    pub fn pose_near(&self, timestamp: f64, tolerance: f64) -> Option<&RigidTransform> {
        let i = self.entries.partition_point(|(t, _)| *t < timestamp);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| self.entries.get(j))
            .filter(|(t, _)| (t - timestamp).abs() <= tolerance)
            .min_by(|a, b| (a.0 - timestamp).abs().total_cmp(&(b.0 - timestamp).abs()))
            .map(|(_, p)| p)
    }
}

#[derive(Debug, Error)]
pub enum TrajectoryParseError {
    #[error("pose {0}: {1}")]
    BadPose(usize, GeometryError),
    #[error("pose {0}: timestamps must be strictly increasing")]
    Order(usize),
}

/// Keypoints and descriptors of one frame.
#[derive(Debug, Clone, Default)]
pub struct FrameFeatures {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

pub fn extract_features(frame: &Frame, params: &DetectorParams) -> Result<FrameFeatures, FeatureError> {
    let gray = GrayImage::from_rgb8(frame.width, frame.height, &frame.rgb)?;
    let keypoints = detect(&gray, params)?;
    let descriptors = describe(&IntegralImage::new(&gray)?, &keypoints)?;
    Ok(FrameFeatures {
        keypoints,
        descriptors,
    })
}

/// Camera-frame point at a keypoint, reading depth at the nearest pixel.
fn lift(frame: &Frame, kp: &Keypoint, k: &CameraIntrinsics) -> Option<Point3> {
    let (x, y) = (kp.u.round(), kp.v.round());
    if x < 0.0 || y < 0.0 || x >= frame.width as f64 || y >= frame.height as f64 {
        return None;
    }
    let raw = frame.depth_at(x as usize, y as usize);
    k.back_project(kp.u, kp.v, raw as f64).ok()
}

/// Robust motion from 3D correspondences; never fails, degrading to identity.
pub fn estimate_from_correspondences(c: &CorrespondenceSet, params: &RansacParams) -> PairEstimate {
    let required = params.min_inliers.max(SAMPLE_SIZE);
    if c.len() < required {
        let mut e = PairEstimate::fallback(FallbackReason::TooFewCorrespondences {
            found: c.len(),
            required,
        });
        e.correspondence_count = c.len();
        return e;
    }
    let mut estimate = match ransac_rigid(c, params) {
        Ok(r) => PairEstimate::accepted(r.transform, r.inlier_indices.len()),
        Err(RansacError::NoConsensus { best, required }) => {
            PairEstimate::fallback(FallbackReason::NoConsensus { best, required })
        }
        Err(RansacError::TooFewCorrespondences { required, actual }) => {
            PairEstimate::fallback(FallbackReason::TooFewCorrespondences {
                found: actual,
                required,
            })
        }
        Err(RansacError::InvalidParams(e)) => PairEstimate::fallback(FallbackReason::InvalidParams(e)),
    };
    estimate.correspondence_count = c.len();
    estimate
}

fn estimate_with_features(
    prev: &Frame,
    prev_features: &FrameFeatures,
    curr: &Frame,
    curr_features: &FrameFeatures,
    cfg: &PipelineConfig,
    ransac: &RansacParams,
) -> PairEstimate {
    let matches = match_descriptors(&prev_features.descriptors, &curr_features.descriptors, cfg.matcher.ratio);
    let (p, q): (Vec<Point3>, Vec<Point3>) = matches
        .iter()
        .filter_map(|m| {
            let a = lift(prev, &prev_features.keypoints[m.index_a], &cfg.intrinsics)?;
            let b = lift(curr, &curr_features.keypoints[m.index_b], &cfg.intrinsics)?;
            Some((a, b))
        })
        .unzip();
    let mut estimate = match CorrespondenceSet::new(p, q) {
        Ok(c) => estimate_from_correspondences(&c, ransac),
        Err(_) => PairEstimate::fallback(FallbackReason::TooFewCorrespondences {
            found: 0,
            required: ransac.min_inliers,
        }),
    };
    estimate.match_count = matches.len();
    estimate
}

/// Motion from `prev` to `curr`. Failures yield a fallback estimate with the
/// identity transform.
pub fn estimate_pair(prev: &Frame, curr: &Frame, cfg: &PipelineConfig) -> PairEstimate {
    let start = Instant::now();
    let mut estimate = if (prev.width, prev.height) != (curr.width, curr.height) {
        PairEstimate::fallback(FallbackReason::DimensionMismatch)
    } else {
        match (
            extract_features(prev, &cfg.detector),
            extract_features(curr, &cfg.detector),
        ) {
            (Ok(fp), Ok(fc)) => {
                let mut e = estimate_with_features(prev, &fp, curr, &fc, cfg, &cfg.ransac);
                e.keypoint_counts = (fp.keypoints.len(), fc.keypoints.len());
                e
            }
            (Err(e), _) | (_, Err(e)) => PairEstimate::fallback(FallbackReason::Features(e)),
        }
    };
    estimate.prev_timestamp = prev.timestamp;
    estimate.curr_timestamp = curr.timestamp;
    estimate.elapsed = start.elapsed();
    estimate
}

/// Indices of the frames a run processes.
pub fn select_frames(len: usize, frame_stride: usize, max_frames: Option<usize>) -> Vec<usize> {
    (0..len)
        .step_by(frame_stride.max(1))
        .take(max_frames.unwrap_or(usize::MAX))
        .collect()
}

/// RANSAC seed for the `pair`-th pair of a run.
pub fn pair_seed(seed: u64, pair: usize) -> u64 {
    seed ^ (pair as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Folds per-pair motions into world poses:
/// `pose_i = pose_{i-1} ∘ transform_i⁻¹`.
pub fn integrate_trajectory(
    initial_pose: RigidTransform,
    timestamps: &[f64],
    transforms: &[RigidTransform],
) -> Result<Trajectory, PipelineError> {
    let Some((&t0, rest)) = timestamps.split_first() else {
        return Err(PipelineError::EmptySequence);
    };
    if rest.len() != transforms.len() {
        return Err(PipelineError::Config(format!(
            "{} timestamps need {} transforms, got {}",
            timestamps.len(),
            timestamps.len() - 1,
            transforms.len()
        )));
    }
    let mut trajectory = Trajectory::new();
    trajectory.push(t0, initial_pose)?;
    let mut pose = initial_pose;
    for (&t, motion) in rest.iter().zip(transforms) {
        pose = pose.compose(&motion.inverse());
        trajectory.push(t, pose)?;
    }
    Ok(trajectory)
}

struct Prepared {
    frame: Frame,
    features: Result<FrameFeatures, FeatureError>,
    feature_time: Duration,
}

fn prepare<S: FrameSource + ?Sized>(source: &S, index: usize, cfg: &PipelineConfig) -> Result<Prepared, DatasetError> {
    let start = Instant::now();
    let mut frame = source.load(index)?;
    let features = extract_features(&frame, &cfg.detector);
    frame.rgb = Vec::new();
    Ok(Prepared {
        frame,
        features,
        feature_time: start.elapsed(),
    })
}

fn estimate_prepared(prev: &Prepared, curr: &Prepared, cfg: &PipelineConfig, pair: usize) -> PairEstimate {
    let start = Instant::now();
    let ransac = RansacParams {
        seed: pair_seed(cfg.ransac.seed, pair),
        ..cfg.ransac.clone()
    };
    let (a, b) = (&prev.frame, &curr.frame);
    let mut estimate = if (a.width, a.height) != (b.width, b.height) {
        PairEstimate::fallback(FallbackReason::DimensionMismatch)
    } else {
        match (&prev.features, &curr.features) {
            (Ok(fp), Ok(fc)) => {
                let mut e = estimate_with_features(a, fp, b, fc, cfg, &ransac);
                e.keypoint_counts = (fp.keypoints.len(), fc.keypoints.len());
                e
            }
            (Err(e), _) | (_, Err(e)) => PairEstimate::fallback(FallbackReason::Features(e.clone())),
        }
    };
    estimate.prev_timestamp = a.timestamp;
    estimate.curr_timestamp = b.timestamp;
    estimate.elapsed = start.elapsed() + curr.feature_time;
    estimate
}

/// Estimates every consecutive pair of the selected frames and concatenates
/// the motions. Pairs run in parallel; the pose fold is sequential.
pub fn run_sequence<S: FrameSource + ?Sized>(
    source: &S,
    cfg: &PipelineConfig,
) -> Result<(Trajectory, Vec<PairEstimate>), PipelineError> {
    cfg.validate()?;
    let indices = select_frames(source.len(), cfg.frame_stride, cfg.max_frames);
    if indices.is_empty() {
        return Err(PipelineError::EmptySequence);
    }
    let timestamps: Vec<f64> = indices.iter().map(|&i| source.timestamp(i)).collect();
    if let Some(k) = (1..timestamps.len()).find(|&k| !(timestamps[k] > timestamps[k - 1])) {
        return Err(PipelineError::NonIncreasingTimestamp {
            index: indices[k],
            timestamp: timestamps[k],
        });
    }

    let mut pairs: Vec<PairEstimate> = Vec::with_capacity(indices.len() - 1);
    let mut carry: Option<Prepared> = None;
    for chunk in indices.chunks(BATCH_SIZE) {
        let prepared = chunk
            .par_iter()
            .map(|&i| prepare(source, i, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let window: Vec<&Prepared> = carry.iter().chain(&prepared).collect();
        let first_pair = pairs.len();
        let batch: Vec<PairEstimate> = window
            .par_windows(2)
            .enumerate()
            .map(|(k, w)| estimate_prepared(w[0], w[1], cfg, first_pair + k))
            .collect();
        pairs.extend(batch);
        carry = prepared.into_iter().last();
    }

    for (k, p) in pairs.iter().enumerate() {
        match &p.fallback_reason {
            Some(reason) => log::warn!("pair {k} ({:.6}): fallback, {reason}", p.curr_timestamp),
            None => log::debug!("pair {k} ({:.6}): {} inliers of {}", p.curr_timestamp, p.inlier_count, p.match_count),
        }
    }

    let transforms: Vec<RigidTransform> = pairs.iter().map(|p| p.transform).collect();
    let trajectory = integrate_trajectory(cfg.initial_pose, &timestamps, &transforms)?;
    Ok((trajectory, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Axis, RotationMatrix};
    use crate::synthetic::{random_rigid_transform, PlaneScene};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene() -> PlaneScene {
        PlaneScene::default()
    }

    fn render(pose: &RigidTransform, t: f64) -> Frame {
        scene().render(&CameraIntrinsics::default(), pose, 640, 480, t)
    }

    #[test]
    fn identical_frames_give_identity() {
        let f = render(&RigidTransform::identity(), 0.0);
        let mut g = f.clone();
        g.timestamp = 1.0;
        let e = estimate_pair(&f, &g, &PipelineConfig::default());
        assert_eq!(e.status, PairStatus::Ok, "{:?}", e.fallback_reason);
        let (dr, dt) = e.transform.difference(&RigidTransform::identity());
        assert!(dr < 1e-6 && dt < 1e-6, "{dr} {dt}");
    }

    #[test]
    fn uniform_frames_fall_back() {
        let f = Frame {
            timestamp: 0.0,
            width: 64,
            height: 48,
            rgb: vec![128; 64 * 48 * 3],
            depth: vec![5000; 64 * 48],
        };
        let e = estimate_pair(&f, &f, &PipelineConfig::default());
        assert_eq!(e.status, PairStatus::Fallback);
        assert_eq!(e.transform, RigidTransform::identity());
        assert_eq!(e.keypoint_counts, (0, 0));
    }

    #[test]
    fn mismatched_dimensions_fall_back() {
        let a = render(&RigidTransform::identity(), 0.0);
        let b = Frame {
            timestamp: 1.0,
            width: 64,
            height: 48,
            rgb: vec![0; 64 * 48 * 3],
            depth: vec![0; 64 * 48],
        };
        let e = estimate_pair(&a, &b, &PipelineConfig::default());
        assert_eq!(e.fallback_reason, Some(FallbackReason::DimensionMismatch));
    }

    #[test]
    fn rendered_motion_recovered() {
        let pose_a = RigidTransform::identity();
        let pose_b = RigidTransform::new(
            RotationMatrix::about_axis(Axis::Y, 0.02),
            Vector3::new(0.03, -0.01, 0.02),
        )
        .unwrap();
        let (a, b) = (render(&pose_a, 0.0), render(&pose_b, 0.1));
        let e = estimate_pair(&a, &b, &PipelineConfig::default());
        assert_eq!(e.status, PairStatus::Ok, "{:?}", e.fallback_reason);
        let truth = pose_b.inverse().compose(&pose_a);
        let (dr, dt) = e.transform.difference(&truth);
        assert!(dr < 5e-3 && dt < 5e-3, "rotation {dr} translation {dt}");
        assert!(e.inlier_count >= 30, "{e:?}");
    }

    #[test]
    fn invalid_depth_matches_dropped() {
        let a = render(&RigidTransform::identity(), 0.0);
        let mut b = a.clone();
        b.timestamp = 1.0;
        b.depth.iter_mut().for_each(|d| *d = 0);
        let e = estimate_pair(&a, &b, &PipelineConfig::default());
        assert!(e.match_count > 0);
        assert_eq!(e.correspondence_count, 0);
        assert_eq!(e.status, PairStatus::Fallback);
    }

    #[test]
    fn injected_correspondences_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..20 {
            let truth = random_rigid_transform(&mut rng, 0.5);
            let p: Vec<Point3> = (0..80)
                .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(1.0..3.0)))
                .collect();
            let q = p.iter().map(|x| truth.apply(x)).collect();
            let e = estimate_from_correspondences(&CorrespondenceSet::new(p, q).unwrap(), &RansacParams::default());
            assert_eq!(e.status, PairStatus::Ok);
            let (dr, dt) = e.transform.difference(&truth);
            assert!(dr < 1e-6 && dt < 1e-6);
        }
    }

    #[test]
    fn single_frame_sequence() {
        let frames = vec![render(&RigidTransform::identity(), 0.0)];
        let initial = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let cfg = PipelineConfig {
            initial_pose: initial,
            ..Default::default()
        };
        let (traj, pairs) = run_sequence(&frames, &cfg).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(traj.entries(), &[(0.0, initial)]);
    }

    #[test]
    fn empty_sequence_rejected() {
        let frames: Vec<Frame> = Vec::new();
        assert!(matches!(
            run_sequence(&frames, &PipelineConfig::default()),
            Err(PipelineError::EmptySequence)
        ));
    }

    #[test]
    fn static_camera_stays_put() {
        let base = render(&RigidTransform::identity(), 0.0);
        let frames: Vec<Frame> = (0..10)
            .map(|i| Frame {
                timestamp: i as f64 * 0.033,
                ..base.clone()
            })
            .collect();
        let (traj, pairs) = run_sequence(&frames, &PipelineConfig::default()).unwrap();
        assert_eq!(traj.len(), 10);
        assert!(pairs.iter().all(|p| p.status == PairStatus::Ok));
        for (_, pose) in traj.entries() {
            let (dr, dt) = pose.difference(&RigidTransform::identity());
            assert!(dr < 1e-6 && dt < 1e-6);
        }
    }

    #[test]
    fn camera_moving_plus_x_yields_plus_x_poses() {
        let frames: Vec<Frame> = (0..4)
            .map(|i| render(&RigidTransform::from_translation(Vector3::new(0.02 * i as f64, 0.0, 0.0)), i as f64))
            .collect();
        let (traj, _) = run_sequence(&frames, &PipelineConfig::default()).unwrap();
        let xs: Vec<f64> = traj.entries().iter().map(|(_, p)| p.translation.x).collect();
        assert!(xs.windows(2).all(|w| w[1] > w[0]), "{xs:?}");
        assert!((xs[3] - 0.06).abs() < 5e-3, "{xs:?}");
    }

    #[test]
    fn frame_selection() {
        assert_eq!(select_frames(10, 3, None), vec![0, 3, 6, 9]);
        assert_eq!(select_frames(10, 1, Some(3)), vec![0, 1, 2]);
        assert_eq!(select_frames(10, 4, Some(2)), vec![0, 4]);
        assert!(select_frames(0, 1, None).is_empty());
    }

    #[test]
    fn stride_and_max_frames_applied() {
        let frames: Vec<Frame> = (0..7)
            .map(|i| render(&RigidTransform::from_translation(Vector3::new(0.01 * i as f64, 0.0, 0.0)), i as f64))
            .collect();
        let cfg = PipelineConfig {
            frame_stride: 2,
            max_frames: Some(3),
            ..Default::default()
        };
        let (traj, pairs) = run_sequence(&frames, &cfg).unwrap();
        assert_eq!(traj.timestamps(), vec![0.0, 2.0, 4.0]);
        assert_eq!(pairs.len(), 2);
    }

    #[test]
    fn deterministic_across_runs() {
        let frames: Vec<Frame> = (0..5)
            .map(|i| {
                let pose = RigidTransform::new(
                    RotationMatrix::about_axis(Axis::Y, 0.01 * i as f64),
                    Vector3::new(0.015 * i as f64, 0.0, 0.005 * i as f64),
                )
                .unwrap();
                render(&pose, i as f64)
            })
            .collect();
        let cfg = PipelineConfig::default();
        let (t1, p1) = run_sequence(&frames, &cfg).unwrap();
        let (t2, p2) = run_sequence(&frames, &cfg).unwrap();
        assert_eq!(t1, t2);
        let strip = |p: &[PairEstimate]| p.iter().map(|e| (e.transform, e.inlier_count, e.match_count)).collect::<Vec<_>>();
        assert_eq!(strip(&p1), strip(&p2));
    }

    #[test]
    fn reversed_sequence_gives_inverse_motions() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let points: Vec<Point3> = (0..60)
            .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(2.0..4.0)))
            .collect();
        let poses: Vec<RigidTransform> = (0..6).map(|_| random_rigid_transform(&mut rng, 0.1)).collect();
        let observe = |pose: &RigidTransform| -> Vec<Point3> {
            points.iter().map(|x| pose.inverse().apply(x)).collect()
        };
        let params = RansacParams::default();
        for w in poses.windows(2) {
            let (a, b) = (observe(&w[0]), observe(&w[1]));
            let fwd = estimate_from_correspondences(&CorrespondenceSet::new(a.clone(), b.clone()).unwrap(), &params);
            let bwd = estimate_from_correspondences(&CorrespondenceSet::new(b, a).unwrap(), &params);
            let (dr, dt) = fwd.transform.inverse().difference(&bwd.transform);
            assert!(dr < 1e-9 && dt < 1e-9);
        }
    }

    #[test]
    fn integrate_direction_and_compositions() {
        let step = RigidTransform::new(RotationMatrix::about_axis(Axis::Z, 0.001), Vector3::new(0.0, 0.0, -0.01)).unwrap();
        let n = 10_000;
        let timestamps: Vec<f64> = (0..=n).map(|i| i as f64).collect();
        let traj = integrate_trajectory(RigidTransform::identity(), &timestamps, &vec![step; n]).unwrap();
        assert_eq!(traj.len(), n + 1);
        let last = traj.entries()[n].1;
        assert!(last.rotation.orthogonality_error() < 1e-9);
        assert!((last.rotation.matrix().determinant() - 1.0).abs() < 1e-9);
        // First step: camera moves +z in its own frame.
        assert!((traj.entries()[1].1.translation.z - 0.01).abs() < 1e-12);
    }

    #[test]
    fn trajectory_rejects_non_increasing() {
        let mut t = Trajectory::new();
        t.push(1.0, RigidTransform::identity()).unwrap();
        assert!(t.push(1.0, RigidTransform::identity()).is_err());
        assert!(t.push(0.5, RigidTransform::identity()).is_err());
        assert!(t.pose_near(1.00005, 1e-4).is_some());
        assert!(t.pose_near(1.1, 1e-4).is_none());
    }
}
