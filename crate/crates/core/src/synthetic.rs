//! Synthetic scenes with known geometry: a textured plane rendered into
//! RGB-D frames, random rigid motions and TUM-layout sequence writers.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{save_frame, serialize_groundtruth, serialize_index, DatasetError, Frame, GroundtruthPose, IndexEntry};
use crate::geometry::{quaternion_to_rotation, CameraIntrinsics, Point3, RigidTransform};

/// Uniformly distributed rotation with translation components in
/// `[-translation_scale, translation_scale]`.
pub fn random_rigid_transform(rng: &mut impl Rng, translation_scale: f64) -> RigidTransform {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let rotation = quaternion_to_rotation(a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin(), b * (TAU * u3).cos())
        .expect("unit quaternion");
    let s = translation_scale;
    let translation = if s > 0.0 {
        Vector3::new(rng.gen_range(-s..=s), rng.gen_range(-s..=s), rng.gen_range(-s..=s))
    } else {
        Vector3::zeros()
    };
    RigidTransform { rotation, translation }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic value in `[0, 1)` for a cell and channel.
fn cell_uniform(seed: u64, i: i64, j: i64, channel: u64) -> f64 {
    let h = mix(seed ^ mix(i as u64 ^ mix(j as u64 ^ mix(channel))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// A textured infinite plane. The texture is one Gaussian blob per cell of a
/// jittered grid in plane coordinates, so it is aperiodic and locally distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneScene {
    pub origin: Point3,
    pub normal: Vector3<f64>,
    /// Grid cell size, meters.
    pub cell: f64,
    /// Blob standard deviation range, meters.
    pub blob_sigma: (f64, f64),
    pub seed: u64,
}

impl Default for PlaneScene {
    fn default() -> Self {
        Self {
            origin: Point3::new(0.0, 0.0, 2.0),
            normal: Vector3::new(0.15, -0.1, -1.0).normalize(),
            cell: 0.05,
            blob_sigma: (0.01, 0.016),
            seed: 7,
        }
    }
}

impl PlaneScene {
    fn basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        let helper = if self.normal.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = self.normal.cross(&helper).normalize();
        let e2 = self.normal.cross(&e1);
        (e1, e2)
    }

    /// Linear RGB in `[0, 1]` at plane coordinates `(s, t)`.
    pub fn color_at(&self, s: f64, t: f64) -> [f64; 3] {
        let (ci, cj) = ((s / self.cell).floor() as i64, (t / self.cell).floor() as i64);
        let mut rgb = [0.5; 3];
        for i in ci - 1..=ci + 1 {
            for j in cj - 1..=cj + 1 {
                let u = |c| cell_uniform(self.seed, i, j, c);
                let bs = (i as f64 + 0.2 + 0.6 * u(0)) * self.cell;
                let bt = (j as f64 + 0.2 + 0.6 * u(1)) * self.cell;
                let sigma = self.blob_sigma.0 + (self.blob_sigma.1 - self.blob_sigma.0) * u(2);
                let sign = if u(3) < 0.5 { -1.0 } else { 1.0 };
                let amplitude = sign * (0.25 + 0.2 * u(4));
                let g = (-((s - bs).powi(2) + (t - bt).powi(2)) / (2.0 * sigma * sigma)).exp();
                for (c, v) in rgb.iter_mut().enumerate() {
                    let tint = 0.6 + 0.4 * u(5 + c as u64);
                    *v += amplitude * tint * g;
                }
            }
        }
        rgb.map(|v| v.clamp(0.0, 1.0))
    }

    /// Renders the plane seen from a camera with pose `camera_to_world`.
    /// Pixels whose ray misses the plane get depth 0 and mid-gray color.
    pub fn render(
        &self,
        k: &CameraIntrinsics,
        camera_to_world: &RigidTransform,
        width: usize,
        height: usize,
        timestamp: f64,
    ) -> Frame {
        let (e1, e2) = self.basis();
        let r = camera_to_world.rotation.matrix();
        let origin = camera_to_world.translation;
        let mut rgb = vec![128u8; width * height * 3];
        let mut depth = vec![0u16; width * height];
        rgb.par_chunks_mut(width * 3)
            .zip(depth.par_chunks_mut(width))
            .enumerate()
            .for_each(|(v, (rgb_row, depth_row))| {
                for u in 0..width {
                    let ray = r * Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
                    let denom = ray.dot(&self.normal);
                    let z = if denom.abs() > 1e-12 {
                        (self.origin - origin).dot(&self.normal) / denom
                    } else {
                        -1.0
                    };
                    let raw = (z * k.depth_scale).round();
                    if z > 0.0 && raw < u16::MAX as f64 {
                        let hit = origin + ray * z - self.origin;
                        let color = self.color_at(hit.dot(&e1), hit.dot(&e2));
                        for (dst, c) in rgb_row[3 * u..3 * u + 3].iter_mut().zip(color) {
                            *dst = (c * 255.0).round() as u8;
                        }
                        depth_row[u] = raw as u16;
                    }
                }
            });
        Frame {
            timestamp,
            width,
            height,
            rgb,
            depth,
        }
    }
}

/// Offset of each depth timestamp from its color timestamp in written sequences.
pub const DEPTH_TIME_OFFSET: f64 = 0.004;

/// Writes frames and optional groundtruth in the TUM directory layout.
pub fn write_tum_sequence(
    dir: &Path,
    frames: &[Frame],
    groundtruth: Option<&[GroundtruthPose]>,
) -> Result<(), DatasetError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    for sub in ["rgb", "depth"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(io(&dir.join(sub)))?;
    }
    let mut rgb_index = Vec::new();
    let mut depth_index = Vec::new();
    for f in frames {
        let depth_time = f.timestamp + DEPTH_TIME_OFFSET;
        let rgb_rel = format!("rgb/{:.6}.png", f.timestamp);
        let depth_rel = format!("depth/{depth_time:.6}.png");
        save_frame(f, &dir.join(&rgb_rel), &dir.join(&depth_rel))?;
        rgb_index.push(IndexEntry {
            timestamp: f.timestamp,
            path: rgb_rel,
        });
        depth_index.push(IndexEntry {
            timestamp: depth_time,
            path: depth_rel,
        });
    }
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(io(&path))
    };
    write("rgb.txt", serialize_index(&rgb_index))?;
    write("depth.txt", serialize_index(&depth_index))?;
    if let Some(gt) = groundtruth {
        write("groundtruth.txt", serialize_groundtruth(gt))?;
    }
    Ok(())
}

/// Camera pose of frame `i` in the standard mini sequence.
pub fn mini_sequence_pose(i: usize) -> RigidTransform {
    let s = i as f64;
    let rotation = quaternion_to_rotation(0.0, (0.006 * s).sin(), 0.0, (0.006 * s).cos()).expect("unit quaternion");
    RigidTransform {
        rotation,
        translation: Vector3::new(0.02 * s, -0.005 * s, 0.01 * s),
    }
}

/// A small moving-camera sequence over the default plane, with groundtruth.
pub fn mini_sequence(frames: usize, width: usize, height: usize) -> (Vec<Frame>, Vec<GroundtruthPose>) {
    let k = CameraIntrinsics::default();
    let scene = PlaneScene::default();
    let t0 = 1000.0;
    let rendered = (0..frames)
        .map(|i| scene.render(&k, &mini_sequence_pose(i), width, height, t0 + 0.04 * i as f64))
        .collect::<Vec<_>>();
    let groundtruth = (0..frames)
        .map(|i| GroundtruthPose::from_transform(t0 + 0.04 * i as f64, &mini_sequence_pose(i)))
        .collect();
    (rendered, groundtruth)
}
