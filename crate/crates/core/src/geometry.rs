//! Rigid-body pose algebra, axis rotations and the pinhole camera model.
//!
//! Rotations are stored as full 3×3 matrices. Quaternions only show up at the
//! groundtruth / trajectory file boundary.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::svd3;

/// A point in camera or world coordinates, in meters.
pub type Point3 = Vector3<f64>;

/// Orthogonality drift above which `compose` projects back onto SO(3).
pub const REORTHONORMALIZE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not a proper rotation (orthogonality error {orthogonality_error:e}, det {determinant})")]
    NotARotation {
        orthogonality_error: f64,
        determinant: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid depth reading (raw value 0 means no reading)")]
    InvalidDepth,
    #[error("point has non-positive depth z = {0}")]
    NonPositiveDepth(f64),
    #[error("quaternion has zero norm")]
    ZeroNormQuaternion,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// A proper rotation matrix (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub const VALIDATION_TOLERANCE: f64 = 1e-9;

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates `m` against the rotation invariants.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("rotation matrix"));
        }
        let orthogonality_error = orthogonality_error(&m);
        let determinant = m.determinant();
        if orthogonality_error > Self::VALIDATION_TOLERANCE
            || (determinant - 1.0).abs() > Self::VALIDATION_TOLERANCE
        {
            return Err(GeometryError::NotARotation {
                orthogonality_error,
                determinant,
            });
        }
        Ok(Self(m))
    }

    /// Wraps `m` without checking. Callers guarantee it is a proper rotation.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Nearest proper rotation to an arbitrary 3×3 matrix, in the Frobenius sense.
    pub fn nearest(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        let svd = svd3(m).map_err(|_| GeometryError::NonFinite("rotation matrix"))?;
        let mut r = svd.u * svd.v.transpose();
        if r.determinant() < 0.0 {
            let mut d = Matrix3::identity();
            d[(2, 2)] = -1.0;
            r = svd.u * d * svd.v.transpose();
        }
        Ok(Self(r))
    }

    pub fn about_axis(axis: Axis, theta: f64) -> Self {
        rotation_about_axis(axis, theta)
    }

    /// Builds `Rz(θz)·Ry(θy)·Rx(θx)`.
    pub fn from_euler(angles: EulerAngles) -> Self {
        let m = rotation_about_axis(Axis::Z, angles.theta_z).0
            * rotation_about_axis(Axis::Y, angles.theta_y).0
            * rotation_about_axis(Axis::X, angles.theta_x).0;
        Self(m)
    }

    /// Unit quaternion `(qx, qy, qz, qw)` with `qw >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let m = &self.0;
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (x, y, z, w);
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        let norm = (x * x + y * y + z * z + w * w).sqrt();
        let sign = if w < 0.0 { -1.0 } else { 1.0 };
        [sign * x / norm, sign * y / norm, sign * z / norm, sign * w / norm]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Max-abs entry of `RᵀR − I`.
    pub fn orthogonality_error(&self) -> f64 {
        orthogonality_error(&self.0)
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let c = ((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }
}

fn orthogonality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).amax()
}

/// Rotation angles about the x, y and z axes, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_z: f64,
}

/// Elementary rotation about one coordinate axis.
pub fn rotation_about_axis(axis: Axis, theta: f64) -> RotationMatrix {
    let (s, c) = theta.sin_cos();
    let m = match axis {
        Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        Axis::Y => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        Axis::Z => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    };
    RotationMatrix(m)
}

/// Rotation from a unit quaternion. The input is normalized first.
pub fn quaternion_to_rotation(
    qx: f64,
    qy: f64,
    qz: f64,
    qw: f64,
) -> Result<RotationMatrix, GeometryError> {
    let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
    if !norm.is_finite() {
        return Err(GeometryError::NonFinite("quaternion"));
    }
    if norm == 0.0 {
        return Err(GeometryError::ZeroNormQuaternion);
    }
    let (x, y, z, w) = (qx / norm, qy / norm, qz / norm, qw / norm);
    let m = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - z * w),
        2.0 * (x * z + y * w),
        2.0 * (x * y + z * w),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - x * w),
        2.0 * (x * z - y * w),
        2.0 * (y * z + x * w),
        1.0 - 2.0 * (x * x + y * y),
    );
    Ok(RotationMatrix(m))
}

/// A rotation followed by a translation: `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: RotationMatrix) -> Self {
        Self {
            rotation,
            translation: Vector3::zeros(),
        }
    }

    /// Pose from a TUM-style position and `(qx, qy, qz, qw)` quaternion.
    pub fn from_position_quaternion(
        position: Vector3<f64>,
        quaternion: [f64; 4],
    ) -> Result<Self, GeometryError> {
        let [qx, qy, qz, qw] = quaternion;
        let rotation = quaternion_to_rotation(qx, qy, qz, qw)?;
        Self::new(rotation, position)
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation.0 * p + self.translation
    }

    /// `self ∘ inner`: applies `inner` first, then `self`.
    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        let mut m = self.rotation.0 * inner.rotation.0;
        if orthogonality_error(&m) > REORTHONORMALIZE_TOLERANCE {
            if let Ok(r) = RotationMatrix::nearest(&m) {
                m = r.0;
            }
        }
        RigidTransform {
            rotation: RotationMatrix(m),
            translation: self.rotation.0 * inner.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.0.transpose();
        RigidTransform {
            rotation: RotationMatrix(rt),
            translation: -(rt * self.translation),
        }
    }

    /// Frobenius norm of the rotation difference and Euclidean norm of the
    /// translation difference.
    pub fn difference(&self, other: &RigidTransform) -> (f64, f64) {
        (
            (self.rotation.0 - other.rotation.0).norm(),
            (self.translation - other.translation).norm(),
        )
    }
}

pub fn apply(t: &RigidTransform, p: &Point3) -> Point3 {
    t.apply(p)
}

pub fn compose(outer: &RigidTransform, inner: &RigidTransform) -> RigidTransform {
    outer.compose(inner)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Pinhole intrinsics plus the raw-depth-units-per-meter factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub depth_scale: f64,
}

impl Default for CameraIntrinsics {
    /// Freiburg-1 calibration of the TUM RGB-D benchmark.
    fn default() -> Self {
        Self {
            fx: 517.3,
            fy: 516.5,
            cx: 318.6,
            cy: 255.3,
            depth_scale: 5000.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let values = [self.fx, self.fy, self.cx, self.cy, self.depth_scale];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("non-finite value".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        if self.depth_scale <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(
                "depth_scale must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Lifts pixel `(u, v)` with a raw depth reading to camera coordinates.
    pub fn back_project(&self, u: f64, v: f64, raw_depth: f64) -> Result<Point3, GeometryError> {
        if raw_depth == 0.0 {
            return Err(GeometryError::InvalidDepth);
        }
        if !raw_depth.is_finite() || raw_depth < 0.0 {
            return Err(GeometryError::NonPositiveDepth(raw_depth));
        }
        let z = raw_depth / self.depth_scale;
        Ok(Point3::new(
            (u - self.cx) * z / self.fx,
            (v - self.cy) * z / self.fy,
            z,
        ))
    }

    pub fn project(&self, p: &Point3) -> Result<(f64, f64), GeometryError> {
        if !(p.z > 0.0) {
            return Err(GeometryError::NonPositiveDepth(p.z));
        }
        Ok((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }
}

pub fn back_project(
    u: f64,
    v: f64,
    raw_depth: f64,
    k: &CameraIntrinsics,
) -> Result<Point3, GeometryError> {
    k.back_project(u, v, raw_depth)
}

pub fn project(p: &Point3, k: &CameraIntrinsics) -> Result<(f64, f64), GeometryError> {
    k.project(p)
}
