//! Frame-to-frame visual odometry for RGB-D sequences.
//!
//! The per-pair pipeline detects blob features on both color images, matches
//! their descriptors, lifts matched pixels to 3D with the depth maps, rejects
//! outliers with RANSAC and estimates the rigid motion by SVD alignment.
//! Concatenating per-pair motions yields the camera trajectory.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod pipeline;
pub mod ransac;
pub mod synthetic;

pub use align::{kabsch_align, residual_rmse, svd3, CorrespondenceSet, Svd3Result};
pub use geometry::{CameraIntrinsics, Point3, RigidTransform, RotationMatrix};
