//! Blob keypoints on grayscale images: integral images, a Fast-Hessian
//! detector, upright Haar-wavelet descriptors and descriptor matching.

mod descriptor;
mod detector;
mod image;
mod matching;

use thiserror::Error;

pub use descriptor::{describe, descriptor_radius, Descriptor, DESCRIPTOR_LEN};
pub use detector::{detect, BlobPolarity, DetectorParams, Keypoint, MIN_IMAGE_SIZE};
pub use image::{integral_image, GrayImage, IntegralImage};
pub use matching::{match_descriptors, Match, MatcherParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("image is empty")]
    EmptyImage,
    #[error("pixel buffer has {actual} values, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("pixel value {0} outside [0, 1]")]
    PixelRange(f32),
    #[error("image {width}x{height} is smaller than the {min}x{min} minimum")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("keypoint {0} descriptor window exceeds the image bounds")]
    KeypointOutOfBounds(usize),
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
}
