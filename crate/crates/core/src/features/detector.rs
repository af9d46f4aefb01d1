//! Fast-Hessian blob detector over box-filter approximations of the
//! second-order Gaussian derivatives.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::descriptor::descriptor_radius;
use super::{FeatureError, GrayImage, IntegralImage};

pub const MIN_IMAGE_SIZE: usize = 32;

/// Weight balancing the box-filter `Dxy` against `Dxx·Dyy`.
const DXY_WEIGHT: f64 = 0.81;

/// Gaussian scale represented by the 9×9 base filter.
const BASE_SCALE: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    /// Box filter side lengths, ascending and evenly spaced.
    pub filter_sizes: Vec<usize>,
    /// Threshold on the area-normalized Hessian determinant.
    pub threshold: f64,
    pub max_keypoints: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            filter_sizes: vec![9, 15, 21, 27],
            threshold: 0.0005,
            max_keypoints: 800,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let sizes = &self.filter_sizes;
        if sizes.len() < 3 {
            return Err(FeatureError::InvalidParams(
                "need at least three filter sizes".into(),
            ));
        }
        if sizes.iter().any(|&s| s < 9 || s % 6 != 3) {
            return Err(FeatureError::InvalidParams(
                "filter sizes must be 9, 15, 21, ... (3 mod 6)".into(),
            ));
        }
        let step = sizes[1] as i64 - sizes[0] as i64;
        if step <= 0 || sizes.windows(2).any(|w| w[1] as i64 - w[0] as i64 != step) {
            return Err(FeatureError::InvalidParams(
                "filter sizes must be ascending and evenly spaced".into(),
            ));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(FeatureError::InvalidParams("threshold must be >= 0".into()));
        }
        if self.max_keypoints == 0 {
            return Err(FeatureError::InvalidParams("max_keypoints must be >= 1".into()));
        }
        Ok(())
    }

    /// Smallest and largest Gaussian scale a keypoint can be assigned.
    pub fn scale_range(&self) -> (f64, f64) {
        let n = self.filter_sizes.len();
        (
            filter_scale(self.filter_sizes[1] as f64),
            filter_scale(self.filter_sizes[n - 2] as f64),
        )
    }
}

fn filter_scale(size: f64) -> f64 {
    BASE_SCALE * size / 9.0
}

/// Dark blobs have a positive Laplacian (intensity minimum), bright ones negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlobPolarity {
    Dark,
    Bright,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    /// Gaussian scale in pixels.
    pub scale: f64,
    pub response: f64,
    pub polarity: BlobPolarity,
}

struct ResponseLayer {
    width: usize,
    height: usize,
    det: Vec<f32>,
    trace: Vec<f32>,
}

impl ResponseLayer {
    fn build(ii: &IntegralImage, size: usize) -> Self {
        let (width, height) = (ii.width(), ii.height());
        let mut det = vec![0.0f32; width * height];
        let mut trace = vec![0.0f32; width * height];
        let l = (size / 3) as i64;
        let b = ((size - 1) / 2) as i64;
        let w = size as i64;
        let inv_area = 1.0 / (size * size) as f64;
        det.par_chunks_mut(width)
            .zip(trace.par_chunks_mut(width))
            .enumerate()
            .for_each(|(y, (det_row, trace_row))| {
                let yi = y as i64;
                for x in 0..width {
                    let xi = x as i64;
                    let dxx = ii.box_sum(xi - b, yi - l + 1, w, 2 * l - 1)
                        - 3.0 * ii.box_sum(xi - l / 2, yi - l + 1, l, 2 * l - 1);
                    let dyy = ii.box_sum(xi - l + 1, yi - b, 2 * l - 1, w)
                        - 3.0 * ii.box_sum(xi - l + 1, yi - l / 2, 2 * l - 1, l);
                    let dxy = ii.box_sum(xi + 1, yi - l, l, l) + ii.box_sum(xi - l, yi + 1, l, l)
                        - ii.box_sum(xi - l, yi - l, l, l)
                        - ii.box_sum(xi + 1, yi + 1, l, l);
                    let (dxx, dyy, dxy) = (dxx * inv_area, dyy * inv_area, dxy * inv_area);
                    det_row[x] = (dxx * dyy - DXY_WEIGHT * dxy * dxy) as f32;
                    trace_row[x] = (dxx + dyy) as f32;
                }
            });
        Self {
            width,
            height,
            det,
            trace,
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.det[y * self.width + x] as f64
    }
}

fn is_local_maximum(layers: &[ResponseLayer], i: usize, x: usize, y: usize) -> bool {
    let candidate = layers[i].at(x, y);
    for li in i - 1..=i + 1 {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if li == i && xx == x && yy == y {
                    continue;
                }
                if layers[li].at(xx, yy) >= candidate {
                    return false;
                }
            }
        }
    }
    true
}

/// Quadratic fit of the response at one sample, as an (x, y, layer) offset.
fn quadratic_offset(layers: &[ResponseLayer], i: usize, x: usize, y: usize) -> Option<Vector3<f64>> {
    let (below, mid, above) = (&layers[i - 1], &layers[i], &layers[i + 1]);
    let c = mid.at(x, y);

    let dx = (mid.at(x + 1, y) - mid.at(x - 1, y)) / 2.0;
    let dy = (mid.at(x, y + 1) - mid.at(x, y - 1)) / 2.0;
    let ds = (above.at(x, y) - below.at(x, y)) / 2.0;

    let dxx = mid.at(x + 1, y) + mid.at(x - 1, y) - 2.0 * c;
    let dyy = mid.at(x, y + 1) + mid.at(x, y - 1) - 2.0 * c;
    let dss = above.at(x, y) + below.at(x, y) - 2.0 * c;
    let dxy = (mid.at(x + 1, y + 1) - mid.at(x - 1, y + 1) - mid.at(x + 1, y - 1)
        + mid.at(x - 1, y - 1))
        / 4.0;
    let dxs = (above.at(x + 1, y) - above.at(x - 1, y) - below.at(x + 1, y)
        + below.at(x - 1, y))
        / 4.0;
    let dys = (above.at(x, y + 1) - above.at(x, y - 1) - below.at(x, y + 1)
        + below.at(x, y - 1))
        / 4.0;

    let h = Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
    let offset = -(h.try_inverse()? * Vector3::new(dx, dy, ds));
    offset.iter().all(|o| o.is_finite()).then_some(offset)
}

const MAX_RELOCATIONS: usize = 5;

/// Sub-pixel, sub-scale peak position `(x, y, layer)` near a discrete maximum.
///
/// When the fitted offset leaves the current sample cell the fit is redone
/// at the neighboring sample. If that would revisit a sample, or would step
/// outside the interior layers, the offset is clamped to the cell instead.
fn interpolate(layers: &[ResponseLayer], i: usize, x: usize, y: usize) -> Option<Vector3<f64>> {
    let (width, height) = (layers[i].width, layers[i].height);
    let (mut i, mut x, mut y) = (i as i64, x as i64, y as i64);
    let mut visited = vec![(i, x, y)];
    for _ in 0..MAX_RELOCATIONS {
        let offset = quadratic_offset(layers, i as usize, x as usize, y as usize)?;
        let step = |o: f64| if o > 0.5 { 1i64 } else if o < -0.5 { -1 } else { 0 };
        let mut next = (i + step(offset.z), x + step(offset.x), y + step(offset.y));
        if next.0 < 1 || next.0 > layers.len() as i64 - 2 {
            next.0 = i;
        }
        if next.1 < 1 || next.2 < 1 || next.1 > width as i64 - 2 || next.2 > height as i64 - 2 {
            return None;
        }
        if next == (i, x, y) || visited.contains(&next) {
            let o = offset.map(|v| v.clamp(-0.5, 0.5));
            return Some(Vector3::new(x as f64 + o.x, y as f64 + o.y, i as f64 + o.z));
        }
        visited.push(next);
        (i, x, y) = next;
    }
    None
}

/// Detects scale-space maxima of the Hessian determinant, strongest first.
pub fn detect(img: &GrayImage, params: &DetectorParams) -> Result<Vec<Keypoint>, FeatureError> {
    if img.width() < MIN_IMAGE_SIZE || img.height() < MIN_IMAGE_SIZE {
        return Err(FeatureError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: MIN_IMAGE_SIZE,
        });
    }
    params.validate()?;
    let ii = IntegralImage::new(img)?;
    let layers: Vec<ResponseLayer> = params
        .filter_sizes
        .par_iter()
        .map(|&size| ResponseLayer::build(&ii, size))
        .collect();
    let size_step = (params.filter_sizes[1] - params.filter_sizes[0]) as f64;
    let (width, height) = (img.width(), img.height());

    let mut keypoints = Vec::new();
    for i in 1..layers.len() - 1 {
        for y in 1..height - 1 {
            for x in 1..width - 1 {
                let response = layers[i].at(x, y);
                if response < params.threshold || response <= 0.0 {
                    continue;
                }
                if !is_local_maximum(&layers, i, x, y) {
                    continue;
                }
                let Some(peak) = interpolate(&layers, i, x, y) else {
                    continue;
                };
                let (u, v) = (peak.x, peak.y);
                let scale = filter_scale(params.filter_sizes[0] as f64 + peak.z * size_step);
                let r = descriptor_radius(scale);
                if u - r < 0.0 || v - r < 0.0 || u + r > (width - 1) as f64 || v + r > (height - 1) as f64 {
                    continue;
                }
                let polarity = if layers[i].trace[y * width + x] >= 0.0 {
                    BlobPolarity::Dark
                } else {
                    BlobPolarity::Bright
                };
                keypoints.push(Keypoint {
                    u,
                    v,
                    scale,
                    response,
                    polarity,
                });
            }
        }
    }

    keypoints.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.v.total_cmp(&b.v))
            .then(a.u.total_cmp(&b.u))
    });
    keypoints.truncate(params.max_keypoints);
    Ok(keypoints)
}
