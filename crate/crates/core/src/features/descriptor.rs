//! Upright (orientation-free) 64-value Haar-wavelet descriptors.

use super::{FeatureError, IntegralImage, Keypoint};

pub const DESCRIPTOR_LEN: usize = 64;

/// Sample spacing, in units of keypoint scale, across the 20s × 20s window.
const WINDOW_SAMPLES: usize = 20;
const SUBREGIONS: usize = 4;
const SAMPLES_PER_SUBREGION: usize = WINDOW_SAMPLES / SUBREGIONS;
const GAUSSIAN_SIGMA_FACTOR: f64 = 3.3;

/// Half-width of the pixel footprint read when describing a keypoint at `scale`.
pub fn descriptor_radius(scale: f64) -> f64 {
    // Outermost sample at 9.5s plus a Haar half-width of s, plus rounding.
    10.5 * scale + 1.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor(pub [f32; DESCRIPTOR_LEN]);

impl Descriptor {
    pub fn values(&self) -> &[f32; DESCRIPTOR_LEN] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        self.distance_squared(other).sqrt()
    }

    #[inline]
    pub fn distance_squared(&self, other: &Descriptor) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum()
    }
}

fn haar_x(ii: &IntegralImage, x: i64, y: i64, size: i64) -> f64 {
    let half = size / 2;
    ii.box_sum(x, y - half, half, size) - ii.box_sum(x - half, y - half, half, size)
}

fn haar_y(ii: &IntegralImage, x: i64, y: i64, size: i64) -> f64 {
    let half = size / 2;
    ii.box_sum(x - half, y, size, half) - ii.box_sum(x - half, y - half, size, half)
}

fn describe_one(ii: &IntegralImage, kp: &Keypoint) -> Descriptor {
    let s = kp.scale;
    let haar_size = 2 * (s.round() as i64).max(1);
    let two_sigma_sq = 2.0 * (GAUSSIAN_SIGMA_FACTOR * s).powi(2);
    let mut out = [0.0f64; DESCRIPTOR_LEN];

    for row in 0..WINDOW_SAMPLES {
        let oy = (row as f64 - WINDOW_SAMPLES as f64 / 2.0 + 0.5) * s;
        for col in 0..WINDOW_SAMPLES {
            let ox = (col as f64 - WINDOW_SAMPLES as f64 / 2.0 + 0.5) * s;
            let px = (kp.u + ox).round() as i64;
            let py = (kp.v + oy).round() as i64;
            let weight = (-(ox * ox + oy * oy) / two_sigma_sq).exp();
            let dx = weight * haar_x(ii, px, py, haar_size);
            let dy = weight * haar_y(ii, px, py, haar_size);
            let cell = (row / SAMPLES_PER_SUBREGION) * SUBREGIONS + col / SAMPLES_PER_SUBREGION;
            let base = cell * 4;
            out[base] += dx;
            out[base + 1] += dy;
            out[base + 2] += dx.abs();
            out[base + 3] += dy.abs();
        }
    }

    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut values = [0.0f32; DESCRIPTOR_LEN];
    if norm > 0.0 {
        for (dst, src) in values.iter_mut().zip(&out) {
            *dst = (src / norm) as f32;
        }
    }
    Descriptor(values)
}

/// One descriptor per keypoint, in input order.
pub fn describe(ii: &IntegralImage, kps: &[Keypoint]) -> Result<Vec<Descriptor>, FeatureError> {
    let (w, h) = (ii.width() as f64, ii.height() as f64);
    kps.iter()
        .enumerate()
        .map(|(i, kp)| {
            let r = descriptor_radius(kp.scale);
            let inside = kp.scale > 0.0
                && kp.u - r >= 0.0
                && kp.v - r >= 0.0
                && kp.u + r <= w - 1.0
                && kp.v + r <= h - 1.0;
            if inside {
                Ok(describe_one(ii, kp))
            } else {
                Err(FeatureError::KeypointOutOfBounds(i))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{detect, BlobPolarity, DetectorParams, GrayImage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs: Vec<(f64, f64, f64, f64)> = (0..120)
            .map(|_| {
                (
                    rng.gen_range(0.0..w as f64),
                    rng.gen_range(0.0..h as f64),
                    rng.gen_range(1.5..5.0),
                    rng.gen_range(-0.4..0.4),
                )
            })
            .collect();
        GrayImage::from_fn(w, h, |x, y| {
            let mut v = 0.5;
            for &(bx, by, s, a) in &blobs {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                v += a * (-d2 / (2.0 * s * s)).exp();
            }
            v as f32
        })
    }

    #[test]
    fn deterministic() {
        let img = textured(120, 120, 1);
        let ii = IntegralImage::new(&img).unwrap();
        let kps = detect(&img, &DetectorParams::default()).unwrap();
        assert!(!kps.is_empty());
        assert_eq!(describe(&ii, &kps).unwrap(), describe(&ii, &kps).unwrap());
    }

    #[test]
    fn unit_norm() {
        let img = textured(200, 160, 2);
        let ii = IntegralImage::new(&img).unwrap();
        let kps = detect(&img, &DetectorParams::default()).unwrap();
        assert!(kps.len() > 10);
        for d in describe(&ii, &kps).unwrap() {
            assert!((d.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_bounds_keypoint_rejected() {
        let img = textured(64, 64, 3);
        let ii = IntegralImage::new(&img).unwrap();
        let kp = Keypoint {
            u: 5.0,
            v: 30.0,
            scale: 2.0,
            response: 1.0,
            polarity: BlobPolarity::Dark,
        };
        assert_eq!(describe(&ii, &[kp]), Err(FeatureError::KeypointOutOfBounds(0)));
    }

    #[test]
    fn flat_patch_gives_zero_descriptor() {
        let img = GrayImage::from_fn(64, 64, |_, _| 0.3);
        let ii = IntegralImage::new(&img).unwrap();
        let kp = Keypoint {
            u: 32.0,
            v: 32.0,
            scale: 2.0,
            response: 1.0,
            polarity: BlobPolarity::Dark,
        };
        assert!(describe(&ii, &[kp]).unwrap()[0].is_zero());
    }

    #[test]
    fn shifted_image_gives_matching_descriptors() {
        let (w, h, shift) = (200usize, 160usize, 8usize);
        let base = textured(w + shift, h, 4);
        let a = GrayImage::from_fn(w, h, |x, y| base.get(x, y));
        let b = GrayImage::from_fn(w, h, |x, y| base.get(x + shift, y));
        let params = DetectorParams::default();
        let (ka, kb) = (detect(&a, &params).unwrap(), detect(&b, &params).unwrap());
        let da = describe(&IntegralImage::new(&a).unwrap(), &ka).unwrap();
        let db = describe(&IntegralImage::new(&b).unwrap(), &kb).unwrap();
        let mut pairs = 0;
        for (i, k) in ka.iter().enumerate() {
            if let Some(j) = kb.iter().position(|o| {
                (o.u + shift as f64 - k.u).abs() < 0.5 && (o.v - k.v).abs() < 0.5
            }) {
                pairs += 1;
                assert!(da[i].distance(&db[j]) < 0.1);
            }
        }
        assert!(pairs > 5, "only {pairs} corresponding keypoints");
    }
}
