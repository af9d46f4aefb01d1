use super::FeatureError;

/// Row-major grayscale raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self, FeatureError> {
        if pixels.len() != width * height {
            return Err(FeatureError::BufferSize {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        if let Some(&bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FeatureError::PixelRange(bad));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Fills an image from a function of `(x, y)`; values are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    /// Luminance `0.299 R + 0.587 G + 0.114 B` of an interleaved 8-bit RGB buffer.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self, FeatureError> {
        if rgb.len() != width * height * 3 {
            return Err(FeatureError::BufferSize {
                expected: width * height * 3,
                actual: rgb.len(),
            });
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|c| {
                let l = 0.299 * c[0] as f32 + 0.587 * c[1] as f32 + 0.114 * c[2] as f32;
                (l / 255.0).clamp(0.0, 1.0)
            })
            .collect();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }
}

/// Summed-area table with a zero guard row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sums: Vec<f64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Result<Self, FeatureError> {
        if img.width == 0 || img.height == 0 {
            return Err(FeatureError::EmptyImage);
        }
        let stride = img.width + 1;
        let mut sums = vec![0.0f64; stride * (img.height + 1)];
        for y in 0..img.height {
            let mut row = 0.0f64;
            for x in 0..img.width {
                row += img.pixels[y * img.width + x] as f64;
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Ok(Self {
            width: img.width,
            height: img.height,
            sums,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.sums[y * (self.width + 1) + x]
    }

    /// Sum over pixels `x..x + w`, `y..y + h`, clipped to the image.
    #[inline]
    pub fn box_sum(&self, x: i64, y: i64, w: i64, h: i64) -> f64 {
        let x0 = x.clamp(0, self.width as i64) as usize;
        let y0 = y.clamp(0, self.height as i64) as usize;
        let x1 = (x + w).clamp(0, self.width as i64) as usize;
        let y1 = (y + h).clamp(0, self.height as i64) as usize;
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        self.at(x1, y1) - self.at(x0, y1) - self.at(x1, y0) + self.at(x0, y0)
    }
}

pub fn integral_image(img: &GrayImage) -> Result<IntegralImage, FeatureError> {
    IntegralImage::new(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_ones_full_sum() {
        let img = GrayImage::from_fn(4, 4, |_, _| 1.0);
        let ii = integral_image(&img).unwrap();
        assert_eq!(ii.box_sum(0, 0, 4, 4), 16.0);
    }

    #[test]
    fn single_pixel_sum() {
        let img = GrayImage::from_fn(5, 5, |x, y| if (x, y) == (2, 3) { 0.5 } else { 0.0 });
        let ii = integral_image(&img).unwrap();
        assert_eq!(ii.box_sum(2, 3, 1, 1), 0.5);
        assert_eq!(ii.box_sum(0, 0, 5, 5), 0.5);
        assert_eq!(ii.box_sum(0, 0, 2, 5), 0.0);
        assert_eq!(ii.box_sum(3, 0, 2, 5), 0.0);
        assert_eq!(ii.box_sum(0, 4, 5, 1), 0.0);
    }

    #[test]
    fn empty_image_rejected() {
        let img = GrayImage::new(0, 0, vec![]).unwrap();
        assert_eq!(integral_image(&img), Err(FeatureError::EmptyImage));
    }

    #[test]
    fn random_rectangles_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (w, h) = (37, 23);
        let img = GrayImage::from_fn(w, h, |_, _| rng.gen_range(0.0..1.0));
        let ii = integral_image(&img).unwrap();
        for _ in 0..100 {
            let x = rng.gen_range(0..w);
            let y = rng.gen_range(0..h);
            let rw = rng.gen_range(1..=w - x);
            let rh = rng.gen_range(1..=h - y);
            let mut brute = 0.0f64;
            for yy in y..y + rh {
                for xx in x..x + rw {
                    brute += img.get(xx, yy) as f64;
                }
            }
            let fast = ii.box_sum(x as i64, y as i64, rw as i64, rh as i64);
            assert!((fast - brute).abs() < 1e-6);
        }
    }

    #[test]
    fn box_sum_clips_to_image() {
        let img = GrayImage::from_fn(4, 4, |_, _| 1.0);
        let ii = integral_image(&img).unwrap();
        assert_eq!(ii.box_sum(-2, -2, 4, 4), 4.0);
        assert_eq!(ii.box_sum(3, 3, 10, 10), 1.0);
        assert_eq!(ii.box_sum(10, 10, 2, 2), 0.0);
    }

    #[test]
    fn validation() {
        assert!(matches!(GrayImage::new(2, 2, vec![0.0; 3]), Err(FeatureError::BufferSize { .. })));
        assert!(matches!(GrayImage::new(1, 1, vec![1.5]), Err(FeatureError::PixelRange(_))));
        let gray = GrayImage::from_rgb8(1, 1, &[255, 255, 255]).unwrap();
        assert!((gray.get(0, 0) - 1.0).abs() < 1e-6);
        let gray = GrayImage::from_rgb8(1, 1, &[255, 0, 0]).unwrap();
        assert!((gray.get(0, 0) - 0.299).abs() < 1e-6);
    }
}
