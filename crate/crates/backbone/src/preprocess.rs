//! Deterministic image preprocessing: bicubic resize of the shorter side,
//! center crop, then per-channel normalization with the reference statistics.

use crate::BackboneError;
use image::imageops::FilterType;
use image::DynamicImage;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

/// Reference per-channel mean used by the pretrained encoders.
pub const CLIP_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
/// Reference per-channel standard deviation.
pub const CLIP_STD: [f32; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_11];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PreprocessSpec {
    /// Side length of the square output, in pixels.
    pub target_size: u32,
    /// Resize rule; only bicubic-on-shorter-side is implemented.
    pub resize: ResizeRule,
    /// Crop rule; only center crop is implemented.
    pub crop: CropRule,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ResizeRule {
    BicubicShorterSide,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CropRule {
    Center,
}

impl PreprocessSpec {
    pub fn clip_224() -> Self {
        PreprocessSpec {
            target_size: 224,
            resize: ResizeRule::BicubicShorterSide,
            crop: CropRule::Center,
            mean: CLIP_MEAN,
            std: CLIP_STD,
        }
    }

    /// Spec used by the micro backbone (16×16 inputs, same statistics).
    pub fn micro() -> Self {
        PreprocessSpec {
            target_size: 16,
            ..Self::clip_224()
        }
    }

    /// Decode-independent tensorization: resize shorter side to target,
    /// center-crop to a square, scale to [0,1], normalize per channel.
    /// Output is (3, target, target), channel-major.
    pub fn apply(&self, img: &DynamicImage) -> Result<Array3<f32>, BackboneError> {
        let t = self.target_size;
        let (w, h) = (img.width(), img.height());
        if w == 0 || h == 0 {
            return Err(BackboneError::BadImageShape {
                expected: vec![1, 1],
                got: vec![w as usize, h as usize],
            });
        }
        let (rw, rh) = if w <= h {
            (t, ((h as u64 * t as u64) as f64 / w as f64).round() as u32)
        } else {
            (((w as u64 * t as u64) as f64 / h as f64).round() as u32, t)
        };
        let resized = img.resize_exact(rw.max(t), rh.max(t), FilterType::CatmullRom);
        let x0 = (resized.width() - t) / 2;
        let y0 = (resized.height() - t) / 2;
        let cropped = resized.crop_imm(x0, y0, t, t).to_rgb8();

        let mut out = Array3::<f32>::zeros((3, t as usize, t as usize));
        for (x, y, pixel) in cropped.enumerate_pixels() {
            for c in 0..3 {
                let v = pixel.0[c] as f32 / 255.0;
                out[(c, y as usize, x as usize)] = (v - self.mean[c]) / self.std[c];
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn gradient_image(w: u32, h: u32) -> DynamicImage {
        let img = RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8])
        });
        DynamicImage::ImageRgb8(img)
    }

    #[test]
    fn deterministic_bit_identical() {
        let spec = PreprocessSpec::clip_224();
        let img = gradient_image(300, 260);
        let a = spec.apply(&img).unwrap();
        let b = spec.apply(&img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), (3, 224, 224));
    }

    #[test]
    fn non_square_is_center_cropped() {
        let spec = PreprocessSpec::micro();
        let img = gradient_image(64, 32);
        let out = spec.apply(&img).unwrap();
        assert_eq!(out.dim(), (3, 16, 16));
    }

    #[test]
    fn normalization_statistics_applied() {
        let spec = PreprocessSpec::micro();
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(16, 16, image::Rgb([255, 0, 128])));
        let out = spec.apply(&img).unwrap();
        let expect_r = (1.0 - CLIP_MEAN[0]) / CLIP_STD[0];
        let expect_g = (0.0 - CLIP_MEAN[1]) / CLIP_STD[1];
        assert!((out[(0, 0, 0)] - expect_r).abs() < 1e-6);
        assert!((out[(1, 5, 5)] - expect_g).abs() < 1e-6);
    }
}
