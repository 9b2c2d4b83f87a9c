use std::borrow::Cow;

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::train::ObjectFeatures;
use crate::encoders::color::{from_unit, hsv_to_rgb, rgb_to_hsv, to_unit};
use crate::encoders::{pool_from_map, BoundingBox, FeatureBackbone};
use crate::util::seeded_rng;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentFlags {
    /// Hue shift and saturation scaling.
    pub jitter: bool,
    /// Random horizontal flip and small rotation.
    pub rotate_flip: bool,
    /// Train on hypernymized captions.
    pub ner: bool,
}

impl Default for AugmentFlags {
    fn default() -> Self {
        Self {
            jitter: false,
            rotate_flip: false,
            ner: true,
        }
    }
}

const JITTER: f64 = 0.2;
const MAX_ROTATION_DEG: f64 = 10.0;

/// Training-time augmentation of one object crop. With every image flag off
/// the crop is returned unchanged and no randomness is drawn.
pub fn augment_object_crop(crop: &RgbImage, rng: &mut impl Rng, flags: AugmentFlags) -> RgbImage {
    let mut out = crop.clone();
    if flags.jitter {
        let dh = rng.random_range(-JITTER..=JITTER);
        let ds = rng.random_range(1.0 - JITTER..=1.0 + JITTER);
        for p in out.pixels_mut() {
            let (r, g, b) = to_unit(p.0);
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r, g, b) = hsv_to_rgb((h + dh).rem_euclid(1.0), (s * ds).min(1.0), v);
            *p = Rgb(from_unit(r, g, b));
        }
    }
    if flags.rotate_flip {
        if rng.random_bool(0.5) {
            image::imageops::flip_horizontal_in_place(&mut out);
        }
        let angle = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG).to_radians();
        out = rotate_about_centre(&out, angle);
    }
    out
}

/// Nearest-neighbour rotation; samples outside the crop take the nearest
/// border pixel.
fn rotate_about_centre(img: &RgbImage, angle: f64) -> RgbImage {
    let (w, h) = img.dimensions();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    RgbImage::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let sx = cos * dx + sin * dy + cx;
        let sy = -sin * dx + cos * dy + cy;
        let sx = sx.round().clamp(0.0, w as f64 - 1.0) as u32;
        let sy = sy.round().clamp(0.0, h as f64 - 1.0) as u32;
        *img.get_pixel(sx, sy)
    })
}

/// Live region features with per-epoch augmentation: every box is cropped,
/// augmented, passed through the frozen backbone and pooled as a whole.
pub struct AugmentingFeatures<'a> {
    pub images: Vec<RgbImage>,
    pub boxes: Vec<Vec<BoundingBox>>,
    pub backbone: &'a dyn FeatureBackbone,
    pub flags: AugmentFlags,
    pub seed: u64,
}

fn crop(img: &RgbImage, b: &BoundingBox) -> RgbImage {
    let (w, h) = img.dimensions();
    let x0 = (b.x_min.floor().max(0.0) as u32).min(w - 1);
    let y0 = (b.y_min.floor().max(0.0) as u32).min(h - 1);
    let x1 = (b.x_max.ceil() as u32).clamp(x0 + 1, w);
    let y1 = (b.y_max.ceil() as u32).clamp(y0 + 1, h);
    image::imageops::crop_imm(img, x0, y0, x1 - x0, y1 - y0).to_image()
}

impl ObjectFeatures for AugmentingFeatures<'_> {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn features(&self, image: usize, epoch: usize) -> Result<Cow<'_, Array2<f64>>> {
        let boxes = &self.boxes[image];
        let mut out = Array2::zeros((boxes.len(), self.backbone.channels()));
        for (i, b) in boxes.iter().enumerate() {
            let stream = ((epoch as u64) << 40) | ((image as u64) << 8) | i as u64;
            let mut rng = seeded_rng(self.seed, stream);
            let patch = augment_object_crop(&crop(&self.images[image], b), &mut rng, self.flags);
            let (pw, ph) = patch.dimensions();
            let map = self.backbone.feature_map(&patch)?;
            let pooled = pool_from_map(&map, vec![BoundingBox::full_image(pw, ph)], self.backbone.tag());
            out.row_mut(i).assign(&pooled.features.row(0));
        }
        Ok(Cow::Owned(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern() -> RgbImage {
        RgbImage::from_fn(20, 14, |x, y| Rgb([(x * 12) as u8, (y * 17) as u8, 90]))
    }

    fn all() -> AugmentFlags {
        AugmentFlags {
            jitter: true,
            rotate_flip: true,
            ner: true,
        }
    }

    #[test]
    fn flags_off_is_identity() {
        let img = pattern();
        let mut rng = seeded_rng(1, 0);
        let flags = AugmentFlags::default();
        assert_eq!(augment_object_crop(&img, &mut rng, flags), img);
    }

    #[test]
    fn deterministic_under_seed() {
        let img = pattern();
        let a = augment_object_crop(&img, &mut seeded_rng(7, 3), all());
        let b = augment_object_crop(&img, &mut seeded_rng(7, 3), all());
        assert_eq!(a, b);
        assert_eq!(a.dimensions(), img.dimensions());
    }

    #[test]
    fn jitter_keeps_geometry() {
        let gray = RgbImage::from_pixel(9, 9, Rgb([120, 120, 120]));
        let flags = AugmentFlags {
            jitter: true,
            ..AugmentFlags::default()
        };
        for seed in 0..5 {
            assert_eq!(augment_object_crop(&gray, &mut seeded_rng(seed, 0), flags), gray);
        }
        // Brightness (max channel) is untouched pixel by pixel.
        let img = pattern();
        let out = augment_object_crop(&img, &mut seeded_rng(2, 0), flags);
        for (a, b) in img.pixels().zip(out.pixels()) {
            let va = *a.0.iter().max().unwrap() as i32;
            let vb = *b.0.iter().max().unwrap() as i32;
            assert!((va - vb).abs() <= 1);
        }
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = pattern();
        assert_eq!(rotate_about_centre(&img, 0.0), img);
    }
}
