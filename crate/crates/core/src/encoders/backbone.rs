use image::RgbImage;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::boxes::BoundingBox;
use super::color::{rgb_to_hsv, to_unit};
use crate::util::{seeded_rng, sha256_hex};
use crate::{AdapterError, Error, Result};

/// Dense feature map laid out channel-major (`c * height * width + y * width + x`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Image pixels per feature cell.
    pub stride: f64,
    pub data: Vec<f32>,
}

impl FeatureMap {
    #[inline]
    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x] as f64
    }

    /// Bilinear sample of channel `c` at fractional cell coordinates.
    fn bilinear(&self, c: usize, y: f64, x: f64) -> f64 {
        let (h, w) = (self.height, self.width);
        if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
            return 0.0;
        }
        let (mut y, mut x) = (y.max(0.0), x.max(0.0));
        let (mut y_lo, mut x_lo) = (y.floor() as usize, x.floor() as usize);
        let (y_hi, x_hi);
        if y_lo >= h - 1 {
            y_lo = h - 1;
            y_hi = h - 1;
            y = y_lo as f64;
        } else {
            y_hi = y_lo + 1;
        }
        if x_lo >= w - 1 {
            x_lo = w - 1;
            x_hi = w - 1;
            x = x_lo as f64;
        } else {
            x_hi = x_lo + 1;
        }
        let (ly, lx) = (y - y_lo as f64, x - x_lo as f64);
        let (hy, hx) = (1.0 - ly, 1.0 - lx);
        hy * hx * self.at(c, y_lo, x_lo)
            + hy * lx * self.at(c, y_lo, x_hi)
            + ly * hx * self.at(c, y_hi, x_lo)
            + ly * lx * self.at(c, y_hi, x_hi)
    }
}

/// Frozen convolutional backbone adapter producing a dense feature map.
pub trait FeatureBackbone: Send + Sync {
    fn tag(&self) -> &str;
    fn channels(&self) -> usize;
    fn feature_map(&self, image: &RgbImage) -> std::result::Result<FeatureMap, AdapterError>;
    /// Digest of the backbone's fixed weights; training must leave it unchanged.
    fn fingerprint(&self) -> String;
}

/// RoIAlign output resolution.
pub const ROI_OUTPUT: usize = 7;
/// Bilinear samples per output bin along each axis.
pub const ROI_SAMPLING: usize = 2;

/// RoIAlign (half-pixel aligned) over `bbox` followed by average pooling of
/// the `ROI_OUTPUT x ROI_OUTPUT` bins into one vector per channel.
pub fn roi_align_pool(map: &FeatureMap, bbox: &BoundingBox) -> Vec<f64> {
    let scale = 1.0 / map.stride;
    let x0 = bbox.x_min * scale - 0.5;
    let y0 = bbox.y_min * scale - 0.5;
    let roi_w = (bbox.x_max * scale - 0.5 - x0).max(1e-6);
    let roi_h = (bbox.y_max * scale - 0.5 - y0).max(1e-6);
    let bin_w = roi_w / ROI_OUTPUT as f64;
    let bin_h = roi_h / ROI_OUTPUT as f64;
    let per_bin = (ROI_SAMPLING * ROI_SAMPLING) as f64;

    let mut sample_points = Vec::with_capacity(ROI_OUTPUT * ROI_OUTPUT * ROI_SAMPLING * ROI_SAMPLING);
    for py in 0..ROI_OUTPUT {
        for px in 0..ROI_OUTPUT {
            for iy in 0..ROI_SAMPLING {
                for ix in 0..ROI_SAMPLING {
                    let y = y0 + bin_h * (py as f64 + (iy as f64 + 0.5) / ROI_SAMPLING as f64);
                    let x = x0 + bin_w * (px as f64 + (ix as f64 + 0.5) / ROI_SAMPLING as f64);
                    sample_points.push((y, x));
                }
            }
        }
    }

    (0..map.channels)
        .map(|c| {
            let mut bins_sum = 0.0;
            for bin in sample_points.chunks(ROI_SAMPLING * ROI_SAMPLING) {
                let bin_mean: f64 =
                    bin.iter().map(|&(y, x)| map.bilinear(c, y, x)).sum::<f64>() / per_bin;
                bins_sum += bin_mean;
            }
            bins_sum / (ROI_OUTPUT * ROI_OUTPUT) as f64
        })
        .collect()
}

/// Pooled backbone features for each box of one image (rows follow `boxes`).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures {
    pub boxes: Vec<BoundingBox>,
    pub features: Array2<f64>,
    pub backbone_tag: String,
}

impl RegionFeatures {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Pools one feature vector per box from a single backbone pass.
pub fn pool_regions(
    image: &RgbImage,
    boxes: &[BoundingBox],
    backbone: &dyn FeatureBackbone,
) -> Result<RegionFeatures> {
    if boxes.is_empty() {
        return Err(Error::Empty("boxes"));
    }
    let (w, h) = image.dimensions();
    let clamped = boxes
        .iter()
        .map(|b| b.clamped(w, h))
        .collect::<Result<Vec<_>>>()?;
    let map = backbone.feature_map(image)?;
    Ok(pool_from_map(&map, clamped, backbone.tag()))
}

pub(crate) fn pool_from_map(map: &FeatureMap, boxes: Vec<BoundingBox>, tag: &str) -> RegionFeatures {
    let mut features = Array2::zeros((boxes.len(), map.channels));
    for (i, b) in boxes.iter().enumerate() {
        for (c, v) in roi_align_pool(map, b).into_iter().enumerate() {
            // Stored at f32 precision so cached and live features agree bit for bit.
            features[[i, c]] = v as f32 as f64;
        }
    }
    RegionFeatures {
        boxes,
        features,
        backbone_tag: tag.to_string(),
    }
}

pub const COLOR_SHAPE_TAG: &str = "colorshape-v1";
const HUE_BINS: usize = 12;
const ORIENT_BINS: usize = 4;
const PROJ_OUT: usize = 8;
const PROJ_IN: usize = 7;

/// Hand-built backbone for the procedural scene world: colour, hue
/// histogram, foreground mask, edge orientation, position and a fixed random
/// colour projection, averaged over 2x2 pixel cells.
#[derive(Debug, Clone)]
pub struct ColorShapeBackbone {
    projection: Vec<f64>,
}

impl Default for ColorShapeBackbone {
    fn default() -> Self {
        let mut rng = seeded_rng(0x00c0_105e, 0);
        let projection = (0..PROJ_OUT * PROJ_IN)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.8)
            .collect();
        Self { projection }
    }
}

impl ColorShapeBackbone {
    pub const CHANNELS: usize = 3 + HUE_BINS + 2 + 1 + ORIENT_BINS + 2 + PROJ_OUT;
    const STRIDE: usize = 2;
}

fn foreground_weight(s: f64) -> f64 {
    ((s - 0.2) / 0.2).clamp(0.0, 1.0)
}

impl FeatureBackbone for ColorShapeBackbone {
    fn tag(&self) -> &str {
        COLOR_SHAPE_TAG
    }

    fn channels(&self) -> usize {
        Self::CHANNELS
    }

    fn feature_map(&self, image: &RgbImage) -> std::result::Result<FeatureMap, AdapterError> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        if w < Self::STRIDE || h < Self::STRIDE {
            return Err(AdapterError::fatal(COLOR_SHAPE_TAG, "image smaller than one cell"));
        }
        let c_total = Self::CHANNELS;
        let mut px = vec![0f64; c_total * w * h];
        let mut fg = vec![0f64; w * h];
        let idx = |c: usize, y: usize, x: usize| (c * h + y) * w + x;

        for (x, y, p) in image.enumerate_pixels() {
            let (x, y) = (x as usize, y as usize);
            let (r, g, b) = to_unit(p.0);
            let (hue, s, v) = rgb_to_hsv(r, g, b);
            let f = foreground_weight(s);
            fg[y * w + x] = f;
            px[idx(0, y, x)] = r;
            px[idx(1, y, x)] = g;
            px[idx(2, y, x)] = b;
            for k in 0..HUE_BINS {
                let centre = k as f64 / HUE_BINS as f64;
                let d = (hue - centre).abs();
                let d = d.min(1.0 - d) * HUE_BINS as f64;
                px[idx(3 + k, y, x)] = f * (1.0 - d).max(0.0);
            }
            px[idx(15, y, x)] = s;
            px[idx(16, y, x)] = v;
            px[idx(17, y, x)] = f;
            px[idx(22, y, x)] = (x as f64 + 0.5) / w as f64;
            px[idx(23, y, x)] = (y as f64 + 0.5) / h as f64;
            let input = [r, g, b, s, v, f, 1.0];
            for o in 0..PROJ_OUT {
                let z: f64 = (0..PROJ_IN)
                    .map(|i| self.projection[o * PROJ_IN + i] * input[i])
                    .sum();
                px[idx(24 + o, y, x)] = z.tanh();
            }
        }

        // Sobel on the foreground mask, binned by orientation modulo pi.
        let fg_at = |x: isize, y: isize| -> f64 {
            let x = x.clamp(0, w as isize - 1) as usize;
            let y = y.clamp(0, h as isize - 1) as usize;
            fg[y * w + x]
        };
        for y in 0..h as isize {
            for x in 0..w as isize {
                let gx = (fg_at(x + 1, y - 1) + 2.0 * fg_at(x + 1, y) + fg_at(x + 1, y + 1))
                    - (fg_at(x - 1, y - 1) + 2.0 * fg_at(x - 1, y) + fg_at(x - 1, y + 1));
                let gy = (fg_at(x - 1, y + 1) + 2.0 * fg_at(x, y + 1) + fg_at(x + 1, y + 1))
                    - (fg_at(x - 1, y - 1) + 2.0 * fg_at(x, y - 1) + fg_at(x + 1, y - 1));
                let mag = (gx * gx + gy * gy).sqrt() / 4.0;
                if mag == 0.0 {
                    continue;
                }
                let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
                let width = std::f64::consts::PI / ORIENT_BINS as f64;
                for k in 0..ORIENT_BINS {
                    let d = (theta - k as f64 * width).abs();
                    let d = d.min(std::f64::consts::PI - d) / width;
                    px[idx(18 + k, y as usize, x as usize)] = mag * (1.0 - d).max(0.0);
                }
            }
        }

        let (mh, mw) = (h / Self::STRIDE, w / Self::STRIDE);
        let mut data = vec![0f32; c_total * mh * mw];
        let norm = (Self::STRIDE * Self::STRIDE) as f64;
        for c in 0..c_total {
            for my in 0..mh {
                for mx in 0..mw {
                    let mut acc = 0.0;
                    for dy in 0..Self::STRIDE {
                        for dx in 0..Self::STRIDE {
                            acc += px[idx(c, my * Self::STRIDE + dy, mx * Self::STRIDE + dx)];
                        }
                    }
                    data[(c * mh + my) * mw + mx] = (acc / norm) as f32;
                }
            }
        }
        Ok(FeatureMap {
            channels: c_total,
            height: mh,
            width: mw,
            stride: Self::STRIDE as f64,
            data,
        })
    }

    fn fingerprint(&self) -> String {
        let mut bytes = format!("{COLOR_SHAPE_TAG}:{HUE_BINS}:{ORIENT_BINS}:{}", Self::STRIDE)
            .into_bytes();
        for v in &self.projection {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        sha256_hex(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn constant_map(value: f32) -> FeatureMap {
        FeatureMap {
            channels: 2,
            height: 6,
            width: 8,
            stride: 1.0,
            data: vec![value; 2 * 6 * 8],
        }
    }

    #[test]
    fn constant_map_pools_to_constant() {
        let v = roi_align_pool(&constant_map(0.25), &BoundingBox::new(1.0, 1.0, 5.0, 4.0, 1.0));
        assert!(v.iter().all(|x| (x - 0.25).abs() < 1e-9));
    }

    #[test]
    fn linear_ramp_pools_to_box_centre() {
        // Channel value equals the x coordinate of the cell centre.
        let (h, w) = (10, 20);
        let mut data = vec![0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = x as f32 + 0.5;
            }
        }
        let map = FeatureMap {
            channels: 1,
            height: h,
            width: w,
            stride: 1.0,
            data,
        };
        let v = roi_align_pool(&map, &BoundingBox::new(4.0, 2.0, 12.0, 8.0, 1.0));
        assert!((v[0] - 8.0).abs() < 1e-9, "{}", v[0]);
    }

    #[test]
    fn backbone_shapes_and_determinism() {
        let bb = ColorShapeBackbone::default();
        let img = RgbImage::from_pixel(16, 12, Rgb([10, 200, 30]));
        let a = bb.feature_map(&img).unwrap();
        let b = bb.feature_map(&img).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.channels, a.height, a.width), (ColorShapeBackbone::CHANNELS, 6, 8));
        assert_eq!(bb.fingerprint(), ColorShapeBackbone::default().fingerprint());
        assert!(a.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn distinct_regions_pool_differently() {
        let mut img = RgbImage::from_pixel(32, 16, Rgb([200, 20, 20]));
        for y in 0..16 {
            for x in 16..32 {
                img.put_pixel(x, y, Rgb([20, 20, 200]));
            }
        }
        let boxes = vec![
            BoundingBox::new(0.0, 0.0, 16.0, 16.0, 1.0),
            BoundingBox::new(16.0, 0.0, 32.0, 16.0, 1.0),
        ];
        let r = pool_regions(&img, &boxes, &ColorShapeBackbone::default()).unwrap();
        let diff: f64 = (&r.features.row(0) - &r.features.row(1))
            .iter()
            .map(|d| d * d)
            .sum();
        assert!(diff > 0.1);
    }

    #[test]
    fn collapsed_box_is_an_error() {
        let img = RgbImage::new(16, 16);
        let boxes = vec![BoundingBox::new(20.0, 20.0, 30.0, 30.0, 1.0)];
        assert!(matches!(
            pool_regions(&img, &boxes, &ColorShapeBackbone::default()),
            Err(Error::InvalidBox(_))
        ));
    }
}
