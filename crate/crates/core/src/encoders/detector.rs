use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::boxes::BoundingBox;
use super::color::{rgb_to_hsv, to_unit};
use crate::util::sha256_hex;
use crate::{AdapterError, Error, Result, MAX_BOXES};

/// Object detector adapter. Returned boxes may be unsorted and may extend
/// past the image border; [`detect_objects`] normalizes them.
pub trait ObjectDetector: Send + Sync {
    fn tag(&self) -> &str;
    fn detect(&self, image: &RgbImage) -> std::result::Result<Vec<BoundingBox>, AdapterError>;
    /// Digest of the detector's fixed parameters.
    fn fingerprint(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Confidence floor.
    pub c_min: f64,
    /// Boxes kept after sorting by confidence.
    pub n_max: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            c_min: 0.5,
            n_max: MAX_BOXES,
        }
    }
}

pub const MIN_IMAGE_SIDE: u32 = 8;

/// Runs the detector and returns at most `n_max` boxes with confidence at
/// least `c_min`, sorted by descending confidence. Never returns an empty
/// list: with no surviving detection the whole frame is returned with
/// confidence 0.
pub fn detect_objects(
    image: &RgbImage,
    detector: &dyn ObjectDetector,
    config: &DetectionConfig,
) -> Result<Vec<BoundingBox>> {
    let (w, h) = image.dimensions();
    if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
        return Err(Error::DegenerateImage {
            width: w,
            height: h,
        });
    }
    let mut boxes: Vec<BoundingBox> = detector
        .detect(image)?
        .iter()
        .filter(|b| b.confidence.is_finite() && b.confidence >= config.c_min)
        .filter_map(|b| b.clamped(w, h).ok())
        .collect();
    boxes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    boxes.truncate(config.n_max);
    if boxes.is_empty() {
        boxes.push(BoundingBox::full_image(w, h));
    }
    Ok(boxes)
}

/// Connected-component detector for saturated blobs on a low-saturation
/// background. Labels each blob by its fill ratio and aspect ratio.
#[derive(Debug, Clone)]
pub struct BlobDetector {
    pub saturation_threshold: f64,
    pub min_area: usize,
}

impl Default for BlobDetector {
    fn default() -> Self {
        Self {
            saturation_threshold: 0.3,
            min_area: 24,
        }
    }
}

pub const BLOB_DETECTOR_TAG: &str = "blob-v1";

impl BlobDetector {
    fn foreground(&self, image: &RgbImage) -> (Vec<bool>, Vec<f64>) {
        let mut mask = Vec::with_capacity(image.len() / 3);
        let mut sat = Vec::with_capacity(image.len() / 3);
        for p in image.pixels() {
            let (r, g, b) = to_unit(p.0);
            let (_, s, v) = rgb_to_hsv(r, g, b);
            mask.push(s > self.saturation_threshold && v > 0.15);
            sat.push(s);
        }
        (mask, sat)
    }
}

pub fn classify_blob(fill: f64, aspect: f64) -> &'static str {
    if aspect >= 1.8 {
        "bar"
    } else if fill >= 0.88 {
        "square"
    } else if fill >= 0.64 {
        "circle"
    } else {
        "triangle"
    }
}

impl ObjectDetector for BlobDetector {
    fn tag(&self) -> &str {
        BLOB_DETECTOR_TAG
    }

    fn detect(&self, image: &RgbImage) -> std::result::Result<Vec<BoundingBox>, AdapterError> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let (mask, sat) = self.foreground(image);
        let mut seen = vec![false; w * h];
        let mut stack = Vec::new();
        let mut out = Vec::new();
        for start in 0..w * h {
            if !mask[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
            let mut area = 0usize;
            let mut sat_sum = 0.0;
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                area += 1;
                sat_sum += sat[i];
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                let mut visit = |j: usize| {
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            if area < self.min_area || area as f64 > 0.9 * (w * h) as f64 {
                continue;
            }
            let (bw, bh) = ((x1 + 1 - x0) as f64, (y1 + 1 - y0) as f64);
            let fill = area as f64 / (bw * bh);
            let aspect = bw.max(bh) / bw.min(bh);
            let sat_factor = (sat_sum / area as f64 / 0.6).min(1.0);
            let confidence = 0.5 + 0.5 * (1.0 - (-(area as f64) / 400.0).exp()) * sat_factor;
            out.push(
                BoundingBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64, confidence)
                    .with_label(classify_blob(fill, aspect)),
            );
        }
        Ok(out)
    }

    fn fingerprint(&self) -> String {
        sha256_hex(format!(
            "{BLOB_DETECTOR_TAG}:{}:{}",
            self.saturation_threshold, self.min_area
        ))
    }
}
