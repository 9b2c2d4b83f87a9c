use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned box in pixel coordinates, `x_max`/`y_max` exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub confidence: f64,
    #[serde(default)]
    pub class_label: Option<String>,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, confidence: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
            confidence,
            class_label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.class_label = Some(label.into());
        self
    }

    /// The whole frame, used when detection finds nothing.
    pub fn full_image(width: u32, height: u32) -> Self {
        Self::new(0.0, 0.0, width as f64, height as f64, 0.0)
    }

    /// COCO style `[x, y, w, h]`.
    pub fn from_xywh(xywh: [f64; 4]) -> Self {
        Self::new(xywh[0], xywh[1], xywh[0] + xywh[2], xywh[1] + xywh[3], 1.0)
    }

    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn is_finite(&self) -> bool {
        self.corners().iter().all(|v| v.is_finite())
    }

    /// Clamps to `[0, width] x [0, height]`; fails if nothing is left.
    pub fn clamped(&self, width: u32, height: u32) -> Result<Self> {
        if !self.is_finite() {
            return Err(Error::InvalidBox(format!("non-finite box {:?}", self.corners())));
        }
        let (w, h) = (width as f64, height as f64);
        let b = Self {
            x_min: self.x_min.clamp(0.0, w),
            y_min: self.y_min.clamp(0.0, h),
            x_max: self.x_max.clamp(0.0, w),
            y_max: self.y_max.clamp(0.0, h),
            confidence: self.confidence.clamp(0.0, 1.0),
            class_label: self.class_label.clone(),
        };
        if b.x_min < b.x_max && b.y_min < b.y_max {
            Ok(b)
        } else {
            Err(Error::InvalidBox(format!(
                "box {:?} has zero area inside a {width}x{height} image",
                self.corners()
            )))
        }
    }
}
