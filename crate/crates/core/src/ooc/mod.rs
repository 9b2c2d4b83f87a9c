//! The out-of-context decision: two captions that ground to the same object
//! but describe different events flag the image.

mod similarity;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use similarity::{
    semantic_similarity, EmbeddingCosineSts, LexicalOverlapSts, SentenceSimilarity,
    LEXICAL_OVERLAP_TAG,
};

use crate::encoders::{BoundingBox, CaptionEmbedding, ObjectEmbeddingSet};
use crate::matcher::{score, ScoreResult};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// IoU threshold.
    pub t_i: f64,
    /// Caption similarity threshold.
    pub t_s: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { t_i: 0.5, t_s: 0.5 }
    }
}

impl Thresholds {
    pub fn new(t_i: f64, t_s: f64) -> Result<Self> {
        let t = Self { t_i, t_s };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t_i", self.t_i), ("t_s", self.t_s)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Intersection over union. Zero-area boxes overlap nothing except an
/// identical box.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a.area() <= 0.0 || b.area() <= 0.0 {
        return if a.corners() == b.corners() { 1.0 } else { 0.0 };
    }
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Same object (`iou > t_i`) and different meaning (`s_sim < t_s`).
/// Both comparisons are strict.
pub fn decide(iou: f64, s_sim: f64, thresholds: &Thresholds) -> bool {
    iou > thresholds.t_i && s_sim < thresholds.t_s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub image_id: String,
    pub ooc: bool,
    pub iou: f64,
    pub s_sim: f64,
    pub s1: f64,
    pub s2: f64,
    #[serde(with = "corners")]
    pub box1: BoundingBox,
    #[serde(with = "corners")]
    pub box2: BoundingBox,
    pub thresholds: Thresholds,
}

impl Verdict {
    /// Builds a verdict from the two groundings over the same box list.
    pub fn from_evidence(
        image_id: &str,
        boxes: &[BoundingBox],
        g1: &ScoreResult,
        g2: &ScoreResult,
        s_sim: f64,
        thresholds: Thresholds,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&s_sim) {
            return Err(Error::Invalid(format!("similarity {s_sim} outside [0, 1]")));
        }
        let pick = |g: &ScoreResult| {
            boxes
                .get(g.best_box_index)
                .cloned()
                .ok_or_else(|| Error::Invalid("grounding index out of range".into()))
        };
        let (box1, box2) = (pick(g1)?, pick(g2)?);
        let overlap = iou(&box1, &box2);
        Ok(Self {
            image_id: image_id.to_string(),
            ooc: decide(overlap, s_sim, &thresholds),
            iou: overlap,
            s_sim,
            s1: g1.s_ic,
            s2: g2.s_ic,
            box1,
            box2,
            thresholds,
        })
    }

    /// Re-applies the rule under other thresholds; the evidence is
    /// threshold independent.
    pub fn with_thresholds(&self, thresholds: Thresholds) -> Self {
        Self {
            ooc: decide(self.iou, self.s_sim, &thresholds),
            thresholds,
            ..self.clone()
        }
    }
}

/// Grounds both captions on the same objects and applies the rule.
pub fn verdict_from_embeddings(
    objects: &ObjectEmbeddingSet,
    c1: &CaptionEmbedding,
    c2: &CaptionEmbedding,
    s_sim: f64,
    thresholds: Thresholds,
) -> Result<Verdict> {
    let g1 = score(objects, c1)?;
    let g2 = score(objects, c2)?;
    Verdict::from_evidence(&objects.image_id, &objects.boxes, &g1, &g2, s_sim, thresholds)
}

/// Boxes travel as `[x0, y0, x1, y1]` on the wire.
mod corners {
    use super::*;

    pub fn serialize<S: Serializer>(b: &BoundingBox, s: S) -> std::result::Result<S::Ok, S::Error> {
        b.corners().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BoundingBox, D::Error> {
        let [x0, y0, x1, y1] = <[f64; 4]>::deserialize(d)?;
        Ok(BoundingBox::new(x0, y0, x1, y1, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1, 1.0)
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&b(1.0, 2.0, 5.0, 9.0), &b(1.0, 2.0, 5.0, 9.0)), 1.0);
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(2.0, 2.0, 3.0, 3.0)), 0.0);
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(1.0, 0.0, 2.0, 1.0)), 0.0);
        let v = iou(&b(0.0, 0.0, 10.0, 10.0), &b(5.0, 5.0, 15.0, 15.0));
        assert!((v - 25.0 / 175.0).abs() < 1e-9);
        let z = b(3.0, 3.0, 3.0, 3.0);
        assert_eq!(iou(&z, &z), 1.0);
        assert_eq!(iou(&z, &b(0.0, 0.0, 5.0, 5.0)), 0.0);
    }

    #[test]
    fn rule_quadrants() {
        let t = Thresholds::default();
        assert!(decide(1.0, 0.1, &t));
        assert!(!decide(1.0, 0.9, &t));
        assert!(!decide(0.0, 0.1, &t));
        assert!(!decide(0.5, 0.1, &t));
        assert!(!decide(0.9, 0.5, &t));
        assert!(Thresholds::new(1.2, 0.5).is_err());
    }

    fn objects() -> ObjectEmbeddingSet {
        ObjectEmbeddingSet {
            image_id: "img".into(),
            boxes: vec![b(0.0, 0.0, 10.0, 10.0), b(20.0, 20.0, 30.0, 30.0)],
            embeddings: array![[1.0, 0.0], [0.0, 1.0]],
            backbone_tag: "bb".into(),
        }
    }

    fn cap(v: [f64; 2]) -> CaptionEmbedding {
        CaptionEmbedding {
            values: ndarray::arr1(&v),
            caption_sha256: String::new(),
        }
    }

    #[test]
    fn verdict_carries_evidence_and_is_symmetric() {
        let o = objects();
        let v = verdict_from_embeddings(&o, &cap([1.0, 0.2]), &cap([2.0, 0.0]), 0.1, Thresholds::default()).unwrap();
        assert!(v.ooc);
        assert_eq!(v.iou, 1.0);
        assert_eq!(v.s1, 1.0);
        assert_eq!(v.s2, 2.0);
        let w = verdict_from_embeddings(&o, &cap([0.0, 1.0]), &cap([1.0, 0.0]), 0.1, Thresholds::default()).unwrap();
        assert!(!w.ooc);
        let swapped = verdict_from_embeddings(&o, &cap([1.0, 0.0]), &cap([0.0, 1.0]), 0.1, Thresholds::default()).unwrap();
        assert_eq!((w.ooc, w.iou), (swapped.ooc, swapped.iou));
        assert_eq!(w.box1, swapped.box2);
        assert!(!v.with_thresholds(Thresholds { t_i: 0.5, t_s: 0.05 }).ooc);
    }

    #[test]
    fn fallback_reduces_to_similarity() {
        let o = ObjectEmbeddingSet {
            image_id: "x".into(),
            boxes: vec![BoundingBox::full_image(40, 30)],
            embeddings: Array2::from_elem((1, 2), 0.3),
            backbone_tag: "bb".into(),
        };
        for (s, expect) in [(0.2, true), (0.8, false)] {
            let v = verdict_from_embeddings(&o, &cap([1.0, 0.0]), &cap([0.0, 1.0]), s, Thresholds::default()).unwrap();
            assert_eq!(v.iou, 1.0);
            assert_eq!(v.ooc, expect);
        }
    }

    #[test]
    fn wire_format() {
        let v = verdict_from_embeddings(&objects(), &cap([1.0, 0.0]), &cap([1.0, 0.0]), 1.0, Thresholds::default()).unwrap();
        let j = serde_json::to_value(&v).unwrap();
        assert_eq!(j["box1"], serde_json::json!([0.0, 0.0, 10.0, 10.0]));
        assert_eq!(j["thresholds"], serde_json::json!({"t_i": 0.5, "t_s": 0.5}));
        for k in ["image_id", "ooc", "iou", "s_sim", "s1", "s2", "box2"] {
            assert!(j.get(k).is_some(), "{k}");
        }
        let back: Verdict = serde_json::from_value(j.clone()).unwrap();
        assert_eq!(serde_json::to_value(&back).unwrap(), j);
    }
}
