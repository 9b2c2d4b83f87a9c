//! Procedural scene world: flat saturated shapes on a noisy gray
//! background, with news-style captions about the largest shape and
//! referring expressions for every shape.

mod captions;
mod corpus;

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use captions::{referring_expression, NewsCaptioner, SHAPE_NOUNS};
pub use corpus::{write_captioned_corpus, write_grounding_corpus, CaptionedCorpus, SynthConfig};

use crate::encoders::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Bar,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Bar];

    /// Class label the blob detector assigns to this shape.
    pub fn label(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Bar => "bar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colour {
    Red,
    Orange,
    Yellow,
    Green,
    Teal,
    Blue,
    Purple,
    Pink,
}

impl Colour {
    pub const ALL: [Colour; 8] = [
        Colour::Red,
        Colour::Orange,
        Colour::Yellow,
        Colour::Green,
        Colour::Teal,
        Colour::Blue,
        Colour::Purple,
        Colour::Pink,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Colour::Red => "red",
            Colour::Orange => "orange",
            Colour::Yellow => "yellow",
            Colour::Green => "green",
            Colour::Teal => "teal",
            Colour::Blue => "blue",
            Colour::Purple => "purple",
            Colour::Pink => "pink",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Colour::Red => [215, 35, 35],
            Colour::Orange => [235, 135, 25],
            Colour::Yellow => [225, 210, 35],
            Colour::Green => [45, 170, 55],
            Colour::Teal => [25, 165, 170],
            Colour::Blue => [40, 75, 220],
            Colour::Purple => [135, 55, 200],
            Colour::Pink => [230, 75, 165],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub colour: Colour,
    /// Tight pixel box, `x_max`/`y_max` exclusive.
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub objects: Vec<SceneObject>,
    /// Index of the captioned (largest) object.
    pub subject: usize,
    pub background: u8,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub size: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Distractors never share the subject's shape.
    pub unique_subject_shape: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            size: 96,
            min_objects: 2,
            max_objects: 5,
            unique_subject_shape: true,
        }
    }
}

fn extent(shape: Shape, size: u32, vertical: bool) -> (u32, u32) {
    match shape {
        Shape::Bar if vertical => ((size / 3).max(4), size),
        Shape::Bar => (size, (size / 3).max(4)),
        _ => (size, size),
    }
}

/// Approximate filled pixel count of a shape of the given extent.
fn filled_area(shape: Shape, w: u32, h: u32) -> f64 {
    let box_area = (w * h) as f64;
    match shape {
        Shape::Square | Shape::Bar => box_area,
        Shape::Circle => box_area * std::f64::consts::FRAC_PI_4,
        Shape::Triangle => box_area * 0.5,
    }
}

fn overlaps(a: &BoundingBox, b: &BoundingBox, gap: f64) -> bool {
    a.x_min < b.x_max + gap && b.x_min < a.x_max + gap && a.y_min < b.y_max + gap && b.y_min < a.y_max + gap
}

/// Samples a scene: one large subject plus smaller distractors placed
/// without touching.
pub fn random_scene(rng: &mut impl Rng, config: &SceneConfig) -> Scene {
    let s = config.size;
    loop {
        let n = rng.random_range(config.min_objects..=config.max_objects);
        let subject_shape = Shape::ALL[rng.random_range(0..4)];
        let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
        let mut subject_area = 0.0;
        let mut failed = false;
        for k in 0..n {
            let shape = if k == 0 {
                subject_shape
            } else {
                loop {
                    let sh = Shape::ALL[rng.random_range(0..4)];
                    if !(config.unique_subject_shape && sh == subject_shape) {
                        break sh;
                    }
                }
            };
            let mut size = if k == 0 {
                rng.random_range(s * 28 / 96..=s * 40 / 96)
            } else {
                rng.random_range(s * 12 / 96..=s * 22 / 96)
            };
            let vertical = rng.random_bool(0.3);
            let (mut w, mut h) = extent(shape, size, vertical);
            if k == 0 {
                subject_area = filled_area(shape, w, h);
            } else {
                // Distractors stay clearly smaller than the subject.
                while size > 6 && filled_area(shape, w, h) > 0.7 * subject_area {
                    size -= 1;
                    (w, h) = extent(shape, size, vertical);
                }
            }
            let colour = Colour::ALL[rng.random_range(0..Colour::ALL.len())];
            let mut placed = None;
            for _ in 0..60 {
                let x = rng.random_range(1..s - w);
                let y = rng.random_range(1..s - h);
                let b = BoundingBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64, 1.0);
                if objects.iter().all(|o| !overlaps(&o.bbox, &b, 3.0)) {
                    placed = Some(b);
                    break;
                }
            }
            match placed {
                Some(bbox) => objects.push(SceneObject {
                    shape,
                    colour,
                    bbox,
                }),
                None if k < config.min_objects => {
                    failed = true;
                    break;
                }
                None => break,
            }
        }
        if failed {
            continue;
        }
        return Scene {
            width: s,
            height: s,
            objects,
            subject: 0,
            background: rng.random_range(100..=180),
            noise_seed: rng.random(),
        };
    }
}

fn inside(shape: Shape, b: &BoundingBox, x: f64, y: f64) -> bool {
    let (w, h) = (b.width(), b.height());
    let (u, v) = (x + 0.5 - b.x_min, y + 0.5 - b.y_min);
    if u < 0.0 || v < 0.0 || u > w || v > h {
        return false;
    }
    match shape {
        Shape::Square | Shape::Bar => true,
        Shape::Circle => {
            let (cx, cy, r) = (w / 2.0, h / 2.0, w.min(h) / 2.0);
            (u - cx).powi(2) + (v - cy).powi(2) <= r * r
        }
        Shape::Triangle => {
            // Apex at the top centre, base along the bottom edge.
            let half = (v / h) * (w / 2.0);
            (u - w / 2.0).abs() <= half + 0.5
        }
    }
}

pub fn render(scene: &Scene) -> RgbImage {
    let mut rng = crate::util::seeded_rng(scene.noise_seed, 7);
    let bg = scene.background as i32;
    let tint = [rng.random_range(-6..=6), rng.random_range(-6..=6), rng.random_range(-6..=6)];
    let mut img = RgbImage::from_fn(scene.width, scene.height, |_, _| {
        let n: i32 = rng.random_range(-8..=8);
        Rgb(std::array::from_fn(|c| (bg + tint[c] + n).clamp(0, 255) as u8))
    });
    for o in &scene.objects {
        let base = o.colour.rgb();
        let shade: i32 = rng.random_range(-15..=15);
        let (x0, y0) = (o.bbox.x_min as u32, o.bbox.y_min as u32);
        let (x1, y1) = (o.bbox.x_max as u32, o.bbox.y_max as u32);
        for y in y0..y1.min(scene.height) {
            for x in x0..x1.min(scene.width) {
                if inside(o.shape, &o.bbox, x as f64, y as f64) {
                    let n: i32 = rng.random_range(-6..=6);
                    img.put_pixel(x, y, Rgb(std::array::from_fn(|c| (base[c] as i32 + shade + n).clamp(0, 255) as u8)));
                }
            }
        }
    }
    img
}
