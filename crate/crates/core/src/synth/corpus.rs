use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::captions::{referring_expression, NewsCaptioner};
use super::{random_scene, render, Scene, SceneConfig};
use crate::eval::{GroundingAnnotation, GroundingCorpus, GroundingImage, GroundingRef, Sentence};
use crate::corpus::{write_split, CaptionRecord, DatasetSplit, ImageRecord, SplitName};
use crate::util::seeded_rng;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    /// Held-out captioned images used to build labeled triplets.
    pub n_heldout: usize,
    pub captions_per_image: usize,
    pub seed: u64,
    pub scene: SceneConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 5000,
            n_val: 500,
            n_heldout: 300,
            captions_per_image: 2,
            seed: 0,
            scene: SceneConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaptionedCorpus {
    pub train: PathBuf,
    pub val: PathBuf,
    pub heldout: PathBuf,
    /// Scenes in train, val, heldout order.
    pub scenes: Vec<(String, Scene)>,
}

fn write_png(dir: &Path, image_id: &str, scene: &Scene) -> Result<String> {
    let rel = format!("images/{image_id}.png");
    render(scene).save(dir.join(&rel))?;
    Ok(rel)
}

/// Renders scenes and writes `train.jsonl`, `val.jsonl` and `heldout.jsonl`
/// plus PNG images under `dir`.
pub fn write_captioned_corpus(dir: impl AsRef<Path>, config: &SynthConfig) -> Result<CaptionedCorpus> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    let captioner = NewsCaptioner::default();
    let total = config.n_train + config.n_val + config.n_heldout;
    let made = (0..total)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded_rng(config.seed, i as u64 + 1);
            let scene = random_scene(&mut rng, &config.scene);
            let image_id = format!("syn-{:06}", i);
            let mut captions: Vec<CaptionRecord> = Vec::new();
            while captions.len() < config.captions_per_image.max(1) {
                let text = captioner.caption(&scene, &mut rng);
                if captions.iter().all(|c| c.text != text) {
                    captions.push(CaptionRecord::new(text, "synthetic-wire"));
                }
            }
            let image_path = write_png(dir, &image_id, &scene)?;
            Ok((
                ImageRecord {
                    image_id: image_id.clone(),
                    image_path,
                    captions,
                    missing_image: false,
                },
                (image_id, scene),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (records, scenes): (Vec<_>, Vec<_>) = made.into_iter().unzip();
    let mut records = records.into_iter();
    let mut write = |name: &str, split: SplitName, n: usize| -> Result<PathBuf> {
        let part: Vec<_> = records.by_ref().take(n).collect();
        let path = dir.join(name);
        write_split(&DatasetSplit::from_images(split, part, dir)?, &path)?;
        Ok(path)
    };
    Ok(CaptionedCorpus {
        train: write("train.jsonl", SplitName::Train, config.n_train)?,
        val: write("val.jsonl", SplitName::Val, config.n_val)?,
        heldout: write("heldout.jsonl", SplitName::Val, config.n_heldout)?,
        scenes,
    })
}

/// Writes `refs.json` plus images. Every object whose colour and shape are
/// unique within its scene gets one referring expression.
pub fn write_grounding_corpus(dir: impl AsRef<Path>, n_images: usize, seed: u64) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    let config = SceneConfig {
        min_objects: 3,
        max_objects: 5,
        unique_subject_shape: false,
        ..SceneConfig::default()
    };
    let scenes = (0..n_images)
        .into_par_iter()
        .map(|i| {
            let scene = random_scene(&mut seeded_rng(seed, i as u64 + 1), &config);
            let file_name = write_png(dir, &format!("ref-{i:05}"), &scene)?;
            Ok((i as u64, file_name, scene))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut corpus = GroundingCorpus::default();
    for (id, file_name, scene) in scenes {
        corpus.images.push(GroundingImage {
            id,
            file_name,
            width: scene.width,
            height: scene.height,
        });
        for o in &scene.objects {
            let ann_id = corpus.annotations.len() as u64;
            corpus.annotations.push(GroundingAnnotation {
                id: ann_id,
                image_id: id,
                bbox: [o.bbox.x_min, o.bbox.y_min, o.bbox.width(), o.bbox.height()],
                category: Some(o.shape.label().to_string()),
            });
            let twins = scene
                .objects
                .iter()
                .filter(|p| p.shape == o.shape && p.colour == o.colour)
                .count();
            if twins == 1 {
                corpus.refs.push(GroundingRef {
                    ref_id: corpus.refs.len() as u64,
                    image_id: id,
                    ann_id,
                    sentences: vec![Sentence {
                        sent: referring_expression(o),
                    }],
                });
            }
        }
    }
    let path = dir.join("refs.json");
    fs::write(&path, serde_json::to_vec(&corpus)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_split;

    #[test]
    fn small_corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_train: 6,
            n_val: 3,
            n_heldout: 2,
            ..SynthConfig::default()
        };
        let c = write_captioned_corpus(dir.path(), &cfg).unwrap();
        let train = load_split(&c.train, SplitName::Train).unwrap();
        assert_eq!(train.images().len(), 6);
        assert!(train.warnings.is_empty());
        assert!(train.images().iter().all(|r| r.captions.len() == 2));
        let val = load_split(&c.val, SplitName::Val).unwrap();
        train.check_disjoint(&val).unwrap();
        let again = tempfile::tempdir().unwrap();
        let c2 = write_captioned_corpus(again.path(), &cfg).unwrap();
        assert_eq!(fs::read(&c.train).unwrap(), fs::read(&c2.train).unwrap());
    }

    #[test]
    fn grounding_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_grounding_corpus(dir.path(), 5, 1).unwrap();
        let g: GroundingCorpus = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        assert_eq!(g.images.len(), 5);
        assert!(!g.refs.is_empty());
        for r in &g.refs {
            let ann = &g.annotations[r.ann_id as usize];
            assert_eq!(ann.image_id, r.image_id);
            assert!(r.sentences[0].sent.starts_with("the "));
        }
        let raw: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        assert!(raw["annotations"][0]["bbox"].as_array().unwrap().len() == 4);
    }
}
