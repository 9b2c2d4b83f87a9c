use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::records::{CaptionRecord, ImageRecord};
use super::split::{DatasetSplit, SplitName};
use crate::util::seeded_rng;
use crate::{Error, Result};

const MAX_RESAMPLES: usize = 10_000;

/// One self-supervised training example: an image, one of its own captions
/// and a caption drawn from a different image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainPair<'a> {
    pub image: &'a ImageRecord,
    pub matching: &'a CaptionRecord,
    pub random: &'a CaptionRecord,
    pub random_image: &'a ImageRecord,
}

/// Lazy stream of [`TrainPair`]s, one per (image, caption) in split order.
pub struct TrainPairs<'a> {
    images: &'a [ImageRecord],
    image_idx: usize,
    caption_idx: usize,
    rng: ChaCha8Rng,
    failed: bool,
}

impl<'a> TrainPairs<'a> {
    fn sample_negative(&mut self, i: usize, text: &str) -> Result<(usize, usize)> {
        let n = self.images.len();
        for _ in 0..MAX_RESAMPLES {
            let mut j = self.rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let k = self.rng.random_range(0..self.images[j].captions.len());
            if self.images[j].captions[k].text != text {
                return Ok((j, k));
            }
        }
        Err(Error::Invalid(format!(
            "no caption distinct from {text:?} found on other images"
        )))
    }
}

impl<'a> Iterator for TrainPairs<'a> {
    type Item = Result<TrainPair<'a>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        while self.image_idx < self.images.len()
            && self.caption_idx >= self.images[self.image_idx].captions.len()
        {
            self.image_idx += 1;
            self.caption_idx = 0;
        }
        let i = self.image_idx;
        let image = self.images.get(i)?;
        let matching = &image.captions[self.caption_idx];
        self.caption_idx += 1;
        Some(match self.sample_negative(i, &matching.text) {
            Ok((j, k)) => Ok(TrainPair {
                image,
                matching,
                random: &self.images[j].captions[k],
                random_image: &self.images[j],
            }),
            Err(e) => {
                self.failed = true;
                Err(e)
            }
        })
    }
}

/// Pairs every caption of every image with a random caption from a
/// uniformly chosen different image. Deterministic for a given seed.
pub fn make_train_pairs(split: &DatasetSplit, seed: u64) -> Result<TrainPairs<'_>> {
    if split.name == SplitName::Test {
        return Err(Error::Invalid("pairs are sampled from captioned images, not triplets".into()));
    }
    let images = split.images();
    if images.len() < 2 {
        return Err(Error::Invalid(
            "at least two images are needed to sample a negative caption".into(),
        ));
    }
    Ok(TrainPairs {
        images,
        image_idx: 0,
        caption_idx: 0,
        rng: seeded_rng(seed, 0),
        failed: false,
    })
}

/// Visit order for one epoch, reshuffled deterministically per (seed, epoch).
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seeded_rng(seed, epoch as u64 + 1));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CaptionRecord;

    fn split(n: usize, captions_per_image: usize) -> DatasetSplit {
        let records = (0..n)
            .map(|i| ImageRecord {
                image_id: format!("img{i}"),
                image_path: format!("img{i}.png"),
                captions: (0..captions_per_image)
                    .map(|c| CaptionRecord::new(format!("caption {i}-{c}"), "src"))
                    .collect(),
                missing_image: false,
            })
            .collect();
        DatasetSplit::from_images(SplitName::Train, records, ".").unwrap()
    }

    #[test]
    fn two_images_pair_with_each_other() {
        let s = split(2, 1);
        let pairs: Vec<_> = make_train_pairs(&s, 3).unwrap().map(Result::unwrap).collect();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].random_image.image_id, "img1");
        assert_eq!(pairs[1].random_image.image_id, "img0");
    }

    #[test]
    fn same_seed_same_sequence() {
        let s = split(50, 2);
        let a: Vec<_> = make_train_pairs(&s, 11)
            .unwrap()
            .map(|p| p.unwrap().random.text.clone())
            .collect();
        let b: Vec<_> = make_train_pairs(&s, 11)
            .unwrap()
            .map(|p| p.unwrap().random.text.clone())
            .collect();
        let c: Vec<_> = make_train_pairs(&s, 12)
            .unwrap()
            .map(|p| p.unwrap().random.text.clone())
            .collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 100);
    }

    #[test]
    fn single_image_cannot_sample_negative() {
        let s = split(1, 3);
        assert!(make_train_pairs(&s, 0).is_err());
    }

    #[test]
    fn negative_text_differs_from_match() {
        let mut s = split(3, 1);
        if let super::super::SplitRecords::Images(r) = &mut s.records {
            r[1].captions[0].text = "caption 0-0".into();
        }
        for p in make_train_pairs(&s, 5).unwrap() {
            let p = p.unwrap();
            assert_ne!(p.matching.text, p.random.text);
        }
    }

    #[test]
    fn epoch_order_is_a_permutation_keyed_by_epoch() {
        let a = epoch_order(20, 1, 0);
        let b = epoch_order(20, 1, 1);
        assert_ne!(a, b);
        assert_eq!(a, epoch_order(20, 1, 0));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }
}
