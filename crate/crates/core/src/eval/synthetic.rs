use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;

use crate::corpus::{CaptionRecord, DatasetSplit, OocLabel, RetrievedVia, TestTriplet};
use crate::encoders::{detect_objects, DetectionConfig, ObjectDetector};
use crate::pipeline::load_image;
use crate::textprep::{detect_entities, EntityRecognizer};
use crate::util::seeded_rng;
use crate::{Error, Result};

/// Noun synonym groups; each word is replaced by the next one in its group.
const NOUN_GROUPS: &[&[&str]] = &[
    &["balloon", "ball", "globe"],
    &["crate", "box", "placard"],
    &["tent", "pennant", "cone"],
    &["banner", "barrier", "plank"],
    &["workers", "labourers"],
    &["wages", "pay"],
    &["damage", "destruction"],
    &["rains", "downpours"],
    &["supporters", "backers"],
    &["election", "poll"],
    &["memorial", "monument"],
    &["firefighters", "firemen"],
    &["volunteers", "helpers"],
    &["parcels", "packages"],
    &["families", "households"],
    &["vigil", "gathering"],
    &["victims", "casualties"],
    &["agreement", "deal"],
    &["ministers", "officials"],
    &["camp", "settlement"],
    &["evacuees", "displaced"],
    &["victory", "win"],
    &["fans", "spectators"],
    &["transport", "transit"],
    &["plans", "proposals"],
    &["housing", "homes"],
    &["lawmakers", "legislators"],
    &["prices", "costs"],
    &["wildfire", "blaze"],
    &["hillsides", "slopes"],
    &["saplings", "seedlings"],
    &["campaign", "initiative"],
    &["reporters", "journalists"],
    &["verdict", "ruling"],
    &["hospital", "clinic"],
    &["teachers", "educators"],
    &["classes", "classrooms"],
    &["ballot", "vote"],
    &["residents", "inhabitants"],
    &["floodwaters", "floods"],
    &["drive", "push"],
    &["villages", "hamlets"],
    &["plant", "station"],
    &["concert", "gig"],
    &["money", "funds"],
    &["orphans", "foundlings"],
    &["disaster", "tragedy"],
    &["ceasefire", "truce"],
    &["militias", "factions"],
    &["runners", "athletes"],
    &["blankets", "quilts"],
    &["people", "individuals"],
    &["snap", "spell"],
    &["wreckage", "debris"],
    &["train", "locomotive"],
    &["farmers", "growers"],
    &["restrictions", "limits"],
    &["anniversary", "jubilee"],
    &["uprising", "revolt"],
    &["goods", "products"],
    &["briefing", "conference"],
    &["ribbon", "tape"],
    &["bridge", "viaduct"],
    &["mudslide", "landslide"],
    &["brutality", "violence"],
    &["spill", "leak"],
    &["awards", "prizes"],
    &["nurses", "caregivers"],
    &["tourists", "visitors"],
    &["ash", "dust"],
    &["crowd", "throng"],
    &["spokesperson", "representative"],
];

/// Deterministic rule-based paraphraser: rotates non-entity nouns through
/// synonym groups and moves a leading or trailing adverbial clause.
#[derive(Debug, Clone)]
pub struct Paraphraser {
    synonyms: HashMap<String, String>,
    word: Regex,
    leading: Regex,
    trailing: Regex,
}

impl Default for Paraphraser {
    fn default() -> Self {
        let mut synonyms = HashMap::new();
        for group in NOUN_GROUPS {
            for (i, w) in group.iter().enumerate() {
                synonyms.insert(w.to_string(), group[(i + 1) % group.len()].to_string());
            }
        }
        Self {
            synonyms,
            word: Regex::new(r"[A-Za-z']+").expect("static regex"),
            leading: Regex::new(r"^(In|Near|At|On) ([^,]+), (.+?)([.!?]?)$").expect("static regex"),
            trailing: Regex::new(r"^(.+?) (in|near|at) ([^,]+?)([.!?]?)$").expect("static regex"),
        }
    }
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

fn upper_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

const FUNCTION_WORDS: &[&str] = &["A", "An", "The", "In", "Near", "At", "On"];

impl Paraphraser {
    fn swap_nouns(&self, text: &str, ner: &dyn EntityRecognizer) -> Result<String> {
        let spans = detect_entities(text, ner)?;
        // Entity spans are in chars; the regex works on bytes.
        let char_at: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        let protected: Vec<(usize, usize)> = spans
            .iter()
            .map(|s| {
                let start = char_at.get(s.start).copied().unwrap_or(text.len());
                let end = char_at.get(s.end).copied().unwrap_or(text.len());
                (start, end)
            })
            .collect();
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        for m in self.word.find_iter(text) {
            out.push_str(&text[last..m.start()]);
            let inside = protected.iter().any(|&(a, b)| m.start() < b && a < m.end());
            let w = m.as_str();
            match self.synonyms.get(&w.to_lowercase()) {
                Some(syn) if !inside => {
                    if w.chars().next().is_some_and(char::is_uppercase) {
                        out.push_str(&upper_first(syn));
                    } else {
                        out.push_str(syn);
                    }
                }
                _ => out.push_str(w),
            }
            last = m.end();
        }
        out.push_str(&text[last..]);
        Ok(out)
    }

    fn reorder(&self, text: &str) -> String {
        if let Some(c) = self.leading.captures(text) {
            let rest = &c[3];
            let first = rest.split_whitespace().next().unwrap_or("");
            let rest = if FUNCTION_WORDS.contains(&first) { lower_first(rest) } else { rest.to_string() };
            return format!("{} {} {}{}", upper_first(&rest), c[1].to_lowercase(), &c[2], &c[4]);
        }
        if let Some(c) = self.trailing.captures(text) {
            let head = &c[1];
            let first = head.split_whitespace().next().unwrap_or("");
            let head = if FUNCTION_WORDS.contains(&first) { lower_first(head) } else { head.to_string() };
            return format!("{} {}, {}{}", upper_first(&c[2]), &c[3], head, &c[4]);
        }
        text.to_string()
    }

    /// A paraphrase of `text`, or `None` when no rule applies.
    pub fn paraphrase(&self, text: &str, ner: &dyn EntityRecognizer) -> Result<Option<String>> {
        let out = self.reorder(&self.swap_nouns(text, ner)?);
        Ok((out != text).then_some(out))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOoc {
    pub triplets: Vec<TestTriplet>,
    /// Images whose top detected class no other image shares.
    pub skipped_singletons: usize,
    /// Images whose top detection is the unlabeled full-frame fallback.
    pub skipped_unlabeled: usize,
}

/// Builds a balanced labeled benchmark from captioned images: for each
/// sampled image one not-out-of-context triplet (its caption and a
/// paraphrase) and one out-of-context triplet (its caption and the caption
/// of another image with the same top detected class). Deterministic for a
/// given seed; at most `max_images` images are used.
pub fn build_synthetic_ooc(
    split: &DatasetSplit,
    detector: &dyn ObjectDetector,
    detection: &DetectionConfig,
    ner: &dyn EntityRecognizer,
    paraphraser: &Paraphraser,
    seed: u64,
    max_images: Option<usize>,
) -> Result<SyntheticOoc> {
    let images = split.images();
    let mut classes: Vec<Option<String>> = Vec::with_capacity(images.len());
    for r in images {
        let img = load_image(split.resolve(&r.image_path)).map_err(|e| e.at("load_image"))?;
        let boxes = detect_objects(&img, detector, detection)?;
        classes.push(boxes[0].class_label.clone());
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in classes.iter().enumerate() {
        if let Some(c) = c {
            by_class.entry(c.as_str()).or_default().push(i);
        }
    }
    let skipped_unlabeled = classes.iter().filter(|c| c.is_none()).count();
    let mut eligible: Vec<usize> = Vec::new();
    let mut skipped_singletons = 0;
    for members in by_class.values() {
        if members.len() < 2 {
            skipped_singletons += members.len();
        } else {
            eligible.extend(members);
        }
    }
    if eligible.is_empty() {
        return Err(Error::Invalid(
            "no detected class is shared by two images; cannot build out-of-context pairs".into(),
        ));
    }
    eligible.sort_unstable();
    let mut rng = seeded_rng(seed, 0x5e7);
    eligible.shuffle(&mut rng);

    let limit = max_images.unwrap_or(usize::MAX);
    let mut triplets = Vec::new();
    let mut used = 0;
    for &i in &eligible {
        if used >= limit {
            break;
        }
        let record = &images[i];
        let original = &record.captions[0];
        let Some(para) = paraphraser.paraphrase(&original.text, ner)? else { continue };
        let members = &by_class[classes[i].as_deref().expect("eligible")];
        let partners: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&j| j != i && images[j].captions[0].text != original.text)
            .collect();
        if partners.is_empty() {
            continue;
        }
        let j = partners[rng.random_range(0..partners.len())];
        let make = |caption2: CaptionRecord, label: OocLabel| TestTriplet {
            image_id: record.image_id.clone(),
            image_path: record.image_path.clone(),
            caption1: original.clone(),
            caption2,
            label: Some(label),
            missing_image: false,
        };
        triplets.push(make(
            CaptionRecord {
                text: para,
                source: "paraphrase".into(),
                retrieved_via: RetrievedVia::Manual,
                published_year: original.published_year,
            },
            OocLabel::NotOoc,
        ));
        triplets.push(make(images[j].captions[0].clone(), OocLabel::Ooc));
        used += 1;
    }
    Ok(SyntheticOoc {
        triplets,
        skipped_singletons,
        skipped_unlabeled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ooc::{semantic_similarity, LexicalOverlapSts};
    use crate::textprep::GazetteerRecognizer;

    #[test]
    fn paraphrase_keeps_entities_and_meaning() {
        let p = Paraphraser::default();
        let ner = GazetteerRecognizer::default();
        let text = "Maria Lopez addresses striking dock workers demanding higher wages beside the red balloon in Berlin.";
        let out = p.paraphrase(text, &ner).unwrap().unwrap();
        assert_eq!(out, "In Berlin, Maria Lopez addresses striking dock labourers demanding higher pay beside the red ball.");
        let lead = "In Lagos, a crowd of Kenyans casts a ballot by the blue crate.";
        assert_eq!(
            p.paraphrase(lead, &ner).unwrap().unwrap(),
            "A throng of Kenyans casts a vote by the blue box in Lagos."
        );
        // Entity names that collide with the synonym table are untouched.
        let org = "A spokesperson for the Red Cross opens a new children's hospital wing near the green tent";
        let out = p.paraphrase(org, &ner).unwrap().unwrap();
        assert!(out.contains("Red Cross"), "{out}");
        let sts = LexicalOverlapSts;
        let sim = semantic_similarity(text, &p.paraphrase(text, &ner).unwrap().unwrap(), &sts).unwrap();
        assert!(sim > 0.6, "{sim}");
        assert_eq!(p.paraphrase("Quiet.", &ner).unwrap(), None);
    }
}
