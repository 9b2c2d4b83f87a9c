mod desk;
mod service;

use cosmos_core::encoders::{BoundingBox, CaptionEmbedding, HeadDims, ObjectEmbeddingSet, ProjectionHeads};
use cosmos_core::matcher::{batch_loss, batch_loss_and_grad, margin_loss, score, PairRef, ScoreResult};
use cosmos_core::ooc::{iou, Thresholds, Verdict};
use cosmos_core::textprep::{detect_entities, hypernymize, preprocess, CreditPatterns, EntityClass, GazetteerRecognizer};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use desk::{cleanup, p5_grounding_ablation, p6_desk_training, p7_synthetic_ooc};
pub use service::{crash_child, p9_service, CRASH_ENV};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
    /// Wall-clock budget in seconds.
    pub time_limit: Option<f64>,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
            time_limit: None,
        }
    }

    pub fn fail(detail: impl Into<String>) -> Self {
        Self::new(false, detail)
    }

    pub fn within(mut self, seconds: f64) -> Self {
        self.time_limit = Some(seconds);
        self
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn embedding_set(rows: Array2<f64>) -> ObjectEmbeddingSet {
    let n = rows.nrows();
    ObjectEmbeddingSet {
        image_id: "oracle".into(),
        boxes: (0..n).map(|i| BoundingBox::new(i as f64, 0.0, i as f64 + 1.0, 1.0, 1.0)).collect(),
        embeddings: rows,
        backbone_tag: "oracle".into(),
    }
}

fn caption(values: Array1<f64>) -> CaptionEmbedding {
    CaptionEmbedding {
        values,
        caption_sha256: String::new(),
    }
}

pub fn p1_score_oracle() -> Result<Outcome, String> {
    let mut r = rng(1);
    let d = 300;
    let mut worst = 0.0f64;
    let mut index_mismatches = 0;
    for _ in 0..1000 {
        let n = r.random_range(1..=12);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let c: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        // Brute force: plain loops over the nested vectors.
        let mut best = f64::NEG_INFINITY;
        let mut best_i = 0;
        for (i, row) in rows.iter().enumerate() {
            let mut dot = 0.0;
            for k in 0..d {
                dot += row[k] * c[k];
            }
            if dot > best {
                best = dot;
                best_i = i;
            }
        }
        let flat: Vec<f64> = rows.concat();
        let got = score(
            &embedding_set(Array2::from_shape_vec((n, d), flat).map_err(err)?),
            &caption(Array1::from(c)),
        )
        .map_err(err)?;
        worst = worst.max((got.s_ic - best).abs());
        index_mismatches += (got.best_box_index != best_i) as usize;
    }
    // Constructed ties: the maximal row appears at indices 2 and 5.
    let mut tie = Array2::<f64>::zeros((7, d));
    tie[[2, 0]] = 1.0;
    tie[[5, 0]] = 1.0;
    tie[[3, 1]] = 0.5;
    let mut c = Array1::<f64>::zeros(d);
    c[0] = 2.0;
    c[1] = 1.0;
    let t = score(&embedding_set(tie), &caption(c.clone())).map_err(err)?;
    let uniform = score(&embedding_set(Array2::from_elem((4, d), 0.1)), &caption(c)).map_err(err)?;
    let ties_ok = t.best_box_index == 2 && t.s_ic == 2.0 && uniform.best_box_index == 0;
    Ok(Outcome::new(
        worst <= 1e-6 && index_mismatches == 0 && ties_ok,
        format!(
            "score oracle: 1000 instances, max |s_ic - brute force| = {worst:.2e} (tol 1e-6), argmax mismatches {index_mismatches}, tie-break to lowest index {}",
            if ties_ok { "ok" } else { "WRONG" }
        ),
    )
    .within(10.0))
}

/// Largest relative error between analytic and central-difference
/// gradients over the given parameter indices of every tensor.
fn gradient_error(heads: &ProjectionHeads, batch: &[PairRef<'_>], margin: f64, sample: Option<(usize, &mut ChaCha8Rng)>) -> Result<(f64, usize), String> {
    let (_, grad) = batch_loss_and_grad(heads, batch, margin).map_err(err)?;
    let eps = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut sample = sample;
    for (t, g) in grad.tensors().iter().enumerate() {
        let indices: Vec<usize> = match sample.as_mut() {
            Some((k, r)) => (0..*k).map(|_| r.random_range(0..g.len())).collect(),
            None => (0..g.len()).collect(),
        };
        for i in indices {
            let mut plus = heads.clone();
            plus.tensors_mut()[t][i] += eps;
            let mut minus = heads.clone();
            minus.tensors_mut()[t][i] -= eps;
            let fd = (batch_loss(&plus, batch, margin).map_err(err)? - batch_loss(&minus, batch, margin).map_err(err)?)
                / (2.0 * eps);
            // Floor on the denominator: components that are zero analytically
            // only carry rounding noise numerically.
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-4);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok((worst, checked))
}

type Batch = Vec<(Array2<f64>, Array1<f64>, Array1<f64>)>;

fn random_batch(r: &mut ChaCha8Rng, dims: HeadDims, pairs: usize) -> Batch {
    (0..pairs)
        .map(|_| {
            let n = r.random_range(1..=4);
            (
                Array2::from_shape_simple_fn((n, dims.feature_dim), || r.random_range(0.0..1.0)),
                Array1::from_shape_simple_fn(dims.text_dim, || r.random_range(-0.2..0.3)),
                Array1::from_shape_simple_fn(dims.text_dim, || r.random_range(-0.2..0.3)),
            )
        })
        .collect()
}

fn pair_refs(b: &Batch) -> Vec<PairRef<'_>> {
    b.iter()
        .map(|(x, m, r)| PairRef {
            features: x.view(),
            matching: m.view(),
            random: r.view(),
        })
        .collect()
}

pub fn p2_loss_and_gradients() -> Result<Outcome, String> {
    let cases = [
        (margin_loss(1.0, 0.2, 0.5), 0.0),
        (margin_loss(0.7, 0.7, 0.5), 0.5),
        (margin_loss(0.7, 0.7, 2.0), 2.0),
        (margin_loss(0.3, 0.4, 0.5), 0.6),
    ];
    let loss_ok = cases.iter().all(|(got, want)| (got - want).abs() < 1e-12);
    let mut r = rng(2);
    let small = HeadDims {
        feature_dim: 6,
        hidden_dim: 12,
        embed_dim: 8,
        text_dim: 10,
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    for b in 0..20 {
        let heads = ProjectionHeads::init(small, 100 + b);
        let batch = random_batch(&mut r, small, 4);
        let (w, n) = gradient_error(&heads, &pair_refs(&batch), 2.0, None)?;
        worst = worst.max(w);
        checked += n;
    }
    // Production head sizes, sampled coordinates per tensor.
    let full = HeadDims {
        hidden_dim: 1024,
        ..HeadDims::new(32)
    };
    let heads = ProjectionHeads::init(full, 7);
    let batch = random_batch(&mut r, full, 4);
    let mut sample_rng = rng(22);
    let (w, n) = gradient_error(&heads, &pair_refs(&batch), 2.0, Some((40, &mut sample_rng)))?;
    worst = worst.max(w);
    checked += n;
    Ok(Outcome::new(
        loss_ok && worst < 1e-4,
        format!(
            "hinge cases {} (0.0, m, m, 0.6); gradients vs central differences: {checked} coordinates over 20 minibatches + 1 full-size batch, max rel err {worst:.2e} (tol 1e-4)",
            if loss_ok { "ok" } else { "WRONG" }
        ),
    )
    .within(120.0))
}

pub fn p3_decision_table() -> Result<Outcome, String> {
    // Box 2 spans k of box 1's 20 columns, so iou = k / 20 exactly.
    let t = Thresholds::default();
    let wide = BoundingBox::new(0.0, 0.0, 20.0, 1.0, 1.0);
    let mut mismatches = Vec::new();
    let mut ooc_cells = 0;
    for k in 0..=20 {
        let narrow = BoundingBox::new(0.0, 0.0, k as f64, 1.0, 1.0);
        let boxes = [wide.clone(), narrow];
        let g1 = ScoreResult {
            per_box_scores: vec![1.0, 0.0],
            best_box_index: 0,
            s_ic: 1.0,
        };
        let g2 = ScoreResult {
            per_box_scores: vec![0.0, 1.0],
            best_box_index: 1,
            s_ic: 1.0,
        };
        for s in 0..=20 {
            let s_sim = s as f64 / 20.0;
            let v = Verdict::from_evidence("grid", &boxes, &g1, &g2, s_sim, t).map_err(err)?;
            let iou_val = k as f64 / 20.0;
            let expected = iou_val > 0.5 && s_sim < 0.5;
            if v.ooc != expected || (v.iou - iou_val).abs() > 1e-12 {
                mismatches.push((k, s));
            }
            ooc_cells += v.ooc as usize;
        }
    }
    Ok(Outcome::new(
        mismatches.is_empty() && ooc_cells == 100,
        format!(
            "decision table: 441 cells, {} mismatches, {ooc_cells} out-of-context cells (expected 100; boundary rows not out of context)",
            mismatches.len()
        ),
    ))
}

pub fn p4_iou_oracle() -> Result<Outcome, String> {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut b = || {
            let (x, y): (f64, f64) = (r.random_range(0.0..50.0), r.random_range(0.0..50.0));
            [x, y, x + r.random_range(1.0..40.0), y + r.random_range(1.0..40.0)]
        };
        let (p, q) = (b(), b());
        let ix = (p[2].min(q[2]) - p[0].max(q[0])).max(0.0);
        let iy = (p[3].min(q[3]) - p[1].max(q[1])).max(0.0);
        let inter = ix * iy;
        let union = (p[2] - p[0]) * (p[3] - p[1]) + (q[2] - q[0]) * (q[3] - q[1]) - inter;
        let oracle = inter / union;
        let got = iou(&BoundingBox::new(p[0], p[1], p[2], p[3], 1.0), &BoundingBox::new(q[0], q[1], q[2], q[3], 1.0));
        worst = worst.max((got - oracle).abs());
    }
    let a = BoundingBox::new(3.0, 4.0, 20.0, 30.0, 1.0);
    let far = BoundingBox::new(40.0, 40.0, 50.0, 50.0, 1.0);
    let identity = iou(&a, &a);
    let disjoint = iou(&a, &far);
    let reference = iou(&BoundingBox::new(0.0, 0.0, 10.0, 10.0, 1.0), &BoundingBox::new(5.0, 5.0, 15.0, 15.0, 1.0));
    Ok(Outcome::new(
        worst <= 1e-9 && identity == 1.0 && disjoint == 0.0 && (reference - 25.0 / 175.0).abs() < 1e-9,
        format!("iou oracle: 100 pairs, max err {worst:.2e} (tol 1e-9), identity {identity}, disjoint {disjoint}, [0,0,10,10]/[5,5,15,15] {reference:.6}"),
    ))
}

/// 500 captions combining gazetteer entities with plain clauses.
fn caption_fixture(ner: &GazetteerRecognizer) -> Vec<String> {
    let people = ner.phrases_for("PERSON");
    let places = ner.phrases_for("GPE");
    let orgs = ner.phrases_for("ORG");
    let events = ner.phrases_for("EVENT");
    let verbs = ["walks through", "speaks in", "arrives at", "leaves", "is pictured near"];
    let mut r = rng(8);
    (0..500)
        .map(|i| {
            let p = people[r.random_range(0..people.len())];
            let g = places[r.random_range(0..places.len())];
            let v = verbs[i % verbs.len()];
            match i % 4 {
                0 => format!("{p} {v} {g}"),
                1 => format!("Members of {} gather in {g} during {}", orgs[i % orgs.len()], events[i % events.len()]),
                2 => format!("A crowd {v} the square in {g}. (Photo: Reuters)"),
                _ => format!("{p} and {} {v} the small town of {g}", people[(i + 3) % people.len()]),
            }
        })
        .collect()
}

pub fn p8_preprocessing() -> Result<Outcome, String> {
    let ner = GazetteerRecognizer::default();
    let credits = CreditPatterns::default();
    let fig = preprocess("Robert Grizz Maguire walks through the small town of Granby", &ner, &credits).map_err(err)?;
    let fig_ok = fig.text == "Person walks through the small town of location";
    let mut not_idempotent = 0;
    let mut leaked = 0;
    let replaced_classes = [
        EntityClass::Person,
        EntityClass::Group,
        EntityClass::Facility,
        EntityClass::Geopolitical,
        EntityClass::Location,
        EntityClass::Event,
        EntityClass::Organization,
    ];
    let fixture = caption_fixture(&ner);
    for c in &fixture {
        let once = preprocess(c, &ner, &credits).map_err(err)?;
        let twice = preprocess(&once.text, &ner, &credits).map_err(err)?;
        let spans = detect_entities(&once.text, &ner).map_err(err)?;
        let again = hypernymize(&once.text, &spans).map_err(err)?;
        not_idempotent += (twice.text != once.text || again.text != once.text) as usize;
        leaked += spans.iter().filter(|s| replaced_classes.contains(&s.entity_class)).count();
    }
    Ok(Outcome::new(
        fig_ok && not_idempotent == 0 && leaked == 0,
        format!(
            "preprocessing: figure fixture -> {:?}; {} captions, {not_idempotent} not idempotent, {leaked} entities left",
            fig.text,
            fixture.len()
        ),
    ))
}
