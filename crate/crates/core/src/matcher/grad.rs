use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{argmax, margin_loss};
use crate::encoders::ProjectionHeads;
use crate::{Error, Result};

/// One training example: pooled region features of an image plus raw
/// sentence vectors of its matching and random captions.
#[derive(Debug, Clone, Copy)]
pub struct PairRef<'a> {
    pub features: ArrayView2<'a, f64>,
    pub matching: ArrayView1<'a, f64>,
    pub random: ArrayView1<'a, f64>,
}

struct Forward {
    x: Array2<f64>,
    pre_hidden: Array2<f64>,
    hidden: Array2<f64>,
    objects: Array2<f64>,
    text_in: Array2<f64>,
    text_out: Array2<f64>,
    /// Row ranges of each pair inside the stacked object matrix.
    offsets: Vec<(usize, usize)>,
}

fn forward(heads: &ProjectionHeads, batch: &[PairRef<'_>]) -> Result<Forward> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let dims = heads.dims();
    let mut offsets = Vec::with_capacity(batch.len());
    let mut start = 0;
    for p in batch {
        if p.features.nrows() == 0 {
            return Err(Error::Empty("object features"));
        }
        if p.features.ncols() != dims.feature_dim {
            return Err(Error::Dimension {
                expected: dims.feature_dim,
                actual: p.features.ncols(),
            });
        }
        for t in [p.matching, p.random] {
            if t.len() != dims.text_dim {
                return Err(Error::Dimension {
                    expected: dims.text_dim,
                    actual: t.len(),
                });
            }
        }
        offsets.push((start, start + p.features.nrows()));
        start += p.features.nrows();
    }
    let views: Vec<_> = batch.iter().map(|p| p.features).collect();
    let x = concatenate(Axis(0), &views).map_err(|e| Error::Invalid(e.to_string()))?;
    let acts = heads.object.forward(x.view());
    let mut texts = Array2::zeros((2 * batch.len(), dims.text_dim));
    for (k, p) in batch.iter().enumerate() {
        texts.row_mut(2 * k).assign(&p.matching);
        texts.row_mut(2 * k + 1).assign(&p.random);
    }
    let (text_in, text_out) = heads.text.forward(texts.view());
    Ok(Forward {
        x,
        pre_hidden: acts.pre_hidden,
        hidden: acts.hidden,
        objects: acts.out,
        text_in,
        text_out,
        offsets,
    })
}

struct PairScore {
    loss: f64,
    match_row: usize,
    rand_row: usize,
}

fn pair_scores(f: &Forward, margin: f64) -> Vec<PairScore> {
    f.offsets
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let rows = f.objects.slice(s![a..b, ..]);
            let best = |c: ArrayView1<f64>| argmax(rows.rows().into_iter().map(|r| r.dot(&c))).expect("non-empty");
            let (im, sm) = best(f.text_out.row(2 * k));
            let (ir, sr) = best(f.text_out.row(2 * k + 1));
            PairScore {
                loss: margin_loss(sm, sr, margin),
                match_row: a + im,
                rand_row: a + ir,
            }
        })
        .collect()
}

/// Mean hinge loss over the batch.
pub fn batch_loss(heads: &ProjectionHeads, batch: &[PairRef<'_>], margin: f64) -> Result<f64> {
    let f = forward(heads, batch)?;
    let scores = pair_scores(&f, margin);
    Ok(scores.iter().map(|p| p.loss).sum::<f64>() / batch.len() as f64)
}

/// Mean hinge loss and its gradient with respect to every head parameter.
/// Only the max-scoring box of each caption receives gradient; at the hinge
/// kink the subgradient is zero.
pub fn batch_loss_and_grad(
    heads: &ProjectionHeads,
    batch: &[PairRef<'_>],
    margin: f64,
) -> Result<(f64, ProjectionHeads)> {
    let f = forward(heads, batch)?;
    let scores = pair_scores(&f, margin);
    let n = batch.len() as f64;
    let loss = scores.iter().map(|p| p.loss).sum::<f64>() / n;
    let dims = heads.dims();
    let mut grad = ProjectionHeads::zeros(dims);

    // Gradient flows into the selected object rows and both caption outputs.
    let mut d_text = Array2::<f64>::zeros((2 * batch.len(), dims.embed_dim));
    let mut active_rows: Vec<usize> = Vec::new();
    let mut d_rows: Vec<Array1<f64>> = Vec::new();
    let mut push_row = |row: usize, d: Array1<f64>| {
        if let Some(pos) = active_rows.iter().position(|&r| r == row) {
            d_rows[pos] += &d;
        } else {
            active_rows.push(row);
            d_rows.push(d);
        }
    };
    let g = 1.0 / n;
    for (k, p) in scores.iter().enumerate() {
        if p.loss <= 0.0 {
            continue;
        }
        let c_m = f.text_out.row(2 * k);
        let c_r = f.text_out.row(2 * k + 1);
        d_text.row_mut(2 * k).scaled_add(-g, &f.objects.row(p.match_row));
        d_text.row_mut(2 * k + 1).scaled_add(g, &f.objects.row(p.rand_row));
        push_row(p.match_row, c_m.mapv(|v| -g * v));
        push_row(p.rand_row, c_r.mapv(|v| g * v));
    }

    grad.text.w = d_text.t().dot(&f.text_in);
    grad.text.b = d_text.sum_axis(Axis(0));

    if !active_rows.is_empty() {
        let m = active_rows.len();
        let mut d_out = Array2::zeros((m, dims.embed_dim));
        let mut hidden = Array2::zeros((m, dims.hidden_dim));
        let mut mask = Array2::zeros((m, dims.hidden_dim));
        let mut x = Array2::zeros((m, dims.feature_dim));
        for (j, (&row, d)) in active_rows.iter().zip(&d_rows).enumerate() {
            d_out.row_mut(j).assign(d);
            hidden.row_mut(j).assign(&f.hidden.row(row));
            mask.row_mut(j).assign(&f.pre_hidden.row(row).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
            x.row_mut(j).assign(&f.x.row(row));
        }
        grad.object.w2 = d_out.t().dot(&hidden);
        grad.object.b2 = d_out.sum_axis(Axis(0));
        let d_pre = d_out.dot(&heads.object.w2) * &mask;
        grad.object.w1 = d_pre.t().dot(&x);
        grad.object.b1 = d_pre.sum_axis(Axis(0));
    }
    // `dot` may hand back non-standard layouts; parameters must stay contiguous.
    grad.text.w = grad.text.w.as_standard_layout().to_owned();
    grad.object.w1 = grad.object.w1.as_standard_layout().to_owned();
    grad.object.w2 = grad.object.w2.as_standard_layout().to_owned();
    Ok((loss, grad))
}
