use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::util::seeded_rng;
use crate::{Error, Result, EMBED_DIM, SENTENCE_DIM};

/// Widths of the two projection heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadDims {
    /// Pooled backbone feature width.
    pub feature_dim: usize,
    /// Hidden width of the object head.
    pub hidden_dim: usize,
    /// Shared embedding width.
    pub embed_dim: usize,
    /// Raw sentence vector width.
    pub text_dim: usize,
}

impl HeadDims {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            hidden_dim: 1024,
            embed_dim: EMBED_DIM,
            text_dim: SENTENCE_DIM,
        }
    }
}

/// Two affine layers with a ReLU between them: feature -> hidden -> embed.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectHead {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// ReLU followed by one affine layer: text -> embed.
#[derive(Debug, Clone, PartialEq)]
pub struct TextHead {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// The only trainable parameters of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHeads {
    pub object: ObjectHead,
    pub text: TextHead,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ObjectActivations {
    pub pre_hidden: Array2<f64>,
    pub hidden: Array2<f64>,
    pub out: Array2<f64>,
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn uniform(rng: &mut impl Rng, shape: (usize, usize), fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
}

impl ObjectHead {
    pub fn forward(&self, x: ArrayView2<f64>) -> ObjectActivations {
        let pre_hidden = x.dot(&self.w1.t()) + &self.b1;
        let hidden = pre_hidden.mapv(relu);
        let out = hidden.dot(&self.w2.t()) + &self.b2;
        ObjectActivations {
            pre_hidden,
            hidden,
            out,
        }
    }
}

impl TextHead {
    /// Returns (ReLU of the input, output).
    pub fn forward(&self, raw: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let rectified = raw.mapv(relu);
        let out = rectified.dot(&self.w.t()) + &self.b;
        (rectified, out)
    }
}

impl ProjectionHeads {
    /// PyTorch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn init(dims: HeadDims, seed: u64) -> Self {
        let mut rng = seeded_rng(seed, 0x4ead);
        let w1 = uniform(&mut rng, (dims.hidden_dim, dims.feature_dim), dims.feature_dim);
        let b1 = uniform(&mut rng, (1, dims.hidden_dim), dims.feature_dim).remove_axis(Axis(0));
        let w2 = uniform(&mut rng, (dims.embed_dim, dims.hidden_dim), dims.hidden_dim);
        let b2 = uniform(&mut rng, (1, dims.embed_dim), dims.hidden_dim).remove_axis(Axis(0));
        let w = uniform(&mut rng, (dims.embed_dim, dims.text_dim), dims.text_dim);
        let b = uniform(&mut rng, (1, dims.embed_dim), dims.text_dim).remove_axis(Axis(0));
        Self {
            object: ObjectHead { w1, b1, w2, b2 },
            text: TextHead { w, b },
        }
    }

    pub fn zeros(dims: HeadDims) -> Self {
        Self {
            object: ObjectHead {
                w1: Array2::zeros((dims.hidden_dim, dims.feature_dim)),
                b1: Array1::zeros(dims.hidden_dim),
                w2: Array2::zeros((dims.embed_dim, dims.hidden_dim)),
                b2: Array1::zeros(dims.embed_dim),
            },
            text: TextHead {
                w: Array2::zeros((dims.embed_dim, dims.text_dim)),
                b: Array1::zeros(dims.embed_dim),
            },
        }
    }

    pub fn dims(&self) -> HeadDims {
        HeadDims {
            feature_dim: self.object.w1.ncols(),
            hidden_dim: self.object.w1.nrows(),
            embed_dim: self.object.w2.nrows(),
            text_dim: self.text.w.ncols(),
        }
    }

    /// Parameter tensors in checkpoint order: object w1, b1, w2, b2, text w, b.
    pub fn tensors(&self) -> [&[f64]; 6] {
        fn sl(a: Option<&[f64]>) -> &[f64] {
            a.expect("parameters are contiguous")
        }
        [
            sl(self.object.w1.as_slice()),
            sl(self.object.b1.as_slice()),
            sl(self.object.w2.as_slice()),
            sl(self.object.b2.as_slice()),
            sl(self.text.w.as_slice()),
            sl(self.text.b.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        let o = &mut self.object;
        let t = &mut self.text;
        [
            o.w1.as_slice_mut().expect("contiguous"),
            o.b1.as_slice_mut().expect("contiguous"),
            o.w2.as_slice_mut().expect("contiguous"),
            o.b2.as_slice_mut().expect("contiguous"),
            t.w.as_slice_mut().expect("contiguous"),
            t.b.as_slice_mut().expect("contiguous"),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Projects pooled region features (one row per box) into the shared space.
    pub fn embed_regions(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.object.w1.ncols() {
            return Err(Error::Dimension {
                expected: self.object.w1.ncols(),
                actual: features.ncols(),
            });
        }
        Ok(self.object.forward(features).out)
    }

    /// Projects one raw sentence vector into the shared space.
    pub fn embed_text(&self, raw: ArrayView1<f64>) -> Result<Array1<f64>> {
        if raw.len() != self.text.w.ncols() {
            return Err(Error::Dimension {
                expected: self.text.w.ncols(),
                actual: raw.len(),
            });
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sentence vector"));
        }
        let row = raw.insert_axis(Axis(0));
        Ok(self.text.forward(row).1.slice(s![0, ..]).to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small() -> ProjectionHeads {
        ProjectionHeads::init(
            HeadDims {
                feature_dim: 4,
                hidden_dim: 6,
                embed_dim: 3,
                text_dim: 5,
            },
            9,
        )
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = small();
        assert_eq!(a, small());
        assert!(a.object.w1.iter().all(|v| v.abs() <= 0.5));
        assert_eq!(a.param_count(), 6 * 4 + 6 + 3 * 6 + 3 + 3 * 5 + 3);
    }

    #[test]
    fn zero_text_input_gives_bias() {
        let h = small();
        let out = h.embed_text(Array1::zeros(5).view()).unwrap();
        assert_eq!(out, h.text.b);
        let neg = h.embed_text(array![-1.0, -0.5, -3.0, -0.1, -9.0].view()).unwrap();
        assert_eq!(neg, out);
    }

    #[test]
    fn text_head_matches_hand_product() {
        let mut h = small();
        h.text.w = Array2::from_shape_fn((3, 5), |(i, j)| 0.01 * (i as f64 + 1.0) - 0.02 * j as f64);
        h.text.b = array![0.1, -0.2, 0.3];
        let x = [0.5, -1.0, 2.0, 0.0, 1.5];
        let out = h.embed_text(ndarray::aview1(&x)).unwrap();
        for i in 0..3 {
            let mut expected = h.text.b[i];
            for (j, xj) in x.iter().enumerate() {
                expected += h.text.w[[i, j]] * xj.max(0.0);
            }
            assert!((out[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_checks() {
        let h = small();
        assert!(h.embed_text(Array1::zeros(4).view()).is_err());
        assert!(h.embed_regions(Array2::zeros((2, 3)).view()).is_err());
        let mut bad = Array1::zeros(5);
        bad[0] = f64::NAN;
        assert!(matches!(h.embed_text(bad.view()), Err(Error::NonFinite(_))));
    }
}
