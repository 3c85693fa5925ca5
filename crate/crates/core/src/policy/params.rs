use std::ops::Range;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Sizes of the policy: vocabulary `V`, context features `F`, token
/// embedding `d` and hidden state `d_h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicyShape {
    pub vocab: usize,
    pub features: usize,
    pub embed: usize,
    pub hidden: usize,
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// Token embeddings, `V × d`.
    pub e: Range<usize>,
    /// Context projection, `d_h × F`.
    pub w_c: Range<usize>,
    /// Recurrent weights, `d_h × d_h`.
    pub w_h: Range<usize>,
    /// Input weights, `d_h × d`.
    pub w_x: Range<usize>,
    pub b_h: Range<usize>,
    /// Output weights, `V × d_h`.
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
}

impl PolicyShape {
    pub fn new(vocab: usize, features: usize, embed: usize, hidden: usize) -> Self {
        PolicyShape {
            vocab,
            features,
            embed,
            hidden,
        }
    }

    pub fn layout(&self) -> Layout {
        let (v, f, d, h) = (self.vocab, self.features, self.embed, self.hidden);
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Layout {
            e: take(v * d),
            w_c: take(h * f),
            w_h: take(h * h),
            w_x: take(h * d),
            b_h: take(h),
            w_o: take(v * h),
            b_o: take(v),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().b_o.end
    }
}

/// All policy weights in one flat vector. Also used for gradients and
/// optimizer moments, which share the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    shape: PolicyShape,
    data: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        PolicyParams {
            data: vec![0.0; shape.param_count()],
            shape,
        }
    }

    /// Gaussian weights with standard deviation `scale / sqrt(fan_in)`;
    /// biases start at zero.
    pub fn random(shape: PolicyShape, scale: f64, rng: &mut dyn RngCore) -> Self {
        let mut p = PolicyParams::zeros(shape);
        let l = shape.layout();
        let fan =
            |r: &Range<usize>, fan_in: usize| (r.clone(), scale / (fan_in.max(1) as f64).sqrt());
        for (range, std) in [
            fan(&l.e, 1),
            fan(&l.w_c, shape.features),
            fan(&l.w_h, shape.hidden),
            fan(&l.w_x, shape.embed),
            fan(&l.w_o, shape.hidden),
        ] {
            for x in &mut p.data[range] {
                let z: f64 = StandardNormal.sample(rng);
                *x = std * z;
            }
        }
        p
    }

    pub fn from_vec(shape: PolicyShape, data: Vec<f64>) -> Option<Self> {
        (data.len() == shape.param_count()).then_some(PolicyParams { shape, data })
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &PolicyParams) {
        assert_eq!(self.shape, other.shape, "parameter shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn dot(&self, other: &PolicyParams) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
