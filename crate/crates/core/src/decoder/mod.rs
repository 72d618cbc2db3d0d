//! Labeled span scoring, exact CKY decoding and the structured hinge loss.

mod cky;
mod loss;

use rand::Rng;

pub use cky::{cky_decode, cky_labeled, tree_score, BinarySpan, DecodedTree};
pub use loss::{margin_loss, MarginLoss};

use crate::encoder::EncodedSentence;
use crate::nn::{xavier, Graph, NnError, ParamId, ParamStore, Tensor, Var};
use crate::treebank::TreebankError;

#[derive(Debug, thiserror::Error)]
pub enum DecoderError {
    #[error("gold spans: {0}")]
    Gold(#[from] TreebankError),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Number of spans `(a, b)` with `0 ≤ a < b ≤ len`.
pub fn span_count(len: usize) -> usize {
    len * (len + 1) / 2
}

/// Row of span `(a, b)` in the row order used by [`span_pairs`].
pub fn span_row(a: usize, b: usize, len: usize) -> usize {
    debug_assert!(a < b && b <= len);
    a * (2 * len - a + 1) / 2 + (b - a - 1)
}

/// All spans of a `len`-word sentence, ordered by start then end.
pub fn span_pairs(len: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(span_count(len));
    for a in 0..len {
        for b in a + 1..=len {
            pairs.push((a, b));
        }
    }
    pairs
}

/// `s(a, b, l)` for every span and label; the empty label scores 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanScores {
    len: usize,
    labels: usize,
    /// `span_count(len) × (labels - 1)`, row-major in [`span_pairs`] order.
    values: Vec<f64>,
}

impl SpanScores {
    pub fn zeros(len: usize, labels: usize) -> Self {
        assert!(labels >= 2, "need the empty label and at least one other");
        SpanScores {
            len,
            labels,
            values: vec![0.0; span_count(len) * (labels - 1)],
        }
    }

    /// Wraps a `span_count(len) × (labels - 1)` tensor of non-empty label
    /// scores.
    pub fn from_tensor(len: usize, labels: usize, t: &Tensor) -> Self {
        assert_eq!(t.shape(), &[span_count(len), labels - 1]);
        SpanScores {
            len,
            labels,
            values: t.data().to_vec(),
        }
    }

    pub fn from_fn(len: usize, labels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut s = SpanScores::zeros(len, labels);
        for (a, b) in span_pairs(len) {
            for l in 1..labels {
                s.set(a, b, l, f(a, b, l));
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    /// Non-empty label scores, span-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn index(&self, a: usize, b: usize, l: usize) -> usize {
        assert!(a < b && b <= self.len, "span ({a}, {b}) outside a {}-word chart", self.len);
        assert!(l < self.labels, "label {l} out of range");
        span_row(a, b, self.len) * (self.labels - 1) + (l - 1)
    }

    pub fn get(&self, a: usize, b: usize, l: usize) -> f64 {
        if l == 0 {
            assert!(a < b && b <= self.len, "span ({a}, {b}) outside a {}-word chart", self.len);
            return 0.0;
        }
        self.values[self.index(a, b, l)]
    }

    /// Panics when `l` is the empty label, whose score is fixed.
    pub fn set(&mut self, a: usize, b: usize, l: usize, value: f64) {
        assert!(l != 0, "the empty label's score is fixed at 0");
        let i = self.index(a, b, l);
        self.values[i] = value;
    }

    pub fn add(&mut self, a: usize, b: usize, l: usize, delta: f64) {
        let v = self.get(a, b, l);
        self.set(a, b, l, v + delta);
    }
}

/// Two-layer feed-forward scorer over fencepost differences.
#[derive(Clone, Debug)]
pub struct SpanScorer {
    w1: ParamId,
    b1: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
    w2: ParamId,
    b2: ParamId,
    pub labels: usize,
}

/// Scores for one sentence: the graph variable (for training) and a copy
/// of its values (for decoding).
pub struct ScoredSpans {
    pub var: Var,
    pub scores: SpanScores,
}

impl SpanScorer {
    pub fn new(
        params: &mut ParamStore,
        d_in: usize,
        hidden: usize,
        labels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, DecoderError> {
        if labels < 2 {
            return Err(DecoderError::Config("label vocabulary has no non-empty labels".into()));
        }
        Ok(SpanScorer {
            w1: params.add("scorer.hidden.weight", xavier(d_in, hidden, rng))?,
            b1: params.add("scorer.hidden.bias", Tensor::zeros(1, hidden))?,
            ln_g: params.add("scorer.ln.gain", Tensor::filled(1, hidden, 1.0))?,
            ln_b: params.add("scorer.ln.bias", Tensor::zeros(1, hidden))?,
            w2: params.add("scorer.out.weight", xavier(hidden, labels - 1, rng))?,
            b2: params.add("scorer.out.bias", Tensor::zeros(1, labels - 1))?,
            labels,
        })
    }

    pub fn score(&self, g: &mut Graph, encoded: &EncodedSentence) -> Result<ScoredSpans, DecoderError> {
        let t = encoded.len;
        let spans = g.span_diff(encoded.fenceposts, &span_pairs(t))?;
        let (w1, b1) = (g.param(self.w1), g.param(self.b1));
        let h = g.linear(spans, w1, b1)?;
        let (lg, lb) = (g.param(self.ln_g), g.param(self.ln_b));
        let h = g.layer_norm(h, lg, lb, 1e-5)?;
        let h = g.relu(h);
        let (w2, b2) = (g.param(self.w2), g.param(self.b2));
        let var = g.linear(h, w2, b2)?;
        let scores = SpanScores::from_tensor(t, self.labels, g.value(var));
        Ok(ScoredSpans { var, scores })
    }
}
