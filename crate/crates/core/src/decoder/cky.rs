use super::SpanScores;
use crate::treebank::{spans_to_tree, LabelVocab, LabeledSpan, Tree, EMPTY_LABEL};

/// One node of a binarized tree; `label` may be the empty label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BinarySpan {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct DecodedTree {
    pub tree: Tree,
    pub total_score: f64,
    /// Every node of the binarized tree in preorder, empty labels included.
    pub spans: Vec<BinarySpan>,
    /// `best(a, b)` indexed as `a * (len + 1) + b`.
    pub chart: Vec<f64>,
}

/// Exact search over binary trees. The root takes a non-empty label; ties
/// go to the lowest label index, then the smallest split point.
pub fn cky_labeled(scores: &SpanScores) -> (f64, Vec<BinarySpan>, Vec<f64>) {
    cky_with(scores.len(), scores.labels(), |a, b, l| scores.get(a, b, l))
}

/// CKY over an arbitrary `score(a, b, l)`, including the empty label.
pub(crate) fn cky_with(
    n: usize,
    labels: usize,
    score: impl Fn(usize, usize, usize) -> f64,
) -> (f64, Vec<BinarySpan>, Vec<f64>) {
    assert!(n >= 1, "cannot decode an empty sentence");
    let w = n + 1;
    let mut best = vec![f64::NEG_INFINITY; w * w];
    let mut label = vec![0usize; w * w];
    let mut split = vec![0usize; w * w];
    for width in 1..=n {
        for a in 0..=n - width {
            let b = a + width;
            let first = if width == n { 1 } else { EMPTY_LABEL };
            let mut bl = first;
            let mut bs = score(a, b, first);
            for l in first + 1..labels {
                let s = score(a, b, l);
                if s > bs {
                    bs = s;
                    bl = l;
                }
            }
            let mut inner = 0.0;
            if width > 1 {
                let mut bk = a + 1;
                inner = best[a * w + bk] + best[bk * w + b];
                for k in a + 2..b {
                    let s = best[a * w + k] + best[k * w + b];
                    if s > inner {
                        inner = s;
                        bk = k;
                    }
                }
                split[a * w + b] = bk;
            }
            best[a * w + b] = bs + inner;
            label[a * w + b] = bl;
        }
    }
    let mut spans = Vec::with_capacity(2 * n - 1);
    let mut stack = vec![(0usize, n)];
    while let Some((a, b)) = stack.pop() {
        spans.push(BinarySpan {
            start: a,
            end: b,
            label: label[a * w + b],
        });
        if b - a > 1 {
            let k = split[a * w + b];
            stack.push((k, b));
            stack.push((a, k));
        }
    }
    (best[n], spans, best)
}

pub fn cky_decode(scores: &SpanScores, vocab: &LabelVocab, leaves: &[(String, String)]) -> DecodedTree {
    assert_eq!(scores.len(), leaves.len(), "scores and leaves disagree on length");
    let (total_score, spans, chart) = cky_labeled(scores);
    let labeled: Vec<LabeledSpan> = spans
        .iter()
        .filter(|s| s.label != EMPTY_LABEL)
        .map(|s| LabeledSpan::new(s.start, s.end, vocab.label(s.label)))
        .collect();
    let tree = spans_to_tree(&labeled, leaves).expect("CKY output is a well-formed bracketing");
    DecodedTree {
        tree,
        total_score,
        spans,
        chart,
    }
}

/// Sum of `s(a, b, l)` over the collapsed labeled spans of `tree`.
pub fn tree_score(scores: &SpanScores, vocab: &LabelVocab, tree: &Tree) -> Option<f64> {
    let mut total = 0.0;
    for s in crate::treebank::tree_to_spans(tree) {
        total += scores.get(s.start, s.end, vocab.get(&s.label)?);
    }
    Some(total)
}
