use std::collections::HashMap;

use super::cky::{cky_with, BinarySpan};
use super::{DecoderError, SpanScores};
use crate::treebank::{LabelVocab, LabeledSpan, TreebankError, EMPTY_LABEL};

/// Structured hinge loss with Hamming cost.
#[derive(Clone, Debug)]
pub struct MarginLoss {
    pub loss: f64,
    /// Hamming cost of the loss-augmented prediction.
    pub cost: f64,
    /// Non-empty spans of the loss-augmented prediction, as `(a, b, l)`.
    pub predicted: Vec<(usize, usize, usize)>,
    /// Gold spans as `(a, b, l)`.
    pub gold: Vec<(usize, usize, usize)>,
    /// Every node of the augmented argmax, empty labels included.
    pub augmented: Vec<BinarySpan>,
}

/// `max_T [s(T) + Δ(T, T*)] − s(T*)` over binary trees `T`, where `Δ`
/// charges 1 for every node of `T` whose label differs from the gold label
/// of its span (the empty label for spans absent from the gold tree).
pub fn margin_loss(
    scores: &SpanScores,
    gold_spans: &[LabeledSpan],
    vocab: &LabelVocab,
) -> Result<MarginLoss, DecoderError> {
    let n = scores.len();
    let mut gold_label: HashMap<(usize, usize), usize> = HashMap::new();
    let mut gold = Vec::with_capacity(gold_spans.len());
    for (i, s) in gold_spans.iter().enumerate() {
        if s.start >= s.end || s.end > n {
            return Err(TreebankError::SpanRange {
                start: s.start,
                end: s.end,
                len: n,
            }
            .into());
        }
        if let Some(other) = gold_spans[..i].iter().find(|o| o.crosses(s)) {
            return Err(TreebankError::Crossing {
                first: (other.start, other.end),
                second: (s.start, s.end),
            }
            .into());
        }
        let l = vocab.index_of(&s.label)?;
        if l == EMPTY_LABEL {
            continue;
        }
        if gold_label.insert((s.start, s.end), l).is_some() {
            return Err(DecoderError::Config(format!(
                "duplicate gold span ({}, {})",
                s.start, s.end
            )));
        }
        gold.push((s.start, s.end, l));
    }
    if !gold_label.contains_key(&(0, n)) {
        return Err(DecoderError::Config("gold tree has no labeled root span".into()));
    }

    let gold_of = |a: usize, b: usize| gold_label.get(&(a, b)).copied().unwrap_or(EMPTY_LABEL);
    let (_, spans, _) = cky_with(n, scores.labels(), |a, b, l| {
        scores.get(a, b, l) + if l == gold_of(a, b) { 0.0 } else { 1.0 }
    });

    let mut predicted = Vec::new();
    let mut cost = 0.0;
    let mut predicted_score = 0.0;
    for &BinarySpan { start, end, label } in &spans {
        if label != gold_of(start, end) {
            cost += 1.0;
        }
        predicted_score += scores.get(start, end, label);
        if label != EMPTY_LABEL {
            predicted.push((start, end, label));
        }
    }
    let gold_score: f64 = gold.iter().map(|&(a, b, l)| scores.get(a, b, l)).sum();
    // The gold tree is itself a candidate with zero cost, so the difference
    // is non-negative up to rounding.
    let loss = (predicted_score + cost - gold_score).max(0.0);
    Ok(MarginLoss {
        loss,
        cost,
        predicted,
        gold,
        augmented: spans,
    })
}

#[cfg(test)]
mod tests {
    use super::super::cky::tests::{bracketings, next_assignment};
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> LabelVocab {
        LabelVocab::from_labels(["NP", "S", "VP"].map(String::from))
    }

    fn gold() -> Vec<LabeledSpan> {
        vec![
            LabeledSpan::new(0, 3, "S"),
            LabeledSpan::new(0, 1, "NP"),
            LabeledSpan::new(1, 3, "VP"),
        ]
    }

    /// The augmented objective by literal enumeration of trees and labels.
    fn oracle_loss(scores: &SpanScores, gold: &[LabeledSpan], v: &LabelVocab) -> f64 {
        let n = scores.len();
        let g: HashMap<(usize, usize), usize> =
            gold.iter().map(|s| ((s.start, s.end), v.get(&s.label).unwrap())).collect();
        let gold_score: f64 = gold.iter().map(|s| scores.get(s.start, s.end, g[&(s.start, s.end)])).sum();
        let mut best = f64::NEG_INFINITY;
        for tree in bracketings(0, n) {
            let mut assignment = vec![0; tree.len()];
            assignment[0] = 1;
            loop {
                let total: f64 = tree
                    .iter()
                    .zip(&assignment)
                    .map(|(&(a, b), &l)| {
                        let cost = if l == g.get(&(a, b)).copied().unwrap_or(0) { 0.0 } else { 1.0 };
                        scores.get(a, b, l) + cost
                    })
                    .sum();
                best = best.max(total);
                if !next_assignment(&mut assignment, v.len()) {
                    break;
                }
            }
        }
        best - gold_score
    }

    #[test]
    fn dominant_gold_has_zero_loss() {
        let v = vocab();
        let gold = vec![
            LabeledSpan::new(0, 2, "S"),
            LabeledSpan::new(0, 1, "NP"),
            LabeledSpan::new(1, 2, "VP"),
        ];
        let mut s = SpanScores::zeros(2, v.len());
        for sp in &gold {
            s.set(sp.start, sp.end, v.get(&sp.label).unwrap(), 10.0);
        }
        let m = margin_loss(&s, &gold, &v).unwrap();
        assert_eq!(m.loss, 0.0);
        assert_eq!(m.cost, 0.0);
        assert_eq!(m.predicted, m.gold);
    }

    #[test]
    fn unlabeled_gold_nodes_still_carry_margin() {
        // (1,2) and (2,3) are empty in the gold binarization; labeling them
        // earns the +1 cost against a 0 score.
        let v = vocab();
        let mut s = SpanScores::zeros(3, v.len());
        for sp in gold() {
            s.set(sp.start, sp.end, v.get(&sp.label).unwrap(), 10.0);
        }
        let m = margin_loss(&s, &gold(), &v).unwrap();
        assert_eq!(m.loss, 2.0);
        for (a, b) in [(1, 2), (2, 3)] {
            for l in 1..v.len() {
                s.set(a, b, l, -1.5);
            }
        }
        assert_eq!(margin_loss(&s, &gold(), &v).unwrap().loss, 0.0);
    }

    #[test]
    fn zero_scores_cost_every_node() {
        let v = vocab();
        let s = SpanScores::zeros(3, v.len());
        let m = margin_loss(&s, &gold(), &v).unwrap();
        assert_eq!(m.loss, oracle_loss(&s, &gold(), &v));
        assert_eq!(m.loss, m.cost);
        assert_eq!(m.loss, 5.0);
    }

    #[test]
    fn crossing_gold_is_rejected() {
        let v = vocab();
        let s = SpanScores::zeros(3, v.len());
        let bad = vec![
            LabeledSpan::new(0, 3, "S"),
            LabeledSpan::new(0, 2, "NP"),
            LabeledSpan::new(1, 3, "VP"),
        ];
        assert!(matches!(
            margin_loss(&s, &bad, &v),
            Err(DecoderError::Gold(TreebankError::Crossing { .. }))
        ));
    }

    #[test]
    fn matches_literal_oracle() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let s = SpanScores::from_fn(3, v.len(), |_, _, _| rng.gen_range(-8..=8) as f64 / 4.0);
            let m = margin_loss(&s, &gold(), &v).unwrap();
            assert_eq!(m.loss, oracle_loss(&s, &gold(), &v));
        }
    }

    proptest! {
        #[test]
        fn raising_a_gold_span_never_raises_loss(seed in any::<u64>(), which in 0usize..3, c in 0.01f64..5.0) {
            let v = vocab();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = SpanScores::from_fn(3, v.len(), |_, _, _| rng.gen_range(-2.0..2.0));
            let before = margin_loss(&s, &gold(), &v).unwrap().loss;
            let g = &gold()[which];
            s.add(g.start, g.end, v.get(&g.label).unwrap(), c);
            let after = margin_loss(&s, &gold(), &v).unwrap().loss;
            prop_assert!(after <= before + 1e-9);
        }
    }
}
