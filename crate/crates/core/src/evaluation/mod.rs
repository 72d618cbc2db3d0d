//! Labeled-bracket scoring with EVALB conventions, paired bootstrap
//! significance, and summary tables.

mod bootstrap;
mod tables;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use bootstrap::{paired_bootstrap, SignificanceResult, MIN_RESAMPLES};
pub use tables::{report_tables, significance_marker, ReportEntry, Tables, MISSING_CELL};

use crate::treebank::{tree_brackets, Fluency, Tree, EVALB_PUNCT_TAGS, ROOT_LABELS};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{gold} gold trees but {predicted} predicted trees")]
    Count { gold: usize, predicted: usize },
    #[error("sentence {index}: gold words {gold:?} differ from predicted words {predicted:?}")]
    Words {
        index: usize,
        gold: Vec<String>,
        predicted: Vec<String>,
    },
    #[error("{0}")]
    Precondition(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Drop punctuation before scoring, as EVALB does for written text.
    pub delete_punct: bool,
}

/// Bracket counts for one sentence or summed over many.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub matched: usize,
    pub gold: usize,
    pub predicted: usize,
    pub sentences: usize,
    pub exact: usize,
}

impl Counts {
    pub fn add(&mut self, other: &Counts) {
        self.matched += other.matched;
        self.gold += other.gold;
        self.predicted += other.predicted;
        self.sentences += other.sentences;
        self.exact += other.exact;
    }

    pub fn precision(&self) -> f64 {
        percent(self.matched, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        percent(self.matched, self.gold)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Precision, recall and F1 (percentages) with the counts behind them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

impl From<Counts> for Scores {
    fn from(c: Counts) -> Self {
        Scores {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            counts: c,
        }
    }
}

/// Sentence-length buckets: `[0,5]`, `[6,10]`, `[11,∞)`.
pub const LENGTH_BUCKETS: [(usize, Option<usize>); 3] = [(0, Some(5)), (6, Some(10)), (11, None)];

pub fn length_bucket(words: usize) -> usize {
    LENGTH_BUCKETS
        .iter()
        .position(|&(lo, hi)| words >= lo && hi.is_none_or(|h| words <= h))
        .expect("buckets cover every length")
}

pub fn length_bucket_name(bucket: usize) -> String {
    match LENGTH_BUCKETS[bucket] {
        (lo, Some(hi)) => format!("[{lo},{hi}]"),
        (lo, None) => format!("[{lo},inf)"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub all: Scores,
    pub fluent: Scores,
    pub disfluent: Scores,
    pub lengths: [Scores; 3],
    /// Per-sentence counts in input order, for resampling.
    #[serde(skip)]
    pub per_sentence: Vec<Counts>,
}

impl EvalReport {
    pub fn precision(&self) -> f64 {
        self.all.precision
    }

    pub fn recall(&self) -> f64 {
        self.all.recall
    }

    pub fn f1(&self) -> f64 {
        self.all.f1
    }

    pub fn exact(&self) -> usize {
        self.all.counts.exact
    }
}

fn without_punct(tree: &Tree) -> Option<Tree> {
    match tree {
        Tree::Leaf { tag, .. } => {
            if EVALB_PUNCT_TAGS.contains(&tag.as_str()) {
                None
            } else {
                Some(tree.clone())
            }
        }
        Tree::Node { label, children } => {
            let kept: Vec<Tree> = children.iter().filter_map(without_punct).collect();
            if kept.is_empty() {
                None
            } else {
                Some(Tree::node(label.clone(), kept))
            }
        }
    }
}

/// Scored brackets of a tree: every internal node except root wrappers.
pub fn scored_brackets(tree: &Tree) -> Vec<(usize, usize, String)> {
    tree_brackets(tree)
        .into_iter()
        .filter(|b| !b.label.is_empty() && !ROOT_LABELS.contains(&b.label.as_str()))
        .map(|b| (b.start, b.end, b.label))
        .collect()
}

fn words_lower(tree: &Tree) -> Vec<String> {
    tree.words().iter().map(|w| w.to_lowercase()).collect()
}

/// Counts for one gold/predicted pair.
pub fn sentence_counts(index: usize, gold: &Tree, predicted: &Tree, options: EvalOptions) -> Result<Counts, EvalError> {
    let (g, p) = if options.delete_punct {
        (without_punct(gold), without_punct(predicted))
    } else {
        (Some(gold.clone()), Some(predicted.clone()))
    };
    let gw = g.as_ref().map(words_lower).unwrap_or_default();
    let pw = p.as_ref().map(words_lower).unwrap_or_default();
    if gw != pw {
        return Err(EvalError::Words {
            index,
            gold: gw,
            predicted: pw,
        });
    }
    let gb = g.as_ref().map(scored_brackets).unwrap_or_default();
    let pb = p.as_ref().map(scored_brackets).unwrap_or_default();
    let mut pool: HashMap<&(usize, usize, String), usize> = HashMap::new();
    for b in &gb {
        *pool.entry(b).or_default() += 1;
    }
    let mut matched = 0;
    for b in &pb {
        if let Some(n) = pool.get_mut(b) {
            if *n > 0 {
                *n -= 1;
                matched += 1;
            }
        }
    }
    Ok(Counts {
        matched,
        gold: gb.len(),
        predicted: pb.len(),
        sentences: 1,
        exact: usize::from(matched == gb.len() && matched == pb.len()),
    })
}

/// Per-sentence counts for aligned tree lists.
pub fn corpus_counts(gold: &[Tree], predicted: &[Tree], options: EvalOptions) -> Result<Vec<Counts>, EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::Count {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    use rayon::prelude::*;
    gold.par_iter()
        .zip(predicted.par_iter())
        .enumerate()
        .map(|(i, (g, p))| sentence_counts(i, g, p, options))
        .collect()
}

/// Micro-averaged labeled-bracket scores, with fluent/disfluent (from the
/// gold trees) and sentence-length breakdowns.
pub fn parseval(gold: &[Tree], predicted: &[Tree], options: EvalOptions) -> Result<EvalReport, EvalError> {
    let per_sentence = corpus_counts(gold, predicted, options)?;
    let mut all = Counts::default();
    let mut fluent = Counts::default();
    let mut disfluent = Counts::default();
    let mut lengths = [Counts::default(); 3];
    for (g, c) in gold.iter().zip(&per_sentence) {
        all.add(c);
        match g.fluency() {
            Fluency::Fluent => fluent.add(c),
            Fluency::Disfluent => disfluent.add(c),
        }
        lengths[length_bucket(g.len())].add(c);
    }
    Ok(EvalReport {
        all: all.into(),
        fluent: fluent.into(),
        disfluent: disfluent.into(),
        lengths: lengths.map(Scores::from),
        per_sentence,
    })
}
