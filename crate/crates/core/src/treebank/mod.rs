//! Constituency trees: bracketed I/O, span conversion and label vocabularies.

mod ptb;
mod spans;
mod tree;
mod vocab;

pub use ptb::{parse_ptb, parse_tree, strip_function_tags, PtbReader};
pub use spans::{spans_to_tree, tree_brackets, tree_to_spans, LabeledSpan, UNARY_JOIN};
pub use tree::{
    classify_fluency, is_punctuation, speechify, Fluency, Tree, DISFLUENCY_LABELS,
    EVALB_PUNCT_TAGS, ROOT_LABELS,
};
pub use vocab::{LabelVocab, EMPTY_LABEL};

#[derive(Debug, thiserror::Error)]
pub enum TreebankError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("rejected sentence: {0}")]
    Rejected(String),
    #[error("invalid tree: {0}")]
    Invalid(String),
    #[error("crossing spans ({}, {}) and ({}, {})", first.0, first.1, second.0, second.1)]
    Crossing {
        first: (usize, usize),
        second: (usize, usize),
    },
    #[error("span ({start}, {end}) out of range for a {len}-word sentence")]
    SpanRange { start: usize, end: usize, len: usize },
    #[error("label {0:?} is not in the label vocabulary")]
    UnknownLabel(String),
}

impl TreebankError {
    pub(crate) fn syntax(offset: usize, message: impl Into<String>) -> Self {
        TreebankError::Syntax {
            offset,
            message: message.into(),
        }
    }
}

/// Serializes trees one per line.
pub fn write_trees<'a>(trees: impl IntoIterator<Item = &'a Tree>) -> String {
    let mut out = String::new();
    for t in trees {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}
