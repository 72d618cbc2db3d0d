use std::fmt;

use serde::{Deserialize, Serialize};

use super::TreebankError;

/// Labels that mark a sentence as disfluent.
pub const DISFLUENCY_LABELS: [&str; 2] = ["EDITED", "INTJ"];

/// Wrapper labels that are implicit on the whole sentence and never scored.
pub const ROOT_LABELS: [&str; 2] = ["ROOT", "TOP"];

/// An n-ary constituency tree over a tagged word sequence.
///
/// Internal nodes always have at least one child; leaves carry a word and
/// its part-of-speech tag.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tree {
    Node { label: String, children: Vec<Tree> },
    Leaf { word: String, tag: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fluency {
    Fluent,
    Disfluent,
}

impl Tree {
    pub fn node(label: impl Into<String>, children: Vec<Tree>) -> Tree {
        Tree::Node {
            label: label.into(),
            children,
        }
    }

    pub fn leaf(word: impl Into<String>, tag: impl Into<String>) -> Tree {
        Tree::Leaf {
            word: word.into(),
            tag: tag.into(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Tree::Leaf { .. })
    }

    /// Constituent label for internal nodes, POS tag for leaves.
    pub fn label(&self) -> &str {
        match self {
            Tree::Node { label, .. } => label,
            Tree::Leaf { tag, .. } => tag,
        }
    }

    pub fn children(&self) -> &[Tree] {
        match self {
            Tree::Node { children, .. } => children,
            Tree::Leaf { .. } => &[],
        }
    }

    /// Number of leaves.
    pub fn len(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 1,
            Tree::Node { children, .. } => children.iter().map(Tree::len).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(word, tag)` pairs in sentence order.
    pub fn leaves(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<(String, String)>) {
        match self {
            Tree::Leaf { word, tag } => out.push((word.clone(), tag.clone())),
            Tree::Node { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    pub fn words(&self) -> Vec<String> {
        self.leaves().into_iter().map(|(w, _)| w).collect()
    }

    /// Checks the structural invariant: internal nodes have children, and the
    /// tree has at least one leaf.
    pub fn validate(&self) -> Result<(), TreebankError> {
        match self {
            Tree::Leaf { word, .. } if word.is_empty() => {
                Err(TreebankError::Invalid("leaf with empty word".into()))
            }
            Tree::Leaf { .. } => Ok(()),
            Tree::Node { label, children } => {
                if children.is_empty() {
                    return Err(TreebankError::Invalid(format!(
                        "internal node {label:?} has no children"
                    )));
                }
                children.iter().try_for_each(Tree::validate)
            }
        }
    }

    /// Preorder iterator over internal-node labels.
    pub fn internal_labels(&self) -> Vec<&str> {
        let mut out = Vec::new();
        fn walk<'a>(t: &'a Tree, out: &mut Vec<&'a str>) {
            if let Tree::Node { label, children } = t {
                out.push(label);
                children.iter().for_each(|c| walk(c, out));
            }
        }
        walk(self, &mut out);
        out
    }

    /// Disfluent iff any internal node is EDITED or INTJ.
    pub fn fluency(&self) -> Fluency {
        let disfluent = self
            .internal_labels()
            .iter()
            .any(|l| DISFLUENCY_LABELS.contains(l));
        if disfluent {
            Fluency::Disfluent
        } else {
            Fluency::Fluent
        }
    }
}

pub fn classify_fluency(tree: &Tree) -> Fluency {
    tree.fluency()
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Leaf { word, tag } => write!(f, "({tag} {word})"),
            Tree::Node { label, children } => {
                write!(f, "({label}")?;
                for child in children {
                    write!(f, " {child}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// EVALB's punctuation tags.
pub const EVALB_PUNCT_TAGS: [&str; 5] = [",", ":", "``", "''", "."];

const PUNCT_TAGS: [&str; 7] = [",", ":", "``", "''", ".", "-LRB-", "-RRB-"];

/// True for leaves that carry no spoken material.
pub fn is_punctuation(word: &str, tag: &str) -> bool {
    if PUNCT_TAGS.contains(&tag) {
        return true;
    }
    let all_punct = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_punctuation());
    all_punct(word) && all_punct(tag)
}

/// Converts a written-text tree into transcript style: lowercase words, no
/// punctuation leaves, and no internal nodes left empty by the deletion.
pub fn speechify(tree: &Tree) -> Result<Tree, TreebankError> {
    fn strip(t: &Tree) -> Option<Tree> {
        match t {
            Tree::Leaf { word, tag } => {
                if is_punctuation(word, tag) {
                    None
                } else {
                    Some(Tree::leaf(word.to_lowercase(), tag.clone()))
                }
            }
            Tree::Node { label, children } => {
                let kept: Vec<Tree> = children.iter().filter_map(strip).collect();
                if kept.is_empty() {
                    None
                } else {
                    Some(Tree::node(label.clone(), kept))
                }
            }
        }
    }
    strip(tree).ok_or_else(|| {
        TreebankError::Rejected(format!("no words left after removing punctuation: {tree}"))
    })
}
