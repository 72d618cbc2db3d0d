use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::spans::tree_to_spans;
use super::tree::Tree;
use super::TreebankError;

/// Index of the empty ("no constituent") label.
pub const EMPTY_LABEL: usize = 0;

/// Collapsed constituent labels, with the empty label fixed at index 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocab {
    /// Builds the vocabulary from the collapsed labels of `trees`, sorted so
    /// the indexing does not depend on corpus order.
    pub fn from_trees<'a>(trees: impl IntoIterator<Item = &'a Tree>) -> Self {
        let mut seen = BTreeSet::new();
        for tree in trees {
            for span in tree_to_spans(tree) {
                seen.insert(span.label);
            }
        }
        Self::from_labels(seen)
    }

    pub fn from_labels(labels: impl IntoIterator<Item = String>) -> Self {
        let mut all = vec![String::new()];
        all.extend(labels.into_iter().filter(|l| !l.is_empty()));
        all.into()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.len() <= 1
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn index_of(&self, label: &str) -> Result<usize, TreebankError> {
        self.get(label)
            .ok_or_else(|| TreebankError::UnknownLabel(label.to_string()))
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Labels in `tree` that this vocabulary does not know.
    pub fn unknown_labels(&self, tree: &Tree) -> Vec<String> {
        tree_to_spans(tree)
            .into_iter()
            .filter(|s| self.get(&s.label).is_none())
            .map(|s| s.label)
            .collect()
    }
}

impl From<Vec<String>> for LabelVocab {
    fn from(mut labels: Vec<String>) -> Self {
        if labels.first().map(String::as_str) != Some("") {
            labels.retain(|l| !l.is_empty());
            labels.insert(0, String::new());
        }
        let mut index = HashMap::new();
        let mut unique = Vec::with_capacity(labels.len());
        for l in labels {
            if !index.contains_key(&l) {
                index.insert(l.clone(), unique.len());
                unique.push(l);
            }
        }
        LabelVocab {
            labels: unique,
            index,
        }
    }
}

impl From<LabelVocab> for Vec<String> {
    fn from(v: LabelVocab) -> Self {
        v.labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_ptb;

    #[test]
    fn empty_label_first_and_unique() {
        let trees = parse_ptb("(S (NP (PRP i)) (VP (VB go)))\n(S (VP (VB go)))\n(S (NP (NN x)) (VP (VB y)))").unwrap();
        let v = LabelVocab::from_trees(&trees);
        assert_eq!(v.label(EMPTY_LABEL), "");
        assert_eq!(v.labels(), &["", "NP", "S", "S+VP", "VP"]);
        assert_eq!(v.get("S+VP"), Some(3));
        assert!(v.get("PP").is_none());
    }

    #[test]
    fn serde_round_trip() {
        let v = LabelVocab::from_labels(["S".to_string(), "NP".to_string()]);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"["","S","NP"]"#);
        let back: LabelVocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }
}
