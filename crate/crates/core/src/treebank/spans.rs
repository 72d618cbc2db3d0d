use serde::{Deserialize, Serialize};

use super::tree::Tree;
use super::TreebankError;

/// Joins the labels of a unary chain into one composite label.
pub const UNARY_JOIN: char = '+';

/// A labeled constituent over fenceposts `[start, end)`. The empty label
/// stands for "no constituent" and yields no node on reconstruction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl LabeledSpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        LabeledSpan {
            start,
            end,
            label: label.into(),
        }
    }

    pub fn is_empty_label(&self) -> bool {
        self.label.is_empty()
    }

    pub fn crosses(&self, other: &LabeledSpan) -> bool {
        (self.start < other.start && other.start < self.end && self.end < other.end)
            || (other.start < self.start && self.start < other.end && other.end < self.end)
    }
}

/// Converts a tree to its collapsed span set, in preorder. Each maximal
/// unary chain of internal nodes becomes a single span with a `+`-joined
/// label; POS tags are not spans.
pub fn tree_to_spans(tree: &Tree) -> Vec<LabeledSpan> {
    fn walk(tree: &Tree, offset: usize, out: &mut Vec<LabeledSpan>) -> usize {
        match tree {
            Tree::Leaf { .. } => 1,
            Tree::Node { label, children } => {
                let mut labels = vec![label.as_str()];
                let mut kids = children;
                while let [only @ Tree::Node { .. }] = kids.as_slice() {
                    labels.push(only.label());
                    kids = match only {
                        Tree::Node { children, .. } => children,
                        Tree::Leaf { .. } => unreachable!(),
                    };
                }
                let slot = out.len();
                out.push(LabeledSpan::new(offset, offset, labels.join("+")));
                let mut len = 0;
                for child in kids {
                    len += walk(child, offset + len, out);
                }
                out[slot].end = offset + len;
                len
            }
        }
    }
    let mut out = Vec::new();
    walk(tree, 0, &mut out);
    out
}

/// Uncollapsed brackets: one `(start, end, label)` per internal node, the
/// way EVALB counts them.
pub fn tree_brackets(tree: &Tree) -> Vec<LabeledSpan> {
    fn walk(tree: &Tree, offset: usize, out: &mut Vec<LabeledSpan>) -> usize {
        match tree {
            Tree::Leaf { .. } => 1,
            Tree::Node { label, children } => {
                let slot = out.len();
                out.push(LabeledSpan::new(offset, offset, label.clone()));
                let mut len = 0;
                for child in children {
                    len += walk(child, offset + len, out);
                }
                out[slot].end = offset + len;
                len
            }
        }
    }
    let mut out = Vec::new();
    walk(tree, 0, &mut out);
    out
}

/// Rebuilds an n-ary tree from a span set and the sentence leaves.
///
/// Spans with the empty label produce no node. Several spans over the same
/// fenceposts are joined, in input order, into one unary chain. If no
/// labeled span covers the whole sentence the result is wrapped in `ROOT`.
pub fn spans_to_tree(
    spans: &[LabeledSpan],
    leaves: &[(String, String)],
) -> Result<Tree, TreebankError> {
    let len = leaves.len();
    if len == 0 {
        return Err(TreebankError::Rejected("no leaves".into()));
    }
    for s in spans {
        if s.start >= s.end || s.end > len {
            return Err(TreebankError::SpanRange {
                start: s.start,
                end: s.end,
                len,
            });
        }
    }
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| (spans[i].start, std::cmp::Reverse(spans[i].end), i));

    let mut merged: Vec<LabeledSpan> = Vec::with_capacity(spans.len() + 1);
    for i in order {
        let s = &spans[i];
        match merged.last_mut() {
            Some(last) if last.start == s.start && last.end == s.end => {
                if !s.label.is_empty() {
                    if !last.label.is_empty() {
                        last.label.push(UNARY_JOIN);
                    }
                    last.label.push_str(&s.label);
                }
            }
            _ => merged.push(s.clone()),
        }
    }
    let has_root = matches!(merged.first(), Some(s) if s.start == 0 && s.end == len);
    if !has_root {
        merged.insert(0, LabeledSpan::new(0, len, ""));
    }

    let mut pos = 0;
    let mut built = build(&merged, &mut pos, leaves)?;
    if built.len() == 1 && !built[0].is_leaf() {
        Ok(built.pop().unwrap())
    } else {
        Ok(Tree::node("ROOT", built))
    }
}

fn build(
    spans: &[LabeledSpan],
    pos: &mut usize,
    leaves: &[(String, String)],
) -> Result<Vec<Tree>, TreebankError> {
    let current = &spans[*pos];
    *pos += 1;
    let mut children = Vec::new();
    let mut cursor = current.start;
    while *pos < spans.len() && spans[*pos].start < current.end {
        let next = &spans[*pos];
        if next.end > current.end || next.start < cursor {
            return Err(TreebankError::Crossing {
                first: (current.start, current.end),
                second: (next.start, next.end),
            });
        }
        children.extend(leaf_range(leaves, cursor, next.start));
        cursor = next.end;
        children.extend(build(spans, pos, leaves)?);
    }
    children.extend(leaf_range(leaves, cursor, current.end));
    if current.label.is_empty() {
        return Ok(children);
    }
    let mut node = None;
    for label in current.label.rsplit(UNARY_JOIN) {
        let kids = match node.take() {
            None => std::mem::take(&mut children),
            Some(inner) => vec![inner],
        };
        node = Some(Tree::node(label, kids));
    }
    Ok(node.into_iter().collect())
}

fn leaf_range(leaves: &[(String, String)], from: usize, to: usize) -> impl Iterator<Item = Tree> + '_ {
    leaves[from..to]
        .iter()
        .map(|(w, t)| Tree::leaf(w.clone(), t.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_tree;

    fn sp(a: usize, b: usize, l: &str) -> LabeledSpan {
        LabeledSpan::new(a, b, l)
    }

    fn leaves(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(w, t)| (w.to_string(), t.to_string())).collect()
    }

    #[test]
    fn two_word_spans() {
        let t = parse_tree("(S (NP (PRP i)) (VP (VBP agree)))").unwrap();
        assert_eq!(
            tree_to_spans(&t),
            vec![sp(0, 2, "S"), sp(0, 1, "NP"), sp(1, 2, "VP")]
        );
    }

    #[test]
    fn unary_chain_collapses() {
        let t = parse_tree("(S (VP (VB go)))").unwrap();
        assert_eq!(tree_to_spans(&t), vec![sp(0, 1, "S+VP")]);
        let back = spans_to_tree(&[sp(0, 1, "S+VP")], &leaves(&[("go", "VB")])).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rebuilds_two_word_tree() {
        let t = spans_to_tree(
            &[sp(0, 2, "S"), sp(0, 1, "NP"), sp(1, 2, "VP")],
            &leaves(&[("i", "PRP"), ("agree", "VBP")]),
        )
        .unwrap();
        assert_eq!(t.to_string(), "(S (NP (PRP i)) (VP (VBP agree)))");
    }

    #[test]
    fn duplicate_outer_span_joins_chain() {
        let t = spans_to_tree(
            &[sp(0, 2, "S"), sp(0, 1, "NP"), sp(0, 2, "VP"), sp(1, 2, "X")],
            &leaves(&[("i", "PRP"), ("agree", "VBP")]),
        )
        .unwrap();
        assert_eq!(t.to_string(), "(S (VP (NP (PRP i)) (X (VBP agree))))");
        assert_eq!(
            tree_to_spans(&t),
            vec![sp(0, 2, "S+VP"), sp(0, 1, "NP"), sp(1, 2, "X")]
        );
    }

    #[test]
    fn empty_label_spans_vanish() {
        let t = spans_to_tree(
            &[sp(0, 3, "S"), sp(0, 2, ""), sp(0, 1, "NP")],
            &leaves(&[("a", "DT"), ("b", "NN"), ("c", "VB")]),
        )
        .unwrap();
        assert_eq!(t.to_string(), "(S (NP (DT a)) (NN b) (VB c))");
    }

    #[test]
    fn missing_root_gets_wrapper() {
        let t = spans_to_tree(&[sp(0, 1, "NP")], &leaves(&[("a", "DT"), ("b", "NN")])).unwrap();
        assert_eq!(t.to_string(), "(ROOT (NP (DT a)) (NN b))");
    }

    #[test]
    fn crossing_spans_are_rejected() {
        let err = spans_to_tree(
            &[sp(0, 3, "S"), sp(0, 2, "A"), sp(1, 3, "B")],
            &leaves(&[("a", "X"), ("b", "X"), ("c", "X")]),
        )
        .unwrap_err();
        match err {
            TreebankError::Crossing { first, second } => {
                assert_eq!(first, (0, 2));
                assert_eq!(second, (1, 3));
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(sp(0, 2, "A").crosses(&sp(1, 3, "B")));
        assert!(!sp(0, 2, "A").crosses(&sp(0, 3, "B")));
    }

    #[test]
    fn out_of_range_span() {
        assert!(matches!(
            spans_to_tree(&[sp(0, 3, "S")], &leaves(&[("a", "X")])),
            Err(TreebankError::SpanRange { .. })
        ));
    }

    #[test]
    fn brackets_keep_chains_apart() {
        let t = parse_tree("(S (VP (VB go)))").unwrap();
        assert_eq!(tree_brackets(&t), vec![sp(0, 1, "S"), sp(0, 1, "VP")]);
    }
}
