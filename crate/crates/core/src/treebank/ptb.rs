//! Reader for Penn-Treebank-style bracketed trees.
//!
//! The reader normalizes trees the way the rest of the crate expects them:
//! the outer `ROOT`/`TOP`/unlabeled wrapper is removed when it dominates a
//! single constituent, `-NONE-` trace leaves are deleted (along with any
//! constituent they leave empty) and function tags are stripped from
//! constituent labels (`NP-SBJ-1` becomes `NP`).

use super::tree::{Tree, ROOT_LABELS};
use super::TreebankError;

const TRACE_TAG: &str = "-NONE-";

#[derive(Debug)]
enum Raw {
    Node {
        label: String,
        children: Vec<Raw>,
        offset: usize,
    },
    Leaf {
        word: String,
        tag: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Token<'a> {
    Open(usize),
    Close(usize),
    Atom(&'a str, usize),
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut atom_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        let delim = c == '(' || c == ')' || c.is_whitespace();
        if delim {
            if let Some(s) = atom_start.take() {
                tokens.push(Token::Atom(&text[s..i], s));
            }
            match c {
                '(' => tokens.push(Token::Open(i)),
                ')' => tokens.push(Token::Close(i)),
                _ => {}
            }
        } else if atom_start.is_none() {
            atom_start = Some(i);
        }
    }
    if let Some(s) = atom_start {
        tokens.push(Token::Atom(&text[s..], s));
    }
    tokens
}

/// Streaming reader over the trees in a text buffer. Each item is one tree or
/// the error that rejected it; syntax errors end the stream.
pub struct PtbReader<'a> {
    tokens: Vec<Token<'a>>,
    pos: usize,
    text_len: usize,
    failed: bool,
}

impl<'a> PtbReader<'a> {
    pub fn new(text: &'a str) -> Self {
        PtbReader {
            tokens: tokenize(text),
            pos: 0,
            text_len: text.len(),
            failed: false,
        }
    }

    fn peek(&self) -> Option<&Token<'a>> {
        self.tokens.get(self.pos)
    }

    fn parse_node(&mut self) -> Result<Raw, TreebankError> {
        let open = match self.tokens.get(self.pos) {
            Some(Token::Open(o)) => *o,
            Some(Token::Close(o)) => {
                return Err(TreebankError::syntax(*o, "unexpected ')'"));
            }
            Some(Token::Atom(a, o)) => {
                return Err(TreebankError::syntax(
                    *o,
                    format!("expected '(' but found {a:?}"),
                ));
            }
            None => return Err(TreebankError::syntax(self.text_len, "unexpected end of input")),
        };
        self.pos += 1;
        let label = match self.peek() {
            Some(Token::Atom(a, _)) => {
                let l = a.to_string();
                self.pos += 1;
                l
            }
            _ => String::new(),
        };
        let mut children = Vec::new();
        let mut word: Option<String> = None;
        loop {
            match self.peek().cloned() {
                None => {
                    return Err(TreebankError::syntax(
                        self.text_len,
                        format!("unbalanced brackets: '(' at offset {open} is never closed"),
                    ))
                }
                Some(Token::Close(_)) => {
                    self.pos += 1;
                    break;
                }
                Some(Token::Open(_)) => {
                    if word.is_some() {
                        return Err(TreebankError::syntax(open, "leaf node has subtrees"));
                    }
                    children.push(self.parse_node()?);
                }
                Some(Token::Atom(a, o)) => {
                    if word.is_some() || !children.is_empty() {
                        return Err(TreebankError::syntax(o, format!("stray token {a:?}")));
                    }
                    word = Some(a.to_string());
                    self.pos += 1;
                }
            }
        }
        match word {
            Some(word) => Ok(Raw::Leaf { word, tag: label }),
            None if children.is_empty() => Err(TreebankError::syntax(open, "empty bracket")),
            None => Ok(Raw::Node {
                label,
                children,
                offset: open,
            }),
        }
    }
}

impl Iterator for PtbReader<'_> {
    type Item = Result<Tree, TreebankError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.pos >= self.tokens.len() {
            return None;
        }
        let raw = match self.parse_node() {
            Ok(r) => r,
            Err(e) => {
                self.failed = true;
                return Some(Err(e));
            }
        };
        Some(normalize(raw))
    }
}

/// Parses every tree in `text`. Fails on the first malformed or rejected tree.
pub fn parse_ptb(text: &str) -> Result<Vec<Tree>, TreebankError> {
    PtbReader::new(text).collect()
}

/// Parses exactly one tree.
pub fn parse_tree(text: &str) -> Result<Tree, TreebankError> {
    let mut trees = parse_ptb(text)?;
    match trees.len() {
        1 => Ok(trees.pop().unwrap()),
        n => Err(TreebankError::Invalid(format!("expected one tree, found {n}"))),
    }
}

/// Drops function tags and coindexation: `NP-SBJ-1` → `NP`, `NP=2` → `NP`.
/// Labels that start with `-` (e.g. `-NONE-`) are kept as they are.
pub fn strip_function_tags(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    match label.find(['-', '=']) {
        Some(i) if i > 0 => &label[..i],
        _ => label,
    }
}

fn clean(raw: Raw) -> Option<Tree> {
    match raw {
        Raw::Leaf { tag, .. } if tag == TRACE_TAG => None,
        Raw::Leaf { word, tag } => Some(Tree::Leaf { word, tag }),
        Raw::Node {
            label, children, ..
        } => {
            let kept: Vec<Tree> = children.into_iter().filter_map(clean).collect();
            if kept.is_empty() {
                None
            } else {
                Some(Tree::node(strip_function_tags(&label), kept))
            }
        }
    }
}

fn normalize(raw: Raw) -> Result<Tree, TreebankError> {
    let offset = match &raw {
        Raw::Node { offset, .. } => *offset,
        Raw::Leaf { .. } => 0,
    };
    let tree = clean(raw).ok_or_else(|| {
        TreebankError::Rejected(format!("tree at offset {offset} is empty after trace removal"))
    })?;
    Ok(match tree {
        Tree::Node { label, mut children }
            if label.is_empty() || ROOT_LABELS.contains(&label.as_str()) =>
        {
            if children.len() == 1 && !children[0].is_leaf() {
                children.pop().unwrap()
            } else {
                let label = if label.is_empty() { "ROOT".to_string() } else { label };
                Tree::Node { label, children }
            }
        }
        leaf @ Tree::Leaf { .. } => Tree::node("ROOT", vec![leaf]),
        other => other,
    })
}
