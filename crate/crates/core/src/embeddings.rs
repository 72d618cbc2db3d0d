//! Word vectors: learned jointly with the parser, read from precomputed
//! per-sentence stores and kept frozen, or initialized from a store and
//! fine-tuned.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{unit_uniform, Graph, NnError, ParamId, ParamStore, Tensor, Var};

pub const UNK: &str = "<unk>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    Learned,
    Frozen,
    Finetuned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub mode: EmbeddingMode,
    /// Width of learned tables; stores declare their own.
    pub dim: usize,
    pub min_count: usize,
    pub unk_dropout: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            mode: EmbeddingMode::Learned,
            dim: 128,
            min_count: 2,
            unk_dropout: 0.01,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("no stored vectors for sentence {0:?}")]
    MissingSentence(String),
    #[error("sentence {id:?} has {tokens} tokens but {vectors} stored vectors")]
    Alignment {
        id: String,
        tokens: usize,
        vectors: usize,
    },
    #[error("vector store line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Word types with an `<unk>` entry at index 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct WordVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl WordVocab {
    /// Keeps words seen at least `min_count` times, ordered by descending
    /// count and then alphabetically.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(normalize(t)).or_default() += 1;
        }
        let mut kept: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words = vec![UNK.to_string()];
        words.extend(kept.into_iter().map(|(w, _)| w).filter(|w| w != UNK));
        words.into()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    /// Index of `word`, or 0 (`<unk>`) when unknown.
    pub fn lookup(&self, word: &str) -> usize {
        self.index.get(&normalize(word)).copied().unwrap_or(0)
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }
}

fn normalize(word: &str) -> String {
    word.to_lowercase()
}

impl From<Vec<String>> for WordVocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        WordVocab { words, index }
    }
}

impl From<WordVocab> for Vec<String> {
    fn from(v: WordVocab) -> Self {
        v.words
    }
}

/// Precomputed word-level vectors, keyed by sentence id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VectorStore {
    pub dim: usize,
    pub producer: String,
    entries: HashMap<String, Tensor>,
    order: Vec<String>,
}

impl VectorStore {
    pub fn new(dim: usize, producer: impl Into<String>) -> Self {
        VectorStore {
            dim,
            producer: producer.into(),
            ..Default::default()
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, vectors: Tensor) -> Result<(), EmbeddingError> {
        let id = id.into();
        if vectors.cols() != self.dim {
            return Err(EmbeddingError::Config(format!(
                "sentence {id:?} vectors have width {} but the store has dim {}",
                vectors.cols(),
                self.dim
            )));
        }
        if self.entries.insert(id.clone(), vectors).is_none() {
            self.order.push(id);
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Tensor> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.order
    }

    /// Number of `ids` with stored vectors.
    pub fn coverage<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> (usize, usize) {
        let (mut hit, mut total) = (0, 0);
        for id in ids {
            total += 1;
            if self.entries.contains_key(id) {
                hit += 1;
            }
        }
        (hit, total)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("dim={} producer={}\n", self.dim, self.producer);
        for id in &self.order {
            let t = &self.entries[id];
            out.push_str(&format!("sentence {id} {}\n", t.rows()));
            for r in 0..t.rows() {
                let row: Vec<String> = t.row(r).iter().map(|v| v.to_string()).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out
    }
}

/// Parses a vector store. An empty input yields an empty store and a
/// warning.
pub fn parse_vector_store(text: &str) -> Result<(VectorStore, Vec<String>), EmbeddingError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let Some((hline, header)) = lines.next() else {
        return Ok((VectorStore::default(), vec!["vector store is empty".to_string()]));
    };
    let mut dim = None;
    let mut producer = String::from("unknown");
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("dim", d)) => {
                dim = Some(d.parse::<usize>().map_err(|_| EmbeddingError::Format {
                    line: hline,
                    message: format!("bad dim {d:?}"),
                })?)
            }
            Some(("producer", p)) => producer = p.to_string(),
            _ => {}
        }
    }
    let dim = dim.ok_or_else(|| EmbeddingError::Format {
        line: hline,
        message: "header must start with dim=<d>".into(),
    })?;
    let mut store = VectorStore::new(dim, producer);
    while let Some((line, l)) = lines.next() {
        let parts: Vec<&str> = l.split_whitespace().collect();
        let (id, count) = match parts.as_slice() {
            ["sentence", id, count] => (
                id.to_string(),
                count.parse::<usize>().map_err(|_| EmbeddingError::Format {
                    line,
                    message: format!("bad token count {count:?}"),
                })?,
            ),
            _ => {
                return Err(EmbeddingError::Format {
                    line,
                    message: "expected 'sentence <id> <T>'".into(),
                })
            }
        };
        let mut data = Vec::with_capacity(count * dim);
        for _ in 0..count {
            let (vline, v) = lines.next().ok_or_else(|| EmbeddingError::Format {
                line,
                message: format!("sentence {id} ends before its {count} vectors"),
            })?;
            let row = v
                .split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbeddingError::Format {
                    line: vline,
                    message: e.to_string(),
                })?;
            if row.len() != dim {
                return Err(EmbeddingError::Format {
                    line: vline,
                    message: format!("vector has {} values, store dim is {dim}", row.len()),
                });
            }
            data.extend(row);
        }
        let t = Tensor::matrix(count, dim, data)?;
        store.insert(id, t)?;
    }
    let warnings = if store.is_empty() {
        vec!["vector store has no sentences".to_string()]
    } else {
        Vec::new()
    };
    Ok((store, warnings))
}

pub fn load_vector_store(
    path: &std::path::Path,
) -> Result<(VectorStore, Vec<String>), EmbeddingError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EmbeddingError::Config(format!("{}: {e}", path.display())))?;
    parse_vector_store(&text)
}

/// Supplies `e_i` rows for a sentence.
#[derive(Clone, Debug)]
pub struct EmbeddingProvider {
    pub mode: EmbeddingMode,
    pub dim: usize,
    pub unk_dropout: f64,
    pub vocab: Option<WordVocab>,
    pub table: Option<ParamId>,
    pub store: Option<Arc<VectorStore>>,
}

impl EmbeddingProvider {
    pub fn learned(
        params: &mut ParamStore,
        vocab: WordVocab,
        dim: usize,
        unk_dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, EmbeddingError> {
        let table = params.add("embed.table", unit_uniform(vocab.len(), dim, rng))?;
        Ok(EmbeddingProvider {
            mode: EmbeddingMode::Learned,
            dim,
            unk_dropout,
            vocab: Some(vocab),
            table: Some(table),
            store: None,
        })
    }

    pub fn frozen(store: Arc<VectorStore>) -> Self {
        EmbeddingProvider {
            mode: EmbeddingMode::Frozen,
            dim: store.dim,
            unk_dropout: 0.0,
            vocab: None,
            table: None,
            store: Some(store),
        }
    }

    /// A trainable type-level table initialized by [`finetuned_table`].
    pub fn finetuned<'a>(
        params: &mut ParamStore,
        store: &VectorStore,
        sentences: impl IntoIterator<Item = (&'a str, &'a [String])>,
        min_count: usize,
        unk_dropout: f64,
    ) -> Result<Self, EmbeddingError> {
        let (vocab, table) = finetuned_table(store, sentences, min_count)?;
        let dim = store.dim;
        let table = params.add("embed.table", table)?;
        Ok(EmbeddingProvider::from_table(EmbeddingMode::Finetuned, table, vocab, dim, unk_dropout))
    }

    /// Rebuilds a table-backed provider around an existing parameter, e.g.
    /// after loading a checkpoint.
    pub fn from_table(
        mode: EmbeddingMode,
        table: ParamId,
        vocab: WordVocab,
        dim: usize,
        unk_dropout: f64,
    ) -> Self {
        EmbeddingProvider {
            mode,
            dim,
            unk_dropout,
            vocab: Some(vocab),
            table: Some(table),
            store: None,
        }
    }

    /// `T × dim` word vectors. Only table-backed modes produce gradients.
    pub fn embed(&self, g: &mut Graph, sentence_id: &str, tokens: &[String]) -> Result<Var, EmbeddingError> {
        match self.mode {
            EmbeddingMode::Frozen => {
                let store = self
                    .store
                    .as_ref()
                    .ok_or_else(|| EmbeddingError::Config("frozen embeddings need a vector store".into()))?;
                let v = stored_vectors(store, sentence_id, tokens.len())?;
                Ok(g.constant(v.clone()))
            }
            EmbeddingMode::Learned | EmbeddingMode::Finetuned => {
                let vocab = self.vocab.as_ref().expect("table modes carry a vocabulary");
                let drop = if g.training() { self.unk_dropout } else { 0.0 };
                let ids: Vec<usize> = tokens
                    .iter()
                    .map(|t| {
                        if drop > 0.0 && g.rng().gen::<f64>() < drop {
                            0
                        } else {
                            vocab.lookup(t)
                        }
                    })
                    .collect();
                let table = g.param(self.table.expect("table modes carry a table"));
                Ok(g.embedding(table, &ids)?)
            }
        }
    }
}

/// Type-level vectors from a store: each word's row is the mean of its
/// stored vectors over `sentences`, and `<unk>` gets the mean of all
/// vectors.
pub fn finetuned_table<'a>(
    store: &VectorStore,
    sentences: impl IntoIterator<Item = (&'a str, &'a [String])>,
    min_count: usize,
) -> Result<(WordVocab, Tensor), EmbeddingError> {
    let sentences: Vec<(&str, &[String])> = sentences.into_iter().collect();
    let vocab = WordVocab::from_tokens(
        sentences.iter().flat_map(|(_, t)| t.iter().map(String::as_str)),
        min_count,
    );
    let dim = store.dim;
    let mut sums = vec![0.0; vocab.len() * dim];
    let mut counts = vec![0usize; vocab.len()];
    for (id, tokens) in &sentences {
        let vectors = stored_vectors(store, id, tokens.len())?;
        for (i, tok) in tokens.iter().enumerate() {
            let word = vocab.lookup(tok);
            let slots: &[usize] = if word == 0 { &[0] } else { &[0, word] };
            for &slot in slots {
                counts[slot] += 1;
                for c in 0..dim {
                    sums[slot * dim + c] += vectors.at(i, c);
                }
            }
        }
    }
    for (row, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums[row * dim..(row + 1) * dim]
                .iter_mut()
                .for_each(|v| *v /= n as f64);
        }
    }
    let table = Tensor::matrix(vocab.len(), dim, sums)?;
    Ok((vocab, table))
}

fn stored_vectors<'s>(store: &'s VectorStore, id: &str, tokens: usize) -> Result<&'s Tensor, EmbeddingError> {
    let v = store
        .get(id)
        .ok_or_else(|| EmbeddingError::MissingSentence(id.to_string()))?;
    if v.rows() != tokens {
        return Err(EmbeddingError::Alignment {
            id: id.to_string(),
            tokens,
            vectors: v.rows(),
        });
    }
    Ok(v)
}
