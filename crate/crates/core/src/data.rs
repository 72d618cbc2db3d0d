//! Sentences and corpora as the parser consumes them, and loaders that
//! assemble them from tree, alignment, frame and vector files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embeddings::{parse_vector_store, EmbeddingError, VectorStore};
use crate::prosody::io::{parse_alignments, parse_features, parse_frame_track, SentenceAlignments};
use crate::prosody::{
    corpus_features, normalize_speaker, DurationStats, FrameTrack, PatchConfig, ProsodyError,
    SentenceProsody,
};
use crate::treebank::{parse_ptb, speechify, Tree, TreebankError};

/// Tag given to words read without trees.
pub const UNKNOWN_TAG: &str = "XX";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Treebank {
        path: PathBuf,
        source: TreebankError,
    },
    #[error("{}: {source}", path.display())]
    Prosody {
        path: PathBuf,
        source: ProsodyError,
    },
    #[error("{}: {source}", path.display())]
    Vectors {
        path: PathBuf,
        source: EmbeddingError,
    },
    #[error("sentence {id:?}: no prosodic features")]
    MissingProsody { id: String },
    #[error("sentence {id:?}, word {index}: expected {expected:?}, found {found:?}")]
    WordMismatch {
        id: String,
        index: usize,
        expected: String,
        found: String,
    },
    #[error("sentence {id:?}: {expected} words, but {found} in {what}")]
    LengthMismatch {
        id: String,
        expected: usize,
        found: usize,
        what: &'static str,
    },
    #[error("{}: {message}", path.display())]
    Ids { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// One sentence: words with tags, an optional gold tree and optional
/// prosodic features.
#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub id: String,
    /// Lookup key into vector stores; unique across loaded corpora.
    pub key: String,
    pub leaves: Vec<(String, String)>,
    pub gold: Option<Tree>,
    pub prosody: Option<SentenceProsody>,
}

impl Sentence {
    pub fn from_tree(id: impl Into<String>, tree: Tree) -> Self {
        let id = id.into();
        Sentence {
            key: id.clone(),
            id,
            leaves: tree.leaves(),
            gold: Some(tree),
            prosody: None,
        }
    }

    pub fn from_words(id: impl Into<String>, words: &[String]) -> Self {
        let id = id.into();
        Sentence {
            key: id.clone(),
            id,
            leaves: words.iter().map(|w| (w.clone(), UNKNOWN_TAG.to_string())).collect(),
            gold: None,
            prosody: None,
        }
    }

    pub fn words(&self) -> Vec<String> {
        self.leaves.iter().map(|(w, _)| w.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    /// Attaches features after checking that they cover the same words.
    pub fn set_prosody(&mut self, prosody: SentenceProsody) -> Result<(), DataError> {
        check_words(&self.id, &self.leaves, &prosody.words, "prosodic features")?;
        self.prosody = Some(prosody);
        Ok(())
    }
}

fn check_words(
    id: &str,
    leaves: &[(String, String)],
    words: &[String],
    what: &'static str,
) -> Result<(), DataError> {
    if leaves.len() != words.len() {
        return Err(DataError::LengthMismatch {
            id: id.to_string(),
            expected: leaves.len(),
            found: words.len(),
            what,
        });
    }
    for (index, ((w, _), other)) in leaves.iter().zip(words).enumerate() {
        if w.to_lowercase() != other.to_lowercase() {
            return Err(DataError::WordMismatch {
                id: id.to_string(),
                index,
                expected: w.clone(),
                found: other.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, sentences: Vec<Sentence>) -> Self {
        Corpus {
            name: name.into(),
            sentences,
        }
    }

    /// Sentence `i` gets `ids[i]`, or its index when `ids` is `None`.
    pub fn from_trees(name: impl Into<String>, trees: Vec<Tree>, ids: Option<Vec<String>>) -> Self {
        let name = name.into();
        let sentences = trees
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let id = ids.as_ref().map_or_else(|| i.to_string(), |ids| ids[i].clone());
                let mut s = Sentence::from_tree(id, t);
                s.key = format!("{name}/{}", s.id);
                s
            })
            .collect();
        Corpus { name, sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn gold_trees(&self) -> Vec<Tree> {
        self.sentences.iter().filter_map(|s| s.gold.clone()).collect()
    }

    pub fn has_prosody(&self) -> bool {
        !self.sentences.is_empty() && self.sentences.iter().all(|s| s.prosody.is_some())
    }

    /// Attaches features by sentence id; every sentence must be covered.
    pub fn attach_prosody(&mut self, features: Vec<SentenceProsody>) -> Result<(), DataError> {
        let mut by_id: HashMap<String, SentenceProsody> =
            features.into_iter().map(|f| (f.sentence_id.clone(), f)).collect();
        for s in &mut self.sentences {
            let f = by_id
                .remove(&s.id)
                .ok_or_else(|| DataError::MissingProsody { id: s.id.clone() })?;
            s.set_prosody(f)?;
        }
        Ok(())
    }

    /// Re-keys a per-corpus store so its ids match [`Sentence::key`].
    pub fn keyed_store(&self, store: &VectorStore) -> Result<VectorStore, EmbeddingError> {
        let mut out = VectorStore::new(store.dim, store.producer.clone());
        for s in &self.sentences {
            if let Some(v) = store.get(&s.id) {
                out.insert(s.key.clone(), v.clone())?;
            }
        }
        Ok(out)
    }
}

/// How to assemble one corpus from files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub name: String,
    /// Bracketed trees, any number per line.
    pub trees: PathBuf,
    /// One sentence id per line, aligned with the trees.
    #[serde(default)]
    pub ids: Option<PathBuf>,
    /// Word alignments (TSV); requires `frames` unless `features` is set.
    #[serde(default)]
    pub alignments: Option<PathBuf>,
    /// Directory of `<speaker_id>.csv` frame tracks.
    #[serde(default)]
    pub frames: Option<PathBuf>,
    /// Precomputed features (output of the `features` command).
    #[serde(default)]
    pub features: Option<PathBuf>,
    /// Precomputed word-vector store for frozen or fine-tuned embeddings.
    #[serde(default)]
    pub vectors: Option<PathBuf>,
    /// Lowercase and strip punctuation, as for transcribed speech.
    #[serde(default = "yes")]
    pub speechify: bool,
    /// Sampling weight when mixing training corpora.
    #[serde(default = "one")]
    pub weight: f64,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

impl CorpusSource {
    pub fn new(name: impl Into<String>, trees: impl Into<PathBuf>) -> Self {
        CorpusSource {
            name: name.into(),
            trees: trees.into(),
            ids: None,
            alignments: None,
            frames: None,
            features: None,
            vectors: None,
            speechify: true,
            weight: 1.0,
        }
    }

    /// Every path this source refers to.
    pub fn paths(&self) -> Vec<&Path> {
        let mut p = vec![self.trees.as_path()];
        for x in [&self.ids, &self.alignments, &self.frames, &self.features, &self.vectors]
            .into_iter()
            .flatten()
        {
            p.push(x.as_path());
        }
        p
    }

    pub fn has_prosody(&self) -> bool {
        self.features.is_some() || (self.alignments.is_some() && self.frames.is_some())
    }

    /// Relative paths are taken relative to `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.trees);
        for o in [
            &mut self.ids,
            &mut self.alignments,
            &mut self.frames,
            &mut self.features,
            &mut self.vectors,
        ] {
            if let Some(p) = o.as_mut() {
                fix(p);
            }
        }
    }
}

pub fn read_file(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads trees, optionally speechified. Trees left without words are
/// dropped together with their ids.
pub fn read_trees(
    path: &Path,
    speechify_trees: bool,
    ids: Option<Vec<String>>,
) -> Result<(Vec<Tree>, Vec<String>), DataError> {
    let text = read_file(path)?;
    let trees = parse_ptb(&text).map_err(|source| DataError::Treebank {
        path: path.to_path_buf(),
        source,
    })?;
    let ids = match ids {
        Some(ids) if ids.len() != trees.len() => {
            return Err(DataError::Ids {
                path: path.to_path_buf(),
                message: format!("{} ids for {} trees", ids.len(), trees.len()),
            })
        }
        Some(ids) => ids,
        None => (0..trees.len()).map(|i| i.to_string()).collect(),
    };
    let mut kept = Vec::with_capacity(trees.len());
    let mut kept_ids = Vec::with_capacity(trees.len());
    for (tree, id) in trees.into_iter().zip(ids) {
        let tree = if speechify_trees {
            match speechify(&tree) {
                Ok(t) => t,
                Err(TreebankError::Rejected(why)) => {
                    log::warn!("{}: dropping sentence {id}: {why}", path.display());
                    continue;
                }
                Err(source) => {
                    return Err(DataError::Treebank {
                        path: path.to_path_buf(),
                        source,
                    })
                }
            }
        } else {
            tree
        };
        kept.push(tree);
        kept_ids.push(id);
    }
    Ok((kept, kept_ids))
}

pub fn read_ids(path: &Path) -> Result<Vec<String>, DataError> {
    let text = read_file(path)?;
    let ids: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(DataError::Ids {
            path: path.to_path_buf(),
            message: "duplicate sentence ids".into(),
        });
    }
    Ok(ids)
}

/// One whitespace-tokenized sentence per non-empty line, with ids from
/// `ids` or 0-based line order.
pub fn read_token_lines(path: &Path, ids: Option<Vec<String>>) -> Result<Vec<Sentence>, DataError> {
    let text = read_file(path)?;
    let lines: Vec<Vec<String>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::to_lowercase).collect())
        .collect();
    if let Some(ids) = &ids {
        if ids.len() != lines.len() {
            return Err(DataError::Ids {
                path: path.to_path_buf(),
                message: format!("{} ids for {} sentences", ids.len(), lines.len()),
            });
        }
    }
    Ok(lines
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let id = ids.as_ref().map_or_else(|| i.to_string(), |ids| ids[i].clone());
            Sentence::from_words(id, w)
        })
        .collect())
}

pub fn read_alignments(path: &Path) -> Result<SentenceAlignments, DataError> {
    parse_alignments(&read_file(path)?).map_err(|source| DataError::Prosody {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads and speaker-normalizes `<dir>/<speaker>.csv` for every speaker in
/// `alignments`.
pub fn read_frame_tracks(
    dir: &Path,
    alignments: &SentenceAlignments,
) -> Result<BTreeMap<String, FrameTrack>, DataError> {
    let speakers: BTreeSet<&str> = alignments
        .iter()
        .flat_map(|(_, words)| words.iter().map(|w| w.speaker_id.as_str()))
        .collect();
    let mut tracks = BTreeMap::new();
    for speaker in speakers {
        let path = dir.join(format!("{speaker}.csv"));
        let text = read_file(&path)?;
        let track = parse_frame_track(&text).map_err(|source| DataError::Prosody {
            path: path.clone(),
            source,
        })?;
        tracks.insert(speaker.to_string(), track);
    }
    let (tracks, _warnings) = normalize_speaker(&tracks).map_err(|source| DataError::Prosody {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(tracks)
}

/// Features for every sentence of an alignment file.
pub fn build_features(
    alignments_path: &Path,
    frames_dir: &Path,
    stats: &DurationStats,
    patch: PatchConfig,
) -> Result<Vec<SentenceProsody>, DataError> {
    let alignments = read_alignments(alignments_path)?;
    let tracks = read_frame_tracks(frames_dir, &alignments)?;
    corpus_features(&alignments, &tracks, stats, patch).map_err(|source| DataError::Prosody {
        path: alignments_path.to_path_buf(),
        source,
    })
}

pub fn read_features(path: &Path) -> Result<Vec<SentenceProsody>, DataError> {
    parse_features(&read_file(path)?).map_err(|source| DataError::Prosody {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_vector_store(path: &Path) -> Result<VectorStore, DataError> {
    let (store, warnings) = parse_vector_store(&read_file(path)?).map_err(|source| DataError::Vectors {
        path: path.to_path_buf(),
        source,
    })?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(store)
}

/// Duration statistics over the alignment files of `sources`.
pub fn duration_stats(sources: &[CorpusSource]) -> Result<DurationStats, DataError> {
    let mut all = Vec::new();
    for s in sources {
        if let Some(p) = &s.alignments {
            for (_, words) in read_alignments(p)? {
                all.extend(words);
            }
        }
    }
    Ok(DurationStats::from_alignments(&all))
}

/// Loads trees and, when requested, prosodic features for one source.
pub fn load_corpus(
    source: &CorpusSource,
    prosody: Option<(&DurationStats, PatchConfig)>,
) -> Result<Corpus, DataError> {
    let ids = source.ids.as_deref().map(read_ids).transpose()?;
    let (trees, ids) = read_trees(&source.trees, source.speechify, ids)?;
    let mut corpus = Corpus::from_trees(source.name.clone(), trees, Some(ids));
    if let Some((stats, patch)) = prosody {
        let features = match (&source.features, &source.alignments, &source.frames) {
            (Some(f), _, _) => read_features(f)?,
            (None, Some(a), Some(fr)) => build_features(a, fr, stats, patch)?,
            _ => {
                return Err(DataError::Invalid(format!(
                    "corpus {:?} has no prosody: set `features` or both `alignments` and `frames`",
                    source.name
                )))
            }
        };
        corpus.attach_prosody(features)?;
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prosody::{FramePatch, PauseDuration};
    use crate::treebank::parse_tree;

    fn prosody(id: &str, words: &[&str]) -> SentenceProsody {
        SentenceProsody {
            sentence_id: id.into(),
            words: words.iter().map(|w| w.to_string()).collect(),
            pause_duration: vec![
                PauseDuration {
                    pause_before_bucket: 0,
                    pause_after_bucket: 0,
                    duration_norm: 1.0,
                    duration_raw: 0.2,
                };
                words.len()
            ],
            patches: vec![
                FramePatch {
                    frames: vec![[0.0, 0.0]],
                    word_interior_mask: vec![true],
                };
                words.len()
            ],
        }
    }

    #[test]
    fn attach_checks_words() {
        let t = parse_tree("(S (NP (PRP i)) (VP (VBP agree)))").unwrap();
        let mut c = Corpus::from_trees("c", vec![t], None);
        assert_eq!(c.sentences[0].key, "c/0");
        assert!(matches!(
            c.clone().attach_prosody(vec![prosody("0", &["i", "disagree"])]),
            Err(DataError::WordMismatch { index: 1, .. })
        ));
        assert!(matches!(
            c.clone().attach_prosody(vec![prosody("1", &["i", "agree"])]),
            Err(DataError::MissingProsody { .. })
        ));
        c.attach_prosody(vec![prosody("0", &["I", "agree"])]).unwrap();
        assert!(c.has_prosody());
    }
}
