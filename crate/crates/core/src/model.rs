//! The complete parser: embeddings, prosody front end, encoder and span
//! scorer, with training loss, decoding and checkpoint I/O.

use std::hash::{Hash, Hasher};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sentence;
use crate::decoder::{
    cky_decode, margin_loss, span_count, span_row, DecodedTree, DecoderError, MarginLoss, SpanScorer, SpanScores,
};
use crate::embeddings::{EmbeddingConfig, EmbeddingError, EmbeddingMode, EmbeddingProvider, VectorStore, WordVocab};
use crate::encoder::{CnnConfig, EncodedSentence, Encoder, EncoderConfig, EncoderError, ProsodyFeaturizer};
use crate::nn::{read_checkpoint, write_checkpoint, Gradients, Graph, NnError, ParamStore, Tensor, Var};
use crate::prosody::{DurationStats, PatchConfig};
use crate::treebank::{tree_to_spans, LabelVocab, TreebankError};

pub const MODEL_FORMAT: &str = "spokenparse-model/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding: EmbeddingConfig,
    pub encoder: EncoderConfig,
    pub cnn: CnnConfig,
    pub patch: PatchConfig,
    /// Hidden width of the span scorer.
    pub label_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding: EmbeddingConfig::default(),
            encoder: EncoderConfig::default(),
            cnn: CnnConfig::default(),
            patch: PatchConfig::default(),
            label_hidden: 250,
        }
    }
}

impl ModelConfig {
    pub fn uses_prosody(&self) -> bool {
        self.encoder.d_prosody > 0
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate()?;
        if self.uses_prosody() {
            self.cnn.validate(self.patch.max_frames)?;
        }
        if self.label_hidden == 0 {
            return Err(ModelError::Config("label_hidden must be positive".into()));
        }
        if self.embedding.mode != EmbeddingMode::Frozen && self.embedding.dim == 0 {
            return Err(ModelError::Config("embedding dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.embedding.unk_dropout) {
            return Err(ModelError::Config("unk_dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("sentence {0:?}: the model uses prosody but the sentence has no prosodic features")]
    MissingProsody(String),
    #[error("sentence {0:?} has no gold tree")]
    MissingGold(String),
    #[error("labels not in the model's vocabulary: {}", .0.join(", "))]
    Vocabulary(Vec<String>),
    #[error("{0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl From<TreebankError> for ModelError {
    fn from(e: TreebankError) -> Self {
        ModelError::Decoder(DecoderError::Gold(e))
    }
}

/// How word vectors are supplied when building a parser.
pub enum WordInput {
    Learned(WordVocab),
    Frozen(Arc<VectorStore>),
    Finetuned { vocab: WordVocab, table: Tensor },
}

/// Everything besides the parameter values needed to rebuild a parser.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub format: String,
    pub config: ModelConfig,
    pub labels: LabelVocab,
    pub embed_dim: usize,
    pub words: Option<WordVocab>,
    pub vector_producer: Option<String>,
    pub duration_stats: Option<DurationStats>,
    /// Checkpoints this model was fine-tuned from, oldest first.
    pub lineage: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Parser {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub labels: LabelVocab,
    pub embedding: EmbeddingProvider,
    pub prosody: Option<ProsodyFeaturizer>,
    pub encoder: Encoder,
    pub scorer: SpanScorer,
    pub duration_stats: Option<DurationStats>,
    pub lineage: Vec<String>,
}

/// Loss and gradients for one sentence.
pub struct SentenceLoss {
    pub loss: f64,
    pub gradients: Gradients,
}

impl Parser {
    pub fn new(config: &ModelConfig, labels: LabelVocab, words: WordInput, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if labels.len() < 2 {
            return Err(ModelError::Config("label vocabulary has no constituent labels".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let emb = &config.embedding;
        let embedding = match words {
            WordInput::Learned(vocab) => {
                EmbeddingProvider::learned(&mut params, vocab, emb.dim, emb.unk_dropout, &mut rng)?
            }
            WordInput::Frozen(store) => {
                if store.dim == 0 {
                    return Err(ModelError::Config("vector store has dimension 0".into()));
                }
                EmbeddingProvider::frozen(store)
            }
            WordInput::Finetuned { vocab, table } => {
                let dim = table.cols();
                let id = params.add("embed.table", table)?;
                EmbeddingProvider::from_table(EmbeddingMode::Finetuned, id, vocab, dim, emb.unk_dropout)
            }
        };
        if embedding.mode != emb.mode {
            return Err(ModelError::Config(format!(
                "configured embedding mode {:?} does not match the supplied vectors ({:?})",
                emb.mode, embedding.mode
            )));
        }
        let prosody = if config.uses_prosody() {
            Some(ProsodyFeaturizer::new(&mut params, &config.cnn, &mut rng)?)
        } else {
            None
        };
        let d_prosody_in = prosody.as_ref().map_or(0, |p| p.output_dim());
        let encoder = Encoder::new(&mut params, &config.encoder, embedding.dim, d_prosody_in, &mut rng)?;
        let scorer = SpanScorer::new(
            &mut params,
            config.encoder.d_total(),
            config.label_hidden,
            labels.len(),
            &mut rng,
        )?;
        Ok(Parser {
            config: config.clone(),
            params,
            labels,
            embedding,
            prosody,
            encoder,
            scorer,
            duration_stats: None,
            lineage: Vec::new(),
        })
    }

    pub fn uses_prosody(&self) -> bool {
        self.prosody.is_some()
    }

    pub fn encode(&self, g: &mut Graph, sentence: &Sentence) -> Result<EncodedSentence, ModelError> {
        let words = sentence.words();
        if words.is_empty() {
            return Err(ModelError::Config(format!("sentence {:?} is empty", sentence.id)));
        }
        let e = self.embedding.embed(g, &sentence.key, &words)?;
        let x = match &self.prosody {
            Some(front) => {
                let p = sentence
                    .prosody
                    .as_ref()
                    .ok_or_else(|| ModelError::MissingProsody(sentence.id.clone()))?;
                Some(front.forward(g, p)?)
            }
            None => None,
        };
        Ok(self.encoder.encode(g, e, x)?)
    }

    /// Span scores in evaluation mode.
    pub fn span_scores(&self, sentence: &Sentence) -> Result<SpanScores, ModelError> {
        let mut g = Graph::new(&self.params, false, 0);
        let enc = self.encode(&mut g, sentence)?;
        Ok(self.scorer.score(&mut g, &enc)?.scores)
    }

    pub fn parse(&self, sentence: &Sentence) -> Result<DecodedTree, ModelError> {
        let scores = self.span_scores(sentence)?;
        Ok(cky_decode(&scores, &self.labels, &sentence.leaves))
    }

    /// Builds the hinge loss for one sentence on `g`. The returned variable
    /// is `s(T̂) + Δ − s(T*)`; the augmented argmax is folded into the
    /// graph signature.
    pub fn loss_graph(&self, g: &mut Graph, sentence: &Sentence) -> Result<(Var, MarginLoss), ModelError> {
        let gold = sentence
            .gold
            .as_ref()
            .ok_or_else(|| ModelError::MissingGold(sentence.id.clone()))?;
        let unknown = self.labels.unknown_labels(gold);
        if !unknown.is_empty() {
            return Err(ModelError::Vocabulary(unknown));
        }
        let enc = self.encode(g, sentence)?;
        let scored = self.scorer.score(g, &enc)?;
        let m = margin_loss(&scored.scores, &tree_to_spans(gold), &self.labels)?;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        m.augmented.hash(&mut h);
        g.mark(h.finish());

        let n = sentence.len();
        let cols = self.labels.len() - 1;
        let mut w = Tensor::zeros(span_count(n), cols);
        for &(a, b, l) in &m.predicted {
            w.data_mut()[span_row(a, b, n) * cols + l - 1] += 1.0;
        }
        for &(a, b, l) in &m.gold {
            w.data_mut()[span_row(a, b, n) * cols + l - 1] -= 1.0;
        }
        let diff = g.weighted_sum(scored.var, w)?;
        let cost = g.constant(Tensor::scalar(m.cost));
        let loss = g.add(diff, cost)?;
        Ok((loss, m))
    }

    /// Training-mode loss and gradients; `seed` drives dropout.
    pub fn sentence_loss(&self, sentence: &Sentence, seed: u64) -> Result<SentenceLoss, ModelError> {
        let mut g = Graph::new(&self.params, true, seed);
        let (loss, m) = self.loss_graph(&mut g, sentence)?;
        if !m.loss.is_finite() {
            return Err(NnError::Numeric(format!("loss for sentence {:?}", sentence.id)).into());
        }
        let gradients = if m.loss > 0.0 {
            g.backward(loss)?
        } else {
            Gradients::default()
        };
        Ok(SentenceLoss { loss: m.loss, gradients })
    }

    /// Rebuilds a parser skeleton from metadata; frozen models need their
    /// vector store.
    pub fn from_metadata(meta: &ModelMetadata, store: Option<Arc<VectorStore>>) -> Result<Self, ModelError> {
        if meta.format != MODEL_FORMAT {
            return Err(ModelError::Checkpoint(format!("unsupported model format {:?}", meta.format)));
        }
        let words = match meta.config.embedding.mode {
            EmbeddingMode::Learned => WordInput::Learned(
                meta.words
                    .clone()
                    .ok_or_else(|| ModelError::Checkpoint("learned embeddings without a vocabulary".into()))?,
            ),
            EmbeddingMode::Finetuned => {
                let vocab = meta
                    .words
                    .clone()
                    .ok_or_else(|| ModelError::Checkpoint("fine-tuned embeddings without a vocabulary".into()))?;
                let table = Tensor::zeros(vocab.len(), meta.embed_dim);
                WordInput::Finetuned { vocab, table }
            }
            EmbeddingMode::Frozen => {
                let store = store.ok_or_else(|| {
                    ModelError::Config("this model reads frozen word vectors; supply a vector store".into())
                })?;
                if store.dim != meta.embed_dim {
                    return Err(ModelError::Config(format!(
                        "vector store has dim {} but the model expects {}",
                        store.dim, meta.embed_dim
                    )));
                }
                WordInput::Frozen(store)
            }
        };
        let mut p = Parser::new(&meta.config, meta.labels.clone(), words, 0)?;
        p.duration_stats = meta.duration_stats.clone();
        p.lineage = meta.lineage.clone();
        Ok(p)
    }

    pub fn metadata(&self) -> ModelMetadata {
        ModelMetadata {
            format: MODEL_FORMAT.to_string(),
            config: self.config.clone(),
            labels: self.labels.clone(),
            embed_dim: self.embedding.dim,
            words: self.embedding.vocab.clone(),
            vector_producer: self.embedding.store.as_ref().map(|s| s.producer.clone()),
            duration_stats: self.duration_stats.clone(),
            lineage: self.lineage.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let meta = serde_json::to_string(&self.metadata()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        let file = std::fs::File::create(&tmp).map_err(NnError::from)?;
        write_checkpoint(std::io::BufWriter::new(file), &meta, &self.params.named_values())?;
        std::fs::rename(&tmp, path).map_err(NnError::from)?;
        Ok(())
    }

    pub fn read_metadata(path: &Path) -> Result<(ModelMetadata, Vec<(String, Tensor)>), ModelError> {
        let file = std::fs::File::open(path)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ckpt = read_checkpoint(std::io::BufReader::new(file))
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        let meta: ModelMetadata = serde_json::from_str(&ckpt.metadata)
            .map_err(|e| ModelError::Checkpoint(format!("{}: metadata: {e}", path.display())))?;
        Ok((meta, ckpt.params))
    }

    pub fn load(path: &Path, store: Option<Arc<VectorStore>>) -> Result<Self, ModelError> {
        let (meta, values) = Parser::read_metadata(path)?;
        let mut p = Parser::from_metadata(&meta, store)?;
        p.params.assign_from(values)?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_tree;

    fn tiny() -> ModelConfig {
        ModelConfig {
            embedding: EmbeddingConfig {
                dim: 8,
                ..Default::default()
            },
            encoder: EncoderConfig {
                layers: 1,
                heads: 2,
                d_content: 8,
                d_position: 4,
                d_prosody: 0,
                d_ff: 8,
                dropout: 0.1,
                max_len: 16,
            },
            cnn: CnnConfig {
                widths: vec![3],
                filters_per_width: 2,
            },
            patch: PatchConfig::default(),
            label_hidden: 8,
        }
    }

    fn sentence() -> Sentence {
        Sentence::from_tree("0", parse_tree("(S (NP (PRP i)) (VP (VBP agree)))").unwrap())
    }

    fn parser() -> Parser {
        let s = sentence();
        let labels = LabelVocab::from_trees([s.gold.as_ref().unwrap()]);
        let vocab = WordVocab::from_tokens(["i", "i", "agree", "agree"], 2);
        Parser::new(&tiny(), labels, WordInput::Learned(vocab), 7).unwrap()
    }

    #[test]
    fn parse_returns_tree_over_the_sentence() {
        let p = parser();
        let d = p.parse(&sentence()).unwrap();
        assert_eq!(d.tree.words(), vec!["i", "agree"]);
    }

    #[test]
    fn loss_is_non_negative_and_has_gradients() {
        let p = parser();
        let l = p.sentence_loss(&sentence(), 3).unwrap();
        assert!(l.loss >= 0.0);
        if l.loss > 0.0 {
            let table = p.params.id("embed.table").unwrap();
            assert!(l.gradients.get(table).is_some());
        }
    }

    #[test]
    fn unknown_gold_label_is_vocabulary_error() {
        let p = parser();
        let s = Sentence::from_tree("1", parse_tree("(FRAG (NP (PRP i)) (VP (VBP agree)))").unwrap());
        assert!(matches!(p.sentence_loss(&s, 0), Err(ModelError::Vocabulary(v)) if v == ["FRAG"]));
    }

    #[test]
    fn missing_prosody_is_reported() {
        let mut cfg = tiny();
        cfg.encoder.d_prosody = 4;
        let s = sentence();
        let labels = LabelVocab::from_trees([s.gold.as_ref().unwrap()]);
        let p = Parser::new(&cfg, labels, WordInput::Learned(WordVocab::from_tokens([], 2)), 0).unwrap();
        assert!(matches!(p.parse(&s), Err(ModelError::MissingProsody(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = parser();
        p.save(&path).unwrap();
        let q = Parser::load(&path, None).unwrap();
        assert_eq!(p.params.named_values(), q.params.named_values());
        assert_eq!(p.span_scores(&sentence()).unwrap(), q.span_scores(&sentence()).unwrap());
    }
}
