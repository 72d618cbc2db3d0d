//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use spokenparse::data::{CorpusSource, Sentence};
use spokenparse::embeddings::{EmbeddingConfig, WordVocab};
use spokenparse::encoder::{CnnConfig, EncoderConfig};
use spokenparse::model::{ModelConfig, Parser, WordInput};
use spokenparse::nn::{grad_check, Evaluation, GradCheckConfig, GradCheckReport, Graph, NnError};
use spokenparse::prosody::PatchConfig;
use spokenparse::synthetic::synthesize_speech;
use spokenparse::treebank::{parse_tree, LabelVocab};

/// A small text+prosody parser and a 3-word sentence with speech.
pub fn three_word_setup() -> (Parser, Sentence) {
    let tree = parse_tree("(S (INTJ (UH uh)) (NP (PRP we)) (VP (VBD left)))").unwrap();
    let speech = synthesize_speech(vec![tree.clone()], vec!["s0".into()], vec![vec![0.0, 0.3, 0.02]], 1, 5);
    let patch = PatchConfig {
        context_s: 0.05,
        max_frames: 30,
    };
    let corpus = speech.to_corpus("g", &speech.duration_stats(), patch).unwrap();
    let config = ModelConfig {
        embedding: EmbeddingConfig {
            dim: 6,
            ..Default::default()
        },
        encoder: EncoderConfig {
            layers: 2,
            heads: 2,
            d_content: 8,
            d_position: 4,
            d_prosody: 4,
            d_ff: 12,
            dropout: 0.0,
            max_len: 10,
        },
        cnn: CnnConfig {
            widths: vec![3, 5],
            filters_per_width: 3,
        },
        patch,
        label_hidden: 8,
    };
    let labels = LabelVocab::from_trees([&tree]);
    let vocab = WordVocab::from_tokens(["uh", "we", "left"], 1);
    let parser = Parser::new(&config, labels, WordInput::Learned(vocab), 11).unwrap();
    (parser, corpus.sentences[0].clone())
}

/// Finite-difference check of the full hinge loss on one sentence.
pub fn full_model_check(parser: &Parser, sentence: &Sentence) -> GradCheckReport {
    let mut params = parser.params.clone();
    grad_check(&mut params, GradCheckConfig::default(), |p, need| {
        let mut g = Graph::new(p, false, 0);
        let (loss, _) = parser
            .loss_graph(&mut g, sentence)
            .map_err(|e| NnError::Data(e.to_string()))?;
        Ok(Evaluation {
            loss: g.scalar(loss),
            gradients: if need { Some(g.backward(loss)?) } else { None },
            signature: g.signature(),
        })
    })
    .unwrap()
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic")
}

/// Source for a bundled corpus directory, with its speech files.
pub fn bundled(name: &str) -> CorpusSource {
    let dir = data_dir().join(name);
    let mut s = CorpusSource::new(name, dir.join(format!("{name}.trees")));
    s.ids = Some(dir.join(format!("{name}.ids")));
    s.alignments = Some(dir.join(format!("{name}.align.tsv")));
    s.frames = Some(dir.join("frames"));
    s
}

/// The desk-scale architecture used by the sanity runs.
pub fn small_model(d_prosody: usize) -> ModelConfig {
    ModelConfig {
        embedding: EmbeddingConfig {
            dim: 16,
            min_count: 1,
            unk_dropout: 0.0,
            ..Default::default()
        },
        encoder: EncoderConfig {
            layers: 2,
            heads: 2,
            d_content: 16,
            d_position: 8,
            d_prosody,
            d_ff: 32,
            dropout: 0.0,
            max_len: 40,
        },
        cnn: CnnConfig {
            widths: vec![3, 5],
            filters_per_width: 4,
        },
        patch: PatchConfig::default(),
        label_hidden: 32,
    }
}
