//! Deterministic synthetic data: a small speech-style treebank, a corpus
//! whose bracketing is recoverable only from pauses, fake word alignments
//! and frame tracks to go with them, and random trees for property tests.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Corpus, DataError};
use crate::prosody::io::{write_alignments, write_frame_track, SentenceAlignments};
use crate::prosody::{
    corpus_features, normalize_speaker, DurationStats, FrameTrack, PatchConfig, WordAlignment,
    DEFAULT_FRAME_PERIOD,
};
use crate::treebank::{write_trees, Tree};

/// Pause long enough to land in the second-longest pause bucket.
pub const CUE_PAUSE: f64 = 1.2;

/// Trees with matching fake speech.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub trees: Vec<Tree>,
    pub ids: Vec<String>,
    pub alignments: SentenceAlignments,
    pub tracks: BTreeMap<String, FrameTrack>,
}

impl SyntheticCorpus {
    /// Builds an in-memory corpus with prosodic features attached.
    pub fn to_corpus(&self, name: &str, stats: &DurationStats, patch: PatchConfig) -> Result<Corpus, DataError> {
        let mut corpus = Corpus::from_trees(name, self.trees.clone(), Some(self.ids.clone()));
        let (tracks, _) = normalize_speaker(&self.tracks).map_err(|source| DataError::Prosody {
            path: name.into(),
            source,
        })?;
        let features = corpus_features(&self.alignments, &tracks, stats, patch).map_err(|source| {
            DataError::Prosody {
                path: name.into(),
                source,
            }
        })?;
        corpus.attach_prosody(features)?;
        Ok(corpus)
    }

    pub fn duration_stats(&self) -> DurationStats {
        DurationStats::from_alignments(self.alignments.iter().flat_map(|(_, w)| w))
    }

    /// Writes `<stem>.trees`, `<stem>.ids`, `<stem>.align.tsv` and
    /// `frames/<speaker>.csv` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(dir.join("frames"))?;
        std::fs::write(dir.join(format!("{stem}.trees")), write_trees(&self.trees))?;
        std::fs::write(dir.join(format!("{stem}.ids")), self.ids.join("\n") + "\n")?;
        std::fs::write(dir.join(format!("{stem}.align.tsv")), write_alignments(&self.alignments))?;
        for (speaker, track) in &self.tracks {
            std::fs::write(dir.join("frames").join(format!("{speaker}.csv")), write_frame_track(track))?;
        }
        Ok(())
    }

    /// Splits off the sentences from `at` onwards. Both halves keep all
    /// frame tracks.
    pub fn split_at(&self, at: usize) -> (SyntheticCorpus, SyntheticCorpus) {
        let part = |r: std::ops::Range<usize>| SyntheticCorpus {
            trees: self.trees[r.clone()].to_vec(),
            ids: self.ids[r.clone()].to_vec(),
            alignments: self.alignments[r].to_vec(),
            tracks: self.tracks.clone(),
        };
        (part(0..at), part(at..self.trees.len()))
    }
}

fn leaf(word: &str, tag: &str) -> Tree {
    Tree::leaf(word, tag)
}

fn node(label: &str, children: Vec<Tree>) -> Tree {
    Tree::node(label, children)
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("non-empty word list")
}

const DET: &[&str] = &["the", "a"];
const NOUN: &[&str] = &["dog", "cat", "man", "park", "telescope", "ball", "house", "friend"];
const PRON: &[&str] = &["i", "you", "we", "they"];
const TRANSITIVE: &[&str] = &["saw", "liked", "found", "took"];
const INTRANSITIVE: &[&str] = &["slept", "left", "laughed"];
/// Prepositions that attach to the verb phrase.
const PREP_VP: &[&str] = &["with", "in"];
/// Prepositions that attach to the noun phrase.
const PREP_NP: &[&str] = &["of", "near"];
const FILLER: &[&str] = &["uh", "um", "well"];

fn simple_np(rng: &mut ChaCha8Rng) -> Tree {
    node("NP", vec![leaf(pick(rng, DET), "DT"), leaf(pick(rng, NOUN), "NN")])
}

fn subject(rng: &mut ChaCha8Rng) -> Tree {
    if rng.gen_bool(0.5) {
        node("NP", vec![leaf(pick(rng, PRON), "PRP")])
    } else {
        simple_np(rng)
    }
}

fn object(rng: &mut ChaCha8Rng) -> Tree {
    if rng.gen_bool(0.3) {
        let pp = node("PP", vec![leaf(pick(rng, PREP_NP), "IN"), simple_np(rng)]);
        node("NP", vec![simple_np(rng), pp])
    } else {
        simple_np(rng)
    }
}

fn verb_phrase(rng: &mut ChaCha8Rng) -> Tree {
    let r: f64 = rng.gen();
    if r < 0.25 {
        node("VP", vec![leaf(pick(rng, INTRANSITIVE), "VBD")])
    } else if r < 0.7 {
        node("VP", vec![leaf(pick(rng, TRANSITIVE), "VBD"), object(rng)])
    } else {
        let pp = node("PP", vec![leaf(pick(rng, PREP_VP), "IN"), simple_np(rng)]);
        node("VP", vec![leaf(pick(rng, TRANSITIVE), "VBD"), object(rng), pp])
    }
}

/// Pauses (seconds) before each word of a toy sentence: short gaps, a
/// longer one after a filler or a repaired phrase.
fn toy_pauses(rng: &mut ChaCha8Rng, tree: &Tree) -> Vec<f64> {
    let mut pauses = Vec::new();
    let mut extra = 0.0;
    for child in tree.children() {
        let n = child.leaves().len();
        for i in 0..n {
            let base = if pauses.is_empty() { 0.0 } else { rng.gen_range(0.0..0.03) };
            pauses.push(if i == 0 { base + extra } else { base });
        }
        extra = match child.label() {
            "INTJ" => 0.12,
            "EDITED" => 0.25,
            _ => 0.0,
        };
    }
    pauses
}

/// A treebank from a small grammar: subject, verb phrase, prepositional
/// phrases whose attachment is fixed by the preposition, and occasional
/// fillers (INTJ) and repaired subjects (EDITED).
pub fn toy_treebank(n: usize, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(n);
    let mut pauses = Vec::with_capacity(n);
    for _ in 0..n {
        let mut children = Vec::new();
        if rng.gen_bool(0.2) {
            children.push(node("INTJ", vec![leaf(pick(&mut rng, FILLER), "UH")]));
        }
        let subj = subject(&mut rng);
        if rng.gen_bool(0.15) {
            children.push(node("EDITED", vec![subj.clone()]));
        }
        children.push(subj);
        children.push(verb_phrase(&mut rng));
        let tree = node("S", children);
        pauses.push(toy_pauses(&mut rng, &tree));
        trees.push(tree);
    }
    let ids = (0..n).map(|i| format!("toy{i:04}")).collect();
    speak(trees, ids, pauses, 4, &mut rng)
}

const SYLLABLES: &[&str] = &[
    "ba", "di", "ko", "mu", "ne", "pa", "ri", "so", "tu", "ve", "wo", "za", "gi", "lo", "fe", "hu",
];

/// Length of sentences in [`ambiguity_corpus`].
pub const AMBIGUITY_LEN: usize = 8;

/// Left- (`L`) or right-branching (`R`) chain over the words under an `X`
/// root.
pub fn chain_tree(words: &[String], right: bool) -> Tree {
    let leaves: Vec<Tree> = words.iter().map(|w| leaf(w, "W")).collect();
    let n = leaves.len();
    if right {
        let mut t = node("R", vec![leaves[n - 2].clone(), leaves[n - 1].clone()]);
        for i in (1..n - 2).rev() {
            t = node("R", vec![leaves[i].clone(), t]);
        }
        node("X", vec![leaves[0].clone(), t])
    } else {
        let mut t = node("L", vec![leaves[0].clone(), leaves[1].clone()]);
        for l in leaves.iter().take(n - 1).skip(2) {
            t = node("L", vec![t, l.clone()]);
        }
        node("X", vec![t, leaves[n - 1].clone()])
    }
}

/// Sentences of random nonsense words, each word sequence appearing twice:
/// once right-branching, marked by a long pause after the first word, and
/// once left-branching, marked by a long pause before the last word.
/// `pairs` word sequences give `2 · pairs` sentences.
pub fn ambiguity_corpus(pairs: usize, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(2 * pairs);
    let mut pauses = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let words: Vec<String> = (0..AMBIGUITY_LEN)
            .map(|_| format!("{}{}", pick(&mut rng, SYLLABLES), pick(&mut rng, SYLLABLES)))
            .collect();
        let first_right = rng.gen_bool(0.5);
        for right in [first_right, !first_right] {
            let mut p: Vec<f64> = (0..AMBIGUITY_LEN)
                .map(|i| if i == 0 { 0.0 } else { rng.gen_range(0.0..0.03) })
                .collect();
            if right {
                p[1] = CUE_PAUSE;
            } else {
                p[AMBIGUITY_LEN - 1] = CUE_PAUSE;
            }
            trees.push(chain_tree(&words, right));
            pauses.push(p);
        }
    }
    let ids = (0..trees.len()).map(|i| format!("amb{i:05}")).collect();
    speak(trees, ids, pauses, 4, &mut rng)
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Fake speech for `trees`, given the pause (seconds) before every word.
pub fn synthesize_speech(
    trees: Vec<Tree>,
    ids: Vec<String>,
    pauses: Vec<Vec<f64>>,
    speakers: usize,
    seed: u64,
) -> SyntheticCorpus {
    speak(trees, ids, pauses, speakers.max(1), &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Lays the sentences out on per-speaker timelines (round robin) and
/// renders energy and pitch tracks: voiced, louder frames inside words with
/// a falling pitch contour, quiet unvoiced frames in pauses.
fn speak(
    trees: Vec<Tree>,
    ids: Vec<String>,
    pauses: Vec<Vec<f64>>,
    speakers: usize,
    rng: &mut ChaCha8Rng,
) -> SyntheticCorpus {
    const GAP: f64 = 0.5;
    let period = DEFAULT_FRAME_PERIOD;
    let mut clock = vec![GAP; speakers];
    let mut spans: Vec<Vec<(f64, f64)>> = vec![Vec::new(); speakers];
    let mut alignments = Vec::with_capacity(trees.len());
    for (i, (tree, before)) in trees.iter().zip(&pauses).enumerate() {
        let s = i % speakers;
        let speaker = format!("spk{s}");
        let mut words = Vec::new();
        for ((w, _), pause) in tree.leaves().iter().zip(before) {
            let start = round3(clock[s] + pause);
            let dur = 0.12 + 0.03 * w.chars().count() as f64 + rng.gen_range(0.0..0.05);
            let end = round3(start + dur);
            words.push(WordAlignment::new(w.clone(), start, end, speaker.clone()));
            spans[s].push((start, end));
            clock[s] = end;
        }
        clock[s] += GAP;
        alignments.push((ids[i].clone(), words));
    }
    let mut tracks = BTreeMap::new();
    for s in 0..speakers {
        let frames = (clock[s] / period).ceil() as usize + 1;
        let mut energy = Vec::with_capacity(frames);
        let mut f0 = Vec::with_capacity(frames);
        let base_pitch = 100.0 + 30.0 * s as f64;
        let mut word = 0;
        for f in 0..frames {
            let t = f as f64 * period;
            while word < spans[s].len() && spans[s][word].1 <= t {
                word += 1;
            }
            match spans[s].get(word) {
                Some(&(a, b)) if t >= a => {
                    let pos = (t - a) / (b - a);
                    energy.push(round3(1.0 + 0.5 * (std::f64::consts::PI * pos).sin() + rng.gen_range(-0.05..0.05)));
                    f0.push(round3(base_pitch * (1.1 - 0.2 * pos) + rng.gen_range(-2.0..2.0)));
                }
                _ => {
                    energy.push(round3(rng.gen_range(0.0..0.05)));
                    f0.push(0.0);
                }
            }
        }
        let track = FrameTrack::new(0.0, period, energy, f0).expect("generated track is consistent");
        tracks.insert(format!("spk{s}"), track);
    }
    SyntheticCorpus {
        trees,
        ids,
        alignments,
        tracks,
    }
}

/// The corpora shipped under `data/synthetic`, by directory name.
pub fn bundle() -> Vec<(&'static str, SyntheticCorpus)> {
    let (amb_train, amb_test) = ambiguity_corpus(100, 1).split_at(160);
    vec![
        ("toy-train", toy_treebank(200, 1)),
        ("toy-dev", toy_treebank(50, 2)),
        ("amb-train", amb_train),
        ("amb-test", amb_test),
    ]
}

/// Writes [`bundle`] as `<dir>/<name>/<name>.{trees,ids,align.tsv}` plus
/// frame tracks.
pub fn write_bundle(dir: &Path) -> std::io::Result<()> {
    for (name, corpus) in bundle() {
        corpus.write(&dir.join(name), name)?;
    }
    Ok(())
}

/// A random well-formed tree over `1..=max_words` words with labels from
/// `labels`, including unary chains.
pub fn random_tree(rng: &mut impl Rng, max_words: usize, labels: &[&str]) -> Tree {
    let n = rng.gen_range(1..=max_words.max(1));
    let words: Vec<Tree> = (0..n).map(|i| leaf(&format!("w{i}"), "T")).collect();
    let mut t = random_subtree(rng, &words, labels);
    if t.is_leaf() {
        t = node(labels[0], vec![t]);
    }
    t
}

fn random_subtree(rng: &mut impl Rng, words: &[Tree], labels: &[&str]) -> Tree {
    let mut t = if words.len() == 1 {
        words[0].clone()
    } else {
        let mut cuts: Vec<usize> = (1..words.len()).filter(|_| rng.gen_bool(0.5)).collect();
        if cuts.is_empty() {
            cuts.push(rng.gen_range(1..words.len()));
        }
        let mut children = Vec::new();
        let mut prev = 0;
        for c in cuts.into_iter().chain([words.len()]) {
            children.push(random_subtree(rng, &words[prev..c], labels));
            prev = c;
        }
        node(labels.choose(rng).expect("labels"), children)
    };
    let wrap = if t.is_leaf() { 0.4 } else { 0.2 };
    while rng.gen_bool(wrap) {
        t = node(labels.choose(rng).expect("labels"), vec![t]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::{tree_to_spans, Fluency};

    #[test]
    fn toy_treebank_is_deterministic_and_valid() {
        let a = toy_treebank(50, 3);
        let b = toy_treebank(50, 3);
        assert_eq!(a.trees, b.trees);
        assert_eq!(a.tracks, b.tracks);
        for t in &a.trees {
            t.validate().unwrap();
        }
        assert!(a.trees.iter().any(|t| t.fluency() == Fluency::Disfluent));
        assert!(a.trees.iter().any(|t| t.fluency() == Fluency::Fluent));
        let c = a.to_corpus("toy", &a.duration_stats(), PatchConfig::default()).unwrap();
        assert!(c.has_prosody());
    }

    #[test]
    fn ambiguity_pairs_share_words_and_root_only() {
        let c = ambiguity_corpus(5, 1);
        for pair in c.trees.chunks(2) {
            assert_eq!(pair[0].words(), pair[1].words());
            let a = tree_to_spans(&pair[0]);
            let b = tree_to_spans(&pair[1]);
            let shared = a.iter().filter(|s| b.contains(s)).count();
            assert_eq!(shared, 1);
            assert_eq!(a.len(), AMBIGUITY_LEN - 1);
        }
        let cue = |(_, words): &(String, Vec<WordAlignment>)| {
            let gap = |i: usize| words[i].start - words[i - 1].end;
            (gap(1) > 1.0, gap(AMBIGUITY_LEN - 1) > 1.0)
        };
        for (tree, al) in c.trees.iter().zip(&c.alignments) {
            let right = tree.children()[0].is_leaf();
            assert_eq!(cue(al), (right, !right));
        }
    }

    #[test]
    fn random_trees_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            random_tree(&mut rng, 8, &["A", "B", "C"]).validate().unwrap();
        }
    }
}
