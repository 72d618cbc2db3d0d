//! Experiment configuration files, run directories and the workflows the
//! command line exposes: feature extraction with caching, multi-seed
//! training, parsing, evaluation and report collection.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    duration_stats, load_corpus, read_alignments, read_features, read_frame_tracks, read_vector_store, Corpus,
    CorpusSource, DataError, Sentence,
};
use crate::embeddings::{finetuned_table, EmbeddingError, EmbeddingMode, VectorStore, WordVocab};
use crate::encoder::EncoderError;
use crate::evaluation::{paired_bootstrap, parseval, EvalError, EvalOptions, EvalReport, ReportEntry, SignificanceResult};
use crate::model::{ModelConfig, ModelError, Parser, WordInput};
use crate::nn::NnError;
use crate::prosody::io::write_features;
use crate::prosody::{corpus_features, DurationStats, PatchConfig, SentenceProsody};
use crate::trainer::{
    fine_tune, parse_corpus, seed_dir, train, RunSummary, TrainConfig, TrainError, TrainedRun, WeightedCorpus,
    CHECKPOINT_FILE,
};
use crate::treebank::{parse_ptb, write_trees, LabelVocab, Tree};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const RESULTS_FILE: &str = "results.json";
pub const FEATURE_CACHE_DIR: &str = "feature-cache";
/// Bumped whenever the feature layout changes, so stale cache entries miss.
pub const FEATURE_FORMAT: &str = "spokenparse-features/1";

/// Broad error classes, each with its own process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

fn nn_kind(e: &NnError) -> ErrorKind {
    match e {
        NnError::Numeric(_) => ErrorKind::Numeric,
        _ => ErrorKind::Data,
    }
}

fn model_kind(e: &ModelError) -> ErrorKind {
    match e {
        ModelError::Config(_) => ErrorKind::Config,
        ModelError::Embedding(EmbeddingError::Config(_)) => ErrorKind::Config,
        ModelError::Encoder(EncoderError::Config(_)) => ErrorKind::Config,
        ModelError::Encoder(EncoderError::Numeric { .. }) => ErrorKind::Numeric,
        ModelError::Encoder(EncoderError::Nn(n)) | ModelError::Nn(n) => nn_kind(n),
        _ => ErrorKind::Data,
    }
}

impl ExperimentError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            ExperimentError::Config { .. } => ErrorKind::Config,
            ExperimentError::Data(_) | ExperimentError::Eval(_) | ExperimentError::Io { .. } => ErrorKind::Data,
            ExperimentError::Model(m) => model_kind(m),
            ExperimentError::Train(t) => match t {
                TrainError::Config(_) => ErrorKind::Config,
                TrainError::Diverged { .. } => ErrorKind::Numeric,
                TrainError::Model(m) => model_kind(m),
                TrainError::Eval(_) | TrainError::Io { .. } => ErrorKind::Data,
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind().exit_code()
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: Vec<CorpusSource>,
    pub dev: CorpusSource,
    #[serde(default)]
    pub test: Vec<CorpusSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Delete EVALB punctuation before scoring (written-text style data).
    pub delete_punct: bool,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            delete_punct: false,
            bootstrap_resamples: 10_000,
            bootstrap_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            delete_punct: self.delete_punct,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Condition name shown in reports; defaults to the output directory
    /// name.
    #[serde(default)]
    pub name: Option<String>,
    /// Run directory.
    pub output: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// Parses a config; relative paths are resolved against `base`.
    pub fn parse(text: &str, origin: &Path, base: &Path) -> Result<Self, ExperimentError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ExperimentError::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.resolve(base);
        Ok(cfg)
    }

    /// Reads a config file and returns it with its verbatim text.
    pub fn load(path: &Path) -> Result<(Self, String), ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config {
            path: path.to_path_buf(),
            message: format!("cannot read config: {e}"),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((Self::parse(&text, path, base)?, text))
    }

    fn resolve(&mut self, base: &Path) {
        if self.output.is_relative() {
            self.output = base.join(&self.output);
        }
        for s in self.sources_mut() {
            s.resolve(base);
        }
        if let Some(p) = self.train.fine_tune_from.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    fn sources_mut(&mut self) -> impl Iterator<Item = &mut CorpusSource> {
        self.data
            .train
            .iter_mut()
            .chain(std::iter::once(&mut self.data.dev))
            .chain(self.data.test.iter_mut())
    }

    pub fn sources(&self) -> impl Iterator<Item = &CorpusSource> {
        self.data
            .train
            .iter()
            .chain(std::iter::once(&self.data.dev))
            .chain(self.data.test.iter())
    }

    pub fn condition(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.output
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into())
        })
    }

    /// Checks settings and that every referenced file exists, before any
    /// computation starts.
    pub fn validate(&self, origin: &Path) -> Result<(), ExperimentError> {
        let bad = |message: String| ExperimentError::Config {
            path: origin.to_path_buf(),
            message,
        };
        self.model.validate().map_err(|e| bad(format!("[model] {e}")))?;
        self.train.validate().map_err(|e| bad(format!("[train] {e}")))?;
        if self.data.train.is_empty() {
            return Err(bad("[data] needs at least one train corpus".into()));
        }
        let weights: Vec<f64> = self.data.train.iter().map(|s| s.weight).collect();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().all(|w| *w == 0.0) {
            return Err(bad("[data] train weights must be non-negative and not all zero".into()));
        }
        if self.eval.bootstrap_resamples < crate::evaluation::MIN_RESAMPLES {
            return Err(bad(format!(
                "[eval] bootstrap_resamples must be at least {}",
                crate::evaluation::MIN_RESAMPLES
            )));
        }
        let mut names: Vec<&str> = self.sources().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1] && !self.is_same_source(w[0])) {
            return Err(bad(format!("[data] corpus name {:?} is used twice", w[0])));
        }
        for s in self.sources() {
            if self.model.uses_prosody() && !s.has_prosody() {
                return Err(bad(format!(
                    "[data] corpus {:?}: the model uses prosody; set `features` or `alignments` and `frames`",
                    s.name
                )));
            }
            if self.model.embedding.mode != EmbeddingMode::Learned && s.vectors.is_none() {
                return Err(bad(format!(
                    "[data] corpus {:?}: {:?} embeddings need a `vectors` file",
                    s.name, self.model.embedding.mode
                )));
            }
            for p in s.paths() {
                if !p.exists() {
                    return Err(bad(format!("corpus {:?}: {} does not exist", s.name, p.display())));
                }
            }
        }
        if let Some(p) = &self.train.fine_tune_from {
            if !p.is_file() {
                return Err(bad(format!("[train] fine_tune_from: {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// A name may repeat only when every use refers to the same files.
    fn is_same_source(&self, name: &str) -> bool {
        let mut same = self.sources().filter(|s| s.name == name);
        let first = same.next();
        same.all(|s| Some(s) == first)
    }
}

fn hash_file(h: &mut Sha256, path: &Path) -> Result<(), ExperimentError> {
    let bytes = fs::read(path).map_err(io(path))?;
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(&bytes);
    Ok(())
}

/// Content hash of everything that determines a corpus' features.
pub fn feature_key(
    alignments: &Path,
    frames: &Path,
    stats: &DurationStats,
    patch: PatchConfig,
) -> Result<String, ExperimentError> {
    let mut h = Sha256::new();
    h.update(FEATURE_FORMAT.as_bytes());
    hash_file(&mut h, alignments)?;
    let parsed = read_alignments(alignments)?;
    let speakers: std::collections::BTreeSet<&str> = parsed
        .iter()
        .flat_map(|(_, w)| w.iter().map(|a| a.speaker_id.as_str()))
        .collect();
    for s in speakers {
        h.update(s.as_bytes());
        hash_file(&mut h, &frames.join(format!("{s}.csv")))?;
    }
    let by_type: BTreeMap<&String, u64> = stats.by_type.iter().map(|(k, v)| (k, v.to_bits())).collect();
    for (k, v) in by_type {
        h.update(k.as_bytes());
        h.update(v.to_le_bytes());
    }
    h.update(stats.global_mean.to_bits().to_le_bytes());
    h.update(patch.context_s.to_bits().to_le_bytes());
    h.update((patch.max_frames as u64).to_le_bytes());
    Ok(hex::encode(h.finalize()))
}

/// Computes features for an alignment file, reusing a cached copy keyed by
/// the content hash of the inputs when `cache` is given.
pub fn cached_features(
    alignments: &Path,
    frames: &Path,
    stats: &DurationStats,
    patch: PatchConfig,
    cache: Option<&Path>,
) -> Result<Vec<SentenceProsody>, ExperimentError> {
    let path = match cache {
        Some(dir) => {
            let key = feature_key(alignments, frames, stats, patch)?;
            let p = dir.join(format!("{key}.features"));
            if p.is_file() {
                return Ok(read_features(&p)?);
            }
            Some(p)
        }
        None => None,
    };
    let parsed = read_alignments(alignments)?;
    let tracks = read_frame_tracks(frames, &parsed)?;
    let features = corpus_features(&parsed, &tracks, stats, patch).map_err(|source| DataError::Prosody {
        path: alignments.to_path_buf(),
        source,
    })?;
    if let Some(p) = path {
        let dir = p.parent().expect("cache file has a parent");
        fs::create_dir_all(dir).map_err(io(dir))?;
        let text = write_features(&features).map_err(|source| DataError::Prosody {
            path: p.clone(),
            source,
        })?;
        let tmp = p.with_extension("tmp");
        fs::write(&tmp, text).map_err(io(&tmp))?;
        fs::rename(&tmp, &p).map_err(io(&p))?;
    }
    Ok(features)
}

/// Loads one corpus, with prosody when `stats` is given.
pub fn load_source(
    source: &CorpusSource,
    prosody: Option<(&DurationStats, PatchConfig)>,
    cache: Option<&Path>,
) -> Result<Corpus, ExperimentError> {
    let mut corpus = load_corpus(source, None)?;
    if let Some((stats, patch)) = prosody {
        let features = match (&source.features, &source.alignments, &source.frames) {
            (Some(f), _, _) => read_features(f)?,
            (None, Some(a), Some(fr)) => cached_features(a, fr, stats, patch, cache)?,
            _ => {
                return Err(DataError::Invalid(format!("corpus {:?} has no prosodic input", source.name)).into());
            }
        };
        corpus.attach_prosody(features)?;
    }
    Ok(corpus)
}

/// All corpora of an experiment, loaded.
pub struct PreparedData {
    pub train: Vec<WeightedCorpus>,
    pub dev: Corpus,
    pub test: Vec<Corpus>,
    pub stats: Option<DurationStats>,
    /// Word vectors re-keyed by sentence key, for frozen or fine-tuned
    /// embeddings.
    pub vectors: Option<Arc<VectorStore>>,
}

impl PreparedData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let prosody = cfg.model.uses_prosody();
        let stats = if prosody {
            Some(duration_stats(&cfg.data.train)?)
        } else {
            None
        };
        let cache = cfg.output.join(FEATURE_CACHE_DIR);
        let with = stats.as_ref().map(|s| (s, cfg.model.patch));
        let load = |s: &CorpusSource| load_source(s, with, Some(&cache));
        let train = cfg
            .data
            .train
            .iter()
            .map(|s| Ok(WeightedCorpus::new(load(s)?, s.weight)))
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        let dev = load(&cfg.data.dev)?;
        let test = cfg.data.test.iter().map(load).collect::<Result<Vec<_>, _>>()?;

        let vectors = if cfg.model.embedding.mode == EmbeddingMode::Learned {
            None
        } else {
            let mut merged: Option<VectorStore> = None;
            let pairs = cfg
                .data
                .train
                .iter()
                .zip(train.iter().map(|w| &w.corpus))
                .chain(std::iter::once((&cfg.data.dev, &dev)))
                .chain(cfg.data.test.iter().zip(&test));
            for (source, corpus) in pairs {
                let path = source.vectors.as_ref().expect("validated");
                let raw = read_vector_store(path)?;
                let keyed = corpus.keyed_store(&raw).map_err(|source| DataError::Vectors {
                    path: path.clone(),
                    source,
                })?;
                let m = merged.get_or_insert_with(|| VectorStore::new(keyed.dim, keyed.producer.clone()));
                for id in keyed.ids() {
                    m.insert(id.to_string(), keyed.get(id).expect("listed").clone())
                        .map_err(|source| DataError::Vectors {
                            path: path.clone(),
                            source,
                        })?;
                }
            }
            merged.map(Arc::new)
        };
        Ok(PreparedData {
            train,
            dev,
            test,
            stats,
            vectors,
        })
    }

    pub fn train_sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.train.iter().flat_map(|w| &w.corpus.sentences)
    }

    pub fn labels(&self) -> LabelVocab {
        let trees: Vec<Tree> = self.train_sentences().filter_map(|s| s.gold.clone()).collect();
        LabelVocab::from_trees(&trees)
    }

    /// Word input for a fresh parser.
    pub fn word_input(&self, config: &ModelConfig) -> Result<WordInput, ExperimentError> {
        let words: Vec<(String, Vec<String>)> = self.train_sentences().map(|s| (s.key.clone(), s.words())).collect();
        Ok(match config.embedding.mode {
            EmbeddingMode::Learned => WordInput::Learned(WordVocab::from_tokens(
                words.iter().flat_map(|(_, w)| w.iter().map(String::as_str)),
                config.embedding.min_count,
            )),
            EmbeddingMode::Frozen => WordInput::Frozen(self.vectors.clone().expect("validated")),
            EmbeddingMode::Finetuned => {
                let store = self.vectors.as_ref().expect("validated");
                let (vocab, table) = finetuned_table(
                    store,
                    words.iter().map(|(k, w)| (k.as_str(), w.as_slice())),
                    config.embedding.min_count,
                )
                .map_err(ModelError::from)?;
                WordInput::Finetuned { vocab, table }
            }
        })
    }

    pub fn build_parser(&self, config: &ModelConfig, seed: u64) -> Result<Parser, ModelError> {
        let words = self.word_input(config).map_err(|e| match e {
            ExperimentError::Model(m) => m,
            other => ModelError::Config(other.to_string()),
        })?;
        let mut p = Parser::new(config, self.labels(), words, seed)?;
        p.duration_stats = self.stats.clone();
        Ok(p)
    }
}

/// Scores of one test corpus in a run directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestResult {
    pub corpus: String,
    pub report: EvalReport,
    pub gold: PathBuf,
    pub predicted: PathBuf,
}

/// What `train` leaves behind for `report`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResults {
    pub condition: String,
    pub train: String,
    pub selected_seed: Option<u64>,
    pub dev_f1: Option<f64>,
    pub test: Vec<TestResult>,
}

impl RunResults {
    pub fn read(dir: &Path) -> Result<Self, ExperimentError> {
        let path = dir.join(RESULTS_FILE);
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        serde_json::from_str(&text).map_err(|e| {
            DataError::Invalid(format!("{}: {e}", path.display())).into()
        })
    }
}

pub fn write_tree_file(path: &Path, trees: &[Tree]) -> Result<(), ExperimentError> {
    fs::write(path, write_trees(trees)).map_err(io(path))
}

pub fn read_tree_file(path: &Path) -> Result<Vec<Tree>, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    parse_ptb(&text).map_err(|source| {
        DataError::Treebank {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

/// Runs the full multi-seed protocol: snapshot the config, train each seed,
/// pick the lower-median seed by dev F1, parse the test corpora with it and
/// write everything into the run directory.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    config_text: &str,
    origin: &Path,
) -> Result<(RunSummary, RunResults), ExperimentError> {
    cfg.validate(origin)?;
    let out = &cfg.output;
    fs::create_dir_all(out).map_err(io(out))?;
    let snapshot = out.join(CONFIG_SNAPSHOT);
    fs::write(&snapshot, config_text).map_err(io(&snapshot))?;

    let data = PreparedData::load(cfg)?;
    let eval = cfg.eval.options();
    let runs: Vec<Result<TrainedRun, TrainError>> = match &cfg.train.fine_tune_from {
        Some(ckpt) => cfg
            .train
            .seeds
            .iter()
            .map(|&seed| {
                fine_tune(
                    ckpt,
                    data.vectors.clone(),
                    &data.train,
                    &data.dev,
                    &cfg.train,
                    seed,
                    Some(&seed_dir(out, seed)),
                    eval,
                )
            })
            .collect(),
        None => train(
            &cfg.train,
            &data.train,
            &data.dev,
            |seed| data.build_parser(&cfg.model, seed),
            Some(out),
            eval,
        )?,
    };
    let summary = RunSummary::from_runs(&cfg.train, &runs);
    summary.write(out)?;

    let selected = summary
        .median
        .as_ref()
        .map(|m| m.selected_seed)
        .and_then(|seed| runs.iter().flatten().find(|r| r.record.seed == seed));
    let mut results = RunResults {
        condition: cfg.condition(),
        train: cfg.data.train.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join("+"),
        selected_seed: selected.map(|r| r.record.seed),
        dev_f1: selected.map(|r| r.record.best_f1),
        test: Vec::new(),
    };
    if let Some(run) = selected {
        for corpus in &data.test {
            let predicted = parse_corpus(&run.parser, corpus)?;
            let gold = corpus.gold_trees();
            let report = parseval(&gold, &predicted, eval)?;
            let gold_path = out.join(format!("gold-{}.trees", corpus.name));
            let pred_path = out.join(format!("pred-{}.trees", corpus.name));
            write_tree_file(&gold_path, &gold)?;
            write_tree_file(&pred_path, &predicted)?;
            results.test.push(TestResult {
                corpus: corpus.name.clone(),
                report,
                gold: gold_path,
                predicted: pred_path,
            });
        }
    }
    let path = out.join(RESULTS_FILE);
    fs::write(&path, serde_json::to_string_pretty(&results).expect("serializable")).map_err(io(&path))?;

    if summary.records.is_empty() {
        let (seed, message) = summary.failures.first().cloned().unwrap_or_default();
        return Err(TrainError::Diverged { seed, message }.into());
    }
    Ok((summary, results))
}

/// The best checkpoint of the selected seed in a run directory.
pub fn selected_checkpoint(run_dir: &Path) -> Result<PathBuf, ExperimentError> {
    let r = RunResults::read(run_dir)?;
    let seed = r
        .selected_seed
        .ok_or_else(|| DataError::Invalid(format!("{}: no seed finished", run_dir.display())))?;
    Ok(seed_dir(run_dir, seed).join(CHECKPOINT_FILE))
}

/// Significance of `a` against `b` on aligned files.
pub fn significance_files(
    gold: &Path,
    a: &Path,
    b: &Path,
    resamples: usize,
    seed: u64,
    options: EvalOptions,
) -> Result<SignificanceResult, ExperimentError> {
    let g = read_tree_file(gold)?;
    let pa = read_tree_file(a)?;
    let pb = read_tree_file(b)?;
    Ok(paired_bootstrap(&g, &pa, &pb, resamples, seed, options)?)
}

/// Gathers test results from run directories. When `baseline` names one of
/// them, every other condition is tested against it on shared test corpora.
pub fn collect_reports(
    run_dirs: &[PathBuf],
    baseline: Option<&Path>,
    resamples: usize,
    seed: u64,
    options: EvalOptions,
) -> Result<Vec<ReportEntry>, ExperimentError> {
    let base = baseline.map(RunResults::read).transpose()?;
    let mut entries = Vec::new();
    for dir in run_dirs {
        let r = RunResults::read(dir)?;
        let is_base = baseline.is_some_and(|b| same_dir(b, dir));
        for t in &r.test {
            let significance = match (&base, is_base) {
                (Some(b), false) => match b.test.iter().find(|bt| bt.corpus == t.corpus) {
                    Some(bt) => Some(significance_files(&t.gold, &t.predicted, &bt.predicted, resamples, seed, options)?),
                    None => None,
                },
                _ => None,
            };
            entries.push(ReportEntry {
                condition: r.condition.clone(),
                train: r.train.clone(),
                test: t.corpus.clone(),
                report: t.report.clone(),
                significance,
            });
        }
    }
    Ok(entries)
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

/// Reads sentences to parse: trees (gold kept for scoring) when the text
/// starts with a bracket, otherwise one whitespace-tokenized sentence per
/// line.
pub fn read_parse_input(path: &Path, ids: Option<&Path>, name: &str) -> Result<Corpus, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let ids = ids.map(crate::data::read_ids).transpose()?;
    if text.trim_start().starts_with('(') {
        let (trees, ids) = crate::data::read_trees(path, true, ids)?;
        Ok(Corpus::from_trees(name, trees, Some(ids)))
    } else {
        let mut sentences = crate::data::read_token_lines(path, ids)?;
        for s in &mut sentences {
            s.key = format!("{name}/{}", s.id);
        }
        Ok(Corpus::new(name, sentences))
    }
}

/// Attaches prosody for a parser that needs it.
pub fn attach_parse_prosody(
    parser: &Parser,
    corpus: &mut Corpus,
    features: Option<&Path>,
    alignments: Option<&Path>,
    frames: Option<&Path>,
) -> Result<(), ExperimentError> {
    if !parser.uses_prosody() {
        return Ok(());
    }
    let prosody = match (features, alignments, frames) {
        (Some(f), _, _) => read_features(f)?,
        (None, Some(a), Some(fr)) => {
            let stats = parser.duration_stats.clone().unwrap_or_default();
            cached_features(a, fr, &stats, parser.config.patch, None)?
        }
        _ => {
            return Err(DataError::Invalid(
                "this model uses prosody: supply --features, or --alignments with --frames".into(),
            )
            .into())
        }
    };
    corpus.attach_prosody(prosody)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output = "runs/x"
[data]
train = [{ name = "toy", trees = "toy.trees" }]
dev = { name = "dev", trees = "toy.trees" }
[model.encoder]
d_prosody = 0
"#;

    #[test]
    fn paths_resolve_against_config_dir() {
        let cfg = ExperimentConfig::parse(MINIMAL, Path::new("c.toml"), Path::new("/base")).unwrap();
        assert_eq!(cfg.output, Path::new("/base/runs/x"));
        assert_eq!(cfg.data.train[0].trees, Path::new("/base/toy.trees"));
        assert_eq!(cfg.condition(), "x");
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn unknown_keys_and_missing_files_are_config_errors() {
        let e = ExperimentConfig::parse(&format!("{MINIMAL}\nbogus = 1\n"), Path::new("c.toml"), Path::new("."))
            .unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Config);
        let cfg = ExperimentConfig::parse(MINIMAL, Path::new("c.toml"), Path::new("/nonexistent")).unwrap();
        let e = cfg.validate(Path::new("c.toml")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("toy.trees"));
    }

    #[test]
    fn error_kinds() {
        let numeric: ExperimentError = TrainError::Diverged {
            seed: 1,
            message: "nan".into(),
        }
        .into();
        assert_eq!(numeric.exit_code(), 4);
        let data: ExperimentError = ModelError::MissingProsody("s".into()).into();
        assert_eq!(data.exit_code(), 3);
        let cfg: ExperimentError = ModelError::Config("x".into()).into();
        assert_eq!(cfg.exit_code(), 2);
    }
}
