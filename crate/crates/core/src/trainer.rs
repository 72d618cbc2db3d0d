//! Optimization loop, early stopping, the multi-seed median protocol,
//! corpus mixing and fine-tuning.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Sentence};
use crate::evaluation::{parseval, EvalError, EvalOptions, EvalReport};
use crate::model::{ModelError, Parser};
use crate::nn::{learning_rate, Adam, AdamConfig, Gradients, NnError, Tensor};
use crate::treebank::Tree;

pub const METRICS_FILE: &str = "metrics.tsv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const SUMMARY_FILE: &str = "summary.json";

/// Sentences per pool that are sorted by length before cutting batches.
const POOL_BATCHES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup: u64,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Dev evaluations without an F1 gain before stopping.
    pub patience: usize,
    /// Learning-rate multiplier when continuing from a checkpoint.
    pub fine_tune_lr_scale: f64,
    pub fine_tune_from: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seeds: vec![1, 2, 3, 4, 5],
            batch_size: 32,
            learning_rate: 8e-4,
            warmup: 160,
            adam: AdamConfig::default(),
            max_epochs: 50,
            patience: 5,
            fine_tune_lr_scale: 0.1,
            fine_tune_from: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.fine_tune_lr_scale > 0.0 && self.fine_tune_lr_scale.is_finite()) {
            return bad("fine_tune_lr_scale must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("{0}")]
    Config(String),
    #[error("seed {seed}: training diverged: {message}")]
    Diverged { seed: u64, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One training corpus and its sampling weight.
#[derive(Clone, Debug)]
pub struct WeightedCorpus {
    pub corpus: Corpus,
    pub weight: f64,
}

impl WeightedCorpus {
    pub fn new(corpus: Corpus, weight: f64) -> Self {
        WeightedCorpus { corpus, weight }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    /// Dev F1 per evaluated epoch; entry 0 is the starting model when
    /// fine-tuning.
    pub dev_f1: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_f1: f64,
    pub checkpoint: Option<PathBuf>,
    pub wall_clock_secs: f64,
}

/// A finished seed: its record and the best model found.
pub struct TrainedRun {
    pub record: RunRecord,
    pub parser: Parser,
}

/// Tracks the best dev score and decides when to stop.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records a dev score; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, f1: f64) -> bool {
        if self.best.is_none_or(|b| f1 > b) {
            self.best = Some(f1);
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best.map(|b| (self.best_epoch, b))
    }
}

/// Mixes seeds with further integers into a new seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        z ^= p;
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Shuffles, sorts pools of a few batches by length, cuts them into batches
/// and shuffles the batch order.
pub fn length_bucketed_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for pool in order.chunks_mut(batch_size * POOL_BATCHES) {
        pool.sort_by_key(|&i| lengths[i]);
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

struct BatchStream {
    lengths: Vec<usize>,
    rng: ChaCha8Rng,
    pending: Vec<Vec<usize>>,
}

impl BatchStream {
    fn next(&mut self, batch_size: usize) -> Vec<usize> {
        if self.pending.is_empty() {
            self.pending = length_bucketed_batches(&self.lengths, batch_size, &mut self.rng);
            self.pending.reverse();
        }
        self.pending.pop().expect("non-empty corpus")
    }
}

/// Chooses, batch by batch, which corpus to draw from. Corpora with weight
/// zero are never touched, and a single active corpus consumes no choices.
struct Mixer {
    active: Vec<usize>,
    streams: Vec<BatchStream>,
    choice: Option<(WeightedIndex<f64>, ChaCha8Rng)>,
    per_epoch: usize,
}

impl Mixer {
    fn new(corpora: &[WeightedCorpus], batch_size: usize, seed: u64) -> Result<Self, TrainError> {
        let active: Vec<usize> = (0..corpora.len())
            .filter(|&i| corpora[i].weight > 0.0 && !corpora[i].corpus.is_empty())
            .collect();
        if corpora.iter().any(|c| !(c.weight >= 0.0 && c.weight.is_finite())) {
            return Err(TrainError::Config("corpus weights must be finite and non-negative".into()));
        }
        if active.is_empty() {
            return Err(TrainError::Config("no training corpus with positive weight".into()));
        }
        let streams = active
            .iter()
            .map(|&i| BatchStream {
                lengths: corpora[i].corpus.sentences.iter().map(Sentence::len).collect(),
                rng: ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 1, i as u64])),
                pending: Vec::new(),
            })
            .collect();
        let per_epoch = active
            .iter()
            .map(|&i| corpora[i].corpus.len().div_ceil(batch_size))
            .sum();
        let choice = if active.len() > 1 {
            let weights: Vec<f64> = active.iter().map(|&i| corpora[i].weight).collect();
            let dist = WeightedIndex::new(weights).map_err(|e| TrainError::Config(e.to_string()))?;
            Some((dist, ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 2]))))
        } else {
            None
        };
        Ok(Mixer {
            active,
            streams,
            choice,
            per_epoch,
        })
    }

    /// Next batch as (corpus index, sentence indices).
    fn next(&mut self, batch_size: usize) -> (usize, Vec<usize>) {
        let k = match &mut self.choice {
            Some((dist, rng)) => dist.sample(rng),
            None => 0,
        };
        (self.active[k], self.streams[k].next(batch_size))
    }
}

/// Parses every sentence of a corpus.
pub fn parse_corpus(parser: &Parser, corpus: &Corpus) -> Result<Vec<Tree>, ModelError> {
    corpus
        .sentences
        .par_iter()
        .map(|s| parser.parse(s).map(|d| d.tree))
        .collect()
}

/// Parses a gold-annotated corpus and scores it.
pub fn evaluate_corpus(parser: &Parser, corpus: &Corpus, options: EvalOptions) -> Result<EvalReport, TrainError> {
    let gold = corpus
        .sentences
        .iter()
        .map(|s| {
            s.gold
                .clone()
                .ok_or_else(|| ModelError::MissingGold(s.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let predicted = parse_corpus(parser, corpus)?;
    Ok(parseval(&gold, &predicted, options)?)
}

/// Options for one optimization run.
#[derive(Clone, Debug)]
pub struct RunOptions<'a> {
    pub seed: u64,
    /// Directory for `metrics.tsv` and `best.ckpt`; nothing is written when
    /// `None`.
    pub out_dir: Option<&'a Path>,
    pub lr_scale: f64,
    /// Score the starting model before the first epoch.
    pub evaluate_start: bool,
    pub eval: EvalOptions,
}

fn diverged(seed: u64) -> impl Fn(ModelError) -> TrainError {
    move |e| match e {
        ModelError::Nn(NnError::Numeric(message)) => TrainError::Diverged { seed, message },
        other => TrainError::Model(other),
    }
}

fn metrics_line(epoch: usize, loss: Option<f64>, f1: f64) -> String {
    match loss {
        Some(l) => format!("{epoch}\t{l:.6}\t{f1:.4}\n"),
        None => format!("{epoch}\t-\t{f1:.4}\n"),
    }
}

/// Optimizes `parser` from its current parameters. The returned parser holds
/// the best dev-scoring parameters.
pub fn run(
    config: &TrainConfig,
    mut parser: Parser,
    corpora: &[WeightedCorpus],
    dev: &Corpus,
    opts: &RunOptions<'_>,
) -> Result<TrainedRun, TrainError> {
    config.validate()?;
    let started = Instant::now();
    let seed = opts.seed;
    let mut mixer = Mixer::new(corpora, config.batch_size, seed)?;
    let mut adam = Adam::new(&parser.params, config.adam);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_values: Vec<(String, Tensor)> = parser.params.named_values();
    let mut record = RunRecord {
        seed,
        dev_f1: Vec::new(),
        train_loss: Vec::new(),
        best_epoch: 0,
        best_f1: 0.0,
        checkpoint: None,
        wall_clock_secs: 0.0,
    };
    let (metrics_path, ckpt_path) = match opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            (Some(dir.join(METRICS_FILE)), Some(dir.join(CHECKPOINT_FILE)))
        }
        None => (None, None),
    };
    let mut log = String::from("epoch\ttrain_loss\tdev_f1\n");
    let flush = |log: &str| -> Result<(), TrainError> {
        if let Some(p) = &metrics_path {
            fs::write(p, log).map_err(io_err(p))?;
        }
        Ok(())
    };
    let save = |parser: &Parser| -> Result<(), TrainError> {
        if let Some(p) = &ckpt_path {
            parser.save(p)?;
        }
        Ok(())
    };

    if opts.evaluate_start || config.max_epochs == 0 {
        let f1 = evaluate_corpus(&parser, dev, opts.eval)?.f1();
        record.dev_f1.push(f1);
        stopper.observe(0, f1);
        log.push_str(&metrics_line(0, None, f1));
        flush(&log)?;
        save(&parser)?;
    }

    for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        for _ in 0..mixer.per_epoch {
            let (ci, batch) = mixer.next(config.batch_size);
            let step = adam.steps() + 1;
            let sentences = &corpora[ci].corpus.sentences;
            let results: Vec<_> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| parser.sentence_loss(&sentences[i], derive_seed(&[seed, step, k as u64])))
                .collect();
            let mut grads = Gradients::default();
            for r in results {
                let r = r.map_err(diverged(seed))?;
                total += r.loss;
                count += 1;
                grads.merge(r.gradients);
            }
            parser.params.zero_grad();
            parser.params.accumulate(&grads);
            let lr = learning_rate(step, config.learning_rate * opts.lr_scale, config.warmup);
            let norm = adam.step(&mut parser.params, lr);
            if !norm.is_finite() {
                return Err(TrainError::Diverged {
                    seed,
                    message: format!("gradient norm {norm} at step {step}"),
                });
            }
        }
        let loss = total / count.max(1) as f64;
        if !loss.is_finite() {
            return Err(TrainError::Diverged {
                seed,
                message: format!("epoch {epoch} loss {loss}"),
            });
        }
        let f1 = evaluate_corpus(&parser, dev, opts.eval)?.f1();
        record.train_loss.push(loss);
        record.dev_f1.push(f1);
        log.push_str(&metrics_line(epoch, Some(loss), f1));
        flush(&log)?;
        log::info!("seed {seed} epoch {epoch}: loss {loss:.4} dev F1 {f1:.2}");
        if stopper.observe(epoch, f1) {
            best_values = parser.params.named_values();
            save(&parser)?;
        }
        if stopper.should_stop() {
            break;
        }
    }

    parser.params.assign_from(best_values).map_err(ModelError::from)?;
    let (best_epoch, best_f1) = stopper.best().unwrap_or((0, 0.0));
    record.best_epoch = best_epoch;
    record.best_f1 = best_f1;
    record.checkpoint = ckpt_path.filter(|p| p.exists());
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(TrainedRun { record, parser })
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed-{seed}"))
}

/// Trains one model per configured seed. A failing seed is reported in its
/// slot and the others continue.
pub fn train<F>(
    config: &TrainConfig,
    corpora: &[WeightedCorpus],
    dev: &Corpus,
    build: F,
    run_dir: Option<&Path>,
    eval: EvalOptions,
) -> Result<Vec<Result<TrainedRun, TrainError>>, TrainError>
where
    F: Fn(u64) -> Result<Parser, ModelError>,
{
    config.validate()?;
    if corpora.iter().all(|c| c.corpus.is_empty()) {
        return Err(TrainError::Config("no training sentences".into()));
    }
    let mut out = Vec::new();
    for &seed in &config.seeds {
        let dir = run_dir.map(|d| seed_dir(d, seed));
        let result = build(seed).map_err(TrainError::from).and_then(|parser| {
            let opts = RunOptions {
                seed,
                out_dir: dir.as_deref(),
                lr_scale: 1.0,
                evaluate_start: false,
                eval,
            };
            run(config, parser, corpora, dev, &opts)
        });
        if let Err(e) = &result {
            log::error!("seed {seed}: {e}");
        }
        out.push(result);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianSummary {
    pub selected_seed: u64,
    /// Position of the selected record in the input.
    pub selected_index: usize,
    pub selected_f1: f64,
    pub best_f1s: Vec<(u64, f64)>,
}

/// Picks the seed whose best dev F1 is the median. With an even number of
/// seeds the lower of the two middle values is chosen; ties are broken by
/// seed.
pub fn median_report(records: &[RunRecord]) -> Option<MedianSummary> {
    if records.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[a]
            .best_f1
            .total_cmp(&records[b].best_f1)
            .then(records[a].seed.cmp(&records[b].seed))
    });
    let i = order[(records.len() - 1) / 2];
    Some(MedianSummary {
        selected_seed: records[i].seed,
        selected_index: i,
        selected_f1: records[i].best_f1,
        best_f1s: records.iter().map(|r| (r.seed, r.best_f1)).collect(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub records: Vec<RunRecord>,
    pub failures: Vec<(u64, String)>,
    pub median: Option<MedianSummary>,
}

impl RunSummary {
    pub fn from_runs(config: &TrainConfig, runs: &[Result<TrainedRun, TrainError>]) -> Self {
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (seed, r) in config.seeds.iter().zip(runs) {
            match r {
                Ok(t) => records.push(t.record.clone()),
                Err(e) => failures.push((*seed, e.to_string())),
            }
        }
        let median = median_report(&records);
        RunSummary {
            records,
            failures,
            median,
        }
    }

    pub fn write(&self, run_dir: &Path) -> Result<(), TrainError> {
        let path = run_dir.join(SUMMARY_FILE);
        let text = serde_json::to_string_pretty(self).expect("summary serializes");
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn read(run_dir: &Path) -> Result<Self, TrainError> {
        let path = run_dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| TrainError::Io {
            path,
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
    }
}

/// Continues training a saved model on a new corpus at a reduced learning
/// rate. The new model's lineage gains the source checkpoint.
#[allow(clippy::too_many_arguments)]
pub fn fine_tune(
    checkpoint: &Path,
    store: Option<std::sync::Arc<crate::embeddings::VectorStore>>,
    corpora: &[WeightedCorpus],
    dev: &Corpus,
    config: &TrainConfig,
    seed: u64,
    out_dir: Option<&Path>,
    eval: EvalOptions,
) -> Result<TrainedRun, TrainError> {
    let mut parser = Parser::load(checkpoint, store)?;
    let mut unknown: Vec<String> = corpora
        .iter()
        .flat_map(|c| &c.corpus.sentences)
        .chain(&dev.sentences)
        .filter_map(|s| s.gold.as_ref())
        .flat_map(|t| parser.labels.unknown_labels(t))
        .collect();
    unknown.sort();
    unknown.dedup();
    if !unknown.is_empty() {
        return Err(ModelError::Vocabulary(unknown).into());
    }
    parser.lineage.push(checkpoint.display().to_string());
    let opts = RunOptions {
        seed,
        out_dir,
        lr_scale: config.fine_tune_lr_scale,
        evaluate_start: true,
        eval,
    };
    run(config, parser, corpora, dev, &opts)
}
