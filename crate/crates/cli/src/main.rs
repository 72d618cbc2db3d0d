use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser as ClapParser, Subcommand};

use spokenparse::data::{duration_stats, read_alignments, read_vector_store, DataError};
use spokenparse::evaluation::{parseval, report_tables, EvalOptions, ReportEntry};
use spokenparse::experiment::{
    attach_parse_prosody, cached_features, collect_reports, read_parse_input, read_tree_file, run_experiment,
    selected_checkpoint, significance_files, write_tree_file, ExperimentConfig, ExperimentError,
};
use spokenparse::model::Parser;
use spokenparse::prosody::io::write_features;
use spokenparse::prosody::{DurationStats, PatchConfig};
use spokenparse::trainer::parse_corpus;

#[derive(ClapParser)]
#[command(name = "spokenparse", version, about = "Constituency parsing of speech transcripts with prosody")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Compute prosodic features from word alignments and frame tracks.
    Features(FeaturesArgs),
    /// Train one model per seed and select the median run.
    Train(TrainArgs),
    /// Parse sentences with a trained model.
    Parse(ParseArgs),
    /// Score predicted trees against gold trees.
    Evaluate(EvaluateArgs),
    /// Paired bootstrap test between two systems.
    Significance(SignificanceArgs),
    /// Collect run directories into summary tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct FeaturesArgs {
    /// Alignment file; without it, every corpus of --config is processed.
    #[arg(long, requires = "frames")]
    alignments: Option<PathBuf>,
    /// Directory of `<speaker>.csv` frame tracks.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Alignment files for the duration statistics (default: --alignments).
    #[arg(long = "stats-from")]
    stats_from: Vec<PathBuf>,
    /// Output file (with --alignments) or directory (with --config).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = PatchConfig::default().context_s)]
    context: f64,
    #[arg(long, default_value_t = PatchConfig::default().max_frames)]
    max_frames: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Continue from this checkpoint at a reduced learning rate.
    #[arg(long)]
    fine_tune_from: Option<PathBuf>,
    /// Overrides the config's run directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Args)]
struct ParseArgs {
    /// Model checkpoint.
    #[arg(long, conflicts_with = "run", required_unless_present = "run")]
    checkpoint: Option<PathBuf>,
    /// Run directory; uses the selected seed's checkpoint.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Trees, or one tokenized sentence per line.
    #[arg(long)]
    input: PathBuf,
    /// Sentence ids, one per line.
    #[arg(long)]
    ids: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    alignments: Option<PathBuf>,
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Word vectors for models with frozen embeddings.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Output trees (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also score against the input trees.
    #[arg(long)]
    score: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Delete EVALB punctuation before scoring.
    #[arg(long)]
    delete_punct: bool,
    /// Writes `<out>.tsv`, `<out>.txt` and `<out>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SignificanceArgs {
    #[arg(long)]
    gold: PathBuf,
    /// The putatively better system.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
    #[arg(long)]
    delete_punct: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories written by `train`.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Run to test the others against.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
    #[arg(long)]
    delete_punct: bool,
    /// Writes `<out>.tsv` and `<out>.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_error(path: &Path, message: impl Into<String>) -> ExperimentError {
    ExperimentError::Config {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    fs::write(path, text).map_err(io_error(path))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, String, PathBuf), ExperimentError> {
    let path = common
        .config
        .clone()
        .ok_or_else(|| config_error(Path::new("<command line>"), "this command needs --config"))?;
    let (mut cfg, text) = ExperimentConfig::load(&path)?;
    if let Some(seed) = common.seed {
        cfg.train.seeds = vec![seed];
    }
    Ok((cfg, text, path))
}

fn features(common: &Common, args: &FeaturesArgs) -> Result<(), ExperimentError> {
    match (&args.alignments, &args.frames) {
        (Some(a), Some(fr)) => {
            let patch = PatchConfig {
                context_s: args.context,
                max_frames: args.max_frames,
            };
            let sources = if args.stats_from.is_empty() {
                vec![a.clone()]
            } else {
                args.stats_from.clone()
            };
            let mut words = Vec::new();
            for s in &sources {
                for (_, w) in read_alignments(s)? {
                    words.extend(w);
                }
            }
            let stats = DurationStats::from_alignments(&words);
            let f = cached_features(a, fr, &stats, patch, None)?;
            let text = write_features(&f).map_err(|source| DataError::Prosody {
                path: args.out.clone(),
                source,
            })?;
            write(&args.out, &text)?;
            println!("{}: {} sentences", args.out.display(), f.len());
        }
        _ => {
            let (cfg, _, path) = load_config(common)?;
            cfg.validate(&path)?;
            let stats = duration_stats(&cfg.data.train)?;
            for s in cfg.sources() {
                let (Some(a), Some(fr)) = (&s.alignments, &s.frames) else { continue };
                let f = cached_features(a, fr, &stats, cfg.model.patch, None)?;
                let out = args.out.join(format!("{}.features", s.name));
                let text = write_features(&f).map_err(|source| DataError::Prosody {
                    path: out.clone(),
                    source,
                })?;
                write(&out, &text)?;
                println!("{}: {} sentences", out.display(), f.len());
            }
        }
    }
    Ok(())
}

fn train(common: &Common, args: &TrainArgs) -> Result<(), ExperimentError> {
    let (mut cfg, text, path) = load_config(common)?;
    if let Some(ckpt) = &args.fine_tune_from {
        cfg.train.fine_tune_from = Some(ckpt.clone());
    }
    if let Some(out) = &args.output {
        cfg.output = out.clone();
    }
    if let Some(e) = args.max_epochs {
        cfg.train.max_epochs = e;
    }
    let (summary, results) = run_experiment(&cfg, &text, &path)?;
    for (seed, message) in &summary.failures {
        eprintln!("seed {seed} failed: {message}");
    }
    if let Some(m) = &summary.median {
        println!("selected seed {} (dev F1 {:.2})", m.selected_seed, m.selected_f1);
    }
    for t in &results.test {
        println!("{}: F1 {:.2}", t.corpus, t.report.f1());
    }
    println!("run directory: {}", cfg.output.display());
    Ok(())
}

fn parse(args: &ParseArgs) -> Result<(), ExperimentError> {
    let ckpt = match (&args.checkpoint, &args.run) {
        (Some(c), _) => c.clone(),
        (None, Some(r)) => selected_checkpoint(r)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let store = args.vectors.as_deref().map(read_vector_store).transpose()?;
    let name = "input";
    let mut corpus = read_parse_input(&args.input, args.ids.as_deref(), name)?;
    let store = match store {
        Some(s) => Some(Arc::new(corpus.keyed_store(&s).map_err(|source| DataError::Vectors {
            path: args.vectors.clone().unwrap_or_default(),
            source,
        })?)),
        None => None,
    };
    let parser = Parser::load(&ckpt, store)?;
    attach_parse_prosody(
        &parser,
        &mut corpus,
        args.features.as_deref(),
        args.alignments.as_deref(),
        args.frames.as_deref(),
    )?;
    let trees = parse_corpus(&parser, &corpus)?;
    match &args.out {
        Some(p) => write_tree_file(p, &trees)?,
        None => {
            for t in &trees {
                println!("{t}");
            }
        }
    }
    if args.score {
        let gold = corpus.gold_trees();
        if gold.len() == trees.len() {
            let r = parseval(&gold, &trees, EvalOptions::default())?;
            eprintln!("P {:.2} R {:.2} F1 {:.2}", r.precision(), r.recall(), r.f1());
        }
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn evaluate(args: &EvaluateArgs) -> Result<(), ExperimentError> {
    let gold = read_tree_file(&args.gold)?;
    let pred = read_tree_file(&args.pred)?;
    let report = parseval(&gold, &pred, EvalOptions {
        delete_punct: args.delete_punct,
    })?;
    let entry = ReportEntry {
        condition: stem(&args.pred),
        train: "-".into(),
        test: stem(&args.gold),
        report: report.clone(),
        significance: None,
    };
    let tables = report_tables(&[entry]);
    print!("{}", tables.text);
    if let Some(out) = &args.out {
        write(&with_suffix(out, ".tsv"), &tables.tsv)?;
        write(&with_suffix(out, ".txt"), &tables.text)?;
        write(
            &with_suffix(out, ".json"),
            &serde_json::to_string_pretty(&report).expect("serializable"),
        )?;
    }
    Ok(())
}

fn significance(common: &Common, args: &SignificanceArgs) -> Result<(), ExperimentError> {
    let r = significance_files(
        &args.gold,
        &args.a,
        &args.b,
        args.resamples,
        common.seed.unwrap_or(0),
        EvalOptions {
            delete_punct: args.delete_punct,
        },
    )?;
    println!("{}", serde_json::to_string_pretty(&r).expect("serializable"));
    Ok(())
}

fn report(common: &Common, args: &ReportArgs) -> Result<(), ExperimentError> {
    let entries = collect_reports(
        &args.runs,
        args.baseline.as_deref(),
        args.resamples,
        common.seed.unwrap_or(0),
        EvalOptions {
            delete_punct: args.delete_punct,
        },
    )?;
    let tables = report_tables(&entries);
    print!("{}", tables.text);
    if let Some(out) = &args.out {
        write(&with_suffix(out, ".tsv"), &tables.tsv)?;
        write(&with_suffix(out, ".txt"), &tables.text)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.common.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: --jobs: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Features(a) => features(&cli.common, a),
        Command::Train(a) => train(&cli.common, a),
        Command::Parse(a) => parse(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Significance(a) => significance(&cli.common, a),
        Command::Report(a) => report(&cli.common, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
