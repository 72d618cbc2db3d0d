use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn data(corpus: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/synthetic")
        .join(corpus)
        .canonicalize()
        .expect("bundled data")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spokenparse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn source(corpus: &str) -> String {
    let d = data(corpus);
    format!(
        r#"{{ name = "{corpus}", trees = "{t}", ids = "{i}", alignments = "{a}", frames = "{f}" }}"#,
        t = d.join(format!("{corpus}.trees")).display(),
        i = d.join(format!("{corpus}.ids")).display(),
        a = d.join(format!("{corpus}.align.tsv")).display(),
        f = d.join("frames").display(),
    )
}

/// Writes a one-seed, one-epoch config into `dir` and returns its path.
fn tiny_config(dir: &Path, name: &str, d_prosody: usize) -> PathBuf {
    let text = format!(
        r#"name = "{name}"
output = "{name}"

[data]
train = [{train}]
dev = {dev}
test = [{dev}]

[model]
label_hidden = 16

[model.embedding]
mode = "learned"
dim = 8
min_count = 1
unk_dropout = 0.0

[model.encoder]
layers = 1
heads = 2
d_content = 8
d_position = 4
d_prosody = {d_prosody}
d_ff = 16
dropout = 0.0
max_len = 40

[model.cnn]
widths = [3]
filters_per_width = 2

[train]
seeds = [7]
batch_size = 16
learning_rate = 2e-3
warmup = 5
max_epochs = 1
patience = 2

[eval]
bootstrap_resamples = 1000
"#,
        train = source("amb-train"),
        dev = source("amb-test"),
    );
    let path = dir.join(format!("{name}.toml"));
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn evaluate_identical_files_scores_100() {
    let gold = data("toy-dev").join("toy-dev.trees");
    let tmp = TempDir::new().unwrap();
    let prefix = tmp.path().join("scores");
    let g = gold.to_str().unwrap();
    let o = run(&["evaluate", "--gold", g, "--pred", g, "--out", prefix.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("100.00"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("scores.json")).unwrap()).unwrap();
    assert_eq!(json["all"]["f1"].as_f64(), Some(100.0));
    assert!(tmp.path().join("scores.tsv").exists());
    assert!(tmp.path().join("scores.txt").exists());
}

#[test]
fn significance_of_identical_systems_is_not_significant() {
    let gold = data("toy-dev").join("toy-dev.trees");
    let g = gold.to_str().unwrap();
    let o = run(&["significance", "--gold", g, "--a", g, "--b", g, "--resamples", "1000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["observed_delta"].as_f64(), Some(0.0));
    assert!(r["p_value"].as_f64().unwrap() > 0.3);
    assert_eq!(r["n_resamples"].as_u64(), Some(1000));
}

#[test]
fn too_few_resamples_is_rejected() {
    let gold = data("toy-dev").join("toy-dev.trees");
    let g = gold.to_str().unwrap();
    let o = run(&["significance", "--gold", g, "--a", g, "--b", g, "--resamples", "10"]);
    assert!(!o.status.success());
}

#[test]
fn missing_config_exits_with_config_code() {
    let o = run(&["train", "--config", "/nonexistent/experiment.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path(), "bad", 0);
    let mut text = fs::read_to_string(&cfg).unwrap();
    text.push_str("learning_rat = 1.0\n");
    fs::write(&cfg, text).unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_tree_file_exits_with_data_code() {
    let tmp = TempDir::new().unwrap();
    let o = run(&[
        "evaluate",
        "--gold",
        tmp.path().join("absent.trees").to_str().unwrap(),
        "--pred",
        tmp.path().join("absent.trees").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn features_are_bit_stable() {
    let tmp = TempDir::new().unwrap();
    let d = data("amb-test");
    let align = d.join("amb-test.align.tsv");
    let frames = d.join("frames");
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("f{i}.features"));
        let o = run(&[
            "features",
            "--alignments",
            align.to_str().unwrap(),
            "--frames",
            frames.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(fs::read(out).unwrap());
    }
    assert!(!outputs[0].is_empty());
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn train_parse_and_report_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let text_cfg = tiny_config(tmp.path(), "text", 0);
    let prosody_cfg = tiny_config(tmp.path(), "prosody", 4);

    // Training twice into different directories gives identical logs.
    let mut logs = Vec::new();
    for out in ["text", "text-again"] {
        let o = run(&["train", "--config", text_cfg.to_str().unwrap(), "--output", tmp.path().join(out).to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("selected seed 7"));
        logs.push(fs::read_to_string(tmp.path().join(out).join("seed-7/metrics.tsv")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
    assert!(logs[0].starts_with("epoch\ttrain_loss\tdev_f1\n"));

    let o = run(&["train", "--config", prosody_cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let d = data("amb-test");
    let trees = d.join("amb-test.trees");
    let ids = d.join("amb-test.ids");
    let text_run = tmp.path().join("text");
    let prosody_run = tmp.path().join("prosody");

    // A text-only model parses plain input.
    let parsed = tmp.path().join("parsed.trees");
    let o = run(&[
        "parse",
        "--run",
        text_run.to_str().unwrap(),
        "--input",
        trees.to_str().unwrap(),
        "--out",
        parsed.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let n_gold = fs::read_to_string(&trees).unwrap().lines().filter(|l| !l.trim().is_empty()).count();
    let n_pred = fs::read_to_string(&parsed).unwrap().lines().filter(|l| !l.trim().is_empty()).count();
    assert_eq!(n_gold, n_pred);

    // A prosody model without prosodic input is a data error.
    let o = run(&["parse", "--run", prosody_run.to_str().unwrap(), "--input", trees.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let o = run(&[
        "parse",
        "--run",
        prosody_run.to_str().unwrap(),
        "--input",
        trees.to_str().unwrap(),
        "--ids",
        ids.to_str().unwrap(),
        "--alignments",
        d.join("amb-test.align.tsv").to_str().unwrap(),
        "--frames",
        d.join("frames").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let out = tmp.path().join("summary");
    let o = run(&[
        "report",
        text_run.to_str().unwrap(),
        prosody_run.to_str().unwrap(),
        "--baseline",
        text_run.to_str().unwrap(),
        "--resamples",
        "1000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(tmp.path().join("summary.tsv")).unwrap();
    assert!(table.contains("text"));
    assert!(table.contains("prosody"));
}
