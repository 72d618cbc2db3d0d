use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{length_bucket_name, EvalReport, Scores, SignificanceResult};

pub const MISSING_CELL: &str = "—";

/// F1 of a breakdown group, or the missing-cell marker if it is empty.
fn breakdown(s: &Scores) -> String {
    if s.counts.sentences == 0 {
        MISSING_CELL.to_string()
    } else {
        format!("{:.2}", s.f1)
    }
}

/// One evaluated condition: a model (by training corpus and input type)
/// scored on one test corpus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportEntry {
    pub condition: String,
    pub train: String,
    pub test: String,
    pub report: EvalReport,
    /// Significance of this condition against its baseline.
    pub significance: Option<SignificanceResult>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Tables {
    pub tsv: String,
    pub text: String,
}

/// `*` below 0.02, `†` below 0.05.
pub fn significance_marker(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.02 => "*",
        Some(p) if p < 0.05 => "†",
        _ => "",
    }
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s}{}", " ".repeat(widths[c] - s.chars().count())))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn tsv(rows: &[Vec<String>]) -> String {
    rows.iter().map(|r| r.join("\t") + "\n").collect()
}

pub fn report_tables(entries: &[ReportEntry]) -> Tables {
    let mut header = vec![
        "condition".to_string(),
        "train".into(),
        "test".into(),
        "P".into(),
        "R".into(),
        "F1".into(),
        "fluent".into(),
        "disfluent".into(),
    ];
    for b in 0..3 {
        header.push(length_bucket_name(b));
    }
    header.extend(["exact".into(), "delta".into(), "p".into()]);
    let mut rows = vec![header];
    for e in entries {
        let r = &e.report;
        let marker = significance_marker(e.significance.map(|s| s.p_value));
        let mut row = vec![
            e.condition.clone(),
            e.train.clone(),
            e.test.clone(),
            format!("{:.2}", r.all.precision),
            format!("{:.2}", r.all.recall),
            format!("{:.2}{marker}", r.all.f1),
            breakdown(&r.fluent),
            breakdown(&r.disfluent),
        ];
        row.extend(r.lengths.iter().map(breakdown));
        row.push(r.all.counts.exact.to_string());
        match e.significance {
            Some(s) => {
                row.push(format!("{:+.2}", s.observed_delta));
                row.push(format!("{:.4}", s.p_value));
            }
            None => row.extend([MISSING_CELL.to_string(), MISSING_CELL.to_string()]),
        }
        rows.push(row);
    }
    let mut out = Tables {
        tsv: tsv(&rows),
        text: aligned(&rows),
    };

    let tests: BTreeSet<&str> = entries.iter().map(|e| e.test.as_str()).collect();
    if tests.len() > 1 {
        let conditions: Vec<(&str, &str)> = {
            let mut seen = Vec::new();
            for e in entries {
                let key = (e.condition.as_str(), e.train.as_str());
                if !seen.contains(&key) {
                    seen.push(key);
                }
            }
            seen
        };
        let mut grid = vec![std::iter::once("condition / train".to_string())
            .chain(tests.iter().map(|t| t.to_string()))
            .collect::<Vec<_>>()];
        for (cond, train) in conditions {
            let mut row = vec![format!("{cond} / {train}")];
            for t in &tests {
                let cell = entries
                    .iter()
                    .find(|e| e.condition == cond && e.train == train && e.test == *t)
                    .map(|e| {
                        let m = significance_marker(e.significance.map(|s| s.p_value));
                        format!("{:.2}{m}", e.report.all.f1)
                    })
                    .unwrap_or_else(|| MISSING_CELL.to_string());
                row.push(cell);
            }
            grid.push(row);
        }
        out.tsv.push('\n');
        out.tsv.push_str(&tsv(&grid));
        let _ = write!(out.text, "\nF1 by test corpus\n{}", aligned(&grid));
    }
    out
}
