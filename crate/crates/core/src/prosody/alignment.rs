use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ProsodyError;

/// A time-aligned word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordAlignment {
    pub word: String,
    pub start: f64,
    pub end: f64,
    pub speaker_id: String,
}

impl WordAlignment {
    pub fn new(word: impl Into<String>, start: f64, end: f64, speaker_id: impl Into<String>) -> Self {
        WordAlignment {
            word: word.into(),
            start,
            end,
            speaker_id: speaker_id.into(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Checks that alignments are well formed, sorted and non-overlapping.
pub fn validate_alignments(alignments: &[WordAlignment]) -> Result<(), ProsodyError> {
    for (i, a) in alignments.iter().enumerate() {
        if !(a.start >= 0.0 && a.end > a.start) {
            return Err(ProsodyError::Alignment {
                index: i,
                message: format!("word {:?} has start {} and end {}", a.word, a.start, a.end),
            });
        }
        if i > 0 && a.start < alignments[i - 1].end {
            return Err(ProsodyError::Alignment {
                index: i,
                message: format!(
                    "word {:?} starts at {} before the previous word ends at {}",
                    a.word,
                    a.start,
                    alignments[i - 1].end
                ),
            });
        }
    }
    Ok(())
}

/// Mean word durations per (lowercased) word type, with a global fallback.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub by_type: HashMap<String, f64>,
    pub global_mean: f64,
}

impl DurationStats {
    pub fn from_alignments<'a>(alignments: impl IntoIterator<Item = &'a WordAlignment>) -> Self {
        let mut sums: HashMap<String, (f64, usize)> = HashMap::new();
        let (mut total, mut count) = (0.0, 0usize);
        for a in alignments {
            let d = a.duration();
            let e = sums.entry(a.word.to_lowercase()).or_insert((0.0, 0));
            e.0 += d;
            e.1 += 1;
            total += d;
            count += 1;
        }
        DurationStats {
            by_type: sums
                .into_iter()
                .map(|(w, (s, n))| (w, s / n as f64))
                .collect(),
            global_mean: if count > 0 { total / count as f64 } else { 1.0 },
        }
    }

    pub fn mean_for(&self, word: &str) -> f64 {
        self.by_type
            .get(&word.to_lowercase())
            .copied()
            .filter(|m| *m > 0.0)
            .unwrap_or(self.global_mean)
    }
}
