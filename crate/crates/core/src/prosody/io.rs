//! Text formats for alignments, frame tracks and cached features.
//!
//! * Alignments: tab-separated `sentence_id, word, start_s, end_s, speaker_id`.
//! * Frame tracks: comma-separated `time_s, energy, f0` with a header row.
//! * Features: JSON lines, one [`SentenceProsody`] per line.

use std::collections::BTreeMap;

use super::features::SentenceProsody;
use super::frames::{FrameTrack, DEFAULT_FRAME_PERIOD};
use super::{ProsodyError, WordAlignment};

/// Alignments grouped by sentence id, in first-appearance order.
pub type SentenceAlignments = Vec<(String, Vec<WordAlignment>)>;

pub fn parse_alignments(text: &str) -> Result<SentenceAlignments, ProsodyError> {
    let mut out: SentenceAlignments = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |message: String| ProsodyError::Format {
            line: lineno + 1,
            message,
        };
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated fields, found {}", fields.len())));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("not a number: {s:?}")))
        };
        let alignment = WordAlignment::new(fields[1], num(fields[2])?, num(fields[3])?, fields[4].trim());
        let id = fields[0].trim().to_string();
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            out.push((id, Vec::new()));
            out.len() - 1
        });
        out[slot].1.push(alignment);
    }
    Ok(out)
}

pub fn write_alignments(sentences: &SentenceAlignments) -> String {
    let mut out = String::new();
    for (id, words) in sentences {
        for w in words {
            out.push_str(&format!(
                "{id}\t{}\t{}\t{}\t{}\n",
                w.word, w.start, w.end, w.speaker_id
            ));
        }
    }
    out
}

/// Reads a frame track. The frame period is taken from the first two time
/// stamps (10 ms when there is only one frame).
pub fn parse_frame_track(text: &str) -> Result<FrameTrack, ProsodyError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.split(',').next().map(|h| h.trim().parse::<f64>().is_err()) == Some(true) => {}
        Some((i, _)) => {
            return Err(ProsodyError::Format {
                line: i + 1,
                message: "missing header row (time_s,energy,f0)".into(),
            })
        }
        None => {
            return Err(ProsodyError::Format {
                line: 1,
                message: "empty frame track".into(),
            })
        }
    }
    let (mut times, mut energy, mut f0) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |message: String| ProsodyError::Format { line: i + 1, message };
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 comma-separated fields, found {}", fields.len())));
        }
        let mut vals = [0.0; 3];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| bad(format!("not a number: {f:?}")))?;
        }
        times.push(vals[0]);
        energy.push(vals[1]);
        f0.push(vals[2]);
    }
    if times.is_empty() {
        return Err(ProsodyError::Format {
            line: 2,
            message: "frame track has no frames".into(),
        });
    }
    let period = if times.len() > 1 {
        times[1] - times[0]
    } else {
        DEFAULT_FRAME_PERIOD
    };
    FrameTrack::new(times[0], period, energy, f0)
}

pub fn write_frame_track(track: &FrameTrack) -> String {
    let mut out = String::from("time_s,energy,f0\n");
    for i in 0..track.len() {
        let t = track.start_time + i as f64 * track.frame_period;
        out.push_str(&format!("{:.3},{},{}\n", t, track.energy[i], track.f0[i]));
    }
    out
}

pub fn write_features(features: &[SentenceProsody]) -> Result<String, ProsodyError> {
    let mut out = String::new();
    for f in features {
        out.push_str(&serde_json::to_string(f).map_err(|e| ProsodyError::Track(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_features(text: &str) -> Result<Vec<SentenceProsody>, ProsodyError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ProsodyError::Format {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignments_group_by_sentence() {
        let text = "s1\ti\t0.0\t0.2\tA\ns1\tagree\t0.25\t0.6\tA\ns2\tyes\t1.0\t1.3\tB\n";
        let s = parse_alignments(text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].1.len(), 2);
        assert_eq!(s[1].1[0].speaker_id, "B");
        assert_eq!(parse_alignments(&write_alignments(&s)).unwrap(), s);
    }

    #[test]
    fn alignment_errors_name_the_line() {
        match parse_alignments("s1\ti\t0.0\t0.2\tA\ns1\tx\tzero\t0.3\tA\n") {
            Err(ProsodyError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn frame_track_needs_header() {
        let t = parse_frame_track("time_s,energy,f0\n0.00,1,100\n0.01,2,0\n0.02,3,110\n").unwrap();
        assert_eq!(t.len(), 3);
        assert!((t.frame_period - 0.01).abs() < 1e-12);
        assert_eq!(t.voiced, vec![true, false, true]);
        assert!(parse_frame_track("0.00,1,100\n").is_err());
        let back = parse_frame_track(&write_frame_track(&t)).unwrap();
        assert_eq!(back.energy, t.energy);
    }
}
