use serde::{Deserialize, Serialize};

use super::alignment::{validate_alignments, DurationStats, WordAlignment};
use super::frames::FrameTrack;
use super::ProsodyError;

/// Upper edges (seconds) of pause buckets 0..=4; longer pauses fall in 5.
pub const PAUSE_BUCKET_EDGES: [f64; 5] = [0.0, 0.05, 0.2, 1.0, 2.0];
pub const PAUSE_BUCKETS: usize = PAUSE_BUCKET_EDGES.len() + 1;

/// Number of scalar (non-embedded) pause/duration features per word.
pub const DURATION_FEATURES: usize = 2;

pub fn pause_bucket(gap: f64) -> usize {
    PAUSE_BUCKET_EDGES
        .iter()
        .position(|&edge| gap <= edge)
        .unwrap_or(PAUSE_BUCKET_EDGES.len())
}

/// Word-level pause and duration features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauseDuration {
    pub pause_before_bucket: usize,
    pub pause_after_bucket: usize,
    pub duration_norm: f64,
    pub duration_raw: f64,
}

impl PauseDuration {
    /// The real-valued part of the word's feature vector:
    /// `[duration_norm, ln(1 + duration_raw)]`.
    pub fn scalars(&self) -> [f64; DURATION_FEATURES] {
        [self.duration_norm, self.duration_raw.ln_1p()]
    }
}

pub fn compute_pause_duration(
    alignments: &[WordAlignment],
    stats: &DurationStats,
) -> Result<Vec<PauseDuration>, ProsodyError> {
    validate_alignments(alignments)?;
    let n = alignments.len();
    Ok((0..n)
        .map(|i| {
            let a = &alignments[i];
            let before = if i == 0 { 0.0 } else { a.start - alignments[i - 1].end };
            let after = if i + 1 == n { 0.0 } else { alignments[i + 1].start - a.end };
            let raw = a.duration();
            PauseDuration {
                pause_before_bucket: pause_bucket(before),
                pause_after_bucket: pause_bucket(after),
                duration_norm: raw / stats.mean_for(&a.word),
                duration_raw: raw,
            }
        })
        .collect())
}

/// Energy/pitch frames around one word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePatch {
    /// `[energy, f0]` per frame.
    pub frames: Vec<[f64; 2]>,
    pub word_interior_mask: Vec<bool>,
}

impl FramePatch {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames flattened row-major into `n_frames × 2`.
    pub fn flat(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.iter().copied()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    pub context_s: f64,
    pub max_frames: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            context_s: 0.12,
            max_frames: 100,
        }
    }
}

/// Cuts the frames covering `[start - context, end + context]` out of a
/// track. Frames outside the track are zero. Windows longer than
/// `max_frames` are cropped around the word midpoint.
pub fn extract_frame_patch(
    track: &FrameTrack,
    alignment: &WordAlignment,
    context_s: f64,
    max_frames: usize,
) -> Result<FramePatch, ProsodyError> {
    if context_s < 0.0 || max_frames == 0 {
        return Err(ProsodyError::Config(format!(
            "context {context_s} s and max_frames {max_frames} must be non-negative and positive"
        )));
    }
    if alignment.end <= track.start_time || alignment.start >= track.end_time() {
        return Err(ProsodyError::OutsideTrack {
            word: alignment.word.clone(),
            start: alignment.start,
            end: alignment.end,
        });
    }
    let period = track.frame_period;
    let to_frame = |t: f64| ((t - track.start_time) / period).round() as i64;
    let full =
        ((alignment.end - alignment.start + 2.0 * context_s) / period).round().max(1.0) as i64;
    let mut first = to_frame(alignment.start - context_s);
    let mut count = full;
    if full > max_frames as i64 {
        count = max_frames as i64;
        let mid = ((alignment.start + alignment.end) / 2.0 - track.start_time) / period;
        first = (mid - count as f64 / 2.0).round() as i64;
    }
    let (word_first, word_last) = (to_frame(alignment.start), to_frame(alignment.end));
    let mut frames = Vec::with_capacity(count as usize);
    let mut mask = Vec::with_capacity(count as usize);
    for f in first..first + count {
        frames.push(track.frame(f).unwrap_or([0.0, 0.0]));
        mask.push(f >= word_first && f < word_last);
    }
    Ok(FramePatch {
        frames,
        word_interior_mask: mask,
    })
}

/// All prosodic inputs for one sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceProsody {
    pub sentence_id: String,
    pub words: Vec<String>,
    pub pause_duration: Vec<PauseDuration>,
    pub patches: Vec<FramePatch>,
}

impl SentenceProsody {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Builds per-word features for a sentence whose words share one speaker
/// track.
pub fn sentence_features(
    sentence_id: &str,
    alignments: &[WordAlignment],
    track: &FrameTrack,
    stats: &DurationStats,
    patch: PatchConfig,
) -> Result<SentenceProsody, ProsodyError> {
    let pause_duration = compute_pause_duration(alignments, stats)?;
    let patches = alignments
        .iter()
        .map(|a| extract_frame_patch(track, a, patch.context_s, patch.max_frames))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SentenceProsody {
        sentence_id: sentence_id.to_string(),
        words: alignments.iter().map(|a| a.word.clone()).collect(),
        pause_duration,
        patches,
    })
}
