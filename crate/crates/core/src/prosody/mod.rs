//! Word-level prosodic inputs: pause and duration features from time
//! alignments, and energy/pitch frame patches for the convolutional encoder.

mod alignment;
mod features;
mod frames;
pub mod io;

use std::collections::BTreeMap;

pub use alignment::{validate_alignments, DurationStats, WordAlignment};
pub use features::{
    compute_pause_duration, extract_frame_patch, pause_bucket, sentence_features, FramePatch,
    PatchConfig, PauseDuration, SentenceProsody, DURATION_FEATURES, PAUSE_BUCKETS,
    PAUSE_BUCKET_EDGES,
};
pub use frames::{
    normalize_speaker, FrameTrack, NormalizationWarning, DEFAULT_FRAME_PERIOD, SIGMA_FLOOR,
};

#[derive(Debug, thiserror::Error)]
pub enum ProsodyError {
    #[error("alignment {index}: {message}")]
    Alignment { index: usize, message: String },
    #[error("word {word:?} at [{start}, {end}) lies outside the frame track")]
    OutsideTrack { word: String, start: f64, end: f64 },
    #[error("frame track: {0}")]
    Track(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("no frame track for speaker {0:?}")]
    MissingSpeaker(String),
    #[error("{0}")]
    Config(String),
}

/// Features for every sentence of an alignment file. Each sentence is cut
/// from the (normalized) track of its first word's speaker.
pub fn corpus_features(
    sentences: &io::SentenceAlignments,
    tracks: &BTreeMap<String, FrameTrack>,
    stats: &DurationStats,
    patch: PatchConfig,
) -> Result<Vec<SentenceProsody>, ProsodyError> {
    sentences
        .iter()
        .map(|(id, words)| {
            let speaker = words
                .first()
                .map(|w| w.speaker_id.as_str())
                .ok_or_else(|| ProsodyError::Config(format!("sentence {id} has no words")))?;
            let track = tracks
                .get(speaker)
                .ok_or_else(|| ProsodyError::MissingSpeaker(speaker.to_string()))?;
            sentence_features(id, words, track, stats, patch)
        })
        .collect()
}
