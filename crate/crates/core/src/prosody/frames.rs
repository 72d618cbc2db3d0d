use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ProsodyError;

pub const DEFAULT_FRAME_PERIOD: f64 = 0.010;

/// Floor on standard deviations used for z-scoring.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Frame-level energy and pitch for one speaker. An `f0` of zero marks an
/// unvoiced frame; voicing is fixed when the track is built so that
/// normalization cannot turn voiced frames into unvoiced ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTrack {
    pub start_time: f64,
    pub frame_period: f64,
    pub energy: Vec<f64>,
    pub f0: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl FrameTrack {
    pub fn new(
        start_time: f64,
        frame_period: f64,
        energy: Vec<f64>,
        f0: Vec<f64>,
    ) -> Result<Self, ProsodyError> {
        if energy.len() != f0.len() {
            return Err(ProsodyError::Track(format!(
                "energy has {} frames but f0 has {}",
                energy.len(),
                f0.len()
            )));
        }
        if frame_period.is_nan() || frame_period <= 0.0 {
            return Err(ProsodyError::Track(format!(
                "frame period must be positive, got {frame_period}"
            )));
        }
        let voiced = f0.iter().map(|&v| v > 0.0).collect();
        Ok(FrameTrack {
            start_time,
            frame_period,
            energy,
            f0,
            voiced,
        })
    }

    pub fn len(&self) -> usize {
        self.energy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energy.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.len() as f64 * self.frame_period
    }

    /// `[energy, f0]` at frame `index`, or `None` outside the track.
    pub fn frame(&self, index: i64) -> Option<[f64; 2]> {
        if index < 0 || index as usize >= self.len() {
            return None;
        }
        let i = index as usize;
        Some([self.energy[i], self.f0[i]])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationWarning {
    pub speaker_id: String,
    pub message: String,
}

fn moments(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        sum += v;
        sq += v * v;
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    Some((mean, var.sqrt().max(SIGMA_FLOOR)))
}

/// Per-speaker z-scoring: energy over all frames, f0 over voiced frames only.
/// Unvoiced frames keep f0 = 0. Speakers without voiced frames keep their
/// f0 unscaled and get a warning.
pub fn normalize_speaker(
    tracks: &BTreeMap<String, FrameTrack>,
) -> Result<(BTreeMap<String, FrameTrack>, Vec<NormalizationWarning>), ProsodyError> {
    let mut out = BTreeMap::new();
    let mut warnings = Vec::new();
    for (speaker, track) in tracks {
        if track.is_empty() {
            return Err(ProsodyError::Track(format!("speaker {speaker} has no frames")));
        }
        let mut norm = track.clone();
        let (mean, sd) = moments(track.energy.iter().copied()).expect("non-empty track");
        norm.energy.iter_mut().for_each(|e| *e = (*e - mean) / sd);

        let voiced = track
            .f0
            .iter()
            .zip(&track.voiced)
            .filter(|(_, &v)| v)
            .map(|(&f, _)| f);
        match moments(voiced) {
            Some((mean, sd)) => {
                for (f, &v) in norm.f0.iter_mut().zip(&track.voiced) {
                    *f = if v { (*f - mean) / sd } else { 0.0 };
                }
            }
            None => {
                log::warn!("speaker {speaker} has no voiced frames; f0 left unscaled");
                warnings.push(NormalizationWarning {
                    speaker_id: speaker.clone(),
                    message: "no voiced frames; f0 left unscaled".into(),
                });
            }
        }
        out.insert(speaker.clone(), norm);
    }
    Ok((out, warnings))
}
