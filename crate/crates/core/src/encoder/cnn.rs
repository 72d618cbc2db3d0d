use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::nn::{xavier, Graph, ParamId, ParamStore, Tensor, Var};
use crate::prosody::FramePatch;

/// Channels per frame: energy and f0.
pub const FRAME_CHANNELS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub widths: Vec<usize>,
    pub filters_per_width: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            widths: vec![3, 5, 10],
            filters_per_width: 32,
        }
    }
}

impl CnnConfig {
    pub fn output_dim(&self) -> usize {
        self.widths.len() * self.filters_per_width
    }

    pub fn validate(&self, max_frames: usize) -> Result<(), EncoderError> {
        if self.widths.is_empty() {
            return Err(EncoderError::Config("cnn needs at least one filter width".into()));
        }
        if self.filters_per_width == 0 {
            return Err(EncoderError::Config("cnn filters_per_width must be at least 1".into()));
        }
        let mut sorted = self.widths.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.widths.len() {
            return Err(EncoderError::Config(format!("cnn widths {:?} are not distinct", self.widths)));
        }
        if let Some(w) = self.widths.iter().find(|&&w| w == 0 || w > max_frames) {
            return Err(EncoderError::Config(format!(
                "cnn width {w} must lie in 1..={max_frames}"
            )));
        }
        Ok(())
    }
}

/// Convolutions over a word's frame patch, max-pooled over time.
#[derive(Clone, Debug)]
pub struct ProsodyCnn {
    /// `(width, weight, bias)` in ascending width order.
    filters: Vec<(usize, ParamId, ParamId)>,
    pub config: CnnConfig,
}

impl ProsodyCnn {
    pub fn new(
        params: &mut ParamStore,
        prefix: &str,
        config: &CnnConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, EncoderError> {
        let mut widths = config.widths.clone();
        widths.sort_unstable();
        let n = config.filters_per_width;
        let mut filters = Vec::new();
        for w in widths {
            let weight = params.add(
                format!("{prefix}.w{w}.weight"),
                xavier(n, w * FRAME_CHANNELS, rng),
            )?;
            let bias = params.add(format!("{prefix}.w{w}.bias"), Tensor::zeros(1, n))?;
            filters.push((w, weight, bias));
        }
        Ok(ProsodyCnn {
            filters,
            config: config.clone(),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// `1 × m·N` features for one patch.
    pub fn forward(&self, g: &mut Graph, patch: &FramePatch) -> Result<Var, EncoderError> {
        if patch.is_empty() {
            return Err(EncoderError::Config("frame patch has no frames".into()));
        }
        let x = Tensor::matrix(patch.len(), FRAME_CHANNELS, patch.flat())?;
        let x = g.constant(x);
        let mut pooled = Vec::with_capacity(self.filters.len());
        for &(w, weight, bias) in &self.filters {
            let (weight, bias) = (g.param(weight), g.param(bias));
            let h = g.conv1d(x, weight, bias, w)?;
            let h = g.relu(h);
            pooled.push(g.max_pool_time(h)?);
        }
        Ok(g.concat_cols(&pooled)?)
    }
}
