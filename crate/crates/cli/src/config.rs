//! The TOML run file. Every section is optional and every key has a default.

use std::path::Path;

use anyhow::Context;
use grounding_core::datakit::{PreprocessConfig, SynthConfig};
use grounding_core::textenc::EncoderSpec;
use grounding_model::baseline::{DetectorConfig, MatcherConfig};
use grounding_model::bev::{BevConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunFile {
    /// Run seed; `--seed` wins over it.
    pub seed: Option<u64>,
    /// Text encoder for the matcher (the BEV model reads `model.text`).
    pub encoder: Option<EncoderSpec>,
    pub synth: SynthConfig,
    pub split: SplitSection,
    pub preprocess: PreprocessConfig,
    pub annotate: AnnotateSection,
    pub detector: DetectorConfig,
    pub matcher: MatcherConfig,
    pub model: BevConfig,
    pub train: TrainConfig,
    pub viz: VizSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// Fraction of scenes written to `test.jsonl` by `synth`.
    pub test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { test_fraction: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSection {
    pub sampling_rate: f64,
    pub concurrency: usize,
    /// Use the offline mock clients instead of HTTP endpoints.
    pub mock: bool,
    pub caption_prompt: Option<String>,
    pub paraphrase_templates: Option<Vec<String>>,
}

impl Default for AnnotateSection {
    fn default() -> Self {
        Self {
            sampling_rate: 0.2,
            concurrency: 4,
            mock: false,
            caption_prompt: None,
            paraphrase_templates: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VizSection {
    /// Output image side in pixels.
    pub size: u32,
    /// Half-width of the plotted square, meters.
    pub extent: f64,
    /// Samples rendered per call.
    pub limit: usize,
}

impl Default for VizSection {
    fn default() -> Self {
        Self {
            size: 640,
            extent: 54.0,
            limit: 16,
        }
    }
}

impl RunFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    /// Pushes one seed into every stochastic component.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.synth.seed = seed;
        self.detector.seed = seed;
        self.matcher.seed = seed;
        self.train.seed = seed;
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn encoder(&self) -> EncoderSpec {
        self.encoder.clone().unwrap_or(EncoderSpec::Hash { dim: 64, seed: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_defaults() {
        let f: RunFile = toml::from_str("seed = 5\n[model]\nwidth = 16\n[model.grid]\ncell = 3.0\n").unwrap();
        assert_eq!(f.seed, Some(5));
        assert_eq!(f.model.width, 16);
        assert_eq!(f.model.grid.cell, 3.0);
        assert_eq!(f.model.heads, BevConfig::default().heads);
        assert_eq!(f.matcher, MatcherConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunFile>("[trian]\nlr = 1.0\n").is_err());
    }

    #[test]
    fn seed_reaches_every_section() {
        let mut f = RunFile::default();
        f.apply_seed(9);
        assert_eq!((f.synth.seed, f.detector.seed, f.matcher.seed, f.train.seed), (9, 9, 9, 9));
    }

    #[test]
    fn encoder_spec_round_trips() {
        let f: RunFile = toml::from_str("[encoder]\nkind = \"hash\"\ndim = 16\nseed = 2\n").unwrap();
        assert_eq!(f.encoder(), EncoderSpec::Hash { dim: 16, seed: 2 });
    }
}
