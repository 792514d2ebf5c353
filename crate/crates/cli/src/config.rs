//! The run configuration file.
//!
//! A TOML document with the sections below. Every key is optional and falls
//! back to the default shown by `cardiodiff config` (or written into any run
//! directory as `config.toml`); unknown keys are an error.
//!
//! ```toml
//! [data]          # train_csv, test_csv, records_dir, channel, split_ratio, seed
//! [spectral]      # n_fft, hop, window (hann|rectangular), pad_mode (reflect|zero), normalized
//! [schedule]      # steps, beta_min, beta_max, spacing (linear|cosine), variance (beta|posterior)
//! [amplitude]     # offset, scale applied to samples before the STFT
//! [model]         # denoiser widths and depths, d_emb, embed_planes, kernel, seed
//! [train]         # learning_rate, batch_size, epochs, task_mix, aux_weight, ...
//! [eval]          # pairing, extractor, mmd_bandwidth (0 = median heuristic)
//! [synth-data]    # enabled, records_per_class, beats_per_record, seed
//! [classifier]    # channels, kernel, feature_dim, learning_rate, epochs, batch_size, seed, classes
//! [augment]       # per_class (0 = balance classes up to the majority count), seed
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cardiodiff::augment::{AugmentCount, ClassifierConfig};
use cardiodiff::engine::Amplitude;
use cardiodiff::metrics::{EvalOptions, ExtractorKind, Pairing};
use cardiodiff::{DenoiserConfig, ModelSpec, ScheduleConfig, SpectralConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Empty means "not set".
    pub train_csv: String,
    pub test_csv: String,
    pub records_dir: String,
    pub channel: String,
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train_csv: String::new(),
            test_csv: String::new(),
            records_dir: String::new(),
            channel: "MLII".into(),
            split_ratio: 0.7,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub pairing: Pairing,
    pub extractor: ExtractorKind,
    pub mmd_bandwidth: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalOptions::default();
        Self { pairing: d.pairing, extractor: d.extractor, mmd_bandwidth: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthDataSection {
    pub enabled: bool,
    pub records_per_class: usize,
    pub beats_per_record: usize,
    pub seed: u64,
}

impl Default for SynthDataSection {
    fn default() -> Self {
        Self { enabled: false, records_per_class: 10, beats_per_record: 20, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub per_class: usize,
    pub seed: u64,
}

impl AugmentSection {
    pub fn count(&self) -> AugmentCount {
        match self.per_class {
            0 => AugmentCount::Balance,
            n => AugmentCount::PerClass(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub spectral: SpectralConfig,
    pub schedule: ScheduleConfig,
    pub amplitude: Amplitude,
    pub model: DenoiserConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    #[serde(rename = "synth-data")]
    pub synth_data: SynthDataSection,
    pub classifier: ClassifierConfig,
    pub augment: AugmentSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn model_spec(&self, beat_len: usize) -> ModelSpec {
        ModelSpec {
            denoiser: self.model.clone(),
            spectral: self.spectral,
            schedule: self.schedule,
            beat_len,
            amplitude: self.amplitude,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            pairing: self.eval.pairing,
            extractor: self.eval.extractor,
            gap: None,
            mmd_bandwidth: (self.eval.mmd_bandwidth > 0.0).then_some(self.eval.mmd_bandwidth),
        }
    }

    /// Resolves a path flag against the config's data section.
    pub fn data_path(flag: Option<&Path>, configured: &str, what: &str) -> Result<PathBuf> {
        match (flag, configured.is_empty()) {
            (Some(p), _) => Ok(p.to_path_buf()),
            (None, false) => Ok(PathBuf::from(configured)),
            (None, true) => anyhow::bail!("no {what} given: pass a flag or set it in the [data] section"),
        }
    }
}
