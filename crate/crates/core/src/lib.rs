//! Conditional denoising diffusion over complex STFT spectrograms of single
//! ECG heartbeats. One network handles three tasks, selected by a task
//! embedding and a sample mask: unconditional-per-class generation, gap
//! imputation, and forecasting a beat from its predecessor.
//!
//! Module map:
//! - [`ingest`]: WFDB format-212 records, beat segmentation, splits, a synthetic beat generator
//! - [`signal`]: beats, task masks and context selection
//! - [`spectral`]: STFT / inverse STFT with an exact adjoint
//! - [`schedule`]: noise schedule and single-step diffusion algebra
//! - [`denoiser`]: the conditioned U-Net
//! - [`engine`]: training and ancestral sampling
//! - [`metrics`]: RMSE, MAE, DTW, EMD, MMD, FID and set-level reports
//! - [`augment`]: beat classifier and the augmentation comparison
//! - [`checkpoint`]: on-disk format for trained networks

pub mod augment;
pub mod checkpoint;
pub mod denoiser;
pub mod engine;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod schedule;
pub mod signal;
pub mod spectral;

pub use denoiser::{ConditionBundle, DenoiserConfig, DenoiserParams};
pub use engine::{Model, ModelSpec, SynthesisRequest, TrainConfig, TrainLog};
pub use error::{Error, Result};
pub use ingest::{BeatDataset, SplitTag};
pub use metrics::MetricsReport;
pub use schedule::{NoiseSchedule, ScheduleConfig};
pub use signal::{BeatClass, Gap, Heartbeat, Mask, TaskKind};
pub use spectral::{SpectralConfig, Spectrogram};
