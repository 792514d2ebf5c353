use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_BANDS: usize = 8;
pub const STATISTICAL_DIM: usize = 5 + N_BANDS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    ClassifierPenultimate,
    Statistical,
}

impl ExtractorKind {
    pub fn tag(self) -> &'static str {
        match self {
            ExtractorKind::ClassifierPenultimate => "classifier-penultimate",
            ExtractorKind::Statistical => "statistical",
        }
    }
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classifier-penultimate" | "classifier" => Ok(Self::ClassifierPenultimate),
            "statistical" => Ok(Self::Statistical),
            other => Err(Error::InvalidArgument(format!("unknown feature extractor {other:?}"))),
        }
    }
}

/// Anything that maps beats to fixed-width feature vectors.
pub trait FeatureMap {
    fn feature_dim(&self) -> usize;
    fn features(&self, beats: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

/// Mean, variance, skewness, kurtosis, R amplitude (peak above the median),
/// then the power spectrum summed over 8 equal-width bands from DC upward.
pub fn statistical_features(beat: &[f64]) -> Vec<f64> {
    let n = beat.len() as f64;
    let mean = beat.iter().sum::<f64>() / n;
    let m2 = beat.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = beat.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let m4 = beat.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let (skew, kurt) = if m2 > 1e-15 { (m3 / m2.powf(1.5), m4 / (m2 * m2)) } else { (0.0, 0.0) };
    let mut sorted = beat.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let peak = sorted[sorted.len() - 1];

    let mut buf: Vec<Complex<f64>> = beat.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    let n_bins = beat.len() / 2 + 1;
    let mut bands = vec![0.0; N_BANDS];
    for (k, c) in buf[..n_bins].iter().enumerate() {
        let band = (k * N_BANDS / n_bins).min(N_BANDS - 1);
        bands[band] += c.norm_sqr() / n;
    }
    let mut out = vec![mean, m2, skew, kurt, peak - median];
    out.extend(bands);
    out
}

/// Feature matrix for `beats`; the classifier extractor needs `classifier`.
pub fn extract_features(beats: &[Vec<f64>], kind: ExtractorKind, classifier: Option<&dyn FeatureMap>) -> Result<Vec<Vec<f64>>> {
    match kind {
        ExtractorKind::Statistical => Ok(beats.iter().map(|b| statistical_features(b)).collect()),
        ExtractorKind::ClassifierPenultimate => match classifier {
            Some(c) => c.features(beats),
            None => Err(Error::NoFeatureExtractor("no trained classifier was supplied".into())),
        },
    }
}
