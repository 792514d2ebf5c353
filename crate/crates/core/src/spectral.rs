//! Short-time Fourier transform with an exact overlap-add inverse.
//!
//! A beat becomes a `2 x F x M` grid holding the real and imaginary parts of a
//! centered STFT (`F = n_fft/2 + 1` bins, `M = len/hop + 1` frames). Phase is
//! kept so the inverse is lossless; the same transform encodes the diffusion
//! state and both spectrogram conditions.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    /// Mirror without repeating the edge sample.
    Reflect,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
    pub pad_mode: PadMode,
    /// Scale coefficients by `1/sqrt(n_fft)`.
    pub normalized: bool,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { n_fft: 64, hop: 4, window: Window::Hann, pad_mode: PadMode::Reflect, normalized: true }
    }
}

impl SpectralConfig {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        Self { n_fft, hop, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.n_fft % 2 != 0 {
            return Err(Error::BadSpectralConfig(format!("n_fft must be even and >= 2, got {}", self.n_fft)));
        }
        if self.hop == 0 || self.hop > self.n_fft || self.n_fft % self.hop != 0 {
            return Err(Error::BadSpectralConfig(format!("hop {} must divide n_fft {}", self.hop, self.n_fft)));
        }
        Ok(())
    }

    pub fn n_freq(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    /// `(2, F, M)` for a signal of `len` samples.
    pub fn grid_shape(&self, len: usize) -> (usize, usize, usize) {
        (2, self.n_freq(), self.n_frames(len))
    }

    fn scale(&self) -> f64 {
        if self.normalized {
            1.0 / (self.n_fft as f64).sqrt()
        } else {
            1.0
        }
    }
}

/// Complex STFT stored as two real channels, laid out `[channel][bin][frame]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    data: Vec<f64>,
    n_freq: usize,
    n_frames: usize,
    pub config: SpectralConfig,
    pub source_length: usize,
}

impl Spectrogram {
    pub fn zeros(config: SpectralConfig, source_length: usize) -> Self {
        let (_, f, m) = config.grid_shape(source_length);
        Self { data: vec![0.0; 2 * f * m], n_freq: f, n_frames: m, config, source_length }
    }

    /// Wraps a flat `[2][F][M]` buffer shaped for `source_length`.
    pub fn from_data(config: SpectralConfig, source_length: usize, data: Vec<f64>) -> Result<Self> {
        let (c, f, m) = config.grid_shape(source_length);
        if data.len() != c * f * m {
            return Err(Error::DimensionMismatch { expected: c * f * m, actual: data.len() });
        }
        Ok(Self { data, n_freq: f, n_frames: m, config, source_length })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (2, self.n_freq, self.n_frames)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, channel: usize, bin: usize, frame: usize) -> f64 {
        self.data[(channel * self.n_freq + bin) * self.n_frames + frame]
    }

    fn set(&mut self, channel: usize, bin: usize, frame: usize, v: f64) {
        self.data[(channel * self.n_freq + bin) * self.n_frames + frame] = v;
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.shape() == other.shape() && self.source_length == other.source_length
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Spectrogram, b: f64) -> Result<Spectrogram> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch { expected: self.len(), actual: other.len() });
        }
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Ok(Spectrogram { data, ..self.clone() })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Energy per frame, summed over bins and both channels.
    pub fn frame_energy(&self, frame: usize) -> f64 {
        (0..2).flat_map(|c| (0..self.n_freq).map(move |k| (c, k))).map(|(c, k)| self.get(c, k, frame).powi(2)).sum()
    }
}

/// Precomputed window, FFT plans and overlap-add normalization for one
/// `(config, signal length)` pair.
#[derive(Clone)]
pub struct SpectralPlan {
    config: SpectralConfig,
    len: usize,
    window: Vec<f64>,
    /// Window-square sum over the padded signal.
    wss: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan").field("config", &self.config).field("len", &self.len).finish()
    }
}

const WSS_FLOOR: f64 = 1e-11;

impl SpectralPlan {
    pub fn new(config: SpectralConfig, len: usize) -> Result<Self> {
        config.validate()?;
        if len == 0 {
            return Err(Error::BadSpectralConfig("signal must not be empty".into()));
        }
        if config.pad_mode == PadMode::Reflect && len <= config.n_fft / 2 {
            return Err(Error::BadSpectralConfig(format!(
                "reflect padding needs more than {} samples, got {len}",
                config.n_fft / 2
            )));
        }
        let window = config.window.coefficients(config.n_fft);
        let mut wss = vec![0.0; len + config.n_fft];
        for m in 0..config.n_frames(len) {
            for (n, w) in window.iter().enumerate() {
                wss[m * config.hop + n] += w * w;
            }
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(config.n_fft);
        let inverse = planner.plan_fft_inverse(config.n_fft);
        Ok(Self { config, len, window, wss, forward, inverse })
    }

    pub fn config(&self) -> &SpectralConfig {
        &self.config
    }

    pub fn signal_len(&self) -> usize {
        self.len
    }

    pub fn grid_shape(&self) -> (usize, usize, usize) {
        self.config.grid_shape(self.len)
    }

    fn pad(&self) -> usize {
        self.config.n_fft / 2
    }

    fn padded(&self, x: &[f64]) -> Vec<f64> {
        let pad = self.pad();
        let n = x.len();
        let mut out = Vec::with_capacity(n + 2 * pad);
        match self.config.pad_mode {
            PadMode::Reflect => {
                out.extend((1..=pad).rev().map(|i| x[i]));
                out.extend_from_slice(x);
                out.extend((1..=pad).map(|i| x[n - 1 - i]));
            }
            PadMode::Zero => {
                out.resize(pad, 0.0);
                out.extend_from_slice(x);
                out.resize(n + 2 * pad, 0.0);
            }
        }
        out
    }

    pub fn stft(&self, x: &[f64]) -> Result<Spectrogram> {
        if x.len() != self.len {
            return Err(Error::DimensionMismatch { expected: self.len, actual: x.len() });
        }
        let cfg = &self.config;
        let xp = self.padded(x);
        let mut spec = Spectrogram::zeros(*cfg, self.len);
        let (_, n_freq, n_frames) = spec.shape();
        let scale = cfg.scale();
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        for m in 0..n_frames {
            let start = m * cfg.hop;
            for (n, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(self.window[n] * xp[start + n], 0.0);
            }
            self.forward.process(&mut buf);
            for (k, c) in buf.iter().take(n_freq).enumerate() {
                spec.set(0, k, m, c.re * scale);
                spec.set(1, k, m, c.im * scale);
            }
        }
        Ok(spec)
    }

    /// Overlap-add inverse with window-square normalization. The imaginary
    /// parts of the DC and Nyquist bins do not contribute.
    pub fn istft(&self, spec: &Spectrogram) -> Result<Vec<f64>> {
        self.check(spec)?;
        let cfg = &self.config;
        let n = cfg.n_fft;
        let (_, n_freq, n_frames) = spec.shape();
        let scale = 1.0 / (cfg.scale() * n as f64);
        let mut ola = vec![0.0; self.wss.len()];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for m in 0..n_frames {
            for k in 0..n_freq {
                let im = if k == 0 || k == n / 2 { 0.0 } else { spec.get(1, k, m) };
                buf[k] = Complex::new(spec.get(0, k, m), im);
            }
            for k in n_freq..n {
                buf[k] = buf[n - k].conj();
            }
            self.inverse.process(&mut buf);
            let start = m * cfg.hop;
            for (i, c) in buf.iter().enumerate() {
                ola[start + i] += self.window[i] * c.re * scale;
            }
        }
        let pad = self.pad();
        (0..self.len)
            .map(|i| {
                let w = self.wss[i + pad];
                if w < WSS_FLOOR {
                    Err(Error::NonInvertibleConfig(i))
                } else {
                    Ok(ola[i + pad] / w)
                }
            })
            .collect()
    }

    /// Transpose of [`istft`](Self::istft) as a linear map: pulls a gradient on
    /// the signal back to the spectrogram.
    pub fn istft_adjoint(&self, grad: &[f64]) -> Result<Spectrogram> {
        if grad.len() != self.len {
            return Err(Error::DimensionMismatch { expected: self.len, actual: grad.len() });
        }
        let cfg = &self.config;
        let n = cfg.n_fft;
        let pad = self.pad();
        let mut gp = vec![0.0; self.wss.len()];
        for (i, g) in grad.iter().enumerate() {
            let w = self.wss[i + pad];
            if w < WSS_FLOOR {
                return Err(Error::NonInvertibleConfig(i));
            }
            gp[i + pad] = g / w;
        }
        let mut spec = Spectrogram::zeros(*cfg, self.len);
        let (_, n_freq, n_frames) = spec.shape();
        let scale = 1.0 / (cfg.scale() * n as f64);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for m in 0..n_frames {
            let start = m * cfg.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(self.window[i] * gp[start + i], 0.0);
            }
            self.forward.process(&mut buf);
            for (k, c) in buf.iter().take(n_freq).enumerate() {
                let edge = k == 0 || k == n / 2;
                let weight = if edge { scale } else { 2.0 * scale };
                spec.set(0, k, m, weight * c.re);
                spec.set(1, k, m, if edge { 0.0 } else { weight * c.im });
            }
        }
        Ok(spec)
    }

    /// `sum_j xpad[j]^2 * wss[j]`, which equals the one-sided spectral energy
    /// `sum_m sum_k c_k |X_mk|^2 / scale^2 / n_fft` (`c_k = 2` off the DC and Nyquist bins).
    pub fn windowed_signal_energy(&self, x: &[f64]) -> f64 {
        self.padded(x).iter().zip(&self.wss).map(|(v, w)| v * v * w).sum()
    }

    pub fn spectral_energy(&self, spec: &Spectrogram) -> f64 {
        let n = self.config.n_fft;
        let (_, n_freq, n_frames) = spec.shape();
        let s2 = self.config.scale().powi(2);
        let mut total = 0.0;
        for m in 0..n_frames {
            for k in 0..n_freq {
                let c = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                total += c * (spec.get(0, k, m).powi(2) + spec.get(1, k, m).powi(2));
            }
        }
        total / s2 / n as f64
    }

    fn check(&self, spec: &Spectrogram) -> Result<()> {
        if spec.config != self.config || spec.source_length != self.len {
            return Err(Error::BadSpectralConfig("spectrogram was produced with a different plan".into()));
        }
        Ok(())
    }
}

pub fn stft(x: &[f64], cfg: SpectralConfig) -> Result<Spectrogram> {
    SpectralPlan::new(cfg, x.len())?.stft(x)
}

pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    SpectralPlan::new(spec.config, spec.source_length)?.istft(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_signal(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random::<f64>()).collect()
    }

    /// Direct DFT of one windowed frame, independent of the FFT path.
    fn brute_frame(x: &[f64], cfg: &SpectralConfig, frame: usize) -> Vec<(f64, f64)> {
        let n = cfg.n_fft;
        let pad = n / 2;
        let w = cfg.window.coefficients(n);
        let xp = |j: isize| -> f64 {
            let i = j - pad as isize;
            let len = x.len() as isize;
            let i = if i < 0 { -i } else if i >= len { 2 * (len - 1) - i } else { i };
            x[i as usize]
        };
        (0..=n / 2)
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for t in 0..n {
                    let v = w[t] * xp((frame * cfg.hop + t) as isize);
                    let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (re * cfg.scale(), im * cfg.scale())
            })
            .collect()
    }

    #[test]
    fn default_grid_shape() {
        let s = stft(&vec![0.0; 270], SpectralConfig::default()).unwrap();
        assert_eq!(s.shape(), (2, 33, 68));
        assert!(s.data().iter().all(|&v| v == 0.0));
        assert_eq!(istft(&s).unwrap(), vec![0.0; 270]);
    }

    #[test]
    fn matches_direct_dft() {
        let cfg = SpectralConfig::new(16, 4);
        let x = random_signal(50, 3);
        let s = stft(&x, cfg).unwrap();
        for frame in [0, 5, 12] {
            for (k, (re, im)) in brute_frame(&x, &cfg, frame).into_iter().enumerate() {
                assert!((s.get(0, k, frame) - re).abs() < 1e-12);
                assert!((s.get(1, k, frame) - im).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_energy_concentrates() {
        let n = 64;
        let k0 = 5;
        let x: Vec<f64> = (0..270).map(|i| (2.0 * PI * (k0 * i) as f64 / n as f64).cos()).collect();
        for (window, spread) in [(Window::Rectangular, 0usize), (Window::Hann, 1)] {
            let cfg = SpectralConfig { window, ..SpectralConfig::new(n, 4) };
            let s = stft(&x, cfg).unwrap();
            let interior = (n / 2) / cfg.hop..s.shape().2 - (n / 2) / cfg.hop - 1;
            for m in interior {
                let frame: Vec<(f64, f64)> = brute_frame(&x, &cfg, m);
                let total: f64 = frame.iter().map(|(a, b)| a * a + b * b).sum();
                let band: f64 = (k0 - spread..=k0 + spread).map(|k| frame[k].0.powi(2) + frame[k].1.powi(2)).sum();
                assert!(band >= 0.95 * total, "{window:?} frame {m}");
                assert!((s.frame_energy(m) - total).abs() < 1e-9 * total);
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(stft(&[0.0; 10], SpectralConfig::new(6, 4)), Err(Error::BadSpectralConfig(_))));
        assert!(matches!(stft(&[0.0; 10], SpectralConfig::new(7, 7)), Err(Error::BadSpectralConfig(_))));
        assert!(matches!(stft(&[0.0; 10], SpectralConfig::new(32, 4)), Err(Error::BadSpectralConfig(_))));
        let s = stft(&[1.0; 40], SpectralConfig::new(8, 8)).unwrap();
        assert!(matches!(istft(&s), Err(Error::NonInvertibleConfig(_))));
    }

    #[test]
    fn adjoint_identity() {
        let cfg = SpectralConfig::new(16, 4);
        let plan = SpectralPlan::new(cfg, 60).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = Spectrogram::from_data(cfg, 60, (0..2 * 9 * 16).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let g: Vec<f64> = (0..60).map(|_| rng.random::<f64>() - 0.5).collect();
        let lhs: f64 = plan.istft(&s).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = plan.istft_adjoint(&g).unwrap().data().iter().zip(s.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    proptest! {
        #[test]
        fn round_trip(seed in any::<u64>(), log_n in 3u32..7, hop_div in 0u32..3, zero_pad in any::<bool>()) {
            let n_fft = 1usize << log_n;
            let hop = (n_fft >> 1) >> hop_div;
            let cfg = SpectralConfig { pad_mode: if zero_pad { PadMode::Zero } else { PadMode::Reflect }, ..SpectralConfig::new(n_fft, hop.max(1)) };
            let x = random_signal(270, seed);
            let back = istft(&stft(&x, cfg).unwrap()).unwrap();
            let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-6, "err {}", err);
        }

        #[test]
        fn linearity(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let cfg = SpectralConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (f, m) = (33, 68);
            let s1 = Spectrogram::from_data(cfg, 270, (0..2 * f * m).map(|_| rng.random::<f64>()).collect()).unwrap();
            let s2 = Spectrogram::from_data(cfg, 270, (0..2 * f * m).map(|_| rng.random::<f64>()).collect()).unwrap();
            let lhs = istft(&s1.combine(a, &s2, b).unwrap()).unwrap();
            let (x1, x2) = (istft(&s1).unwrap(), istft(&s2).unwrap());
            for i in 0..270 {
                prop_assert!((lhs[i] - (a * x1[i] + b * x2[i])).abs() <= 1e-6);
            }
        }

        #[test]
        fn energy_consistency(seed in any::<u64>()) {
            let cfg = SpectralConfig::default();
            let plan = SpectralPlan::new(cfg, 270).unwrap();
            let x = random_signal(270, seed);
            let s = plan.stft(&x).unwrap();
            let (e_sig, e_spec) = (plan.windowed_signal_energy(&x), plan.spectral_energy(&s));
            prop_assert!((e_sig - e_spec).abs() <= 1e-5 * e_sig);
        }
    }
}
