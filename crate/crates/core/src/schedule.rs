//! Noise schedule and the single-step forward/reverse algebra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BetaSpacing {
    #[default]
    Linear,
    /// Cosine `alpha_bar` curve rescaled to hit `beta_max` at the last step.
    Cosine,
}

/// Reverse-step noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VarianceKind {
    /// `sigma_t^2 = beta_t`.
    #[default]
    Beta,
    /// `sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t`.
    Posterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    #[serde(default)]
    pub spacing: BetaSpacing,
    #[serde(default)]
    pub variance: VarianceKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 1000, beta_min: 1e-4, beta_max: 0.02, spacing: BetaSpacing::Linear, variance: VarianceKind::Beta }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(*self)
    }
}

/// `beta`, `alpha = 1 - beta` and `alpha_bar = prod alpha` for steps `1..=T`.
/// Tables are stored zero-based: index `t - 1` holds step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub config: ScheduleConfig,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Linearly spaced betas from `beta_min` to `beta_max` over `steps` steps.
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::new(ScheduleConfig { steps, beta_min, beta_max, ..ScheduleConfig::default() })
}

impl NoiseSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        let ScheduleConfig { steps, beta_min, beta_max, .. } = config;
        if steps == 0 {
            return Err(Error::BadSchedule("T must be at least 1".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::BadSchedule(format!("need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")));
        }
        let betas: Vec<f64> = match config.spacing {
            BetaSpacing::Linear if steps == 1 => vec![beta_min],
            BetaSpacing::Linear => (0..steps)
                .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
                .collect(),
            BetaSpacing::Cosine => {
                let s = 0.008;
                let f = |t: f64| ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
                (1..=steps).map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).clamp(beta_min, beta_max)).collect()
            }
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { config, betas, alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn idx(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            Err(Error::StepOutOfRange { step: t, steps: self.steps() })
        } else {
            Ok(t - 1)
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.idx(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.idx(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.idx(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Standard deviation of the noise added when stepping from `t` to `t - 1`.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        let i = self.idx(t)?;
        let var = match self.config.variance {
            VarianceKind::Beta => self.betas[i],
            VarianceKind::Posterior => {
                let prev = if i == 0 { 1.0 } else { self.alpha_bars[i - 1] };
                (1.0 - prev) / (1.0 - self.alpha_bars[i]) * self.betas[i]
            }
        };
        Ok(var.sqrt())
    }

    /// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
    pub fn q_sample(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        check_len(x0, eps)?;
        let ab = self.alpha_bar(t)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    /// One-step clean estimate `(x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)`.
    ///
    /// Ill-conditioned near `t = T`, where `1 / sqrt(abar_T)` is large; the
    /// result stays finite for finite inputs.
    pub fn predict_x0(&self, xt: &[f64], eps_hat: &[f64], t: usize) -> Result<Vec<f64>> {
        check_len(xt, eps_hat)?;
        let (a, b) = self.predict_x0_coefficients(t)?;
        Ok(xt.iter().zip(eps_hat).map(|(x, e)| a * x + b * e).collect())
    }

    /// `(c_x, c_eps)` such that `x0_hat = c_x * x_t + c_eps * eps_hat`.
    pub fn predict_x0_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        let ab = self.alpha_bar(t)?;
        Ok((1.0 / ab.sqrt(), -(1.0 - ab).sqrt() / ab.sqrt()))
    }

    /// Ancestral step `x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t) + sigma_t z`.
    ///
    /// `z` must be zero (or absent) at `t = 1`.
    pub fn posterior_step(&self, xt: &[f64], eps_hat: &[f64], t: usize, z: Option<&[f64]>) -> Result<Vec<f64>> {
        check_len(xt, eps_hat)?;
        let i = self.idx(t)?;
        let (alpha, beta, ab) = (self.alphas[i], self.betas[i], self.alpha_bars[i]);
        let c_eps = beta / (1.0 - ab).sqrt();
        let inv = 1.0 / alpha.sqrt();
        let mut out: Vec<f64> = xt.iter().zip(eps_hat).map(|(x, e)| inv * (x - c_eps * e)).collect();
        if let Some(z) = z {
            check_len(xt, z)?;
            if t == 1 {
                if z.iter().any(|&v| v != 0.0) {
                    return Err(Error::InvalidArgument("no noise may be added at the final step".into()));
                }
            } else {
                let sigma = self.sigma(t)?;
                for (o, zz) in out.iter_mut().zip(z) {
                    *o += sigma * zz;
                }
            }
        }
        Ok(out)
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    Ok(())
}
