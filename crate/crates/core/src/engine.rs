//! Hybrid-loss training and conditional ancestral sampling for the three tasks.

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::{self, check_params, init_params, ConditionBundle, DenoiserConfig, DenoiserInput, DenoiserParams};
use crate::error::{Error, Result};
use crate::ingest::BeatDataset;
use crate::nn::{Adam, Tape, Tensor};
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::signal::{build_fixed_mask, build_mask, BeatClass, GapFractions, Heartbeat, Mask, TaskKind};
use crate::spectral::{SpectralConfig, SpectralPlan, Spectrogram};

/// Everything needed to run the denoiser on beats of one length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub denoiser: DenoiserConfig,
    pub spectral: SpectralConfig,
    pub schedule: ScheduleConfig,
    pub beat_len: usize,
    #[serde(default)]
    pub amplitude: Amplitude,
}

/// Affine map from sample values to the signal that gets transformed and
/// diffused: `scale * (x - offset)`. Min-max normalized beats differ from one
/// another by a few hundredths, far below unit-variance noise, so without
/// scaling the forward process erases them within the first few steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Amplitude {
    pub offset: f64,
    pub scale: f64,
}

impl Default for Amplitude {
    fn default() -> Self {
        Self { offset: 0.5, scale: 8.0 }
    }
}

impl Amplitude {
    pub const IDENTITY: Amplitude = Amplitude { offset: 0.0, scale: 1.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite() && self.offset.is_finite()) {
            return Err(Error::BadTrainConfig(format!("amplitude scale must be positive and finite, got {:?}", self)));
        }
        Ok(())
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| self.scale * (v - self.offset)).collect()
    }

    pub fn decode(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v / self.scale + self.offset).collect()
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        self.spectral.validate()?;
        self.schedule.build()?;
        self.amplitude.validate()?;
        SpectralPlan::new(self.spectral, self.beat_len)?;
        Ok(())
    }
}

/// A spec together with its learned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: DenoiserParams,
}

impl Model {
    pub fn init(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let params = init_params(&spec.denoiser)?;
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: ModelSpec, params: DenoiserParams) -> Result<Self> {
        spec.validate()?;
        check_params(&spec.denoiser, &params)?;
        Ok(Self { spec, params })
    }

    pub fn plan(&self) -> Result<SpectralPlan> {
        SpectralPlan::new(self.spec.spectral, self.spec.beat_len)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.spec.schedule.build()
    }
}

/// Anything that predicts the noise in a batch of diffusion states.
pub trait EpsModel {
    fn predict(&self, states: &[Spectrogram], conds: &[ConditionBundle]) -> Result<Vec<Spectrogram>>;
}

impl EpsModel for Model {
    fn predict(&self, states: &[Spectrogram], conds: &[ConditionBundle]) -> Result<Vec<Spectrogram>> {
        let batch: Vec<DenoiserInput<'_>> = states.iter().zip(conds).map(|(state, cond)| DenoiserInput { state, cond }).collect();
        denoiser::denoise(&self.spec.denoiser, &self.params, &batch)
    }
}

/// Source of the initial state and the per-step reverse noise of one chain.
pub trait ReverseNoise {
    fn initial(&mut self, len: usize) -> Vec<f64>;
    /// Noise for the step from `t` to `t - 1`; only called for `t >= 2`.
    fn step(&mut self, t: usize, len: usize) -> Vec<f64>;
}

/// Unit-normal noise from a seeded stream.
#[derive(Debug, Clone)]
pub struct GaussianNoise(ChaCha8Rng);

impl GaussianNoise {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

fn normals<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

impl ReverseNoise for GaussianNoise {
    fn initial(&mut self, len: usize) -> Vec<f64> {
        normals(&mut self.0, len)
    }

    fn step(&mut self, _t: usize, len: usize) -> Vec<f64> {
        normals(&mut self.0, len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRequest {
    pub task: TaskKind,
    pub label: BeatClass,
    /// The previous beat for forecasting, the partial beat for imputation.
    pub context: Option<Heartbeat>,
    /// Required for imputation.
    pub mask: Option<Mask>,
    pub seed: u64,
    /// For imputation, copy the observed samples into the output.
    pub paste_observed: bool,
}

impl SynthesisRequest {
    pub fn generation(label: BeatClass, seed: u64) -> Self {
        Self { task: TaskKind::Generation, label, context: None, mask: None, seed, paste_observed: true }
    }

    pub fn imputation(beat: Heartbeat, mask: Mask, seed: u64) -> Self {
        Self { task: TaskKind::Imputation, label: beat.label, context: Some(beat), mask: Some(mask), seed, paste_observed: true }
    }

    pub fn forecasting(prev: Heartbeat, label: BeatClass, seed: u64) -> Self {
        Self { task: TaskKind::Forecasting, label, context: Some(prev), mask: None, seed, paste_observed: true }
    }

    /// The mask this request conditions on, after checking per-task requirements.
    pub fn resolve_mask(&self, len: usize) -> Result<Mask> {
        let incomplete = |m: &str| Err(Error::IncompleteRequest(m.into()));
        if let Some(m) = &self.mask {
            if m.task() != self.task {
                return incomplete(&format!("mask built for {} used in a {} request", m.task(), self.task));
            }
            if m.len() != len {
                return Err(Error::DimensionMismatch { expected: len, actual: m.len() });
            }
        }
        if let Some(c) = &self.context {
            if c.len() != len {
                return Err(Error::DimensionMismatch { expected: len, actual: c.len() });
            }
        }
        match self.task {
            TaskKind::Generation => build_fixed_mask(TaskKind::Generation, len, None),
            TaskKind::Forecasting => {
                if self.context.is_none() {
                    return incomplete("forecasting needs the previous beat");
                }
                build_fixed_mask(TaskKind::Forecasting, len, None)
            }
            TaskKind::Imputation => match (&self.context, &self.mask) {
                (Some(_), Some(m)) => Ok(m.clone()),
                (None, _) => incomplete("imputation needs the partial beat"),
                (_, None) => incomplete("imputation needs a mask"),
            },
        }
    }

    /// The conditioning bundle at step `step`.
    pub fn condition(&self, plan: &SpectralPlan, amp: &Amplitude, step: usize) -> Result<ConditionBundle> {
        let mask = self.resolve_mask(plan.signal_len())?;
        let context = match self.task {
            TaskKind::Generation => None,
            _ => self.context.as_ref().map(|c| amp.encode(&c.samples)),
        };
        ConditionBundle::build(plan, self.label, step, &mask, context.as_deref())
    }
}

fn output_identity(req: &SynthesisRequest) -> (String, usize, usize) {
    match (req.task, &req.context) {
        (TaskKind::Imputation, Some(c)) => (c.record_id.clone(), c.beat_index, c.r_peak),
        (TaskKind::Forecasting, Some(c)) => (c.record_id.clone(), c.beat_index + 1, 0),
        _ => ("synth".into(), 0, 0),
    }
}

/// Runs the reverse chains of several requests in lockstep, one noise source per request.
pub fn synthesize_with<M: EpsModel + ?Sized, N: ReverseNoise>(
    model: &M,
    sched: &NoiseSchedule,
    plan: &SpectralPlan,
    amp: &Amplitude,
    requests: &[SynthesisRequest],
    noises: &mut [N],
) -> Result<Vec<Heartbeat>> {
    assert_eq!(requests.len(), noises.len(), "one noise source per request");
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let (c, f, m) = plan.grid_shape();
    let dim = c * f * m;
    let cfg = *plan.config();
    let len = plan.signal_len();
    let base: Vec<ConditionBundle> = requests.iter().map(|r| r.condition(plan, amp, sched.steps())).collect::<Result<_>>()?;
    let mut states: Vec<Spectrogram> = noises
        .iter_mut()
        .map(|n| Spectrogram::from_data(cfg, len, n.initial(dim)))
        .collect::<Result<_>>()?;
    for t in (1..=sched.steps()).rev() {
        let conds: Vec<ConditionBundle> = base.iter().map(|b| b.with_step(t)).collect();
        let eps = model.predict(&states, &conds)?;
        for ((state, e), noise) in states.iter_mut().zip(&eps).zip(noises.iter_mut()) {
            let z = if t > 1 { Some(noise.step(t, dim)) } else { None };
            let next = sched.posterior_step(state.data(), e.data(), t, z.as_deref())?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalBlowUp(format!("reverse chain diverged at step {t}")));
            }
            *state = Spectrogram::from_data(cfg, len, next)?;
        }
    }
    let mut out = Vec::with_capacity(requests.len());
    for (req, state) in requests.iter().zip(&states) {
        let mut x: Vec<f64> = amp.decode(&plan.istft(state)?).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        if req.task == TaskKind::Imputation && req.paste_observed {
            let mask = req.resolve_mask(len)?;
            let ctx = req.context.as_ref().expect("checked by resolve_mask");
            for (i, v) in x.iter_mut().enumerate() {
                if mask.observed(i) {
                    *v = ctx.samples[i];
                }
            }
        }
        let (record, index, r_peak) = output_identity(req);
        out.push(Heartbeat::new(x, req.label, record, index, r_peak));
    }
    Ok(out)
}

/// Samples every request with Gaussian noise seeded by the request's seed.
pub fn synthesize_batch(model: &Model, requests: &[SynthesisRequest]) -> Result<Vec<Heartbeat>> {
    let plan = model.plan()?;
    let sched = model.schedule()?;
    let mut noises: Vec<GaussianNoise> = requests.iter().map(|r| GaussianNoise::new(r.seed)).collect();
    synthesize_with(model, &sched, &plan, &model.spec.amplitude, requests, &mut noises)
}

pub fn synthesize(model: &Model, request: &SynthesisRequest) -> Result<Heartbeat> {
    Ok(synthesize_batch(model, std::slice::from_ref(request))?.remove(0))
}

pub fn generate(model: &Model, label: BeatClass, seed: u64) -> Result<Heartbeat> {
    synthesize(model, &SynthesisRequest::generation(label, seed))
}

pub fn impute(model: &Model, beat: &Heartbeat, mask: &Mask, seed: u64) -> Result<Heartbeat> {
    synthesize(model, &SynthesisRequest::imputation(beat.clone(), mask.clone(), seed))
}

pub fn forecast(model: &Model, prev: &Heartbeat, label: BeatClass, seed: u64) -> Result<Heartbeat> {
    synthesize(model, &SynthesisRequest::forecasting(prev.clone(), label, seed))
}

/// How the auxiliary signal-domain loss of an element is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AuxWeighting {
    /// Same weight at every step.
    Uniform,
    /// Scaled by `abar_t`. The one-step clean estimate amplifies noise-prediction
    /// error by `sqrt((1 - abar_t) / abar_t)`, which explodes at large `t`.
    #[default]
    AlphaBar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Sampling weights for generation, imputation and forecasting.
    pub task_mix: [f64; 3],
    pub aux_weight: f64,
    pub aux_weighting: AuxWeighting,
    pub gap_min_fraction: f64,
    pub gap_max_fraction: f64,
    pub seed: u64,
    /// Emit a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 10,
            task_mix: [1.0 / 3.0; 3],
            aux_weight: 1.0,
            aux_weighting: AuxWeighting::AlphaBar,
            gap_min_fraction: 0.1,
            gap_max_fraction: 0.5,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadTrainConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.task_mix.iter().any(|w| !(*w >= 0.0)) || (self.task_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("task mix must be non-negative and sum to 1, got {:?}", self.task_mix));
        }
        if !(self.aux_weight >= 0.0) {
            return bad(format!("auxiliary weight must be non-negative, got {}", self.aux_weight));
        }
        if !(0.0 < self.gap_min_fraction && self.gap_min_fraction <= self.gap_max_fraction && self.gap_max_fraction <= 1.0) {
            return bad("gap fractions must satisfy 0 < min <= max <= 1".into());
        }
        Ok(())
    }

    pub fn gap_fractions(&self) -> GapFractions {
        GapFractions { min: self.gap_min_fraction, max: self.gap_max_fraction }
    }

    fn aux_scale(&self, task: TaskKind, alpha_bar: f64) -> f64 {
        if task == TaskKind::Generation {
            return 0.0;
        }
        self.aux_weight
            * match self.aux_weighting {
                AuxWeighting::Uniform => 1.0,
                AuxWeighting::AlphaBar => alpha_bar,
            }
    }
}

/// One training target with its task context.
#[derive(Debug, Clone)]
pub struct TrainingExample<'a> {
    pub target: &'a Heartbeat,
    /// `Phi(h, s)`: the target itself for imputation, its predecessor for forecasting.
    pub context: Option<&'a Heartbeat>,
    pub mask: Mask,
}

/// The diffusion step and noise drawn for one element.
#[derive(Debug, Clone)]
pub struct ElementDraw {
    pub step: usize,
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementLoss {
    pub task: TaskKind,
    pub step: usize,
    /// Mean squared noise-prediction error over spectrogram coordinates.
    pub diffusion: f64,
    /// Mean squared signal-domain error of the one-step clean estimate; zero for generation.
    pub aux: f64,
    /// `diffusion + scale * aux` with the configured weighting.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLosses {
    pub elements: Vec<ElementLoss>,
    /// Batch mean of the element totals: the optimized objective.
    pub total: f64,
}

/// Loss of a batch and its gradient with respect to every parameter.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grads(
    config: &DenoiserConfig,
    params: &DenoiserParams,
    plan: &SpectralPlan,
    amp: &Amplitude,
    sched: &NoiseSchedule,
    batch: &[TrainingExample<'_>],
    draws: &[ElementDraw],
    cfg: &TrainConfig,
) -> Result<(StepLosses, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::NoTrainingData);
    }
    assert_eq!(batch.len(), draws.len());
    let mut states = Vec::with_capacity(batch.len());
    let mut conds = Vec::with_capacity(batch.len());
    for (ex, d) in batch.iter().zip(draws) {
        let s0 = plan.stft(&amp.encode(&ex.target.samples))?;
        let st = sched.q_sample(s0.data(), d.step, &d.eps)?;
        states.push(Spectrogram::from_data(s0.config, s0.source_length, st)?);
        let context = match ex.mask.task() {
            TaskKind::Generation => None,
            _ => Some(amp.encode(&ex.context.ok_or_else(|| Error::IncompleteRequest("training element lacks its context beat".into()))?.samples)),
        };
        conds.push(ConditionBundle::build(plan, ex.target.label, d.step, &ex.mask, context.as_deref())?);
    }
    let inputs: Vec<DenoiserInput<'_>> = states.iter().zip(&conds).map(|(state, cond)| DenoiserInput { state, cond }).collect();
    let mut tape = Tape::new();
    let out = denoiser::forward(&mut tape, config, params, &inputs)?;
    let eps_hat = tape.value(out);
    let dim = eps_hat.len() / batch.len();
    let b = batch.len() as f64;
    let mut seed = vec![0.0; eps_hat.len()];
    let mut elements = Vec::with_capacity(batch.len());
    for (i, ((ex, d), state)) in batch.iter().zip(draws).zip(&states).enumerate() {
        let e_hat = &eps_hat.data()[i * dim..(i + 1) * dim];
        let g = &mut seed[i * dim..(i + 1) * dim];
        let diffusion = e_hat.iter().zip(&d.eps).map(|(a, e)| (a - e) * (a - e)).sum::<f64>() / dim as f64;
        for ((gi, a), e) in g.iter_mut().zip(e_hat).zip(&d.eps) {
            *gi = 2.0 * (a - e) / (dim as f64 * b);
        }
        let task = ex.mask.task();
        let scale = cfg.aux_scale(task, sched.alpha_bar(d.step)?);
        let mut aux = 0.0;
        if task != TaskKind::Generation {
            let (cx, ce) = sched.predict_x0_coefficients(d.step)?;
            let s0_hat: Vec<f64> = state.data().iter().zip(e_hat).map(|(s, e)| cx * s + ce * e).collect();
            let x0_hat = amp.decode(&plan.istft(&Spectrogram::from_data(state.config, state.source_length, s0_hat)?)?);
            let len = x0_hat.len() as f64;
            aux = x0_hat.iter().zip(&ex.target.samples).map(|(a, x)| (a - x) * (a - x)).sum::<f64>() / len;
            if scale > 0.0 {
                let gx: Vec<f64> = x0_hat.iter().zip(&ex.target.samples).map(|(a, x)| scale * 2.0 * (a - x) / (len * b * amp.scale)).collect();
                let gs = plan.istft_adjoint(&gx)?;
                for (gi, v) in g.iter_mut().zip(gs.data()) {
                    *gi += ce * v;
                }
            }
        }
        elements.push(ElementLoss { task, step: d.step, diffusion, aux, total: diffusion + scale * aux });
    }
    let total = elements.iter().map(|e| e.total).sum::<f64>() / b;
    if !total.is_finite() {
        let snapshot: Vec<String> = elements.iter().map(|e| format!("{}@t={}: diff={} aux={}", e.task, e.step, e.diffusion, e.aux)).collect();
        return Err(Error::NumericalBlowUp(format!("non-finite loss [{}]", snapshot.join(", "))));
    }
    let shape = tape.value(out).shape().to_vec();
    let grads = tape.backward(out, Tensor::from_vec(&shape, seed), params.len()).into_dense(params);
    Ok((StepLosses { elements, total }, grads))
}

/// Draws `(t, eps)` for each element, computes the hybrid loss and applies one Adam update.
#[allow(clippy::too_many_arguments)]
pub fn training_step<R: Rng>(
    model: &mut Model,
    opt: &mut Adam,
    plan: &SpectralPlan,
    sched: &NoiseSchedule,
    batch: &[TrainingExample<'_>],
    rngs: &mut [R],
    cfg: &TrainConfig,
) -> Result<StepLosses> {
    let dim = {
        let (c, f, m) = plan.grid_shape();
        c * f * m
    };
    let draws: Vec<ElementDraw> = rngs
        .iter_mut()
        .take(batch.len())
        .map(|rng| {
            let step = rng.random_range(1..=sched.steps());
            ElementDraw { step, eps: normals(rng, dim) }
        })
        .collect();
    let (losses, grads) = loss_and_grads(&model.spec.denoiser, &model.params, plan, &model.spec.amplitude, sched, batch, &draws, cfg)?;
    opt.update(&mut model.params, &grads);
    if !model.params.is_finite() {
        return Err(Error::NumericalBlowUp("parameters became non-finite".into()));
    }
    Ok(losses)
}

/// One row per task present in a step, averaged over that task's elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub task: TaskKind,
    pub loss_diff: f64,
    pub loss_mse: f64,
    pub loss_total: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Optimized batch objective per step.
    pub step_totals: Vec<f64>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "task", "loss_diff", "loss_mse", "loss_total", "seconds"])?;
        for r in &self.rows {
            out.write_record([
                r.step.to_string(),
                r.task.name().to_string(),
                format!("{:.9e}", r.loss_diff),
                format!("{:.9e}", r.loss_mse),
                format!("{:.9e}", r.loss_total),
                format!("{:.3}", r.seconds),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Mean of `step_totals` over the first and last `fraction` of steps.
    pub fn head_tail_means(&self, fraction: f64) -> Option<(f64, f64)> {
        let n = self.step_totals.len();
        let k = ((n as f64 * fraction).round() as usize).max(1);
        if n < 2 * k {
            return None;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&self.step_totals[..k]), mean(&self.step_totals[n - k..])))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for batch element `index` of `step`, independent of evaluation order.
pub fn element_rng(seed: u64, step: usize, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(splitmix64(seed) ^ step as u64) ^ index as u64))
}

/// Training pools: every beat, and the beats whose predecessor is in the dataset.
struct Pools<'a> {
    all: Vec<&'a Heartbeat>,
    with_prev: Vec<(&'a Heartbeat, &'a Heartbeat)>,
}

impl<'a> Pools<'a> {
    fn new(dataset: &'a BeatDataset) -> Self {
        let index: HashMap<(&str, usize), &Heartbeat> = dataset.beats.iter().map(|b| ((b.record_id.as_str(), b.beat_index), b)).collect();
        let with_prev = dataset
            .beats
            .iter()
            .filter_map(|b| {
                let prev = b.beat_index.checked_sub(1)?;
                index.get(&(b.record_id.as_str(), prev)).map(|p| (b, *p))
            })
            .collect();
        Self { all: dataset.beats.iter().collect(), with_prev }
    }

    fn draw<R: Rng>(&self, cfg: &TrainConfig, rng: &mut R) -> Result<TrainingExample<'a>> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut task = TaskKind::Generation;
        for t in TaskKind::ALL {
            let w = cfg.task_mix[t.index()];
            if w > 0.0 {
                task = t;
                acc += w;
                if u < acc {
                    break;
                }
            }
        }
        let len = self.all[0].len();
        Ok(match task {
            TaskKind::Forecasting => {
                let (target, prev) = self.with_prev[rng.random_range(0..self.with_prev.len())];
                TrainingExample { target, context: Some(prev), mask: build_fixed_mask(task, len, None)? }
            }
            TaskKind::Imputation => {
                let target = self.all[rng.random_range(0..self.all.len())];
                let mask = build_mask(task, len, None, cfg.gap_fractions(), Some(rng))?;
                TrainingExample { target, context: Some(target), mask }
            }
            TaskKind::Generation => {
                let target = self.all[rng.random_range(0..self.all.len())];
                TrainingExample { target, context: None, mask: build_fixed_mask(task, len, None)? }
            }
        })
    }
}

pub fn steps_per_epoch(n_beats: usize, batch_size: usize) -> usize {
    n_beats.div_ceil(batch_size).max(1)
}

/// Trains a freshly initialized model; `on_checkpoint` receives `(step, model)`
/// at the configured cadence.
pub fn train(
    dataset: &BeatDataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    mut on_checkpoint: Option<&mut dyn FnMut(usize, &Model) -> Result<()>>,
) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::NoTrainingData);
    }
    dataset.validate()?;
    if dataset.beat_len() != Some(spec.beat_len) {
        return Err(Error::DimensionMismatch { expected: spec.beat_len, actual: dataset.beat_len().unwrap_or(0) });
    }
    let pools = Pools::new(dataset);
    if cfg.task_mix[TaskKind::Forecasting.index()] > 0.0 && pools.with_prev.is_empty() {
        return Err(Error::BadTrainConfig("forecasting is in the task mix but no beat has a predecessor".into()));
    }
    let mut model = Model::init(spec.clone())?;
    let plan = model.plan()?;
    let sched = model.schedule()?;
    let mut opt = Adam::new(cfg.learning_rate, &model.params);
    let total_steps = cfg.epochs * steps_per_epoch(dataset.len(), cfg.batch_size);
    let mut log = TrainLog::default();
    let start = Instant::now();
    for step in 0..total_steps {
        let mut rngs: Vec<ChaCha8Rng> = (0..cfg.batch_size).map(|i| element_rng(cfg.seed, step, i)).collect();
        let batch: Vec<TrainingExample<'_>> = rngs.iter_mut().map(|r| pools.draw(cfg, r)).collect::<Result<_>>()?;
        let losses = training_step(&mut model, &mut opt, &plan, &sched, &batch, &mut rngs, cfg)?;
        let seconds = start.elapsed().as_secs_f64();
        for task in TaskKind::ALL {
            let of: Vec<&ElementLoss> = losses.elements.iter().filter(|e| e.task == task).collect();
            if of.is_empty() {
                continue;
            }
            let n = of.len() as f64;
            log.rows.push(LogRow {
                step,
                task,
                loss_diff: of.iter().map(|e| e.diffusion).sum::<f64>() / n,
                loss_mse: of.iter().map(|e| e.aux).sum::<f64>() / n,
                loss_total: of.iter().map(|e| e.total).sum::<f64>() / n,
                seconds,
            });
        }
        log.step_totals.push(losses.total);
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            if let Some(cb) = on_checkpoint.as_mut() {
                cb(step + 1, &model)?;
            }
        }
    }
    Ok((model, log))
}
