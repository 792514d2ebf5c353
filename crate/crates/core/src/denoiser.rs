//! The conditioned U-Net noise predictor.
//!
//! Input stack, channel order: noisy state (2), mask spectrogram (2), masked
//! context spectrogram (2), then `k` broadcast planes each for the class,
//! timestep and task embeddings. The grid is zero-padded to a multiple of 8 so
//! the three pooling stages divide evenly, and the output is cropped back.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{fan_in_normal, small_normal, ParamStore, Tape, Tensor, Var};
use crate::signal::{BeatClass, Mask, TaskKind};
use crate::spectral::{SpectralPlan, Spectrogram};

/// Encoder levels before the bottleneck; each halves both grid axes.
pub const LEVELS: usize = 3;
const SPATIAL_MULTIPLE: usize = 1 << LEVELS;

pub type DenoiserParams = ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    /// Encoder + bottleneck + decoder blocks; the topology fixes this at 7.
    pub n_blocks: usize,
    pub subblocks_per_block: usize,
    pub convs_per_subblock: usize,
    pub base_channels: usize,
    /// Width multipliers for the three encoder levels and the bottleneck.
    pub channel_mults: Vec<usize>,
    pub d_emb: usize,
    /// Planes per embedding in the input stack.
    pub embed_planes: usize,
    pub kernel: usize,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            n_blocks: 2 * LEVELS + 1,
            subblocks_per_block: 3,
            convs_per_subblock: 2,
            base_channels: 16,
            channel_mults: vec![1, 2, 2, 4],
            d_emb: 32,
            embed_planes: 1,
            kernel: 3,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    /// A few-hundred-parameter network for gradient checks.
    pub fn tiny() -> Self {
        Self { subblocks_per_block: 1, base_channels: 1, channel_mults: vec![1, 1, 1, 1], d_emb: 2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadDenoiserConfig(m));
        if self.n_blocks != 2 * LEVELS + 1 {
            return bad(format!("n_blocks must be {}, got {}", 2 * LEVELS + 1, self.n_blocks));
        }
        if self.channel_mults.len() != LEVELS + 1 {
            return bad(format!("need {} channel multipliers, got {}", LEVELS + 1, self.channel_mults.len()));
        }
        if self.subblocks_per_block == 0 || self.convs_per_subblock == 0 || self.base_channels == 0 || self.embed_planes == 0 {
            return bad("block counts and widths must be positive".into());
        }
        if self.channel_mults.contains(&0) {
            return bad("channel multipliers must be positive".into());
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel size must be odd, got {}", self.kernel));
        }
        if self.d_emb == 0 || self.d_emb % 2 == 1 {
            return Err(Error::BadEmbeddingDimension(self.d_emb));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        6 + 3 * self.embed_planes
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels * self.channel_mults[level]
    }

    /// Every learnable tensor's name and shape, in a fixed order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, k, ks) = (self.d_emb, self.embed_planes, self.kernel);
        let mut out = vec![
            ("emb.class.table".to_string(), vec![BeatClass::ALL.len(), d]),
            ("emb.task.table".to_string(), vec![TaskKind::ALL.len(), d]),
        ];
        for e in ["class", "time", "task"] {
            out.push((format!("emb.{e}.proj.w"), vec![k, d]));
            out.push((format!("emb.{e}.proj.b"), vec![k]));
        }
        let block = |prefix: &str, cin: usize, cout: usize, out: &mut Vec<(String, Vec<usize>)>| {
            let mut c = cin;
            for s in 0..self.subblocks_per_block {
                if c != cout {
                    out.push((format!("{prefix}.sub{s}.skip.w"), vec![cout, c, 1, 1]));
                    out.push((format!("{prefix}.sub{s}.skip.b"), vec![cout]));
                }
                out.push((format!("{prefix}.sub{s}.emb.w"), vec![cout, 3 * d]));
                out.push((format!("{prefix}.sub{s}.emb.b"), vec![cout]));
                for v in 0..self.convs_per_subblock {
                    out.push((format!("{prefix}.sub{s}.conv{v}.w"), vec![cout, c, ks, ks]));
                    out.push((format!("{prefix}.sub{s}.conv{v}.b"), vec![cout]));
                    c = cout;
                }
            }
        };
        let mut c = self.in_channels();
        for i in 0..LEVELS {
            block(&format!("enc{i}"), c, self.width(i), &mut out);
            c = self.width(i);
        }
        block("mid", c, self.width(LEVELS), &mut out);
        c = self.width(LEVELS);
        for i in (0..LEVELS).rev() {
            out.push((format!("dec{i}.up.w"), vec![c, self.width(i), 2, 2]));
            out.push((format!("dec{i}.up.b"), vec![self.width(i)]));
            block(&format!("dec{i}"), 2 * self.width(i), self.width(i), &mut out);
            c = self.width(i);
        }
        out.push(("head.w".into(), vec![2, c, 1, 1]));
        out.push(("head.b".into(), vec![2]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// Fan-in scaled normal kernels, zero biases, small-random embedding tables;
/// a pure function of the config (including its seed).
pub fn init_params(config: &DenoiserConfig) -> Result<DenoiserParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::default();
    for (name, shape) in config.param_shapes() {
        let t = if name.ends_with(".table") {
            small_normal(&shape, 0.1, &mut rng)
        } else if name.ends_with(".b") {
            Tensor::zeros(&shape)
        } else if name.starts_with("emb.") {
            fan_in_normal(&shape, shape[1], 1.0, &mut rng)
        } else if name.contains(".up.") {
            fan_in_normal(&shape, shape[0], 1.0, &mut rng)
        } else if name == "head.w" || name.contains(".skip.") || name.contains(".emb.") {
            fan_in_normal(&shape, shape[1], 1.0, &mut rng)
        } else {
            fan_in_normal(&shape, shape[1] * shape[2] * shape[3], 2.0, &mut rng)
        };
        store.insert(&name, t);
    }
    Ok(store)
}

/// Checks a loaded parameter set against the shapes the config implies.
pub fn check_params(config: &DenoiserConfig, params: &DenoiserParams) -> Result<()> {
    config.validate()?;
    let expected = config.param_shapes();
    if expected.len() != params.len() {
        return Err(Error::BadDenoiserConfig(format!("expected {} parameter tensors, found {}", expected.len(), params.len())));
    }
    for (name, shape) in expected {
        match params.by_name(&name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => return Err(Error::BadDenoiserConfig(format!("{name}: shape {:?}, expected {shape:?}", t.shape()))),
            None => return Err(Error::BadDenoiserConfig(format!("missing parameter {name}"))),
        }
    }
    if !params.is_finite() {
        return Err(Error::NumericalBlowUp("non-finite parameters".into()));
    }
    Ok(())
}

/// Sinusoidal timestep embedding: interleaved `(sin(t f_i), cos(t f_i))` with
/// `f_i = 10000^(-i / (d/2))`.
pub fn timestep_embedding(t: f64, d_emb: usize) -> Result<Vec<f64>> {
    if d_emb == 0 || d_emb % 2 == 1 {
        return Err(Error::BadEmbeddingDimension(d_emb));
    }
    let half = d_emb / 2;
    let mut out = Vec::with_capacity(d_emb);
    for i in 0..half {
        let f = 10000f64.powf(-(i as f64) / half as f64);
        out.push((t * f).sin());
        out.push((t * f).cos());
    }
    Ok(out)
}

/// Conditioning for one beat: class, task, diffusion step and the two
/// conditioning spectrograms.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle {
    pub label: BeatClass,
    pub task: TaskKind,
    pub step: usize,
    /// Spectrogram of the mask.
    pub c1: Spectrogram,
    /// Spectrogram of the masked context.
    pub c2: Spectrogram,
}

impl ConditionBundle {
    /// `context` may be omitted only when the mask observes nothing.
    pub fn build(plan: &SpectralPlan, label: BeatClass, step: usize, mask: &Mask, context: Option<&[f64]>) -> Result<Self> {
        let m = mask.as_f64();
        if m.len() != plan.signal_len() {
            return Err(Error::ConditionShapeMismatch(format!("mask length {} vs signal length {}", m.len(), plan.signal_len())));
        }
        let masked: Vec<f64> = match context {
            Some(c) if c.len() == m.len() => c.iter().zip(&m).map(|(x, w)| x * w).collect(),
            Some(c) => return Err(Error::ConditionShapeMismatch(format!("context length {} vs mask length {}", c.len(), m.len()))),
            None if m.iter().all(|&w| w == 0.0) => vec![0.0; m.len()],
            None => return Err(Error::IncompleteRequest("a context beat is required for this mask".into())),
        };
        Ok(Self { label, task: mask.task(), step, c1: plan.stft(&m)?, c2: plan.stft(&masked)? })
    }

    pub fn with_step(&self, step: usize) -> Self {
        Self { step, ..self.clone() }
    }
}

/// One batch element: the noisy state and its conditioning.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserInput<'a> {
    pub state: &'a Spectrogram,
    pub cond: &'a ConditionBundle,
}

/// Records the forward pass on `tape`; the returned variable holds
/// `[B, 2, F, M]` noise predictions.
pub fn forward(tape: &mut Tape, config: &DenoiserConfig, params: &DenoiserParams, batch: &[DenoiserInput<'_>]) -> Result<Var> {
    let (stack, emb, (f, m)) = assemble_on_tape(tape, config, params, batch)?;
    let p = |tape: &mut Tape, name: &str| {
        let id = params.id(name).unwrap_or_else(|| panic!("parameter {name} missing; validate with check_params"));
        tape.param(params, id)
    };
    let ph = f.div_ceil(SPATIAL_MULTIPLE) * SPATIAL_MULTIPLE;
    let pw = m.div_ceil(SPATIAL_MULTIPLE) * SPATIAL_MULTIPLE;
    let mut h = tape.pad(stack, ph, pw);

    let block = |tape: &mut Tape, prefix: &str, mut h: Var| {
        for s in 0..config.subblocks_per_block {
            let short = match params.id(&format!("{prefix}.sub{s}.skip.w")) {
                Some(id) => {
                    let w = tape.param(params, id);
                    let b = p(tape, &format!("{prefix}.sub{s}.skip.b"));
                    tape.conv2d(h, w, b)
                }
                None => h,
            };
            let mut y = h;
            for v in 0..config.convs_per_subblock {
                let w = p(tape, &format!("{prefix}.sub{s}.conv{v}.w"));
                let b = p(tape, &format!("{prefix}.sub{s}.conv{v}.b"));
                y = tape.silu(y);
                y = tape.conv2d(y, w, b);
                if v == 0 {
                    let (w, b) = (p(tape, &format!("{prefix}.sub{s}.emb.w")), p(tape, &format!("{prefix}.sub{s}.emb.b")));
                    let shift = tape.linear(emb, w, b);
                    let (_, _, hh, ww) = tape.value(y).dims4();
                    let shift = tape.broadcast(shift, hh, ww);
                    y = tape.add(y, shift);
                }
            }
            h = tape.add(short, y);
        }
        h
    };
    let mut skips = Vec::with_capacity(LEVELS);
    for i in 0..LEVELS {
        h = block(tape, &format!("enc{i}"), h);
        skips.push(h);
        h = tape.max_pool(h, 2, 2);
    }
    h = block(tape, "mid", h);
    for i in (0..LEVELS).rev() {
        let (w, b) = (p(tape, &format!("dec{i}.up.w")), p(tape, &format!("dec{i}.up.b")));
        h = tape.conv_transpose(h, w, b);
        h = tape.concat(h, skips[i]);
        h = block(tape, &format!("dec{i}"), h);
    }
    let (w, b) = (p(tape, "head.w"), p(tape, "head.b"));
    h = tape.conv2d(h, w, b);
    Ok(tape.crop(h, f, m))
}

fn assemble_on_tape(
    tape: &mut Tape,
    config: &DenoiserConfig,
    params: &DenoiserParams,
    batch: &[DenoiserInput<'_>],
) -> Result<(Var, Var, (usize, usize))> {
    let first = batch.first().ok_or_else(|| Error::EmptyInput("denoiser batch".into()))?;
    let (c, f, m) = first.state.shape();
    if c != 2 {
        return Err(Error::ConditionShapeMismatch(format!("state has {c} channels, expected 2")));
    }
    let plane = 2 * f * m;
    let mut grid = Vec::with_capacity(batch.len() * 3 * plane);
    let mut times = Vec::with_capacity(batch.len() * config.d_emb);
    for el in batch {
        for s in [el.state, &el.cond.c1, &el.cond.c2] {
            if s.shape() != (2, f, m) {
                return Err(Error::ConditionShapeMismatch(format!("spectrogram shape {:?}, expected {:?}", s.shape(), (2, f, m))));
            }
            grid.extend_from_slice(s.data());
        }
        times.extend(timestep_embedding(el.cond.step as f64, config.d_emb)?);
    }
    let bs = batch.len();
    let x = tape.input(Tensor::from_vec(&[bs, 6, f, m], grid));
    let p = |tape: &mut Tape, name: &str| {
        let id = params.id(name).unwrap_or_else(|| panic!("parameter {name} missing; validate with check_params"));
        tape.param(params, id)
    };
    let classes: Vec<usize> = batch.iter().map(|e| e.cond.label.index()).collect();
    let tasks: Vec<usize> = batch.iter().map(|e| e.cond.task.index()).collect();
    let table = p(tape, "emb.class.table");
    let e_class = tape.gather(table, &classes);
    let e_time = tape.input(Tensor::from_vec(&[bs, config.d_emb], times));
    let table = p(tape, "emb.task.table");
    let e_task = tape.gather(table, &tasks);
    let mut stack = x;
    for (name, e) in [("class", e_class), ("time", e_time), ("task", e_task)] {
        let (w, b) = (p(tape, &format!("emb.{name}.proj.w")), p(tape, &format!("emb.{name}.proj.b")));
        let proj = tape.linear(e, w, b);
        let planes = tape.broadcast(proj, f, m);
        stack = tape.concat(stack, planes);
    }
    let emb = tape.hcat(e_class, e_time);
    let emb = tape.hcat(emb, e_task);
    Ok((stack, emb, (f, m)))
}

/// The `[6 + 3k, F, M]` input stack for one element.
pub fn assemble_input(state: &Spectrogram, cond: &ConditionBundle, config: &DenoiserConfig, params: &DenoiserParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (v, _, (f, m)) = assemble_on_tape(&mut tape, config, params, &[DenoiserInput { state, cond }])?;
    Ok(Tensor::from_vec(&[config.in_channels(), f, m], tape.value(v).data().to_vec()))
}

/// Noise predictions for a batch, each shaped like its state.
pub fn denoise(config: &DenoiserConfig, params: &DenoiserParams, batch: &[DenoiserInput<'_>]) -> Result<Vec<Spectrogram>> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, config, params, batch)?;
    let value = tape.value(out);
    if !value.is_finite() {
        return Err(Error::NumericalBlowUp("non-finite denoiser output".into()));
    }
    let per = value.len() / batch.len();
    batch
        .iter()
        .zip(value.data().chunks_exact(per))
        .map(|(el, chunk)| Spectrogram::from_data(el.state.config, el.state.source_length, chunk.to_vec()))
        .collect()
}
