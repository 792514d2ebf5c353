//! Acceptance criteria, one PASS/FAIL line each. Runs dataset-free on the
//! synthetic corpus; the toy training study takes several minutes.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cardiodiff::augment::{run_settings, AugmentCount, ClassifierConfig};
use cardiodiff::denoiser::DenoiserConfig;
use cardiodiff::engine::{
    self, loss_and_grads, synthesize_batch, synthesize_with, Amplitude, ElementDraw, EpsModel, GaussianNoise, Model, ModelSpec,
    ReverseNoise, SynthesisRequest, TrainConfig, TrainingExample,
};
use cardiodiff::ingest::{decode_format212, encode_format212, split_corpus, SynthGenerator};
use cardiodiff::metrics::{dtw, emd_1d, fid, mmd, rmse};
use cardiodiff::schedule::make_schedule;
use cardiodiff::signal::{build_fixed_mask, build_mask, select_context, GapFractions};
use cardiodiff::spectral::{PadMode, SpectralPlan, Window};
use cardiodiff::{BeatClass, BeatDataset, ConditionBundle, Gap, Heartbeat, NoiseSchedule, ScheduleConfig, SpectralConfig, Spectrogram, TaskKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normals(seed: u64, n: usize) -> Vec<f64> {
    GaussianNoise::new(seed).initial(n)
}

fn beat_from(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let (a, f, p) = (rng.random_range(0.1..0.4), rng.random_range(0.01..0.2), rng.random_range(0.0..6.3));
    (0..len).map(|i| 0.5 + a * (f * i as f64 + p).sin() + 0.05 * rng.random::<f64>()).collect()
}

fn c1_masks() -> Outcome {
    let fr = GapFractions { min: 0.1, max: 0.5 };
    for len in (1..=12).chain([270]) {
        let g = build_fixed_mask(TaskKind::Generation, len, None).map_err(|e| e.to_string())?;
        ensure(g.bits().iter().all(|&b| b == 0) && g.len() == len, || format!("generation mask not all-zero at len {len}"))?;
        let f = build_fixed_mask(TaskKind::Forecasting, len, None).map_err(|e| e.to_string())?;
        ensure(f.bits().iter().all(|&b| b == 1) && f.len() == len, || format!("forecasting mask not all-one at len {len}"))?;
        for start in 0..len {
            for end in start..len {
                let m = build_fixed_mask(TaskKind::Imputation, len, Some(Gap::new(start, end))).map_err(|e| e.to_string())?;
                let want = |i: usize| u8::from(i < start || i > end);
                ensure(m.bits().iter().enumerate().all(|(i, &b)| b == want(i)), || format!("imputation mask wrong for gap {start}:{end} len {len}"))?;
            }
            ensure(build_fixed_mask(TaskKind::Imputation, len, Some(Gap::new(start, len))).is_err(), || "gap past the end accepted".into())?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let m = build_mask(TaskKind::Imputation, 270, None, fr, Some(&mut rng)).map_err(|e| e.to_string())?;
        let zeros = m.bits().iter().filter(|&&b| b == 0).count();
        let g = m.gap().ok_or("random imputation mask without gap")?;
        ensure(zeros == g.width() && (27..=135).contains(&zeros), || format!("random gap width {zeros}"))?;
    }
    let record: Vec<Heartbeat> = (0..6).map(|i| Heartbeat::new(vec![i as f64; 4], BeatClass::N, "r", i, 0)).collect();
    for h in 0..record.len() {
        for task in TaskKind::ALL {
            let got = select_context(&record, h, task);
            match (task, h) {
                (TaskKind::Forecasting, 0) => ensure(got.is_err(), || "forecast context for the first beat".into())?,
                (TaskKind::Forecasting, _) => ensure(got.ok().map(|b| b.beat_index) == Some(h - 1), || format!("forecast context of beat {h}"))?,
                _ => ensure(got.ok().map(|b| b.beat_index) == Some(h), || format!("{task} context of beat {h}"))?,
            }
        }
        ensure(select_context(&record, record.len(), TaskKind::Generation).is_err(), || "index past the record accepted".into())?;
    }
    Ok("all gaps for lengths 1..=12 and 270; 2000 random gaps; context selection".into())
}

fn c2_spectral() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut configs = 0;
    while configs < 50 {
        let n_fft = 2 * rng.random_range(1..=64usize);
        let divisors: Vec<usize> = (1..=n_fft).filter(|h| n_fft % h == 0).collect();
        let window = if rng.random_bool(0.7) { Window::Hann } else { Window::Rectangular };
        let hop = divisors[rng.random_range(0..divisors.len())];
        // Without overlap the centered frames can stop short of the signal end,
        // and periodic Hann vanishes at every frame edge.
        if hop > n_fft / 2 {
            continue;
        }
        let pad_mode = if rng.random_bool(0.5) { PadMode::Reflect } else { PadMode::Zero };
        let cfg = SpectralConfig { n_fft, hop, window, pad_mode, normalized: rng.random_bool(0.5) };
        let plan = SpectralPlan::new(cfg, 270).map_err(|e| format!("{cfg:?}: {e}"))?;
        for _ in 0..20 {
            let x: Vec<f64> = (0..270).map(|_| rng.random::<f64>()).collect();
            let y = plan.istft(&plan.stft(&x).map_err(|e| e.to_string())?).map_err(|e| format!("{cfg:?}: {e}"))?;
            worst = worst.max(x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        configs += 1;
    }
    ensure(worst <= 1e-6, || format!("max round-trip error {worst:.3e}"))?;
    Ok(format!("1000 beats over 50 configs, max error {worst:.2e}"))
}

fn c3_schedule() -> Outcome {
    let s = make_schedule(1000, 1e-4, 0.02).map_err(|e| e.to_string())?;
    ensure(s.betas()[0] == 1e-4 && s.betas()[999] == 0.02, || format!("endpoints {} {}", s.betas()[0], s.betas()[999]))?;
    ensure(s.alpha_bars().windows(2).all(|w| w[1] < w[0]), || "alpha_bar not decreasing".into())?;
    let abar_t = s.alpha_bar(1000).map_err(|e| e.to_string())?;
    ensure(abar_t < 7e-5, || format!("alpha_bar_T = {abar_t:.3e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for t in (1..=1000).step_by(7).chain([1000]) {
        let x0: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let eps = normals(t as u64, 64);
        let xt = s.q_sample(&x0, t, &eps).map_err(|e| e.to_string())?;
        let back = s.predict_x0(&xt, &eps, t).map_err(|e| e.to_string())?;
        worst = worst.max(back.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    ensure(worst <= 1e-9, || format!("q_sample/predict_x0 inverse error {worst:.3e}"))?;
    let n = 10_000;
    let eps = normals(33, n);
    let xs: Vec<f64> = eps.iter().map(|&e| s.q_sample(&[1.0], 1000, &[e]).map(|v| v[0])).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let (se_mean, se_var) = (1.0 / (n as f64).sqrt(), (2.0 / (n - 1) as f64).sqrt());
    ensure(mean.abs() < 4.0 * se_mean && (var - 1.0).abs() < 4.0 * se_var, || format!("x_T mean {mean:.4} var {var:.4}"))?;
    Ok(format!("alpha_bar_T {abar_t:.2e}, inverse error {worst:.1e}, x_T mean {mean:.4} var {var:.4}"))
}

/// Denoiser that knows the stored forward chain and the reverse noises, so
/// every posterior step lands exactly on the stored previous state.
struct ChainOracle {
    chain: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    sched: NoiseSchedule,
}

impl EpsModel for ChainOracle {
    fn predict(&self, states: &[Spectrogram], conds: &[ConditionBundle]) -> cardiodiff::Result<Vec<Spectrogram>> {
        let t = conds[0].step;
        let (a, b, ab) = (self.sched.alpha(t)?, self.sched.beta(t)?, self.sched.alpha_bar(t)?);
        let sigma = if t > 1 { self.sched.sigma(t)? } else { 0.0 };
        let (prev, z) = (&self.chain[t - 1], &self.z[t - 1]);
        states
            .iter()
            .map(|s| {
                let data = s.data().iter().zip(prev).zip(z).map(|((st, p), zz)| (1.0 - ab).sqrt() / b * (st - a.sqrt() * (p - sigma * zz))).collect();
                Spectrogram::from_data(s.config, s.source_length, data)
            })
            .collect()
    }
}

struct Replay {
    initial: Vec<f64>,
    z: Vec<Vec<f64>>,
}

impl ReverseNoise for Replay {
    fn initial(&mut self, _len: usize) -> Vec<f64> {
        self.initial.clone()
    }

    fn step(&mut self, t: usize, _len: usize) -> Vec<f64> {
        self.z[t - 1].clone()
    }
}

fn c4_chain() -> Outcome {
    let plan = SpectralPlan::new(SpectralConfig::new(32, 8), 270).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for steps in [1, 5, 10] {
        let sched = make_schedule(steps, 1e-2, 0.3).map_err(|e| e.to_string())?;
        let beat = beat_from(&mut rng, 270);
        let s0 = plan.stft(&beat).map_err(|e| e.to_string())?.into_data();
        let mut chain = vec![s0];
        for t in 1..=steps {
            let prev = chain.last().unwrap();
            let (a, b) = (sched.alpha(t).unwrap(), sched.beta(t).unwrap());
            let xi = normals(100 + t as u64, prev.len());
            chain.push(prev.iter().zip(&xi).map(|(p, x)| a.sqrt() * p + b.sqrt() * x).collect());
        }
        let z: Vec<Vec<f64>> = (0..steps).map(|k| normals(200 + k as u64, chain[0].len())).collect();
        let oracle = ChainOracle { chain: chain.clone(), z: z.clone(), sched: sched.clone() };
        let mut noise = [Replay { initial: chain[steps].clone(), z }];
        let out = synthesize_with(&oracle, &sched, &plan, &Amplitude::IDENTITY, &[SynthesisRequest::generation(BeatClass::N, 0)], &mut noise)
            .map_err(|e| e.to_string())?;
        worst = worst.max(out[0].samples.iter().zip(&beat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    ensure(worst <= 1e-5, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("T in {{1,5,10}}, max deviation {worst:.1e}"))
}

fn c5_gradients() -> Outcome {
    let len = 64;
    let spec = ModelSpec {
        denoiser: DenoiserConfig::tiny(),
        spectral: SpectralConfig::new(16, 4),
        schedule: ScheduleConfig { steps: 10, beta_min: 1e-2, beta_max: 0.3, ..Default::default() },
        beat_len: len,
        amplitude: Amplitude::default(),
    };
    let mut model = Model::init(spec).map_err(|e| e.to_string())?;
    let plan = model.plan().map_err(|e| e.to_string())?;
    let sched = model.schedule().map_err(|e| e.to_string())?;
    let cfg = TrainConfig { aux_weight: 1.0, ..Default::default() };
    let dim = {
        let (c, f, m) = plan.grid_shape();
        c * f * m
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let beats: Vec<Heartbeat> = (0..4).map(|i| Heartbeat::new(beat_from(&mut rng, len), BeatClass::from_index(i % 3).unwrap(), "g", i, 0)).collect();
    let h = 1e-6;
    let mut summary = Vec::new();
    for task in TaskKind::ALL {
        let masks = [
            build_fixed_mask(task, len, (task == TaskKind::Imputation).then(|| Gap::new(10, 35))).map_err(|e| e.to_string())?,
            build_fixed_mask(task, len, (task == TaskKind::Imputation).then(|| Gap::new(40, 60))).map_err(|e| e.to_string())?,
        ];
        let batch: Vec<TrainingExample<'_>> = (0..2)
            .map(|i| TrainingExample {
                target: &beats[i + 1],
                context: match task {
                    TaskKind::Generation => None,
                    TaskKind::Imputation => Some(&beats[i + 1]),
                    TaskKind::Forecasting => Some(&beats[i]),
                },
                mask: masks[i].clone(),
            })
            .collect();
        let draws: Vec<ElementDraw> = [2usize, 7].iter().enumerate().map(|(i, &step)| ElementDraw { step, eps: normals(500 + i as u64, dim) }).collect();
        let amp = model.spec.amplitude;
        let loss = |m: &Model| loss_and_grads(&m.spec.denoiser, &m.params, &plan, &amp, &sched, &batch, &draws, &cfg).map(|(l, _)| l.total);
        let (_, grads) = loss_and_grads(&model.spec.denoiser, &model.params, &plan, &amp, &sched, &batch, &draws, &cfg).map_err(|e| e.to_string())?;
        let (mut total, mut good) = (0usize, 0usize);
        for (pi, g) in grads.iter().enumerate() {
            for k in 0..g.data().len() {
                let orig = model.params.tensors()[pi].data()[k];
                model.params.tensors_mut()[pi].data_mut()[k] = orig + h;
                let up = loss(&model).map_err(|e| e.to_string())?;
                model.params.tensors_mut()[pi].data_mut()[k] = orig - h;
                let down = loss(&model).map_err(|e| e.to_string())?;
                model.params.tensors_mut()[pi].data_mut()[k] = orig;
                let (num, ana) = ((up - down) / (2.0 * h), g.data()[k]);
                let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
                total += 1;
                good += usize::from(rel <= 1e-3);
            }
        }
        let frac = good as f64 / total as f64;
        ensure(frac >= 0.99, || format!("{task}: {good}/{total} coordinates within 1e-3"))?;
        summary.push(format!("{task} {good}/{total}"));
    }
    Ok(summary.join(", "))
}

fn c6_format212() -> Outcome {
    let cases: [([u8; 3], (i16, i16)); 3] = [([0x30, 0x43, 0x21], (816, 1057)), ([0x00, 0xF8, 0x00], (-2048, -256)), ([0, 0, 0], (0, 0))];
    for (bytes, (a, b)) in cases {
        let (x, y) = decode_format212(&bytes).map_err(|e| e.to_string())?;
        ensure(x == [a] && y == [b], || format!("{bytes:02X?} decoded to {x:?} {y:?}"))?;
    }
    ensure(decode_format212(&[1, 2, 3, 4]).is_err(), || "truncated payload accepted".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let payload: Vec<u8> = (0..300_000).map(|_| rng.random()).collect();
    let (x, y) = decode_format212(&payload).map_err(|e| e.to_string())?;
    ensure(x.iter().chain(&y).all(|v| (-2048..=2047).contains(v)), || "sample out of 12-bit range".into())?;
    let again = encode_format212(&x, &y).map_err(|e| e.to_string())?;
    ensure(again == payload, || "re-encoding differs from the payload".into())?;
    Ok("3 hand vectors; 100000 random triplets re-encode exactly".into())
}

fn c7_metrics() -> Outcome {
    support::self_check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=6));
        // Integer values keep both sums exact regardless of order.
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-20..=20) as f64).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-20..=20) as f64).collect();
        let (got, want) = (dtw(&a, &b).map_err(|e| e.to_string())?, support::dtw_brute(&a, &b));
        ensure(got == want, || format!("dtw {a:?} {b:?}: {got} vs {want}"))?;
    }
    let mut emd_worst = 0.0f64;
    for _ in 0..100 {
        let (n, m, len) = (rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=4));
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..len).map(|_| rng.random::<f64>()).collect()).collect();
        let ys: Vec<Vec<f64>> = (0..m).map(|_| (0..len).map(|_| rng.random::<f64>()).collect()).collect();
        emd_worst = emd_worst.max((emd_1d(&xs, &ys).map_err(|e| e.to_string())? - support::emd_lp(&xs, &ys)).abs());
    }
    ensure(emd_worst <= 1e-9, || format!("emd deviates from the LP by {emd_worst:.3e}"))?;
    let mut mmd_worst = 0.0f64;
    for _ in 0..50 {
        let (n, m, d) = (rng.random_range(2..=12), rng.random_range(2..=12), rng.random_range(1..=5));
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        let ys: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random::<f64>() + 0.3).collect()).collect();
        let h = rng.random_range(0.2..2.0);
        mmd_worst = mmd_worst.max((mmd(&xs, &ys, Some(h)).map_err(|e| e.to_string())?.value - support::mmd_naive(&xs, &ys, h)).abs());
    }
    ensure(mmd_worst <= 1e-12, || format!("mmd deviates from the double sum by {mmd_worst:.3e}"))?;

    let mut fid_worst = 0.0f64;
    for trial in 0..20 {
        let n = 30;
        let mix = |rng: &mut ChaCha8Rng, shift: f64| -> Vec<Vec<f64>> {
            let z: Vec<f64> = normals(rng.random(), 3 * n);
            (0..n).map(|i| vec![z[3 * i] + shift, 0.5 * z[3 * i] + z[3 * i + 1], z[3 * i + 2] - 0.3 * z[3 * i + 1] + shift]).collect()
        };
        let x = mix(&mut rng, 0.0);
        let y = mix(&mut rng, 0.5);
        let f = fid(&x, &y).map_err(|e| e.to_string())?;
        fid_worst = fid_worst.max((f - support::fid3(&x, &y)).abs());
        fid_worst = fid_worst.max(fid(&x, &x).map_err(|e| e.to_string())?.abs());
        // A common translation only moves the means.
        let v = [0.3, -1.2, 2.0];
        let xv: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(&v).map(|(a, b)| a + b).collect()).collect();
        let shifted = fid(&xv, &x).map_err(|e| e.to_string())?;
        fid_worst = fid_worst.max((shifted - v.iter().map(|a| a * a).sum::<f64>()).abs());
        // Rotating both sets leaves the distance unchanged.
        let th = 0.3 + trial as f64;
        let (c, s) = (th.cos(), th.sin());
        let rot = |r: &Vec<f64>| vec![c * r[0] - s * r[1], s * r[0] + c * r[1], r[2]];
        let (xr, yr): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (x.iter().map(rot).collect(), y.iter().map(rot).collect());
        fid_worst = fid_worst.max((fid(&xr, &yr).map_err(|e| e.to_string())? - f).abs());
    }
    ensure(fid_worst <= 1e-6, || format!("fid property violated by {fid_worst:.3e}"))?;
    Ok(format!("dtw exact on 200 pairs; emd {emd_worst:.1e}; mmd {mmd_worst:.1e}; fid {fid_worst:.1e}"))
}

fn toy_spec() -> ModelSpec {
    ModelSpec {
        denoiser: DenoiserConfig { subblocks_per_block: 1, base_channels: 8, channel_mults: vec![1, 2, 2, 2], d_emb: 16, ..Default::default() },
        spectral: SpectralConfig::new(32, 8),
        schedule: ScheduleConfig { steps: 50, beta_min: 0.002, beta_max: 0.4, ..Default::default() },
        beat_len: 270,
        amplitude: Amplitude::default(),
    }
}

fn centroid<'a>(beats: impl Iterator<Item = &'a Heartbeat>) -> Vec<f64> {
    let beats: Vec<&Heartbeat> = beats.collect();
    let mut c = vec![0.0; beats[0].len()];
    for b in &beats {
        for (x, y) in c.iter_mut().zip(&b.samples) {
            *x += y / beats.len() as f64;
        }
    }
    c
}

/// The trained model comes back even when a sub-check fails, so the augmentation criterion still runs.
fn c8_toy(train: &BeatDataset, test: &BeatDataset) -> Result<(Model, Outcome), String> {
    let cfg = TrainConfig { batch_size: 16, epochs: 100, learning_rate: 1e-3, seed: 3, ..Default::default() };
    let (model, log) = engine::train(train, &toy_spec(), &cfg, None).map_err(|e| e.to_string())?;
    let mut fails = Vec::new();
    let (head, tail) = log.head_tail_means(0.1).ok_or("empty training log")?;
    if tail >= 0.5 * head {
        fails.push(format!("(a) loss {head:.4} -> {tail:.4}"));
    }

    let per_class = 20;
    let reqs: Vec<SynthesisRequest> =
        BeatClass::ALL.iter().flat_map(|&c| (0..per_class).map(move |i| SynthesisRequest::generation(c, 1000 * c.index() as u64 + i as u64))).collect();
    let generated = synthesize_batch(&model, &reqs).map_err(|e| e.to_string())?;
    let real_c: Vec<Vec<f64>> = BeatClass::ALL.iter().map(|&c| centroid(test.of_class(c))).collect();
    let mut own = 0;
    for c in BeatClass::ALL {
        let gc = centroid(generated.iter().filter(|b| b.label == c));
        let d: Vec<f64> = real_c.iter().map(|r| dtw(&gc, r)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        own += usize::from((0..3).min_by(|&i, &j| d[i].total_cmp(&d[j])) == Some(c.index()));
    }
    if own < 2 {
        fails.push(format!("(b) {own}/3 classes nearest their own centroid"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let fr = GapFractions { min: 0.3, max: 0.5 };
    let masks: Vec<_> = test.beats.iter().map(|_| build_mask(TaskKind::Imputation, 270, None, fr, Some(&mut rng))).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let reqs: Vec<SynthesisRequest> = test.beats.iter().zip(&masks).enumerate().map(|(i, (b, m))| SynthesisRequest::imputation(b.clone(), m.clone(), i as u64)).collect();
    let out = synthesize_batch(&model, &reqs).map_err(|e| e.to_string())?;
    let (mut e_model, mut e_lin) = (0.0, 0.0);
    for ((b, m), o) in test.beats.iter().zip(&masks).zip(&out) {
        let g = m.gap().unwrap();
        let x = &b.samples;
        let left = if g.start > 0 { x[g.start - 1] } else { x[g.end + 1] };
        let right = if g.end + 1 < x.len() { x[g.end + 1] } else { x[g.start - 1] };
        let lin: Vec<f64> = (g.start..=g.end).map(|i| left + (right - left) * (i + 1 - g.start) as f64 / (g.width() + 1) as f64).collect();
        e_model += rmse(&o.samples[g.start..=g.end], &x[g.start..=g.end]).unwrap();
        e_lin += rmse(&lin, &x[g.start..=g.end]).unwrap();
    }
    let n = out.len() as f64;
    let (e_model, e_lin) = (e_model / n, e_lin / n);
    if e_model >= e_lin {
        fails.push(format!("(c) imputation {e_model:.4} vs linear {e_lin:.4}"));
    }

    let by = test.by_record();
    let pairs: Vec<(&Heartbeat, &Heartbeat)> = by.values().flat_map(|bs| bs.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()).collect();
    let reqs: Vec<SynthesisRequest> = pairs.iter().enumerate().map(|(i, (p, c))| SynthesisRequest::forecasting((*p).clone(), c.label, i as u64)).collect();
    let out = synthesize_batch(&model, &reqs).map_err(|e| e.to_string())?;
    let train_c: Vec<Vec<f64>> = BeatClass::ALL.iter().map(|&c| centroid(train.of_class(c))).collect();
    let (mut f_model, mut f_mean) = (0.0, 0.0);
    for (o, (_, cur)) in out.iter().zip(&pairs) {
        f_model += rmse(&o.samples, &cur.samples).unwrap();
        f_mean += rmse(&train_c[cur.label.index()], &cur.samples).unwrap();
    }
    let n = out.len() as f64;
    let (f_model, f_mean) = (f_model / n, f_mean / n);
    if f_model >= f_mean {
        fails.push(format!("(d) forecast {f_model:.4} vs class mean {f_mean:.4}"));
    }
    let detail = format!(
        "(a) loss {head:.4}->{tail:.4} (b) {own}/3 own-centroid (c) gap rmse {e_model:.4} vs linear {e_lin:.4} (d) forecast {f_model:.4} vs class mean {f_mean:.4}"
    );
    let outcome = if fails.is_empty() { Ok(detail) } else { Err(format!("{}; {detail}", fails.join("; "))) };
    Ok((model, outcome))
}

fn c9_augment(train: &BeatDataset, test: &BeatDataset, model: &Model) -> Outcome {
    let cmp = run_settings(train, test, model, AugmentCount::PerClass(70), &ClassifierConfig::default(), 9).map_err(|e| e.to_string())?;
    let (real, aug) = (cmp.real_only.f1, cmp.augmented.f1);
    ensure(aug >= real - 0.02, || format!("macro F1 real-only {real:.4}, augmented {aug:.4}"))?;
    Ok(format!("macro F1 real-only {real:.4}, augmented {aug:.4}"))
}

const TINY_RUN: &str = r#"
[spectral]
n_fft = 32
hop = 8

[schedule]
steps = 10
beta_min = 0.01
beta_max = 0.4

[model]
subblocks_per_block = 1
base_channels = 2
channel_mults = [1, 1, 2, 2]
d_emb = 4

[train]
epochs = 2
batch_size = 8

[synth-data]
records_per_class = 4
beats_per_record = 8
"#;

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cardiodiff")).args(args).env_remove("CARDIODIFF_RUN_ROOT").output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn bytes(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

/// Training log with the wall-clock column removed.
fn log_sans_seconds(p: &Path) -> Result<String, String> {
    let text = String::from_utf8(bytes(p)?).map_err(|e| e.to_string())?;
    Ok(text.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n"))
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name);
    let s = |p: &Path| p.to_str().unwrap().to_string();
    std::fs::write(p("run.toml"), TINY_RUN).map_err(|e| e.to_string())?;
    cli(&["ingest", "--toy", "--config", &s(&p("run.toml")), "--out", &s(&p("data"))])?;
    let (train_csv, test_csv) = (s(&p("data").join("train.csv")), s(&p("data").join("test.csv")));
    cli(&["train", "--config", &s(&p("data").join("config.toml")), "--train", &train_csv, "--out", &s(&p("train1"))])?;
    cli(&["train", "--config", &s(&p("train1").join("config.toml")), "--out", &s(&p("train2"))])?;
    let mut checked = 0;
    for f in ["model.ckpt", "config.toml"] {
        ensure(bytes(&p("train1").join(f))? == bytes(&p("train2").join(f))?, || format!("train {f} differs"))?;
        checked += 1;
    }
    ensure(log_sans_seconds(&p("train1").join("train_log.csv"))? == log_sans_seconds(&p("train2").join("train_log.csv"))?, || "train log differs".into())?;
    checked += 1;

    let ckpt = s(&p("train1").join("model.ckpt"));
    cli(&["generate", "--config", &s(&p("train1").join("config.toml")), "--checkpoint", &ckpt, "--count", "5", "--seed", "4", "--real", &test_csv, "--out", &s(&p("gen1"))])?;
    cli(&["generate", "--config", &s(&p("gen1").join("config.toml")), "--checkpoint", &ckpt, "--count", "5", "--seed", "4", "--real", &test_csv, "--out", &s(&p("gen2"))])?;
    for f in ["generated.csv", "generated_N.svg", "generated_V.svg", "generated_F.svg", "config.toml"] {
        ensure(bytes(&p("gen1").join(f))? == bytes(&p("gen2").join(f))?, || format!("generate {f} differs"))?;
        checked += 1;
    }

    let synth = s(&p("gen1").join("generated.csv"));
    cli(&["evaluate", "--config", &s(&p("gen1").join("config.toml")), "--real", &test_csv, "--synth", &synth, "--out", &s(&p("eval1"))])?;
    cli(&["evaluate", "--config", &s(&p("eval1").join("config.toml")), "--synth", &synth, "--out", &s(&p("eval2"))])?;
    for f in ["metrics.csv", "metrics.txt", "config.toml"] {
        ensure(bytes(&p("eval1").join(f))? == bytes(&p("eval2").join(f))?, || format!("evaluate {f} differs"))?;
        checked += 1;
    }
    Ok(format!("{checked} artifacts byte-identical across reruns from echoed configs"))
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
    });
    let secs = t0.elapsed().as_secs_f64();
    match &outcome {
        Ok(d) => println!("[PASS] {id:>2} {name} ({secs:.1} s): {d}"),
        Err(d) => println!("[FAIL] {id:>2} {name} ({secs:.1} s): {d}"),
    }
    outcome.is_ok()
}

fn main() {
    let mut ok = vec![
        run(1, "mask and context conformance", c1_masks),
        run(2, "spectral round trip", c2_spectral),
        run(3, "schedule algebra", c3_schedule),
        run(4, "chain inversion oracle", c4_chain),
        run(5, "gradient check", c5_gradients),
        run(6, "format-212 codec", c6_format212),
        run(7, "metric oracles", c7_metrics),
    ];

    let records = SynthGenerator::default().synth_corpus(10, 20, &mut ChaCha8Rng::seed_from_u64(7));
    let (train, test) = split_corpus(records, 0.7, 1).expect("toy corpus splits");
    let t0 = Instant::now();
    let mut model = None;
    ok.push(run(8, "toy end-to-end training", || {
        let (m, outcome) = c8_toy(&train, &test)?;
        model = Some(m);
        outcome
    }));
    ok.push(match &model {
        Some(m) => run(9, "augmentation non-degradation", || c9_augment(&train, &test, m)),
        None => run(9, "augmentation non-degradation", || Err("no toy model: training failed".into())),
    });
    println!("     criteria 8+9 wall time {:.0} s (budget 900 s)", t0.elapsed().as_secs_f64());
    ok.push(run(10, "determinism", c10_determinism));

    let passed = ok.iter().filter(|&&b| b).count();
    println!("acceptance: {passed}/{} passed", ok.len());
    if passed != ok.len() {
        std::process::exit(1);
    }
}
