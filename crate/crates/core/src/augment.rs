//! Beat classifier and the real-only versus augmented training comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{synthesize_batch, Model, SynthesisRequest};
use crate::error::{Error, Result};
use crate::ingest::{BeatDataset, SplitTag};
use crate::metrics::FeatureMap;
use crate::nn::{fan_in_normal, Adam, ParamStore, Tape, Tensor, Var};
use crate::signal::{BeatClass, Heartbeat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Output channels of the three convolution stages.
    pub channels: [usize; 3],
    pub kernel: usize,
    /// Width of the penultimate layer, exposed as the feature map.
    pub feature_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub classes: Vec<BeatClass>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            channels: [8, 16, 32],
            kernel: 7,
            feature_dim: 64,
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            classes: BeatClass::ALL.to_vec(),
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.channels.contains(&0) || self.feature_dim == 0 || self.batch_size == 0 {
            return Err(Error::BadTrainConfig("classifier widths and batch size must be positive, kernel odd".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::BadTrainConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.classes.len() < 2 {
            return Err(Error::BadTrainConfig("need at least two classes".into()));
        }
        Ok(())
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c = 1;
        for (i, &w) in self.channels.iter().enumerate() {
            out.push((format!("conv{i}.w"), vec![w, c, 1, self.kernel]));
            out.push((format!("conv{i}.b"), vec![w]));
            c = w;
        }
        out.push(("hidden.w".into(), vec![self.feature_dim, c]));
        out.push(("hidden.b".into(), vec![self.feature_dim]));
        out.push(("out.w".into(), vec![self.classes.len(), self.feature_dim]));
        out.push(("out.b".into(), vec![self.classes.len()]));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub params: ParamStore,
}

impl Classifier {
    pub fn init(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::default();
        for (name, shape) in config.param_shapes() {
            let t = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = shape[1..].iter().product();
                fan_in_normal(&shape, fan_in, 2.0, &mut rng)
            };
            params.insert(&name, t);
        }
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ClassifierConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        for (name, shape) in config.param_shapes() {
            match params.by_name(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                _ => return Err(Error::BadTrainConfig(format!("classifier parameter {name} missing or misshapen"))),
            }
        }
        Ok(Self { config, params })
    }

    /// Returns `(features, logits)` variables.
    fn forward(&self, tape: &mut Tape, beats: &[&[f64]]) -> Result<(Var, Var)> {
        let len = beats.first().map(|b| b.len()).ok_or_else(|| Error::EmptyInput("classifier batch".into()))?;
        let mut data = Vec::with_capacity(beats.len() * len);
        for b in beats {
            if b.len() != len {
                return Err(Error::DimensionMismatch { expected: len, actual: b.len() });
            }
            data.extend_from_slice(b);
        }
        let p = |tape: &mut Tape, name: &str| tape.param(&self.params, self.params.id(name).expect("validated parameter"));
        let mut h = tape.input(Tensor::from_vec(&[beats.len(), 1, 1, len], data));
        for i in 0..self.config.channels.len() {
            let (w, b) = (p(tape, &format!("conv{i}.w")), p(tape, &format!("conv{i}.b")));
            h = tape.conv2d(h, w, b);
            h = tape.silu(h);
            h = tape.max_pool(h, 1, 2);
        }
        h = tape.global_avg(h);
        let (w, b) = (p(tape, "hidden.w"), p(tape, "hidden.b"));
        h = tape.linear(h, w, b);
        let features = tape.silu(h);
        let (w, b) = (p(tape, "out.w"), p(tape, "out.b"));
        let logits = tape.linear(features, w, b);
        Ok((features, logits))
    }

    pub fn logits(&self, beats: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let (_, logits) = self.forward(&mut tape, beats)?;
        Ok(tape.value(logits).data().chunks_exact(self.config.classes.len()).map(<[f64]>::to_vec).collect())
    }

    pub fn predict(&self, beats: &[&[f64]]) -> Result<Vec<BeatClass>> {
        Ok(self
            .logits(beats)?
            .iter()
            .map(|row| {
                let best = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
                self.config.classes[best]
            })
            .collect())
    }
}

impl FeatureMap for Classifier {
    fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    fn features(&self, beats: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(beats.len());
        for chunk in beats.chunks(256) {
            let refs: Vec<&[f64]> = chunk.iter().map(Vec::as_slice).collect();
            let mut tape = Tape::new();
            let (features, _) = self.forward(&mut tape, &refs)?;
            out.extend(tape.value(features).data().chunks_exact(self.config.feature_dim).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}

/// Softmax cross-entropy with mean reduction; returns the loss and `dL/dlogits`.
fn cross_entropy(logits: &Tensor, targets: &[usize]) -> (f64, Tensor) {
    let (b, k) = logits.dims2();
    let mut grad = vec![0.0; b * k];
    let mut loss = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += z.ln() + max - row[y];
        for j in 0..k {
            let p = (row[j] - max).exp() / z;
            grad[i * k + j] = (p - f64::from(u8::from(j == y))) / b as f64;
        }
    }
    (loss / b as f64, Tensor::from_vec(&[b, k], grad))
}

pub fn train_classifier(train: &BeatDataset, cfg: &ClassifierConfig) -> Result<Classifier> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::NoTrainingData);
    }
    let index_of: BTreeMap<BeatClass, usize> = cfg.classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let mut examples = Vec::with_capacity(train.len());
    for b in &train.beats {
        let y = *index_of.get(&b.label).ok_or_else(|| Error::ClassMismatch(format!("class {} not in the classifier's class list", b.label)))?;
        examples.push((b.samples.as_slice(), y));
    }
    let present: std::collections::BTreeSet<usize> = examples.iter().map(|e| e.1).collect();
    if present.len() < 2 {
        return Err(Error::DegenerateTrainingSet(format!("{} class(es) present", present.len())));
    }
    let mut clf = Classifier::init(cfg.clone())?;
    let mut opt = Adam::new(cfg.learning_rate, &clf.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let beats: Vec<&[f64]> = chunk.iter().map(|&i| examples[i].0).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| examples[i].1).collect();
            let mut tape = Tape::new();
            let (_, logits) = clf.forward(&mut tape, &beats)?;
            let (loss, seed) = cross_entropy(tape.value(logits), &ys);
            if !loss.is_finite() {
                return Err(Error::NumericalBlowUp(format!("classifier loss {loss}")));
            }
            let grads = tape.backward(logits, seed, clf.params.len()).into_dense(&clf.params);
            opt.update(&mut clf.params, &grads);
        }
    }
    Ok(clf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub setting: String,
    pub classes: Vec<BeatClass>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassificationReport {
    pub fn from_predictions(setting: &str, classes: &[BeatClass], truth: &[BeatClass], pred: &[BeatClass]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::DimensionMismatch { expected: truth.len(), actual: pred.len() });
        }
        if truth.is_empty() {
            return Err(Error::EmptyInput("no predictions to score".into()));
        }
        let pos = |c: &BeatClass| classes.iter().position(|x| x == c).ok_or_else(|| Error::ClassMismatch(format!("class {c} not in {classes:?}")));
        let k = classes.len();
        let mut confusion = vec![vec![0usize; k]; k];
        for (t, p) in truth.iter().zip(pred) {
            confusion[pos(t)?][pos(p)?] += 1;
        }
        let total = truth.len() as f64;
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for i in 0..k {
            let tp = confusion[i][i];
            let predicted: usize = (0..k).map(|r| confusion[r][i]).sum();
            let actual: usize = confusion[i].iter().sum();
            let (p, r) = (ratio(tp, predicted), ratio(tp, actual));
            p_sum += p;
            r_sum += r;
            f_sum += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        }
        Ok(Self {
            setting: setting.to_string(),
            classes: classes.to_vec(),
            confusion,
            accuracy: correct as f64 / total,
            precision: p_sum / k as f64,
            recall: r_sum / k as f64,
            f1: f_sum / k as f64,
        })
    }

    pub fn support(&self) -> Vec<usize> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }
}

pub fn evaluate_classifier(clf: &Classifier, test: &BeatDataset, setting: &str) -> Result<ClassificationReport> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set is empty".into()));
    }
    if let Some(b) = test.beats.iter().find(|b| !clf.config.classes.contains(&b.label)) {
        return Err(Error::ClassMismatch(format!("test class {} unknown to the classifier", b.label)));
    }
    let mut pred = Vec::with_capacity(test.len());
    for chunk in test.beats.chunks(256) {
        let refs: Vec<&[f64]> = chunk.iter().map(|b| b.samples.as_slice()).collect();
        pred.extend(clf.predict(&refs)?);
    }
    let truth: Vec<BeatClass> = test.beats.iter().map(|b| b.label).collect();
    ClassificationReport::from_predictions(setting, &clf.config.classes, &truth, &pred)
}

/// How many synthetic beats to add per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentCount {
    /// Top every class up to the majority-class count.
    Balance,
    PerClass(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsComparison {
    pub real_only: ClassificationReport,
    pub augmented: ClassificationReport,
    pub synthetic_per_class: BTreeMap<BeatClass, usize>,
    pub classifier: ClassifierConfig,
    pub synth_seed: u64,
}

pub const REAL_ONLY: &str = "real-only";
pub const AUGMENTED: &str = "real+synthetic";

impl SettingsComparison {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["setting", "accuracy", "precision", "recall", "f1", "n_synthetic", "classifier_seed", "synth_seed"])?;
        let n_synth: usize = self.synthetic_per_class.values().sum();
        for (r, n) in [(&self.real_only, 0), (&self.augmented, n_synth)] {
            out.write_record([
                r.setting.clone(),
                format!("{:.6}", r.accuracy),
                format!("{:.6}", r.precision),
                format!("{:.6}", r.recall),
                format!("{:.6}", r.f1),
                n.to_string(),
                self.classifier.seed.to_string(),
                self.synth_seed.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>8} {:>9} {:>8} {:>8}", "setting", "acc", "precision", "recall", "f1");
        for r in [&self.real_only, &self.augmented] {
            let _ = writeln!(s, "{:<16} {:>8.4} {:>9.4} {:>8.4} {:>8.4}", r.setting, r.accuracy, r.precision, r.recall, r.f1);
        }
        let counts: Vec<String> = self.synthetic_per_class.iter().map(|(c, n)| format!("{c}={n}")).collect();
        let _ = writeln!(s, "synthetic beats added: {}", counts.join(" "));
        s
    }
}

/// Generated beats per class for the augmented setting.
pub fn synthetic_counts(train: &BeatDataset, classes: &[BeatClass], count: AugmentCount) -> BTreeMap<BeatClass, usize> {
    let have = train.class_counts();
    let majority = classes.iter().map(|c| have.get(c).copied().unwrap_or(0)).max().unwrap_or(0);
    classes
        .iter()
        .map(|&c| {
            let n = match count {
                AugmentCount::Balance => majority - have.get(&c).copied().unwrap_or(0),
                AugmentCount::PerClass(n) => n,
            };
            (c, n)
        })
        .collect()
}

/// Trains the same classifier on the real training set and on the real set
/// plus diffusion-generated beats, scoring both on `test`.
pub fn run_settings(
    train: &BeatDataset,
    test: &BeatDataset,
    model: &Model,
    count: AugmentCount,
    cfg: &ClassifierConfig,
    synth_seed: u64,
) -> Result<SettingsComparison> {
    if train.beat_len() != Some(model.spec.beat_len) {
        return Err(Error::DimensionMismatch { expected: model.spec.beat_len, actual: train.beat_len().unwrap_or(0) });
    }
    let counts = synthetic_counts(train, &cfg.classes, count);
    let real_clf = train_classifier(train, cfg)?;
    let real_only = evaluate_classifier(&real_clf, test, REAL_ONLY)?;

    // Fewest-beat classes are generated first.
    let have = train.class_counts();
    let mut order: Vec<BeatClass> = cfg.classes.clone();
    order.sort_by_key(|c| (have.get(c).copied().unwrap_or(0), *c));
    let mut requests = Vec::new();
    for class in order {
        for i in 0..counts[&class] {
            requests.push(SynthesisRequest::generation(class, synth_seed.wrapping_add((class.index() as u64) << 32).wrapping_add(i as u64)));
        }
    }
    let augmented = if requests.is_empty() {
        let mut r = evaluate_classifier(&real_clf, test, AUGMENTED)?;
        r.setting = AUGMENTED.to_string();
        r
    } else {
        let mut synthetic: Vec<Heartbeat> = Vec::with_capacity(requests.len());
        for chunk in requests.chunks(64) {
            synthetic.extend(synthesize_batch(model, chunk)?);
        }
        let mut beats = train.beats.clone();
        beats.extend(synthetic);
        let clf = train_classifier(&BeatDataset::new(beats, SplitTag::Train), cfg)?;
        evaluate_classifier(&clf, test, AUGMENTED)?
    };
    Ok(SettingsComparison { real_only, augmented, synthetic_per_class: counts, classifier: cfg.clone(), synth_seed })
}
