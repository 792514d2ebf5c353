use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cardiodiff::augment::run_settings;
use cardiodiff::checkpoint::{load_classifier, load_model, save_model};
use cardiodiff::engine::{self, synthesize_batch, SynthesisRequest};
use cardiodiff::ingest::{load_record, read_beats_csv, split_corpus, split_dataset, write_beats_csv, LoadOptions, SynthGenerator};
use cardiodiff::metrics::{evaluate_sets, ExtractorKind, FeatureMap, Pairing};
use cardiodiff::signal::{build_fixed_mask, build_mask, BeatClass, Gap, Heartbeat, Mask, TaskKind};
use cardiodiff::{BeatDataset, Model, SplitTag};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::plot::{self, Figure};
use crate::run::RunDir;
use crate::Common;

/// Beats drawn per figure.
const PLOTTED: usize = 4;

fn parse_class(s: &str) -> Result<BeatClass, String> {
    s.parse().map_err(|e: cardiodiff::Error| e.to_string())
}

fn parse_gap(s: &str) -> Result<Gap, String> {
    s.parse().map_err(|e: cardiodiff::Error| e.to_string())
}

fn parse_pairing(s: &str) -> Result<Pairing, String> {
    s.parse().map_err(|e: cardiodiff::Error| e.to_string())
}

fn parse_extractor(s: &str) -> Result<ExtractorKind, String> {
    s.parse().map_err(|e: cardiodiff::Error| e.to_string())
}

fn read_split(path: &Path, tag: SplitTag) -> Result<BeatDataset> {
    let ds = read_beats_csv(path, tag).with_context(|| format!("reading beats from {}", path.display()))?;
    if ds.is_empty() {
        bail!("{} holds no beats", path.display());
    }
    Ok(ds)
}

fn load_checkpoint(path: &Path) -> Result<Model> {
    if !path.exists() {
        bail!("checkpoint {} does not exist", path.display());
    }
    Ok(load_model(path)?.0)
}

fn write_set(path: &Path, beats: Vec<Heartbeat>) -> Result<()> {
    write_beats_csv(&BeatDataset::new(beats, SplitTag::Test), path).with_context(|| format!("writing {}", path.display()))
}

/// Seed of the `i`-th request of a class.
fn request_seed(seed: u64, class: BeatClass, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(((class.index() as u64) << 32) | i as u64)
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    #[command(flatten)]
    pub common: Common,
}

pub fn show_config(a: ConfigArgs) -> Result<()> {
    print!("{}", RunConfig::load(a.common.config.as_deref())?.to_toml()?);
    Ok(())
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of WFDB records: `<id>.hea`, format-212 signal file, `<id>.txt` annotations.
    #[arg(long, conflicts_with = "toy")]
    pub records: Option<PathBuf>,
    /// Draw the built-in synthetic corpus instead of reading records.
    #[arg(long)]
    pub toy: bool,
    /// Synthetic beats per class.
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Fraction of records assigned to training.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Signal name of the lead to keep.
    #[arg(long)]
    pub channel: Option<String>,
}

#[derive(Serialize)]
struct Manifest {
    source: String,
    split_ratio: f64,
    seed: u64,
    train_records: Vec<String>,
    test_records: Vec<String>,
    train_counts: BTreeMap<BeatClass, usize>,
    test_counts: BTreeMap<BeatClass, usize>,
    dropped_out_of_bounds: usize,
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if let Some(r) = &a.records {
        cfg.data.records_dir = r.display().to_string();
        cfg.synth_data.enabled = false;
    }
    if a.toy {
        cfg.synth_data.enabled = true;
    }
    if let Some(n) = a.per_class {
        if !cfg.synth_data.enabled {
            bail!("--per-class only applies to the synthetic corpus (--toy)");
        }
        cfg.synth_data.beats_per_record = n.div_ceil(cfg.synth_data.records_per_class.max(1));
    }
    if let Some(r) = a.split {
        cfg.data.split_ratio = r;
    }
    if let Some(s) = a.seed {
        cfg.data.seed = s;
    }
    if let Some(c) = &a.channel {
        cfg.data.channel = c.clone();
    }

    let mut dropped = 0;
    let (train, test, source) = if cfg.synth_data.enabled {
        let s = &cfg.synth_data;
        let records = SynthGenerator::default().synth_corpus(s.records_per_class, s.beats_per_record, &mut ChaCha8Rng::seed_from_u64(s.seed));
        let (train, test) = split_corpus(records, cfg.data.split_ratio, cfg.data.seed)?;
        (train, test, "synthetic".to_string())
    } else {
        if cfg.data.records_dir.is_empty() {
            bail!("no input: pass --records DIR or --toy");
        }
        let dir = PathBuf::from(&cfg.data.records_dir);
        if !dir.is_dir() {
            bail!("records directory {} does not exist", dir.display());
        }
        let mut headers: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "hea"))
            .collect();
        headers.sort();
        if headers.is_empty() {
            bail!("no .hea files in {}", dir.display());
        }
        let opts = LoadOptions { channel: cfg.data.channel.clone(), ..LoadOptions::default() };
        let mut records = Vec::with_capacity(headers.len());
        for h in &headers {
            let rec = load_record(h, &opts).with_context(|| format!("loading {}", h.display()))?;
            dropped += rec.dropped_out_of_bounds;
            records.push(rec.beats);
        }
        let (train, test) = split_dataset(records, cfg.data.split_ratio, cfg.data.seed)?;
        (train, test, cfg.data.records_dir.clone())
    };

    let run = RunDir::create(a.common.out.as_deref(), a.common.run_root.as_deref(), "ingest", &cfg)?;
    write_beats_csv(&train, &run.file("train.csv"))?;
    write_beats_csv(&test, &run.file("test.csv"))?;
    let manifest = Manifest {
        source,
        split_ratio: cfg.data.split_ratio,
        seed: cfg.data.seed,
        train_records: train.provenance.keys().cloned().collect(),
        test_records: test.provenance.keys().cloned().collect(),
        train_counts: train.class_counts(),
        test_counts: test.class_counts(),
        dropped_out_of_bounds: dropped,
    };
    std::fs::write(run.file("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!("train {} beats, test {} beats -> {}", train.len(), test.len(), run.path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training beats CSV (defaults to data.train_csv).
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    let path = RunConfig::data_path(a.train.as_deref(), &cfg.data.train_csv, "training set")?;
    cfg.data.train_csv = path.display().to_string();
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let ds = read_split(&path, SplitTag::Train)?;
    let spec = cfg.model_spec(ds.beat_len().unwrap_or(0));
    spec.validate()?;
    cfg.train.validate()?;
    let run = RunDir::create(a.common.out.as_deref(), a.common.run_root.as_deref(), "train", &cfg)?;

    let tcfg = cfg.train.clone();
    let mut save_periodic = |step: usize, model: &Model| save_model(&run.file(&format!("checkpoint-{step:07}.ckpt")), model, Some(&tcfg));
    let (model, log) = engine::train(&ds, &spec, &cfg.train, Some(&mut save_periodic))?;
    save_model(&run.file("model.ckpt"), &model, Some(&cfg.train))?;
    log.write_csv(std::fs::File::create(run.file("train_log.csv"))?)?;
    if let Some((head, tail)) = log.head_tail_means(0.1) {
        println!("loss first 10% {head:.5}, last 10% {tail:.5}");
    }
    println!("{} steps -> {}", log.step_totals.len(), run.path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// N, V or F; all classes when omitted.
    #[arg(long, value_parser = parse_class)]
    pub class: Option<BeatClass>,
    /// Beats per class.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Real beats for the figure background (defaults to data.test_csv if set).
    #[arg(long)]
    pub real: Option<PathBuf>,
}

fn background(flag: Option<&Path>, cfg: &RunConfig) -> Result<Option<BeatDataset>> {
    match flag.map(Path::to_path_buf).or_else(|| (!cfg.data.test_csv.is_empty()).then(|| PathBuf::from(&cfg.data.test_csv))) {
        Some(p) => Ok(Some(read_split(&p, SplitTag::Test)?)),
        None => Ok(None),
    }
}

fn class_rows<'a>(ds: Option<&'a BeatDataset>, class: BeatClass) -> Vec<&'a [f64]> {
    ds.map(|d| d.of_class(class).map(|b| b.samples.as_slice()).collect()).unwrap_or_default()
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let model = load_checkpoint(&a.checkpoint)?;
    let real = background(a.real.as_deref(), &cfg)?;
    let classes: Vec<BeatClass> = a.class.map(|c| vec![c]).unwrap_or_else(|| BeatClass::ALL.to_vec());
    let run = RunDir::create(a.common.out.as_deref(), a.common.run_root.as_deref(), "generate", &cfg)?;
    let mut all = Vec::new();
    for &class in &classes {
        let reqs: Vec<SynthesisRequest> = (0..a.count).map(|i| SynthesisRequest::generation(class, request_seed(a.seed, class, i))).collect();
        let mut beats = synthesize_batch(&model, &reqs)?;
        for (i, b) in beats.iter_mut().enumerate() {
            b.record_id = format!("synth-{class}");
            b.beat_index = i;
        }
        let fig = Figure {
            real: class_rows(real.as_ref(), class),
            lines: beats.iter().take(PLOTTED).map(|b| (b.samples.as_slice(), plot::SYNTH)).collect(),
            highlight: None,
        };
        if !beats.is_empty() {
            plot::draw(&run.file(&format!("generated_{class}.svg")), &fig)?;
        }
        all.extend(beats);
    }
    if all.is_empty() {
        bail!("--count must be positive");
    }
    write_set(&run.file("generated.csv"), all)?;
    println!("{} beats -> {}", a.count * classes.len(), run.path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Beats to repair (defaults to data.test_csv).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Fixed gap START:END (inclusive sample indices); random per beat when omitted.
    #[arg(long, value_parser = parse_gap)]
    pub gap: Option<Gap>,
    /// Use only the first N beats.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn impute(a: ImputeArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    let path = RunConfig::data_path(a.input.as_deref(), &cfg.data.test_csv, "input beats")?;
    cfg.data.test_csv = path.display().to_string();
    let model = load_checkpoint(&a.checkpoint)?;
    let ds = read_split(&path, SplitTag::Test)?;
    let beats: Vec<&Heartbeat> = ds.beats.iter().take(a.count.unwrap_or(usize::MAX)).collect();
    let len = model.spec.beat_len;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let masks: Vec<Mask> = beats
        .iter()
        .map(|_| match a.gap {
            Some(g) => build_fixed_mask(TaskKind::Imputation, len, Some(g)),
            None => build_mask(TaskKind::Imputation, len, None, cfg.train.gap_fractions(), Some(&mut rng)),
        })
        .collect::<Result<_, _>>()?;
    let run = RunDir::create(a.common.out.as_deref(), a.common.run_root.as_deref(), "impute", &cfg)?;
    let reqs: Vec<SynthesisRequest> =
        beats.iter().zip(&masks).enumerate().map(|(i, (b, m))| SynthesisRequest::imputation((*b).clone(), m.clone(), request_seed(a.seed, b.label, i))).collect();
    let out = synthesize_batch(&model, &reqs)?;

    let mut gaps = csv::Writer::from_path(run.file("gaps.csv"))?;
    gaps.write_record(["beat_id", "record_id", "gap_start", "gap_end"])?;
    let mut err = 0.0;
    for ((b, m), o) in beats.iter().zip(&masks).zip(&out) {
        let g = m.gap().expect("imputation masks carry a gap");
        gaps.write_record([b.beat_index.to_string(), b.record_id.clone(), g.start.to_string(), g.end.to_string()])?;
        err += cardiodiff::metrics::rmse(&o.samples[g.start..=g.end], &b.samples[g.start..=g.end])?;
    }
    gaps.flush()?;
    for (k, ((b, m), o)) in beats.iter().zip(&masks).zip(&out).take(PLOTTED).enumerate() {
        let g = m.gap().expect("imputation masks carry a gap");
        let fig = Figure {
            real: class_rows(Some(&ds), b.label),
            lines: vec![(b.samples.as_slice(), plot::TRUTH), (o.samples.as_slice(), plot::SYNTH)],
            highlight: Some((g.start, g.end)),
        };
        plot::draw(&run.file(&format!("imputed_{k}.svg")), &fig)?;
    }
    let n = out.len();
    write_set(&run.file("imputed.csv"), out)?;
    println!("{n} beats, mean gap RMSE {:.5} -> {}", err / n.max(1) as f64, run.path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Beats grouped by record in beat order (defaults to data.test_csv).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Forecast only the first N successor beats.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn forecast(a: ForecastArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    let path = RunConfig::data_path(a.input.as_deref(), &cfg.data.test_csv, "input beats")?;
    cfg.data.test_csv = path.display().to_string();
    let model = load_checkpoint(&a.checkpoint)?;
    let ds = read_split(&path, SplitTag::Test)?;
    let pairs: Vec<(&Heartbeat, &Heartbeat)> = ds
        .by_record()
        .into_values()
        .flat_map(|beats| beats.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>())
        .take(a.count.unwrap_or(usize::MAX))
        .collect();
    if pairs.is_empty() {
        bail!("{} has no record with two or more beats", path.display());
    }
    let run = RunDir::create(a.common.out.as_deref(), a.common.run_root.as_deref(), "forecast", &cfg)?;
    let reqs: Vec<SynthesisRequest> =
        pairs.iter().enumerate().map(|(i, (prev, next))| SynthesisRequest::forecasting((*prev).clone(), next.label, request_seed(a.seed, next.label, i))).collect();
    let mut out = synthesize_batch(&model, &reqs)?;
    let mut err = 0.0;
    for (o, (_, next)) in out.iter_mut().zip(&pairs) {
        o.beat_index = next.beat_index;
        o.r_peak = next.r_peak;
        err += cardiodiff::metrics::rmse(&o.samples, &next.samples)?;
    }
    for (k, ((prev, next), o)) in pairs.iter().zip(&out).take(PLOTTED).enumerate() {
        let fig = Figure {
            real: class_rows(Some(&ds), next.label),
            lines: vec![(prev.samples.as_slice(), plot::CONTEXT), (next.samples.as_slice(), plot::TRUTH), (o.samples.as_slice(), plot::SYNTH)],
            highlight: None,
        };
        plot::draw(&run.file(&format!("forecast_{k}.svg")), &fig)?;
    }
    let n = out.len();
    write_set(&run.file("forecast.csv"), out)?;
    println!("{n} beats, mean RMSE {:.5} -> {}", err / n as f64, run.path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Real beats (defaults to data.test_csv).
    #[arg(long)]
    pub real: Option<PathBuf>,
    #[arg(long)]
    pub synth: PathBuf,
    /// nearest-real or ground-truth.
    #[arg(long, value_parser = parse_pairing)]
    pub pairing: Option<Pairing>,
    /// statistical or classifier-penultimate.
    #[arg(long, value_parser = parse_extractor)]
    pub extractor: Option<ExtractorKind>,
    /// Classifier checkpoint supplying features for FID.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Also report RMSE and MAE over this START:END range.
    #[arg(long, value_parser = parse_gap)]
    pub gap: Option<Gap>,
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    let real_path = RunConfig::data_path(a.real.as_deref(), &cfg.data.test_csv, "real beats")?;
    cfg.data.test_csv = real_path.display().to_string();
    if let Some(p) = a.pairing {
        cfg.eval.pairing = p;
    }
    if let Some(e) = a.extractor {
        cfg.eval.extractor = e;
    }
    let real = read_split(&real_path, SplitTag::Test)?;
    let synth = read_split(&a.synth, SplitTag::Test)?;
    let clf = a.classifier.as_deref().map(load_classifier).transpose()?;
    if cfg.eval.extractor == ExtractorKind::ClassifierPenultimate && clf.is_none() {
        bail!("the classifier feature extractor needs --classifier CHECKPOINT");
    }
    let mut opts = cfg.eval_options();
    opts.gap = a.gap;
    let run = RunDir::create(a.common.out.as_deref(), a.common.run_root.as_deref(), "evaluate", &cfg)?;
    let report = evaluate_sets(&real, &synth, &opts, clf.as_ref().map(|c| c as &dyn FeatureMap))?;
    report.write_csv(std::fs::File::create(run.file("metrics.csv"))?)?;
    let text = report.to_text();
    std::fs::write(run.file("metrics.txt"), &text)?;
    print!("{text}");
    println!("-> {}", run.path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to data.train_csv.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Defaults to data.test_csv.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Synthetic beats per class; balances classes up to the majority count when omitted.
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn augment_eval(a: AugmentArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    let train_path = RunConfig::data_path(a.train.as_deref(), &cfg.data.train_csv, "training set")?;
    let test_path = RunConfig::data_path(a.test.as_deref(), &cfg.data.test_csv, "test set")?;
    cfg.data.train_csv = train_path.display().to_string();
    cfg.data.test_csv = test_path.display().to_string();
    if let Some(n) = a.per_class {
        cfg.augment.per_class = n;
    }
    if let Some(s) = a.seed {
        cfg.augment.seed = s;
    }
    let model = load_checkpoint(&a.checkpoint)?;
    let train = read_split(&train_path, SplitTag::Train)?;
    let test = read_split(&test_path, SplitTag::Test)?;
    let run = RunDir::create(a.common.out.as_deref(), a.common.run_root.as_deref(), "augment-eval", &cfg)?;
    let cmp = run_settings(&train, &test, &model, cfg.augment.count(), &cfg.classifier, cfg.augment.seed)?;
    cmp.write_csv(std::fs::File::create(run.file("settings.csv"))?)?;
    std::fs::write(run.file("settings.json"), serde_json::to_string_pretty(&cmp)? + "\n")?;
    let text = cmp.to_text();
    std::fs::write(run.file("settings.txt"), &text)?;
    print!("{text}");
    println!("-> {}", run.path.display());
    Ok(())
}
