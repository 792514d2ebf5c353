//! Annotations, beat segmentation, per-record normalization and record-wise splits.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::wfdb::{adc_to_physical, decode_format212_signals, parse_wfdb_header, RecordHeader};
use crate::signal::{BeatClass, Heartbeat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub sample_index: usize,
    pub symbol: char,
}

/// Ordering policy for annotation lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ordering {
    /// Out-of-order sample indices are an error.
    #[default]
    Strict,
    /// Out-of-order lists are sorted.
    Lenient,
}

/// Parses `rdann`-style text: whitespace columns, column 2 is the sample
/// index and column 3 the symbol. A header line starting with `Time` is skipped.
///
/// When `keep` is given, only annotations whose symbol it contains are returned.
pub fn parse_annotations(text: &str, keep: Option<&[char]>, ordering: Ordering) -> Result<Vec<Annotation>> {
    let mut out: Vec<Annotation> = Vec::new();
    let mut last: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() || cols[0].eq_ignore_ascii_case("time") {
            continue;
        }
        if cols.len() < 3 {
            return Err(Error::AnnotationParse { line: line_no, message: format!("expected at least 3 columns, got {}", cols.len()) });
        }
        let sample_index: usize = cols[1]
            .parse()
            .map_err(|_| Error::AnnotationParse { line: line_no, message: format!("non-numeric sample index {:?}", cols[1]) })?;
        let mut sym = cols[2].chars();
        let symbol = match (sym.next(), sym.next()) {
            (Some(c), None) => c,
            _ => return Err(Error::AnnotationParse { line: line_no, message: format!("bad symbol {:?}", cols[2]) }),
        };
        if let Some(prev) = last {
            if sample_index <= prev && ordering == Ordering::Strict {
                return Err(Error::AnnotationsNotSorted { line: line_no });
            }
        }
        last = Some(sample_index);
        if keep.map_or(true, |k| k.contains(&symbol)) {
            out.push(Annotation { sample_index, symbol });
        }
    }
    if ordering == Ordering::Lenient {
        out.sort_by_key(|a| a.sample_index);
        out.dedup_by_key(|a| a.sample_index);
    }
    Ok(out)
}

/// Window around each R-peak, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeatWindow {
    pub pre_ms: f64,
    pub post_ms: f64,
}

impl Default for BeatWindow {
    fn default() -> Self {
        Self { pre_ms: 350.0, post_ms: 400.0 }
    }
}

impl BeatWindow {
    /// Samples before and after the peak at `fs`.
    pub fn samples(&self, fs: f64) -> (usize, usize) {
        ((self.pre_ms * fs / 1000.0).round() as usize, (self.post_ms * fs / 1000.0).round() as usize)
    }

    pub fn len(&self, fs: f64) -> usize {
        let (a, b) = self.samples(fs);
        a + b
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segmentation {
    pub beats: Vec<Heartbeat>,
    /// Beats whose window fell outside the record.
    pub dropped_out_of_bounds: usize,
    /// Annotations whose symbol is not one of N, V, F.
    pub skipped_symbols: usize,
}

/// Cuts `[r - pre, r + post)` windows around N/V/F annotations.
///
/// Beat indices count every annotation of the record in order, so they stay
/// strictly increasing even when non-beat symbols are interleaved.
pub fn segment_beats(signal: &[f64], anns: &[Annotation], fs: f64, window: BeatWindow, record_id: &str) -> Result<Segmentation> {
    if !(fs > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling rate must be positive, got {fs}")));
    }
    let (pre, post) = window.samples(fs);
    let mut seg = Segmentation::default();
    for (h, ann) in anns.iter().enumerate() {
        let Some(label) = BeatClass::from_symbol(ann.symbol) else {
            seg.skipped_symbols += 1;
            continue;
        };
        let r = ann.sample_index;
        if r < pre || r + post > signal.len() {
            seg.dropped_out_of_bounds += 1;
            continue;
        }
        seg.beats.push(Heartbeat::new(signal[r - pre..r + post].to_vec(), label, record_id, h, r));
    }
    Ok(seg)
}

/// Min-max scaling of a whole record to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    pub fn fit(samples: &[f64]) -> Result<Self> {
        let (min, max) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(max > min) {
            return Err(Error::DegenerateRecord);
        }
        Ok(Self { min, max })
    }

    pub fn apply(&self, samples: &[f64]) -> Vec<f64> {
        let span = self.max - self.min;
        samples.iter().map(|v| ((v - self.min) / span).clamp(0.0, 1.0)).collect()
    }

    /// Maps normalized values back to physical units.
    pub fn invert(&self, normalized: &[f64]) -> Vec<f64> {
        normalized.iter().map(|v| self.min + v * (self.max - self.min)).collect()
    }
}

/// `(x - min) / (max - min)` over the record, with the fitted bounds.
pub fn normalize_record(samples: &[f64]) -> Result<(Vec<f64>, Normalization)> {
    let n = Normalization::fit(samples)?;
    Ok((n.apply(samples), n))
}

/// A record's normalized beats.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordBeats {
    pub record_id: String,
    pub source: PathBuf,
    pub beats: Vec<Heartbeat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

/// Beats of one split with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatDataset {
    pub beats: Vec<Heartbeat>,
    pub split_tag: SplitTag,
    /// record id to source file
    pub provenance: BTreeMap<String, PathBuf>,
}

impl BeatDataset {
    pub fn new(beats: Vec<Heartbeat>, split_tag: SplitTag) -> Self {
        let provenance = beats.iter().map(|b| (b.record_id.clone(), PathBuf::new())).collect();
        Self { beats, split_tag, provenance }
    }

    pub fn len(&self) -> usize {
        self.beats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beats.is_empty()
    }

    pub fn beat_len(&self) -> Option<usize> {
        self.beats.first().map(Heartbeat::len)
    }

    pub fn of_class(&self, class: BeatClass) -> impl Iterator<Item = &Heartbeat> {
        self.beats.iter().filter(move |b| b.label == class)
    }

    pub fn class_counts(&self) -> BTreeMap<BeatClass, usize> {
        let mut counts = BTreeMap::new();
        for b in &self.beats {
            *counts.entry(b.label).or_insert(0) += 1;
        }
        counts
    }

    /// Beats grouped by record, each group ordered by beat index.
    pub fn by_record(&self) -> BTreeMap<&str, Vec<&Heartbeat>> {
        let mut map: BTreeMap<&str, Vec<&Heartbeat>> = BTreeMap::new();
        for b in &self.beats {
            map.entry(b.record_id.as_str()).or_default().push(b);
        }
        for beats in map.values_mut() {
            beats.sort_by_key(|b| b.beat_index);
        }
        map
    }

    pub fn validate(&self) -> Result<()> {
        let Some(len) = self.beat_len() else { return Ok(()) };
        if let Some(b) = self.beats.iter().find(|b| b.len() != len) {
            return Err(Error::DimensionMismatch { expected: len, actual: b.len() });
        }
        Ok(())
    }
}

/// Record-wise split: every record lands on exactly one side.
///
/// `round(ratio * n)` records go to training after a seeded shuffle, and each
/// side lists records in id order.
pub fn split_dataset(records: Vec<RecordBeats>, ratio: f64, seed: u64) -> Result<(BeatDataset, BeatDataset)> {
    if records.len() < 2 {
        return Err(Error::CannotSplit(format!("need at least 2 records, got {}", records.len())));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::CannotSplit(format!("ratio {ratio} outside [0, 1]")));
    }
    let n_train = (ratio * records.len() as f64).round() as usize;
    if n_train >= records.len() {
        return Err(Error::EmptyTestSide);
    }
    if n_train == 0 {
        return Err(Error::CannotSplit("empty train side".into()));
    }
    let mut records = records;
    records.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; records.len()];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }

    let mut train = BeatDataset { beats: vec![], split_tag: SplitTag::Train, provenance: BTreeMap::new() };
    let mut test = BeatDataset { beats: vec![], split_tag: SplitTag::Test, provenance: BTreeMap::new() };
    for (rec, train_side) in records.into_iter().zip(is_train) {
        let ds = if train_side { &mut train } else { &mut test };
        ds.provenance.insert(rec.record_id, rec.source);
        ds.beats.extend(rec.beats);
    }
    Ok((train, test))
}

/// Options for loading a WFDB record from disk.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub channel: String,
    pub window: BeatWindow,
    /// Extension of the text annotation file next to the header.
    pub annotation_ext: String,
    pub ordering: Ordering,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { channel: "MLII".into(), window: BeatWindow::default(), annotation_ext: "txt".into(), ordering: Ordering::Lenient }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedRecord {
    pub header: RecordHeader,
    pub normalization: Normalization,
    pub beats: RecordBeats,
    pub dropped_out_of_bounds: usize,
}

/// Loads `<stem>.hea`, its format-212 signal file, and `<stem>.<annotation_ext>`,
/// then normalizes the selected channel and segments N/V/F beats.
pub fn load_record(header_path: &Path, opts: &LoadOptions) -> Result<LoadedRecord> {
    let dir = header_path.parent().unwrap_or(Path::new("."));
    let header = parse_wfdb_header(&std::fs::read_to_string(header_path)?)?;
    let ch = header
        .channel(&opts.channel)
        .ok_or_else(|| Error::InvalidArgument(format!("record {} has no channel {:?}", header.record_id, opts.channel)))?;
    let spec = &header.signals[ch];
    if !spec.is_supported() {
        return Err(Error::InvalidArgument(format!("record {}: format {} is not supported", header.record_id, spec.format)));
    }
    let payload = std::fs::read(dir.join(&spec.file_name))?;
    let streams = decode_format212_signals(&payload, header.n_signals)?;
    let physical = adc_to_physical(&streams[ch], spec.adc_gain, spec.baseline)?;
    let (normalized, normalization) = normalize_record(&physical)?;

    let ann_path = header_path.with_extension(&opts.annotation_ext);
    let anns = parse_annotations(&std::fs::read_to_string(&ann_path)?, None, opts.ordering)?;
    let seg = segment_beats(&normalized, &anns, header.sampling_rate, opts.window, &header.record_id)?;
    let beats = RecordBeats { record_id: header.record_id.clone(), source: header_path.to_path_buf(), beats: seg.beats };
    Ok(LoadedRecord { header, normalization, beats, dropped_out_of_bounds: seg.dropped_out_of_bounds })
}
