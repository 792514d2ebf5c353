//! Parametric sum-of-Gaussians beats for dataset-free runs.
//!
//! Every class is five Gaussian bumps (P, Q, R, S, T) read from
//! `data/synth_templates.json`. Class V drops P, widens QRS and inverts T;
//! class F averages the N and V tables.
//!
//! Variation comes in two levels so that beats of one record resemble each
//! other more than beats of different records: a record draws multiplicative
//! amplitude factors and additive position shifts once per wave, and every
//! beat adds smaller factors and shifts of its own plus white noise. All
//! jitter is mean-zero (amplitudes multiplicatively mean-one), so the expected
//! beat has a closed form; see [`SynthGenerator::expected_beat`].

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::records::{split_dataset, BeatDataset, RecordBeats, SplitTag};
use crate::signal::{BeatClass, Heartbeat};

/// Template-to-template DTW distance between classes N and V exceeds this many
/// times the mean draw-to-template distance within class N.
pub const CLASS_SEPARATION_FACTOR: f64 = 10.0;

/// `[amplitude, centre offset from the R-peak, width]`, in samples.
pub type Wave = [f64; 3];

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TemplateTable {
    pub beat_len: usize,
    pub r_index: usize,
    pub offset: f64,
    pub scale: f64,
    #[serde(rename = "N")]
    pub normal: [Wave; 5],
    #[serde(rename = "V")]
    pub ventricular: [Wave; 5],
}

impl TemplateTable {
    pub fn shipped() -> &'static TemplateTable {
        static TABLE: OnceLock<TemplateTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            serde_json::from_str(include_str!("../../data/synth_templates.json")).expect("shipped template table parses")
        })
    }

    pub fn waves(&self, class: BeatClass) -> [Wave; 5] {
        match class {
            BeatClass::N => self.normal,
            BeatClass::V => self.ventricular,
            BeatClass::F => {
                let mut out = self.normal;
                for (o, v) in out.iter_mut().zip(&self.ventricular) {
                    for k in 0..3 {
                        o[k] = 0.5 * (o[k] + v[k]);
                    }
                }
                out
            }
        }
    }
}

/// Jitter magnitudes. Amplitude jitters are relative standard deviations,
/// shifts are standard deviations in samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthJitter {
    pub record_amplitude: f64,
    pub record_shift: f64,
    pub beat_amplitude: f64,
    pub beat_shift: f64,
    pub noise: f64,
}

impl Default for SynthJitter {
    fn default() -> Self {
        Self { record_amplitude: 0.12, record_shift: 3.0, beat_amplitude: 0.04, beat_shift: 1.0, noise: 0.003 }
    }
}

impl SynthJitter {
    pub fn none() -> Self {
        Self { record_amplitude: 0.0, record_shift: 0.0, beat_amplitude: 0.0, beat_shift: 0.0, noise: 0.0 }
    }
}

/// Per-record morphology drawn once per record.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordStyle {
    pub class: BeatClass,
    amplitude: [f64; 5],
    shift: [f64; 5],
}

#[derive(Debug, Clone)]
pub struct SynthGenerator {
    table: TemplateTable,
    pub jitter: SynthJitter,
}

impl Default for SynthGenerator {
    fn default() -> Self {
        Self::new(SynthJitter::default())
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

impl SynthGenerator {
    pub fn new(jitter: SynthJitter) -> Self {
        Self { table: TemplateTable::shipped().clone(), jitter }
    }

    pub fn with_table(table: TemplateTable, jitter: SynthJitter) -> Self {
        Self { table, jitter }
    }

    pub fn beat_len(&self) -> usize {
        self.table.beat_len
    }

    pub fn table(&self) -> &TemplateTable {
        &self.table
    }

    fn render(&self, waves: &[Wave; 5], amplitude: &[f64; 5], shift: &[f64; 5]) -> Vec<f64> {
        let r = self.table.r_index as f64;
        (0..self.table.beat_len)
            .map(|i| {
                let t = i as f64;
                let sum: f64 = waves
                    .iter()
                    .zip(amplitude.iter().zip(shift))
                    .map(|(&[a, c, w], (&m, &s))| {
                        let d = t - (r + c + s);
                        a * m * (-d * d / (2.0 * w * w)).exp()
                    })
                    .sum();
                self.table.offset + self.table.scale * sum
            })
            .collect()
    }

    /// The zero-jitter waveform of `class`.
    pub fn template(&self, class: BeatClass) -> Vec<f64> {
        self.render(&self.table.waves(class), &[1.0; 5], &[0.0; 5])
    }

    /// The expected beat under the configured jitter (before clipping).
    ///
    /// A Gaussian bump of width `w` whose centre is shifted by `N(0, s^2)` has
    /// mean `w / sqrt(w^2 + s^2)` times a bump of width `sqrt(w^2 + s^2)`.
    pub fn expected_beat(&self, class: BeatClass) -> Vec<f64> {
        let j = &self.jitter;
        let s2 = j.record_shift.powi(2) + j.beat_shift.powi(2);
        let waves = self.table.waves(class).map(|[a, c, w]| {
            let wide = (w * w + s2).sqrt();
            [a * w / wide, c, wide]
        });
        self.render(&waves, &[1.0; 5], &[0.0; 5])
    }

    pub fn draw_style<R: Rng + ?Sized>(&self, class: BeatClass, rng: &mut R) -> RecordStyle {
        let mut amplitude = [1.0; 5];
        let mut shift = [0.0; 5];
        for k in 0..5 {
            amplitude[k] = 1.0 + self.jitter.record_amplitude * normal(rng);
            shift[k] = self.jitter.record_shift * normal(rng);
        }
        RecordStyle { class, amplitude, shift }
    }

    /// One beat of a record with the given style, in `[0, 1]`.
    pub fn draw_beat_samples<R: Rng + ?Sized>(&self, style: &RecordStyle, rng: &mut R) -> Vec<f64> {
        let mut amplitude = style.amplitude;
        let mut shift = style.shift;
        for k in 0..5 {
            amplitude[k] *= 1.0 + self.jitter.beat_amplitude * normal(rng);
            shift[k] += self.jitter.beat_shift * normal(rng);
        }
        let mut x = self.render(&self.table.waves(style.class), &amplitude, &shift);
        for v in &mut x {
            *v = (*v + self.jitter.noise * normal(rng)).clamp(0.0, 1.0);
        }
        x
    }

    /// A single beat from a freshly drawn record style.
    pub fn synth_beat<R: Rng + ?Sized>(&self, class: BeatClass, rng: &mut R) -> Heartbeat {
        let style = self.draw_style(class, rng);
        let samples = self.draw_beat_samples(&style, rng);
        Heartbeat::new(samples, class, "synth", 0, self.table.r_index)
    }

    /// A record of `n_beats` consecutive beats of one class sharing a style.
    pub fn synth_record<R: Rng + ?Sized>(&self, record_id: &str, class: BeatClass, n_beats: usize, rng: &mut R) -> RecordBeats {
        let style = self.draw_style(class, rng);
        let spacing = self.table.beat_len + 30;
        let beats = (0..n_beats)
            .map(|h| {
                let samples = self.draw_beat_samples(&style, rng);
                Heartbeat::new(samples, class, record_id, h, self.table.r_index + h * spacing)
            })
            .collect();
        RecordBeats { record_id: record_id.to_string(), source: "synthetic".into(), beats }
    }

    /// `records_per_class` records of `beats_per_record` beats for every class.
    /// Record ids are `<class><nn>`, e.g. `N03`.
    pub fn synth_corpus<R: Rng + ?Sized>(&self, records_per_class: usize, beats_per_record: usize, rng: &mut R) -> Vec<RecordBeats> {
        let mut out = Vec::with_capacity(3 * records_per_class);
        for class in BeatClass::ALL {
            for r in 0..records_per_class {
                out.push(self.synth_record(&format!("{class}{r:02}"), class, beats_per_record, rng));
            }
        }
        out
    }
}

/// Flattens records into a single dataset.
pub fn corpus_dataset(records: &[RecordBeats], tag: SplitTag) -> BeatDataset {
    let mut ds = BeatDataset::new(records.iter().flat_map(|r| r.beats.iter().cloned()).collect(), tag);
    for r in records {
        ds.provenance.insert(r.record_id.clone(), r.source.clone());
    }
    ds
}

/// Record-wise split run separately within each class, so both sides hold
/// every class. Records are grouped by the label of their first beat.
pub fn split_corpus(records: Vec<RecordBeats>, ratio: f64, seed: u64) -> Result<(BeatDataset, BeatDataset)> {
    let mut groups: BTreeMap<BeatClass, Vec<RecordBeats>> = BTreeMap::new();
    for r in records {
        let Some(first) = r.beats.first() else { continue };
        groups.entry(first.label).or_default().push(r);
    }
    let mut train = BeatDataset::new(Vec::new(), SplitTag::Train);
    let mut test = BeatDataset::new(Vec::new(), SplitTag::Test);
    for (class, group) in groups {
        let (tr, te) = split_dataset(group, ratio, seed.wrapping_add(class.index() as u64))?;
        train.beats.extend(tr.beats);
        train.provenance.extend(tr.provenance);
        test.beats.extend(te.beats);
        test.provenance.extend(te.provenance);
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dtw;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_jitter_reproduces_template() {
        let g = SynthGenerator::new(SynthJitter::none());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for class in BeatClass::ALL {
            let b = g.synth_beat(class, &mut rng);
            assert_eq!(b.samples, g.template(class));
            assert_eq!(b.len(), 270);
            assert!(b.is_normalized());
        }
    }

    #[test]
    fn draws_are_normalized_and_deterministic() {
        let g = SynthGenerator::default();
        let a = g.synth_beat(BeatClass::V, &mut ChaCha8Rng::seed_from_u64(9));
        let b = g.synth_beat(BeatClass::V, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.is_normalized());
    }

    // Monte-Carlo check against the analytic expectation of the generator.
    #[test]
    fn mean_of_draws_matches_expectation() {
        let g = SynthGenerator::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| g.synth_beat(BeatClass::N, &mut rng).samples).collect();
        let expected = g.expected_beat(BeatClass::N);
        for i in 0..g.beat_len() {
            let mean = draws.iter().map(|d| d[i]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - expected[i]).abs() <= 3.0 * se + 1e-12, "sample {i}: mean {mean} expected {} se {se}", expected[i]);
        }
    }

    #[test]
    fn classes_are_separated_by_dtw() {
        let g = SynthGenerator::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tn = g.template(BeatClass::N);
        let tv = g.template(BeatClass::V);
        let within: f64 = (0..100).map(|_| dtw(&g.synth_beat(BeatClass::N, &mut rng).samples, &tn).unwrap()).sum::<f64>() / 100.0;
        let between = dtw(&tn, &tv).unwrap();
        assert!(between > CLASS_SEPARATION_FACTOR * within, "between {between} within {within}");
    }

    #[test]
    fn corpus_layout() {
        let g = SynthGenerator::default();
        let recs = g.synth_corpus(2, 5, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(recs.len(), 6);
        let ds = corpus_dataset(&recs, SplitTag::Train);
        assert_eq!(ds.len(), 30);
        assert_eq!(ds.class_counts()[&BeatClass::F], 10);
        for r in &recs {
            assert!(r.beats.windows(2).all(|w| w[0].beat_index < w[1].beat_index));
        }
    }
}
