//! Heartbeats, beat classes, task selectors and retention masks.
//!
//! One model serves three tasks. The task decides which beat of a record is
//! shown to the denoiser as context ([`select_context`]) and which of its
//! samples are kept ([`build_mask`] / [`apply_mask`]):
//!
//! | task        | context   | mask                       |
//! |-------------|-----------|----------------------------|
//! | generation  | beat `h`  | all zeros                  |
//! | imputation  | beat `h`  | zeros on the gap, ones off |
//! | forecasting | beat `h-1`| all ones                   |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per beat at 360 Hz with a 350 ms / 400 ms window around the R-peak.
pub const DEFAULT_BEAT_LEN: usize = 270;

/// Arrhythmia class of a beat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BeatClass {
    /// Normal beat.
    N,
    /// Premature ventricular contraction.
    V,
    /// Fusion of ventricular and normal beat.
    F,
}

impl BeatClass {
    pub const ALL: [BeatClass; 3] = [BeatClass::N, BeatClass::V, BeatClass::F];

    pub fn index(self) -> usize {
        match self {
            BeatClass::N => 0,
            BeatClass::V => 1,
            BeatClass::F => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_char(self) -> char {
        match self {
            BeatClass::N => 'N',
            BeatClass::V => 'V',
            BeatClass::F => 'F',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            'N' => Some(BeatClass::N),
            'V' => Some(BeatClass::V),
            'F' => Some(BeatClass::F),
            _ => None,
        }
    }
}

impl fmt::Display for BeatClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for BeatClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_symbol(c).ok_or_else(|| Error::UnknownClass(s.to_string())),
            _ => Err(Error::UnknownClass(s.to_string())),
        }
    }
}

/// Which synthesis task a denoiser pass performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Generation,
    Imputation,
    Forecasting,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Generation, TaskKind::Imputation, TaskKind::Forecasting];

    pub fn index(self) -> usize {
        match self {
            TaskKind::Generation => 0,
            TaskKind::Imputation => 1,
            TaskKind::Forecasting => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Generation => "generation",
            TaskKind::Imputation => "imputation",
            TaskKind::Forecasting => "forecasting",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generation" => Ok(TaskKind::Generation),
            "imputation" => Ok(TaskKind::Imputation),
            "forecasting" => Ok(TaskKind::Forecasting),
            other => Err(Error::InvalidArgument(format!("unknown task {other:?}"))),
        }
    }
}

/// One cardiac cycle cut around an annotated R-peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heartbeat {
    /// Normalized amplitudes in `[0, 1]`.
    pub samples: Vec<f64>,
    pub label: BeatClass,
    pub record_id: String,
    /// Position of this beat within its record.
    pub beat_index: usize,
    /// Sample index of the R-peak in the source record.
    pub r_peak: usize,
}

impl Heartbeat {
    pub fn new(samples: Vec<f64>, label: BeatClass, record_id: impl Into<String>, beat_index: usize, r_peak: usize) -> Self {
        Self { samples, label, record_id: record_id.into(), beat_index, r_peak }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// True when every sample lies in `[0, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.samples.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// An inclusive range of missing samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub start: usize,
    pub end: usize,
}

impl Gap {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..=self.end).contains(&i)
    }
}

impl FromStr for Gap {
    type Err = Error;

    /// Parses `start:end`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("gap must be START:END, got {s:?}"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let start = a.trim().parse().map_err(|_| bad())?;
        let end = b.trim().parse().map_err(|_| bad())?;
        Ok(Gap { start, end })
    }
}

/// Bounds of the random gap width drawn for imputation, as fractions of the beat length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapFractions {
    pub min: f64,
    pub max: f64,
}

impl Default for GapFractions {
    fn default() -> Self {
        Self { min: 0.1, max: 0.5 }
    }
}

/// Binary retention vector of a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    bits: Vec<u8>,
    task: TaskKind,
    gap: Option<Gap>,
}

impl Mask {
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    /// The missing interval; present iff the task is imputation.
    pub fn gap(&self) -> Option<Gap> {
        self.gap
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Bits as reals, ready for elementwise products.
    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| f64::from(b)).collect()
    }

    pub fn observed(&self, i: usize) -> bool {
        self.bits[i] == 1
    }
}

/// Picks the beat shown as context: beat `h` for generation and imputation,
/// beat `h - 1` for forecasting.
pub fn select_context(record_beats: &[Heartbeat], h: usize, task: TaskKind) -> Result<&Heartbeat> {
    if h >= record_beats.len() {
        return Err(Error::UnknownBeatIndex(h));
    }
    match task {
        TaskKind::Generation | TaskKind::Imputation => Ok(&record_beats[h]),
        TaskKind::Forecasting => {
            if h == 0 {
                Err(Error::NoPredecessorBeat(h))
            } else {
                Ok(&record_beats[h - 1])
            }
        }
    }
}

/// Builds the task mask of length `len`.
///
/// For imputation without an explicit `gap`, the width is drawn uniformly from
/// `fractions` of `len` and the start uniformly over the positions where it fits.
pub fn build_mask<R: Rng + ?Sized>(
    task: TaskKind,
    len: usize,
    gap: Option<Gap>,
    fractions: GapFractions,
    rng: Option<&mut R>,
) -> Result<Mask> {
    if len == 0 {
        return Err(Error::InvalidArgument("mask length must be positive".into()));
    }
    match task {
        TaskKind::Generation => Ok(Mask { bits: vec![0; len], task, gap: None }),
        TaskKind::Forecasting => Ok(Mask { bits: vec![1; len], task, gap: None }),
        TaskKind::Imputation => {
            let gap = match gap {
                Some(g) => g,
                None => {
                    let rng = rng.ok_or_else(|| {
                        Error::InvalidArgument("imputation mask without a gap needs a random source".into())
                    })?;
                    random_gap(len, fractions, rng)
                }
            };
            if gap.start > gap.end || gap.end >= len {
                return Err(Error::GapOutOfBounds { start: gap.start, end: gap.end, len });
            }
            let bits = (0..len).map(|i| u8::from(!gap.contains(i))).collect();
            Ok(Mask { bits, task, gap: Some(gap) })
        }
    }
}

/// Convenience wrapper for the deterministic tasks and explicit gaps.
pub fn build_fixed_mask(task: TaskKind, len: usize, gap: Option<Gap>) -> Result<Mask> {
    build_mask::<rand_chacha::ChaCha8Rng>(task, len, gap, GapFractions::default(), None)
}

fn random_gap<R: Rng + ?Sized>(len: usize, fractions: GapFractions, rng: &mut R) -> Gap {
    let lo = ((fractions.min * len as f64).round() as usize).clamp(1, len);
    let hi = ((fractions.max * len as f64).round() as usize).clamp(lo, len);
    let width = rng.random_range(lo..=hi);
    let start = rng.random_range(0..=len - width);
    Gap { start, end: (start + width - 1).min(len - 1) }
}

/// Elementwise product `x * mask`.
pub fn apply_mask(x: &[f64], mask: &Mask) -> Result<Vec<f64>> {
    if x.len() != mask.len() {
        return Err(Error::DimensionMismatch { expected: mask.len(), actual: x.len() });
    }
    Ok(x.iter().zip(&mask.bits).map(|(v, &b)| v * f64::from(b)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn beats(n: usize) -> Vec<Heartbeat> {
        (0..n).map(|i| Heartbeat::new(vec![i as f64 / 10.0; 4], BeatClass::N, "r", i, 100 * i)).collect()
    }

    #[test]
    fn context_selection_follows_task_table() {
        let b = beats(3);
        assert_eq!(select_context(&b, 1, TaskKind::Generation).unwrap().beat_index, 1);
        assert_eq!(select_context(&b, 1, TaskKind::Imputation).unwrap().beat_index, 1);
        assert_eq!(select_context(&b, 2, TaskKind::Forecasting).unwrap().beat_index, 1);
    }

    #[test]
    fn forecasting_first_beat_has_no_predecessor() {
        let b = beats(1);
        assert!(matches!(select_context(&b, 0, TaskKind::Forecasting), Err(Error::NoPredecessorBeat(0))));
        assert!(matches!(select_context(&b, 5, TaskKind::Generation), Err(Error::UnknownBeatIndex(5))));
    }

    #[test]
    fn masks_for_fixed_tasks() {
        let g = build_fixed_mask(TaskKind::Generation, 270, None).unwrap();
        assert!(g.bits().iter().all(|&b| b == 0));
        assert_eq!(g.len(), 270);
        let f = build_fixed_mask(TaskKind::Forecasting, 270, None).unwrap();
        assert!(f.bits().iter().all(|&b| b == 1));
        assert_eq!(f.gap(), None);
    }

    #[test]
    fn explicit_imputation_gap() {
        let m = build_fixed_mask(TaskKind::Imputation, 10, Some(Gap::new(3, 5))).unwrap();
        assert_eq!(m.bits(), &[1, 1, 1, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(m.gap(), Some(Gap::new(3, 5)));
    }

    #[test]
    fn gap_out_of_bounds_rejected() {
        let e = build_fixed_mask(TaskKind::Imputation, 10, Some(Gap::new(3, 10))).unwrap_err();
        assert!(e.to_string().contains("gap out of bounds"));
        assert!(build_fixed_mask(TaskKind::Imputation, 10, Some(Gap::new(6, 5))).is_err());
        assert!(build_fixed_mask(TaskKind::Imputation, 10, None).is_err());
    }

    #[test]
    fn apply_mask_examples() {
        let ones = build_fixed_mask(TaskKind::Forecasting, 3, None).unwrap();
        let zeros = build_fixed_mask(TaskKind::Generation, 3, None).unwrap();
        assert_eq!(apply_mask(&[0.2, 0.4, 0.6], &ones).unwrap(), vec![0.2, 0.4, 0.6]);
        assert_eq!(apply_mask(&[0.2, 0.4, 0.6], &zeros).unwrap(), vec![0.0, 0.0, 0.0]);
        let m = build_fixed_mask(TaskKind::Imputation, 4, Some(Gap::new(1, 2))).unwrap();
        assert_eq!(apply_mask(&[0.5; 4], &m).unwrap(), vec![0.5, 0.0, 0.0, 0.5]);
        assert!(matches!(apply_mask(&[0.5; 3], &m), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn class_symbols_round_trip() {
        for c in BeatClass::ALL {
            assert_eq!(c.to_string().parse::<BeatClass>().unwrap(), c);
            assert_eq!(BeatClass::from_index(c.index()), Some(c));
        }
        assert!("Q".parse::<BeatClass>().is_err());
    }

    proptest! {
        #[test]
        fn random_imputation_masks_are_valid(len in 1usize..400, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = build_mask(TaskKind::Imputation, len, None, GapFractions::default(), Some(&mut rng)).unwrap();
            let g = m.gap().unwrap();
            prop_assert!(g.start <= g.end && g.end < len);
            for i in 0..len {
                prop_assert_eq!(m.bits()[i] == 0, g.contains(i));
            }
        }

        #[test]
        fn apply_mask_is_idempotent(x in prop::collection::vec(0.0f64..1.0, 12), a in 0usize..12, w in 0usize..12) {
            let end = (a + w).min(11);
            let m = build_fixed_mask(TaskKind::Imputation, 12, Some(Gap::new(a, end))).unwrap();
            let once = apply_mask(&x, &m).unwrap();
            prop_assert_eq!(apply_mask(&once, &m).unwrap(), once);
        }

        #[test]
        fn generation_mask_annihilates(x in prop::collection::vec(-5.0f64..5.0, 1..50)) {
            let m = build_fixed_mask(TaskKind::Generation, x.len(), None).unwrap();
            prop_assert!(apply_mask(&x, &m).unwrap().iter().all(|&v| v == 0.0));
        }
    }
}
