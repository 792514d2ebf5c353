use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::distance::{dtw, emd_1d, mae, mmd, rmse, sq_dist};
use super::features::{extract_features, ExtractorKind, FeatureMap};
use super::fid::fid;
use crate::error::{Error, Result};
use crate::ingest::BeatDataset;
use crate::signal::{BeatClass, Gap, Heartbeat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Each synthetic beat against its Euclidean-nearest real beat of the same class.
    NearestReal,
    /// Synthetic beats matched to the real beat with the same record id and beat index.
    GroundTruth,
}

impl Pairing {
    pub fn tag(self) -> &'static str {
        match self {
            Pairing::NearestReal => "nearest-real",
            Pairing::GroundTruth => "ground-truth",
        }
    }
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest-real" => Ok(Self::NearestReal),
            "ground-truth" => Ok(Self::GroundTruth),
            other => Err(Error::InvalidArgument(format!("unknown pairing {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub pairing: Pairing,
    pub extractor: ExtractorKind,
    /// When set, RMSE and MAE are additionally reported over the gap samples only.
    pub gap: Option<Gap>,
    pub mmd_bandwidth: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { pairing: Pairing::NearestReal, extractor: ExtractorKind::Statistical, gap: None, mmd_bandwidth: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// Class symbol or `overall`.
    pub class: String,
    pub n_real: usize,
    pub n_synth: usize,
    pub rmse: f64,
    pub mae: f64,
    pub dtw: f64,
    pub emd: f64,
    pub mmd: f64,
    pub fid: f64,
    pub rmse_gap: Option<f64>,
    pub mae_gap: Option<f64>,
    pub mmd_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    /// Classes present among the synthetic beats but absent from the real set.
    pub missing: Vec<BeatClass>,
    pub pairing: Pairing,
    pub extractor: ExtractorKind,
}

const COLUMNS: [&str; 14] =
    ["class", "n_real", "n_synth", "rmse", "mae", "dtw", "emd", "mmd", "fid", "rmse_gap", "mae_gap", "mmd_degenerate", "pairing", "extractor"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_default()
}

impl MetricsReport {
    pub fn row(&self, class: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.class == class)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(COLUMNS)?;
        for r in &self.rows {
            out.write_record([
                r.class.clone(),
                r.n_real.to_string(),
                r.n_synth.to_string(),
                format!("{:.6e}", r.rmse),
                format!("{:.6e}", r.mae),
                format!("{:.6e}", r.dtw),
                format!("{:.6e}", r.emd),
                format!("{:.6e}", r.mmd),
                format!("{:.6e}", r.fid),
                opt(r.rmse_gap),
                opt(r.mae_gap),
                r.mmd_degenerate.to_string(),
                self.pairing.tag().to_string(),
                self.extractor.tag().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pairing: {}  features: {}", self.pairing, self.extractor);
        let _ = writeln!(
            s,
            "{:<8} {:>6} {:>6} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11} {:>11}",
            "class", "real", "synth", "rmse", "mae", "dtw", "emd", "mmd", "fid", "rmse_gap", "mae_gap"
        );
        for r in &self.rows {
            let g = |v: Option<f64>| v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<8} {:>6} {:>6} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11} {:>11}",
                r.class, r.n_real, r.n_synth, r.rmse, r.mae, r.dtw, r.emd, r.mmd, r.fid, g(r.rmse_gap), g(r.mae_gap)
            );
        }
        for c in &self.missing {
            let _ = writeln!(s, "{c:<8} missing from the real set");
        }
        s
    }
}

fn nearest<'a>(target: &[f64], pool: &[&'a Heartbeat]) -> &'a Heartbeat {
    let mut best = pool[0];
    let mut best_d = f64::INFINITY;
    for &b in pool {
        let d = sq_dist(target, &b.samples);
        if d < best_d {
            best_d = d;
            best = b;
        }
    }
    best
}

fn pair_up<'a>(real: &[&'a Heartbeat], synth: &[&'a Heartbeat], pairing: Pairing) -> Result<Vec<(&'a Heartbeat, &'a Heartbeat)>> {
    match pairing {
        Pairing::NearestReal => Ok(synth.iter().map(|s| (nearest(&s.samples, real), *s)).collect()),
        Pairing::GroundTruth => {
            let index: BTreeMap<(&str, usize), &Heartbeat> = real.iter().map(|b| ((b.record_id.as_str(), b.beat_index), *b)).collect();
            synth
                .iter()
                .map(|s| {
                    index.get(&(s.record_id.as_str(), s.beat_index)).map(|r| (*r, *s)).ok_or_else(|| {
                        Error::InvalidArgument(format!("no real beat {}#{} for ground-truth pairing", s.record_id, s.beat_index))
                    })
                })
                .collect()
        }
    }
}

fn gap_slice(x: &[f64], gap: Gap) -> &[f64] {
    &x[gap.start..=gap.end.min(x.len() - 1)]
}

fn row_for(
    class: String,
    real: &[&Heartbeat],
    synth: &[&Heartbeat],
    opts: &EvalOptions,
    classifier: Option<&dyn FeatureMap>,
) -> Result<MetricRow> {
    let pairs = pair_up(real, synth, opts.pairing)?;
    let n = pairs.len() as f64;
    let (mut r_sum, mut a_sum, mut d_sum, mut rg, mut ag) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (r, s) in &pairs {
        r_sum += rmse(&r.samples, &s.samples)?;
        a_sum += mae(&r.samples, &s.samples)?;
        d_sum += dtw(&r.samples, &s.samples)?;
        if let Some(g) = opts.gap {
            if g.end >= r.samples.len() {
                return Err(Error::GapOutOfBounds { start: g.start, end: g.end, len: r.samples.len() });
            }
            rg += rmse(gap_slice(&r.samples, g), gap_slice(&s.samples, g))?;
            ag += mae(gap_slice(&r.samples, g), gap_slice(&s.samples, g))?;
        }
    }
    let rv: Vec<Vec<f64>> = real.iter().map(|b| b.samples.clone()).collect();
    let sv: Vec<Vec<f64>> = synth.iter().map(|b| b.samples.clone()).collect();
    let m = mmd(&rv, &sv, opts.mmd_bandwidth)?;
    let fr = extract_features(&rv, opts.extractor, classifier)?;
    let fs = extract_features(&sv, opts.extractor, classifier)?;
    Ok(MetricRow {
        class,
        n_real: real.len(),
        n_synth: synth.len(),
        rmse: r_sum / n,
        mae: a_sum / n,
        dtw: d_sum / n,
        emd: emd_1d(&rv, &sv)?,
        mmd: m.value,
        fid: fid(&fr, &fs)?,
        rmse_gap: opts.gap.map(|_| rg / n),
        mae_gap: opts.gap.map(|_| ag / n),
        mmd_degenerate: m.degenerate,
    })
}

/// Per-class metrics plus an `overall` row over the pooled classes both sets share.
pub fn evaluate_sets(real: &BeatDataset, synth: &BeatDataset, opts: &EvalOptions, classifier: Option<&dyn FeatureMap>) -> Result<MetricsReport> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::EmptyInput("evaluation needs non-empty real and synthetic sets".into()));
    }
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    let (mut all_real, mut all_synth) = (Vec::new(), Vec::new());
    for class in BeatClass::ALL {
        let r: Vec<&Heartbeat> = real.of_class(class).collect();
        let s: Vec<&Heartbeat> = synth.of_class(class).collect();
        if s.is_empty() {
            continue;
        }
        if r.is_empty() {
            missing.push(class);
            continue;
        }
        rows.push(row_for(class.to_string(), &r, &s, opts, classifier)?);
        all_real.extend(r);
        all_synth.extend(s);
    }
    if rows.is_empty() {
        return Err(Error::ClassMismatch("real and synthetic sets share no class".into()));
    }
    // Pairing stays within each class, so the overall paired metrics are the
    // pair-weighted means of the per-class rows.
    let mut overall = row_for("overall".into(), &all_real, &all_synth, opts, classifier)?;
    let total: f64 = rows.iter().map(|r| r.n_synth as f64).sum();
    let weighted = |f: &dyn Fn(&MetricRow) -> f64| rows.iter().map(|r| f(r) * r.n_synth as f64).sum::<f64>() / total;
    overall.rmse = weighted(&|r| r.rmse);
    overall.mae = weighted(&|r| r.mae);
    overall.dtw = weighted(&|r| r.dtw);
    if opts.gap.is_some() {
        overall.rmse_gap = Some(weighted(&|r| r.rmse_gap.unwrap_or(0.0)));
        overall.mae_gap = Some(weighted(&|r| r.mae_gap.unwrap_or(0.0)));
    }
    rows.push(overall);
    Ok(MetricsReport { rows, missing, pairing: opts.pairing, extractor: opts.extractor })
}
