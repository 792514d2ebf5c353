//! The beats CSV: `beat_id,record_id,class,r_peak,s0,...,s{L-1}`, one beat per row.
//!
//! `beat_id` is the beat's index within its record. Samples are written with
//! the shortest representation that parses back to the identical `f64`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::records::{BeatDataset, SplitTag};
use crate::signal::{BeatClass, Heartbeat};

const FIXED: [&str; 4] = ["beat_id", "record_id", "class", "r_peak"];

pub fn header_for(len: usize) -> Vec<String> {
    FIXED.iter().map(|s| s.to_string()).chain((0..len).map(|i| format!("s{i}"))).collect()
}

pub fn write_beats<W: std::io::Write>(ds: &BeatDataset, out: W) -> Result<()> {
    let len = ds.beat_len().ok_or_else(|| Error::BadBeatsFile("refusing to write an empty dataset".into()))?;
    ds.validate()?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header_for(len))?;
    for b in &ds.beats {
        let mut row = vec![b.beat_index.to_string(), b.record_id.clone(), b.label.to_string(), b.r_peak.to_string()];
        row.extend(b.samples.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_beats_csv(ds: &BeatDataset, path: &Path) -> Result<()> {
    write_beats(ds, std::fs::File::create(path)?)
}

pub fn read_beats<R: std::io::Read>(input: R, tag: SplitTag) -> Result<BeatDataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = r.headers()?.clone();
    if headers.len() < FIXED.len() + 1 {
        return Err(Error::BadBeatsFile(format!("header has {} columns", headers.len())));
    }
    let expected = header_for(headers.len() - FIXED.len());
    if headers.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(Error::BadBeatsFile("header does not match beat_id,record_id,class,r_peak,s0,...".into()));
    }
    let mut beats = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |what: &str| Error::BadBeatsFile(format!("line {line}: bad {what}"));
        if row.len() != headers.len() {
            return Err(Error::BadBeatsFile(format!("line {line}: {} columns, expected {}", row.len(), headers.len())));
        }
        let beat_index = row[0].parse().map_err(|_| bad("beat_id"))?;
        let label: BeatClass = row[2].parse()?;
        let r_peak = row[3].parse().map_err(|_| bad("r_peak"))?;
        let samples = row.iter().skip(FIXED.len()).map(|v| v.parse::<f64>().map_err(|_| bad("sample"))).collect::<Result<Vec<_>>>()?;
        beats.push(Heartbeat::new(samples, label, &row[1], beat_index, r_peak));
    }
    Ok(BeatDataset::new(beats, tag))
}

pub fn read_beats_csv(path: &Path, tag: SplitTag) -> Result<BeatDataset> {
    let mut ds = read_beats(std::fs::File::open(path)?, tag)?;
    for src in ds.provenance.values_mut() {
        *src = path.to_path_buf();
    }
    Ok(ds)
}
