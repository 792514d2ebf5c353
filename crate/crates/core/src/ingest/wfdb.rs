//! WFDB header text and format-212 signal payloads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One signal line of a WFDB header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub file_name: String,
    /// Storage format code; only 212 is decodable here.
    pub format: u32,
    /// ADC units per millivolt.
    pub adc_gain: f64,
    pub adc_resolution: Option<u32>,
    pub adc_zero: i32,
    /// Physical zero in ADC units; defaults to `adc_zero`.
    pub baseline: i32,
    pub initial_value: Option<i32>,
    pub name: String,
}

impl SignalSpec {
    pub fn is_supported(&self) -> bool {
        self.format == 212
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub record_id: String,
    pub n_signals: usize,
    /// Samples per second per signal.
    pub sampling_rate: f64,
    /// Samples per signal, when the header states it.
    pub n_samples: Option<usize>,
    pub signals: Vec<SignalSpec>,
}

impl RecordHeader {
    /// Index of the signal named `name`, e.g. `"MLII"`.
    pub fn channel(&self, name: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.name == name)
    }

    /// Signals whose storage format cannot be decoded.
    pub fn unsupported(&self) -> Vec<usize> {
        self.signals.iter().enumerate().filter(|(_, s)| !s.is_supported()).map(|(i, _)| i).collect()
    }
}

/// Parses a WFDB header in strict mode: the sampling rate is mandatory.
///
/// Grammar: a record line `name n_sig fs [n_samples ...]`, then one line per
/// signal `file format[xspf][:skew][+offset] gain[(baseline)][/units] [adc_res
/// [adc_zero [init [checksum [block [description...]]]]]]`. Comment lines start
/// with `#`. Unsupported format codes still parse; see
/// [`RecordHeader::unsupported`].
pub fn parse_wfdb_header(text: &str) -> Result<RecordHeader> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (line_no, record_line) = lines
        .next()
        .ok_or(Error::HeaderParse { line: 1, message: "empty header".into() })?;
    let fields: Vec<&str> = record_line.split_whitespace().collect();
    let err = |message: String| Error::HeaderParse { line: line_no, message };

    // Multi-segment records are written `name/n_segments`.
    if fields[0].contains('/') {
        return Err(err("multi-segment records are not supported".into()));
    }
    let record_id = fields[0].to_string();
    let n_signals: usize = fields
        .get(1)
        .ok_or_else(|| err("missing signal count".into()))?
        .parse()
        .map_err(|_| err(format!("bad signal count {:?}", fields[1])))?;
    if n_signals == 0 {
        return Err(err("record has no signals".into()));
    }
    let fs_field = fields.get(2).ok_or(Error::MissingSamplingRate)?;
    // `fs/counter_freq(base)` forms carry the sampling rate first.
    let fs_text = fs_field.split(['/', '(']).next().unwrap_or_default();
    let sampling_rate: f64 = fs_text.parse().map_err(|_| err(format!("bad sampling rate {fs_field:?}")))?;
    if !(sampling_rate > 0.0) {
        return Err(err(format!("sampling rate must be positive, got {sampling_rate}")));
    }
    let n_samples = match fields.get(3) {
        Some(s) => Some(s.parse().map_err(|_| err(format!("bad sample count {s:?}")))?),
        None => None,
    };

    let mut signals = Vec::with_capacity(n_signals);
    for _ in 0..n_signals {
        let (line_no, line) = lines.next().ok_or(Error::HeaderParse {
            line: line_no + signals.len() + 1,
            message: format!("expected {n_signals} signal lines, found {}", signals.len()),
        })?;
        signals.push(parse_signal_line(line).map_err(|message| Error::HeaderParse { line: line_no, message })?);
    }

    Ok(RecordHeader { record_id, n_signals, sampling_rate, n_samples, signals })
}

fn parse_signal_line(line: &str) -> std::result::Result<SignalSpec, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 2 {
        return Err("signal line needs at least file name and format".into());
    }
    let file_name = fields[0].to_string();
    let format_digits: String = fields[1].chars().take_while(char::is_ascii_digit).collect();
    let format = format_digits.parse().map_err(|_| format!("bad format {:?}", fields[1]))?;

    let adc_resolution = match fields.get(3) {
        Some(s) => Some(s.parse().map_err(|_| format!("bad adc resolution {s:?}"))?),
        None => None,
    };
    let adc_zero = match fields.get(4) {
        Some(s) => s.parse().map_err(|_| format!("bad adc zero {s:?}"))?,
        None => 0,
    };
    let initial_value = match fields.get(5) {
        Some(s) => Some(s.parse().map_err(|_| format!("bad initial value {s:?}"))?),
        None => None,
    };

    let (adc_gain, baseline) = match fields.get(2) {
        Some(spec) => {
            let spec = spec.split('/').next().unwrap_or_default();
            let (gain_text, base_text) = match spec.split_once('(') {
                Some((g, rest)) => (g, Some(rest.trim_end_matches(')'))),
                None => (spec, None),
            };
            let mut gain: f64 = gain_text.parse().map_err(|_| format!("bad gain {gain_text:?}"))?;
            if gain == 0.0 {
                gain = 200.0;
            }
            let baseline = match base_text {
                Some(b) => b.parse().map_err(|_| format!("bad baseline {b:?}"))?,
                None => adc_zero,
            };
            (gain, baseline)
        }
        None => (200.0, adc_zero),
    };

    // Columns 6 and 7 are checksum and block size; the rest is the description.
    let name = fields.get(8..).map(|rest| rest.join(" ")).unwrap_or_default();

    Ok(SignalSpec { file_name, format, adc_gain, adc_resolution, adc_zero, baseline, initial_value, name })
}

fn sign_extend_12(v: u16) -> i16 {
    ((v << 4) as i16) >> 4
}

/// Decodes an interleaved two-signal format-212 payload.
///
/// Each 3-byte group holds two 12-bit two's-complement samples:
/// `s1 = ((b1 & 0x0F) << 8) | b0` and `s2 = ((b1 & 0xF0) << 4) | b2`.
pub fn decode_format212(payload: &[u8]) -> Result<(Vec<i16>, Vec<i16>)> {
    let rem = payload.len() % 3;
    if rem != 0 {
        return Err(Error::Truncated212(rem));
    }
    let n = payload.len() / 3;
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for t in payload.chunks_exact(3) {
        let (b0, b1, b2) = (u16::from(t[0]), u16::from(t[1]), u16::from(t[2]));
        first.push(sign_extend_12(((b1 & 0x0F) << 8) | b0));
        second.push(sign_extend_12(((b1 & 0xF0) << 4) | b2));
    }
    Ok((first, second))
}

/// Packs two equally long sample streams as format 212. Samples must lie in
/// `[-2048, 2047]`.
pub fn encode_format212(first: &[i16], second: &[i16]) -> Result<Vec<u8>> {
    if first.len() != second.len() {
        return Err(Error::DimensionMismatch { expected: first.len(), actual: second.len() });
    }
    let mut out = Vec::with_capacity(first.len() * 3);
    for (&a, &b) in first.iter().zip(second) {
        for v in [a, b] {
            if !(-2048..=2047).contains(&v) {
                return Err(Error::InvalidArgument(format!("sample {v} does not fit 12 bits")));
            }
        }
        let (a, b) = ((a as u16) & 0x0FFF, (b as u16) & 0x0FFF);
        out.push((a & 0xFF) as u8);
        out.push((((a >> 8) & 0x0F) | ((b >> 4) & 0xF0)) as u8);
        out.push((b & 0xFF) as u8);
    }
    Ok(out)
}

/// Splits a format-212 payload for `n_signals` interleaved signals into one
/// stream per signal. Sample pairs are packed in frame order.
pub fn decode_format212_signals(payload: &[u8], n_signals: usize) -> Result<Vec<Vec<i16>>> {
    if n_signals == 0 {
        return Err(Error::InvalidArgument("n_signals must be positive".into()));
    }
    let (a, b) = decode_format212(payload)?;
    let mut flat = Vec::with_capacity(a.len() * 2);
    for (x, y) in a.into_iter().zip(b) {
        flat.push(x);
        flat.push(y);
    }
    let frames = flat.len() / n_signals;
    let mut out = vec![Vec::with_capacity(frames); n_signals];
    for frame in flat.chunks_exact(n_signals) {
        for (ch, &v) in frame.iter().enumerate() {
            out[ch].push(v);
        }
    }
    Ok(out)
}

/// Converts ADC units to millivolts: `(raw - baseline) / gain`.
pub fn adc_to_physical(raw: &[i16], gain: f64, baseline: i32) -> Result<Vec<f64>> {
    if gain == 0.0 || !gain.is_finite() {
        return Err(Error::InvalidGain);
    }
    Ok(raw.iter().map(|&r| (f64::from(r) - f64::from(baseline)) / gain).collect())
}
