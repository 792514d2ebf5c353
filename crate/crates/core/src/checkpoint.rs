//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 8 bytes   magic "CDIFCKPT"
//! u32       format version (1)
//! u64       manifest length N in bytes
//! N bytes   UTF-8 JSON manifest
//! ...       f64 parameter values, tensors concatenated in manifest order
//! ```
//!
//! The manifest holds `kind` ("denoiser" or "classifier"), the configuration
//! needed to rebuild the network, the class and task vocabularies, and one
//! `{name, shape, offset}` entry per tensor, where `offset` counts f64 values
//! from the start of the blob section.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{Classifier, ClassifierConfig};
use crate::engine::{Model, ModelSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tensor};
use crate::signal::{BeatClass, TaskKind};

pub const MAGIC: &[u8; 8] = b"CDIFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub classes: Vec<BeatClass>,
    pub tasks: Vec<TaskKind>,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

fn bad(path: &str, message: impl Into<String>) -> Error {
    Error::BadCheckpoint { path: path.into(), message: message.into() }
}

pub fn write_checkpoint<W: Write>(mut w: W, kind: &str, config: serde_json::Value, params: &ParamStore) -> Result<()> {
    let mut offset = 0;
    let tensors = params
        .entries()
        .map(|(name, shape, data)| {
            let e = TensorEntry { name: name.to_string(), shape: shape.to_vec(), offset };
            offset += data.len();
            e
        })
        .collect();
    let manifest = Manifest { kind: kind.into(), classes: BeatClass::ALL.to_vec(), tasks: TaskKind::ALL.to_vec(), config, tensors };
    let json = serde_json::to_vec(&manifest)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, _, data) in params.entries() {
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `label` names the source in error messages.
pub fn read_checkpoint<R: Read>(mut r: R, label: &str) -> Result<(Manifest, ParamStore)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad(label, "file too short"))?;
    if &magic != MAGIC {
        return Err(bad(label, "not a checkpoint (bad magic)"));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(|_| bad(label, "truncated header"))?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(bad(label, format!("unsupported format version {version}")));
    }
    let mut n = [0u8; 8];
    r.read_exact(&mut n).map_err(|_| bad(label, "truncated header"))?;
    let n = u64::from_le_bytes(n) as usize;
    let mut json = vec![0u8; n];
    r.read_exact(&mut json).map_err(|_| bad(label, "truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(&json).map_err(|e| bad(label, format!("manifest: {e}")))?;
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    if blob.len() % 8 != 0 {
        return Err(bad(label, "parameter section is not a whole number of f64 values"));
    }
    let values: Vec<f64> = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let mut params = ParamStore::default();
    for e in &manifest.tensors {
        let len: usize = e.shape.iter().product();
        let data = values.get(e.offset..e.offset + len).ok_or_else(|| bad(label, format!("tensor {} runs past the end", e.name)))?;
        if params.id(&e.name).is_some() {
            return Err(bad(label, format!("duplicate tensor {}", e.name)));
        }
        params.insert(&e.name, Tensor::from_vec(&e.shape, data.to_vec()));
    }
    if params.count() != values.len() {
        return Err(bad(label, format!("{} trailing values", values.len() as i64 - params.count() as i64)));
    }
    Ok((manifest, params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DenoiserMeta {
    spec: ModelSpec,
    train: Option<TrainConfig>,
}

pub fn save_model(path: &Path, model: &Model, train: Option<&TrainConfig>) -> Result<()> {
    let meta = serde_json::to_value(DenoiserMeta { spec: model.spec.clone(), train: train.cloned() })?;
    write_checkpoint(BufWriter::new(File::create(path)?), "denoiser", meta, &model.params)
}

/// Loads a denoiser checkpoint and the training config recorded with it.
pub fn load_model(path: &Path) -> Result<(Model, Option<TrainConfig>)> {
    let label = path.display().to_string();
    let file = File::open(path).map_err(|e| bad(&label, e.to_string()))?;
    let (manifest, params) = read_checkpoint(BufReader::new(file), &label)?;
    if manifest.kind != "denoiser" {
        return Err(bad(&label, format!("expected a denoiser checkpoint, found {:?}", manifest.kind)));
    }
    let meta: DenoiserMeta = serde_json::from_value(manifest.config).map_err(|e| bad(&label, e.to_string()))?;
    let model = Model::from_parts(meta.spec, params).map_err(|e| bad(&label, e.to_string()))?;
    Ok((model, meta.train))
}

pub fn save_classifier(path: &Path, clf: &Classifier) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), "classifier", serde_json::to_value(&clf.config)?, &clf.params)
}

pub fn load_classifier(path: &Path) -> Result<Classifier> {
    let label = path.display().to_string();
    let file = File::open(path).map_err(|e| bad(&label, e.to_string()))?;
    let (manifest, params) = read_checkpoint(BufReader::new(file), &label)?;
    if manifest.kind != "classifier" {
        return Err(bad(&label, format!("expected a classifier checkpoint, found {:?}", manifest.kind)));
    }
    let cfg: ClassifierConfig = serde_json::from_value(manifest.config).map_err(|e| bad(&label, e.to_string()))?;
    Classifier::from_parts(cfg, params).map_err(|e| bad(&label, e.to_string()))
}
