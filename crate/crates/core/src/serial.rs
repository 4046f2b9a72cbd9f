//! Artifact container format and model serialization.
//!
//! Layout of every container:
//!
//! ```text
//! magic bytes          ("S2O1" for models, "S2O1D" for dataset caches)
//! version              u32 little-endian
//! header length        u64 little-endian
//! header               UTF-8 JSON (config and payload layout)
//! payload              back-to-back f64 values, little-endian
//! ```
//!
//! Floats round-trip bit-exactly, so save/load reproduces parameters and
//! batch-norm running statistics to 0 ulp.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureSpec, FeaturizedDataset, FeaturizedSplit};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8] = b"S2O1";
pub const DATASET_MAGIC: &[u8] = b"S2O1D";
pub const FORMAT_VERSION: u32 = 1;

/// Writes a container file.
pub fn write_container(
    path: &Path,
    magic: &[u8],
    header_json: &[u8],
    payload: &[f64],
) -> Result<()> {
    let mut buf =
        Vec::with_capacity(magic.len() + 12 + header_json.len() + payload.len() * 8);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(header_json);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads and validates a container file; returns the header bytes and the
/// payload floats.
pub fn read_container(path: &Path, magic: &[u8]) -> Result<(Vec<u8>, Vec<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < magic.len() + 12 {
        return Err(Error::Format(format!(
            "{}: file too short for a container",
            path.display()
        )));
    }
    if &bytes[..magic.len()] != magic {
        return Err(Error::Format(format!(
            "{}: wrong magic string",
            path.display()
        )));
    }
    let mut off = magic.len();
    let version = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    off += 4;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format version {version} (expected {FORMAT_VERSION})",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
    off += 8;
    if bytes.len() < off + header_len {
        return Err(Error::Format(format!(
            "{}: truncated header",
            path.display()
        )));
    }
    let header = bytes[off..off + header_len].to_vec();
    off += header_len;
    let payload_bytes = &bytes[off..];
    if payload_bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "{}: payload is not a whole number of f64 values",
            path.display()
        )));
    }
    let payload: Vec<f64> = payload_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    config: ModelConfig,
    task: Option<String>,
    feature_spec: Option<FeatureSpec>,
    blocks: Vec<BlockInfo>,
}

/// Saves a model: config header plus every parameter block (including
/// batch-norm running statistics) in declaration order.
pub fn save_model(
    path: &Path,
    model: &Model,
    task: Option<&str>,
    feature_spec: Option<&FeatureSpec>,
) -> Result<()> {
    let blocks = model.blocks();
    let header = ModelHeader {
        config: model.config().clone(),
        task: task.map(str::to_owned),
        feature_spec: feature_spec.cloned(),
        blocks: blocks
            .iter()
            .map(|b| BlockInfo {
                name: b.name.clone(),
                shape: b.value.shape().to_vec(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("header encode failed: {e}")))?;
    let mut payload = Vec::with_capacity(model.param_count());
    for block in &blocks {
        payload.extend_from_slice(block.value.data());
    }
    write_container(path, MODEL_MAGIC, &header_json, &payload)
}

/// Loaded model plus the metadata stored alongside it.
pub struct LoadedModel {
    pub model: Model,
    pub task: Option<String>,
    pub feature_spec: Option<FeatureSpec>,
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let (header_bytes, payload) = read_container(path, MODEL_MAGIC)?;
    let header: ModelHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("{}: bad header: {e}", path.display())))?;
    let mut model = Model::build(header.config)?;

    let expected: usize = model.param_count();
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "{}: payload holds {} values, model needs {expected}",
            path.display(),
            payload.len()
        )));
    }
    {
        let mut blocks = model.blocks_mut();
        if blocks.len() != header.blocks.len() {
            return Err(Error::Format(format!(
                "{}: header lists {} blocks, model has {}",
                path.display(),
                header.blocks.len(),
                blocks.len()
            )));
        }
        let mut off = 0;
        for (block, info) in blocks.iter_mut().zip(&header.blocks) {
            if block.name != info.name || block.value.shape() != info.shape.as_slice() {
                return Err(Error::Format(format!(
                    "{}: block {} ({:?}) does not match stored {} ({:?})",
                    path.display(),
                    block.name,
                    block.value.shape(),
                    info.name,
                    info.shape
                )));
            }
            let n = block.len();
            block.value = Tensor::new(block.value.shape(), payload[off..off + n].to_vec())?;
            off += n;
        }
    }
    Ok(LoadedModel {
        model,
        task: header.task,
        feature_spec: header.feature_spec,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitInfo {
    name: String,
    n: usize,
    pixel_ids: Vec<String>,
    target_dates: Vec<chrono::NaiveDate>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    spec: FeatureSpec,
    time_steps: usize,
    features: usize,
    targets: usize,
    splits: Vec<SplitInfo>,
}

/// Saves a featurized dataset cache (magic `S2O1D`): fitted feature spec
/// plus the three splits, x then y per split.
pub fn save_dataset(path: &Path, dataset: &FeaturizedDataset) -> Result<()> {
    let splits = [&dataset.train, &dataset.val, &dataset.test];
    let names = ["train", "val", "test"];
    let header = DatasetHeader {
        spec: dataset.spec.clone(),
        time_steps: dataset.time_steps,
        features: dataset.train.features,
        targets: dataset.train.targets,
        splits: splits
            .iter()
            .zip(names)
            .map(|(s, name)| SplitInfo {
                name: name.to_string(),
                n: s.n,
                pixel_ids: s.pixel_ids.clone(),
                target_dates: s.target_dates.clone(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("header encode failed: {e}")))?;
    let mut payload = Vec::new();
    for split in splits {
        payload.extend_from_slice(&split.x);
        payload.extend_from_slice(&split.y);
    }
    write_container(path, DATASET_MAGIC, &header_json, &payload)
}

pub fn load_dataset(path: &Path) -> Result<FeaturizedDataset> {
    let (header_bytes, payload) = read_container(path, DATASET_MAGIC)?;
    let header: DatasetHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Format(format!("{}: bad header: {e}", path.display())))?;
    if header.splits.len() != 3 {
        return Err(Error::Format(format!(
            "{}: expected 3 splits, found {}",
            path.display(),
            header.splits.len()
        )));
    }
    let row = header.time_steps * header.features;
    let expected: usize = header
        .splits
        .iter()
        .map(|s| s.n * (row + header.targets))
        .sum();
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "{}: payload holds {} values, header implies {expected}",
            path.display(),
            payload.len()
        )));
    }
    let mut off = 0;
    let mut take = |n: usize| {
        let slice = payload[off..off + n].to_vec();
        off += n;
        slice
    };
    let mut splits = Vec::new();
    for info in &header.splits {
        if info.pixel_ids.len() != info.n || info.target_dates.len() != info.n {
            return Err(Error::Format(format!(
                "{}: split {} metadata lengths do not match n={}",
                path.display(),
                info.name,
                info.n
            )));
        }
        let x = take(info.n * row);
        let y = take(info.n * header.targets);
        splits.push(FeaturizedSplit {
            n: info.n,
            time_steps: header.time_steps,
            features: header.features,
            targets: header.targets,
            x,
            y,
            pixel_ids: info.pixel_ids.clone(),
            target_dates: info.target_dates.clone(),
        });
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(FeaturizedDataset {
        spec: header.spec,
        time_steps: header.time_steps,
        train,
        val,
        test,
    })
}

/// Formats a float with 12 significant digits for CSV artifacts; parses
/// back within 1e-9 relative error.
pub fn format_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let formatted = format!("{x:.11e}");
    // trim trailing zeros in the mantissa for readability: 3.50000000000e1 -> 3.5e1
    match formatted.split_once('e') {
        Some((mantissa, exp)) => {
            let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
            format!("{mantissa}e{exp}")
        }
        None => formatted,
    }
}
