//! On-disk formats.
//!
//! Arrays and models share one container: an 8-byte magic, the length of a
//! JSON header as a little-endian `u64`, the header itself, then the payload
//! as little-endian `f64` values.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tis_core::dynamics::{Dataset, Split, SplitCounts, Trajectory};
use tis_core::koopman::{DikuConfig, DikuModel, TrainConfig};

use crate::error::{io_err, Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"TISDATA1";
pub const MODEL_MAGIC: &[u8; 8] = b"TISMODL1";
pub const FORMAT_VERSION: u32 = 1;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

pub fn write_container<H: Serialize>(path: &Path, magic: &[u8; 8], header: &H, payload: &[f64]) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    let mut bytes = Vec::with_capacity(16 + json.len() + 8 * payload.len());
    bytes.extend_from_slice(magic);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_container<H: DeserializeOwned>(path: &Path, magic: &[u8; 8]) -> Result<(H, Vec<f64>)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(format_err(path, format!("missing {} magic", String::from_utf8_lossy(magic))));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.len() - 16;
    if len > body || (body - len) % 8 != 0 {
        return Err(format_err(path, "truncated header or payload"));
    }
    let header = serde_json::from_slice(&bytes[16..16 + len])
        .map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    let payload = bytes[16 + len..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, payload))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn json_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub system: String,
    pub n: usize,
    pub m: usize,
    pub dt: f64,
    pub horizon: usize,
    pub seed: u64,
    pub counts: SplitCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitHeader {
    split: String,
    n: usize,
    m: usize,
    dt: f64,
    /// States per trajectory; a trajectory with `L` states has `L - 1`
    /// controls.
    lengths: Vec<usize>,
    truncated: Vec<bool>,
    states_shape: [usize; 2],
    controls_shape: [usize; 2],
}

fn split_file(dir: &Path, split: Split) -> std::path::PathBuf {
    dir.join(format!("{}.bin", split.name()))
}

/// Writes `meta.json` and one array file per split into `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        system: data.system.clone(),
        n: data.n,
        m: data.m,
        dt: data.dt,
        horizon: data.horizon,
        seed: data.seed,
        counts: data.counts(),
    };
    write_json(&dir.join("meta.json"), &meta)?;
    for split in Split::ALL {
        let trajs = data.split(split);
        let states: usize = trajs.iter().map(Trajectory::len).sum();
        let controls = states - trajs.len();
        let header = SplitHeader {
            split: split.name().into(),
            n: data.n,
            m: data.m,
            dt: data.dt,
            lengths: trajs.iter().map(Trajectory::len).collect(),
            truncated: trajs.iter().map(|t| t.truncated).collect(),
            states_shape: [states, data.n],
            controls_shape: [controls, data.m],
        };
        let mut payload = Vec::with_capacity(states * data.n + controls * data.m);
        trajs.iter().for_each(|t| payload.extend_from_slice(&t.states));
        trajs.iter().for_each(|t| payload.extend_from_slice(&t.controls));
        write_container(&split_file(dir, split), DATASET_MAGIC, &header, &payload)?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
    let mut splits = Vec::new();
    for split in Split::ALL {
        let path = split_file(dir, split);
        let (h, payload): (SplitHeader, Vec<f64>) = read_container(&path, DATASET_MAGIC)?;
        let states: usize = h.lengths.iter().sum();
        if h.n != meta.n || h.m != meta.m || h.lengths.len() != h.truncated.len() {
            return Err(format_err(&path, "header disagrees with meta.json"));
        }
        if h.lengths.contains(&0) || h.states_shape != [states, h.n] || h.controls_shape != [states - h.lengths.len(), h.m]
        {
            return Err(format_err(&path, "inconsistent trajectory lengths"));
        }
        if payload.len() != states * h.n + h.controls_shape[0] * h.m {
            return Err(format_err(&path, "payload size does not match the header"));
        }
        let (mut s, mut c) = (0, states * h.n);
        let mut trajs = Vec::with_capacity(h.lengths.len());
        for (&len, &truncated) in h.lengths.iter().zip(&h.truncated) {
            let (ns, nc) = (len * h.n, (len - 1) * h.m);
            trajs.push(Trajectory {
                n: h.n,
                m: h.m,
                states: payload[s..s + ns].to_vec(),
                controls: payload[c..c + nc].to_vec(),
                dt: h.dt,
                truncated,
            });
            s += ns;
            c += nc;
        }
        splits.push(trajs);
    }
    let test = splits.pop().expect("three splits");
    let validation = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    let data = Dataset {
        system: meta.system,
        n: meta.n,
        m: meta.m,
        dt: meta.dt,
        horizon: meta.horizon,
        seed: meta.seed,
        train,
        validation,
        test,
    };
    if data.counts() != meta.counts {
        return Err(format_err(dir, "split sizes disagree with meta.json"));
    }
    Ok(data)
}

/// What a model file records about the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub config: TrainConfig,
    pub config_hash: String,
    pub dataset_hash: Option<String>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub system: String,
    pub config: DikuConfig,
    pub half1: Vec<usize>,
    pub half2: Vec<usize>,
    pub num_params: usize,
    pub init_seed: u64,
    pub training: Option<TrainingMeta>,
}

pub fn write_model(path: &Path, system: &str, model: &DikuModel, init_seed: u64, training: Option<TrainingMeta>) -> Result<()> {
    let (h1, h2) = model.halves();
    let header = ModelHeader {
        format_version: FORMAT_VERSION,
        system: system.into(),
        config: model.config().clone(),
        half1: h1.to_vec(),
        half2: h2.to_vec(),
        num_params: model.num_params(),
        init_seed,
        training,
    };
    write_container(path, MODEL_MAGIC, &header, &model.params_flat())
}

pub fn read_model(path: &Path) -> Result<(ModelHeader, DikuModel)> {
    let (header, params): (ModelHeader, Vec<f64>) = read_container(path, MODEL_MAGIC)?;
    if params.len() != header.num_params {
        return Err(format_err(path, format!("expected {} parameters, found {}", header.num_params, params.len())));
    }
    let model = DikuModel::from_parts(header.config.clone(), header.half1.clone(), header.half2.clone(), &params)?;
    Ok((header, model))
}
