//! On-disk tensor store and training checkpoints.
//!
//! A tensor directory holds `manifest.json` (ordered records of name,
//! shape, dtype, byte offset and CRC-32) and `weights.bin` (little-endian
//! `f32` data concatenated in manifest order). A checkpoint adds
//! `state.json` with the step counter, data cursor, optimizer step counts,
//! the configuration, and the SHA-256 of the manifest it was written with.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::nn::Weights;
use crate::tensor::Tensor;
use crate::trainer::adam::Adam;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const STATE_FILE: &str = "state.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub crc32: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub version: u32,
    pub tensors: Vec<TensorRecord>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Write tensors to `dir` and return the SHA-256 of the manifest.
pub fn write_tensor_dir<'a>(
    dir: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut records = Vec::new();
    for (name, t) in tensors {
        let start = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        records.push(TensorRecord {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset: start as u64,
            crc32: crc32fast::hash(&blob[start..]),
        });
    }
    let manifest = serde_json::to_vec_pretty(&TensorManifest {
        version: 1,
        tensors: records,
    })?;
    write_file(&dir.join(WEIGHTS_FILE), &blob)?;
    write_file(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(sha256_hex(&manifest))
}

/// Read a tensor directory, verifying sizes and checksums. Returns the
/// tensors in manifest order and the manifest's SHA-256.
pub fn read_tensor_dir(dir: &Path) -> Result<(IndexMap<String, Tensor<f32>>, String)> {
    let manifest_bytes = read_file(&dir.join(MANIFEST_FILE))?;
    let manifest: TensorManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Manifest(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
    let blob = read_file(&dir.join(WEIGHTS_FILE))?;
    let mut out = IndexMap::new();
    let mut expected_offset = 0u64;
    for rec in &manifest.tensors {
        if rec.dtype != "f32" {
            return Err(Error::Manifest(format!("`{}` has unsupported dtype {}", rec.name, rec.dtype)));
        }
        if rec.offset != expected_offset {
            return Err(Error::Manifest(format!("`{}` is not contiguous in {WEIGHTS_FILE}", rec.name)));
        }
        let numel: usize = rec.shape.iter().product();
        let start = rec.offset as usize;
        let end = start + 4 * numel;
        let bytes = blob
            .get(start..end)
            .ok_or_else(|| Error::Manifest(format!("{WEIGHTS_FILE} is truncated at `{}`", rec.name)))?;
        if crc32fast::hash(bytes) != rec.crc32 {
            return Err(Error::Checksum(rec.name.clone()));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.insert(rec.name.clone(), Tensor::new(rec.shape.clone(), data)?);
        expected_offset = end as u64;
    }
    if expected_offset as usize != blob.len() {
        return Err(Error::Manifest(format!("{WEIGHTS_FILE} has trailing bytes")));
    }
    Ok((out, sha256_hex(&manifest_bytes)))
}

pub fn save_weights(weights: &Weights, dir: &Path) -> Result<String> {
    write_tensor_dir(dir, weights.iter().map(|(k, v)| (k.as_str(), v)))
}

pub fn load_weights(dir: &Path) -> Result<Weights> {
    let (tensors, _) = read_tensor_dir(dir)?;
    let mut w = Weights::new();
    for (k, v) in tensors {
        w.insert(k, v);
    }
    Ok(w)
}

/// Position in the per-sample random streams.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub algorithm: String,
    pub seed: u64,
    /// Global index of the next training sample to draw.
    pub next_sample: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub step: u64,
    pub rng: RngState,
    pub generator: Weights,
    pub discriminator: Weights,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    version: u32,
    step: u64,
    rng: RngState,
    generator_adam_t: u64,
    discriminator_adam_t: u64,
    manifest_sha256: String,
    config: ExperimentConfig,
}

const GEN: &str = "generator.";
const DISC: &str = "discriminator.";

fn moment_prefix(net: &str, which: &str) -> String {
    format!("optim.{net}{which}.")
}

impl Checkpoint {
    /// Check that the stored tensors fit the networks `cfg` describes.
    pub fn validate_against(&self, cfg: &ExperimentConfig) -> Result<()> {
        self.generator.check_against(&Generator::new(&cfg.generator)?.specs())?;
        self.discriminator
            .check_against(&Discriminator::new(&cfg.discriminator)?.specs())
    }
}

pub fn save_checkpoint(c: &Checkpoint, dir: &Path) -> Result<()> {
    let mut named: Vec<(String, &Tensor<f32>)> = Vec::new();
    for (prefix, w) in [(GEN, &c.generator), (DISC, &c.discriminator)] {
        named.extend(w.iter().map(|(k, v)| (format!("{prefix}{k}"), v)));
    }
    for (net, opt) in [(GEN, &c.gen_opt), (DISC, &c.disc_opt)] {
        for (which, moments) in [("m", &opt.m), ("v", &opt.v)] {
            let p = moment_prefix(net, which);
            named.extend(moments.iter().map(|(k, v)| (format!("{p}{k}"), v)));
        }
    }
    let hash = write_tensor_dir(dir, named.iter().map(|(k, v)| (k.as_str(), *v)))?;
    let state = StateFile {
        version: 1,
        step: c.step,
        rng: c.rng.clone(),
        generator_adam_t: c.gen_opt.t,
        discriminator_adam_t: c.disc_opt.t,
        manifest_sha256: hash,
        config: c.config.clone(),
    };
    write_file(&dir.join(STATE_FILE), &serde_json::to_vec_pretty(&state)?)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let state_bytes = read_file(&dir.join(STATE_FILE))?;
    let state: StateFile = serde_json::from_slice(&state_bytes)
        .map_err(|e| Error::Manifest(format!("{}: {e}", dir.join(STATE_FILE).display())))?;
    let (tensors, hash) = read_tensor_dir(dir)?;
    if hash != state.manifest_sha256 {
        return Err(Error::Manifest(format!(
            "manifest hash {hash} does not match the recorded {}",
            state.manifest_sha256
        )));
    }
    let cfg = state.config;
    let mut generator = Weights::new();
    let mut discriminator = Weights::new();
    let mut gen_opt = Adam::new(crate::trainer::adam_params(&cfg.train, true));
    let mut disc_opt = Adam::new(crate::trainer::adam_params(&cfg.train, false));
    gen_opt.t = state.generator_adam_t;
    disc_opt.t = state.discriminator_adam_t;
    let slots = [
        (moment_prefix(GEN, "m"), 0),
        (moment_prefix(GEN, "v"), 1),
        (moment_prefix(DISC, "m"), 2),
        (moment_prefix(DISC, "v"), 3),
    ];
    for (name, t) in tensors {
        if let Some((rest, slot)) = slots
            .iter()
            .find_map(|(p, s)| name.strip_prefix(p.as_str()).map(|r| (r.to_string(), *s)))
        {
            let map = match slot {
                0 => &mut gen_opt.m,
                1 => &mut gen_opt.v,
                2 => &mut disc_opt.m,
                _ => &mut disc_opt.v,
            };
            map.insert(rest, t);
        } else if let Some(rest) = name.strip_prefix(GEN) {
            generator.insert(rest, t);
        } else if let Some(rest) = name.strip_prefix(DISC) {
            discriminator.insert(rest, t);
        } else {
            return Err(Error::Manifest(format!("unexpected tensor `{name}` in checkpoint")));
        }
    }
    let ckpt = Checkpoint {
        config: cfg,
        step: state.step,
        rng: state.rng,
        generator,
        discriminator,
        gen_opt,
        disc_opt,
    };
    ckpt.validate_against(&ckpt.config)?;
    Ok(ckpt)
}
