//! Checkpoint container: a magic line, a JSON manifest listing every
//! parameter as `{name, group, shape, byte_offset}`, then one raw blob of
//! little-endian 32-bit floats. Byte-identical for identical parameters.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::GroupName;
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

use super::{ModelConfig, ModelParams};

pub const CKPT_MAGIC: &str = "SUPERAE_CKPT_V1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    group: GroupName,
    shape: Vec<usize>,
    byte_offset: u64,
}

/// Write `magic\n`, an 8-byte little-endian manifest length, the manifest
/// JSON, and the float blob.
pub fn write_container(path: &Path, magic: &str, manifest_json: &[u8], blob: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    w.write_all(magic.as_bytes()).map_err(io_err)?;
    w.write_all(b"\n").map_err(io_err)?;
    w.write_all(&(manifest_json.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(manifest_json).map_err(io_err)?;
    w.write_all(blob).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Inverse of [`write_container`]; checks the magic and returns
/// `(manifest, blob)`.
pub fn read_container<M: DeserializeOwned>(path: &Path, magic: &str) -> Result<(M, Vec<u8>)> {
    let mut file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path.display().to_string(), e))?;

    let head = magic.len() + 1;
    if bytes.len() < head + 8 || &bytes[..magic.len()] != magic.as_bytes() || bytes[magic.len()] != b'\n' {
        return Err(Error::Malformed {
            what: "checkpoint container",
            detail: format!("{}: bad or missing `{magic}` header", path.display()),
        });
    }
    let len = u64::from_le_bytes(bytes[head..head + 8].try_into().unwrap()) as usize;
    if bytes.len() < head + 8 + len {
        return Err(Error::Malformed {
            what: "checkpoint container",
            detail: format!("{}: truncated manifest", path.display()),
        });
    }
    let manifest: M = serde_json::from_slice(&bytes[head + 8..head + 8 + len])
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    Ok((manifest, bytes[head + 8 + len..].to_vec()))
}

pub fn save<F: Scalar>(path: &Path, cfg: &ModelConfig, params: &ModelParams<Tensor<F>>) -> Result<()> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    params.visit(&mut |group, name, t| {
        entries.push(ManifestEntry {
            name,
            group,
            shape: t.shape().to_vec(),
            byte_offset: blob.len() as u64,
        });
        for x in t.data() {
            blob.extend_from_slice(&x.as_f32().to_le_bytes());
        }
    });
    let manifest = Manifest { config: cfg.clone(), entries };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::json(path.display().to_string(), e))?;
    write_container(path, CKPT_MAGIC, &json, &blob)
}

pub fn load<F: Scalar>(path: &Path) -> Result<(ModelConfig, ModelParams<Tensor<F>>)> {
    let (manifest, blob): (Manifest, Vec<u8>) = read_container(path, CKPT_MAGIC)?;
    manifest.config.validate()?;

    let mut by_name: HashMap<&str, &ManifestEntry> = HashMap::new();
    for e in &manifest.entries {
        if by_name.insert(e.name.as_str(), e).is_some() {
            return Err(Error::Malformed {
                what: "checkpoint manifest",
                detail: format!("duplicate entry {}", e.name),
            });
        }
    }

    let mut params = ModelParams::<Tensor<F>>::zeros(&manifest.config);
    let mut problem: Option<Error> = None;
    let mut used = 0usize;
    params.visit_mut(&mut |group, name, t| {
        if problem.is_some() {
            return;
        }
        let Some(entry) = by_name.get(name.as_str()) else {
            problem = Some(Error::Malformed {
                what: "checkpoint manifest",
                detail: format!("missing entry {name}"),
            });
            return;
        };
        if entry.group != group || entry.shape != t.shape() {
            problem = Some(Error::Malformed {
                what: "checkpoint manifest",
                detail: format!(
                    "{name}: stored as {:?}/{:?}, model expects {:?}/{:?}",
                    entry.group,
                    entry.shape,
                    group,
                    t.shape()
                ),
            });
            return;
        }
        used += 1;
        let start = entry.byte_offset as usize;
        let end = start + 4 * t.numel();
        if end > blob.len() {
            problem = Some(Error::Malformed {
                what: "checkpoint blob",
                detail: format!("{name}: blob too short"),
            });
            return;
        }
        for (i, x) in t.data_mut().iter_mut().enumerate() {
            let off = start + 4 * i;
            let raw = f32::from_le_bytes(blob[off..off + 4].try_into().unwrap());
            *x = F::from_f32(raw);
        }
    });
    if let Some(e) = problem {
        return Err(e);
    }
    if used != manifest.entries.len() {
        return Err(Error::Malformed {
            what: "checkpoint manifest",
            detail: format!("{} stored entries, model consumed {used}", manifest.entries.len()),
        });
    }
    Ok((manifest.config, params))
}
