//! Checkpoints: a plain-text manifest plus a binary tensor payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const PAYLOAD_FILE: &str = "weights.bin";
const MAGIC: &[u8; 8] = b"SKDCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointManifest {
    pub model: String,
    pub num_classes: usize,
    pub in_channels: usize,
    pub method: String,
    pub tap: Option<usize>,
    pub ac_channels: Option<usize>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed iterations.
    pub iteration: u64,
    pub seed: u64,
    pub config_hash: String,
    /// Iteration at which the cached ranked logits were produced.
    pub sr_cache_iteration: Option<u64>,
}

impl CheckpointManifest {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        [
            ("model", self.model.clone()),
            ("num_classes", self.num_classes.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("method", self.method.clone()),
            ("tap", opt(self.tap.map(|t| t.to_string()))),
            ("ac_channels", opt(self.ac_channels.map(|t| t.to_string()))),
            ("epoch", self.epoch.to_string()),
            ("iteration", self.iteration.to_string()),
            ("seed", self.seed.to_string()),
            ("config_hash", self.config_hash.clone()),
            ("sr_cache_iteration", opt(self.sr_cache_iteration.map(|t| t.to_string()))),
        ]
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("manifest line {}: expected `key = value`", n + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| map.get(k).cloned().ok_or_else(|| Error::Checkpoint(format!("manifest is missing `{k}`")));
        fn num<T: std::str::FromStr>(k: &str, v: String) -> Result<T> {
            v.parse().map_err(|_| Error::Checkpoint(format!("manifest `{k}` is not a number: {v}")))
        }
        fn opt_num<T: std::str::FromStr>(k: &str, v: String) -> Result<Option<T>> {
            if v == "none" {
                Ok(None)
            } else {
                num(k, v).map(Some)
            }
        }
        Ok(Self {
            model: get("model")?,
            num_classes: num("num_classes", get("num_classes")?)?,
            in_channels: num("in_channels", get("in_channels")?)?,
            method: get("method")?,
            tap: opt_num("tap", get("tap")?)?,
            ac_channels: opt_num("ac_channels", get("ac_channels")?)?,
            epoch: num("epoch", get("epoch")?)?,
            iteration: num("iteration", get("iteration")?)?,
            seed: num("seed", get("seed")?)?,
            config_hash: get("config_hash")?,
            sr_cache_iteration: opt_num("sr_cache_iteration", get("sr_cache_iteration")?)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors.iter().find(|t| t.name == name).map(|t| t.values.as_slice())
    }

    /// Tensors whose name starts with `prefix`, in stored order.
    pub fn tensors_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a NamedTensor> + 'a {
        self.tensors.iter().filter(move |t| t.name.starts_with(prefix))
    }

    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.values.len() as u64).to_le_bytes());
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn parse_payload(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Checkpoint("payload has an unknown format".into()));
        }
        let count = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let len = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize;
            let raw = cur.take(len.checked_mul(8).ok_or_else(truncated)?)?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push(NamedTensor { name, values });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after payload".into()));
        }
        Ok(tensors)
    }

    /// Writes both files into `dir`, replacing any previous checkpoint there.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join(PAYLOAD_FILE), &self.payload_bytes())?;
        write_atomic(&dir.join(MANIFEST_FILE), self.manifest.to_text().as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let payload_path = dir.join(PAYLOAD_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
        Ok(Self { manifest: CheckpointManifest::parse(&text)?, tensors: Self::parse_payload(&bytes)? })
    }
}

fn truncated() -> Error {
    Error::Checkpoint("payload is truncated".into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(truncated)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

/// Writes through a sibling temp file and a rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
