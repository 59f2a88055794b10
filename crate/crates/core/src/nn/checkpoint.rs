//! On-disk parameter checkpoints.
//!
//! A checkpoint is a directory with two files:
//!
//! * `manifest`: TOML text with a free-form `[meta]` table and one
//!   `[[param]]` entry per buffer (`name`, `shape`, byte `offset`).
//! * `params.bin`: little-endian `f64` values of every buffer concatenated
//!   in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{ensure, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const PARAMS_FILE: &str = "params.bin";
const FORMAT: &str = "topocaps-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: toml::Table,
    pub entries: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    #[serde(default)]
    meta: toml::Table,
    #[serde(default, rename = "param")]
    params: Vec<ManifestParam>,
}

#[derive(Serialize, Deserialize)]
struct ManifestParam {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

impl Checkpoint {
    pub fn new(meta: toml::Table) -> Self {
        Self {
            meta,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.entries.push(Entry {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn push_params<P: ParamSet + ?Sized>(&mut self, prefix: &str, params: &P) {
        for p in params.params() {
            let name = if prefix.is_empty() {
                p.name
            } else {
                format!("{prefix}{}", p.name)
            };
            self.push(name, p.shape, p.data.to_vec());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Copies stored buffers into `params`, matching by name and shape.
    pub fn restore_into<P: ParamSet + ?Sized>(&self, prefix: &str, params: &mut P) -> Result<()> {
        let specs: Vec<(String, Vec<usize>)> = params
            .params()
            .into_iter()
            .map(|p| (format!("{prefix}{}", p.name), p.shape))
            .collect();
        for ((name, shape), buf) in specs.iter().zip(params.params_mut()) {
            let e = self
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint has no parameter `{name}`")))?;
            ensure!(
                &e.shape == shape,
                Format,
                "parameter `{name}` has shape {:?} in checkpoint but {:?} in model",
                e.shape,
                shape
            );
            buf.copy_from_slice(&e.data);
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut bytes = Vec::with_capacity(8 * self.entries.iter().map(|e| e.data.len()).sum::<usize>());
        let mut params = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            params.push(ManifestParam {
                name: e.name.clone(),
                shape: e.shape.clone(),
                offset: bytes.len() as u64,
            });
            for v in &e.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT.to_string(),
            version: 1,
            meta: self.meta.clone(),
            params,
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join(PARAMS_FILE), bytes)?;
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        ensure!(
            manifest.format == FORMAT,
            Format,
            "unexpected checkpoint format `{}`",
            manifest.format
        );
        let bytes = fs::read(dir.join(PARAMS_FILE))?;
        let mut entries = Vec::with_capacity(manifest.params.len());
        let mut expected_offset = 0u64;
        for p in manifest.params {
            ensure!(
                p.offset == expected_offset,
                Format,
                "parameter `{}` at offset {} but previous entries end at {}",
                p.name,
                p.offset,
                expected_offset
            );
            let n: usize = p.shape.iter().product();
            let start = p.offset as usize;
            let end = start + 8 * n;
            ensure!(
                end <= bytes.len(),
                Format,
                "params.bin too short for `{}` ({} bytes needed, {} present)",
                p.name,
                end,
                bytes.len()
            );
            let data = bytes[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            expected_offset = end as u64;
            entries.push(Entry {
                name: p.name,
                shape: p.shape,
                data,
            });
        }
        ensure!(
            expected_offset as usize == bytes.len(),
            Format,
            "params.bin has {} trailing bytes",
            bytes.len() - expected_offset as usize
        );
        Ok(Self {
            meta: manifest.meta,
            entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;

    #[test]
    fn round_trip_and_byte_layout() {
        let dir = tempfile::tempdir().unwrap();
        let net = Mlp::init(&[3, 2, 1], 4).unwrap();
        let mut meta = toml::Table::new();
        meta.insert("epoch".into(), toml::Value::Integer(3));
        let mut ck = Checkpoint::new(meta);
        ck.push_params("net.", &net);
        ck.save(dir.path()).unwrap();

        let bytes = fs::read(dir.path().join(PARAMS_FILE)).unwrap();
        assert_eq!(bytes.len(), 8 * net.num_params());
        let first = f64::from_le_bytes(bytes[0..8].try_into().unwrap());
        assert_eq!(first, net.layers()[0].weight[0]);

        let loaded = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(loaded, ck);
        let mut other = Mlp::zeros(&[3, 2, 1]).unwrap();
        loaded.restore_into("net.", &mut other).unwrap();
        assert_eq!(other, net);

        let mut wrong = Mlp::zeros(&[3, 4, 1]).unwrap();
        assert!(matches!(loaded.restore_into("net.", &mut wrong), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut ck = Checkpoint::default();
        ck.push("a", vec![2], vec![1.0, 2.0]);
        ck.save(dir.path()).unwrap();
        let p = dir.path().join(PARAMS_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, bytes).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Format(_))));
    }
}
