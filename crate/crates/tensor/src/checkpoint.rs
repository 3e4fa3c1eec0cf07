//! Checkpoint file format.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "LTXCKPT\x01"
//! 8       8     header length H, u64 little-endian
//! 16      H     UTF-8 JSON header
//! 16+H    8*N   payload: every tensor's elements as f64 little-endian,
//!               concatenated in header order
//! ```
//!
//! The header is `{"format":1,"meta":<any JSON>,"tensors":[{"name":..,
//! "shape":[..],"frozen":bool,"offset":<element offset into payload>}]}`.
//! Optimizer moments, when saved, are stored as tensors named
//! `adam.m/<param>` and `adam.v/<param>` with the step count in
//! `meta.adam_step`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::optim::{Adam, AdamConfig};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LTXCKPT\x01";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format: u32,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Clone, Debug)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: bool,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

impl Checkpoint {
    pub fn from_store(store: &ParamStore, meta: serde_json::Value) -> Self {
        let tensors = store
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                tensor: p.value.clone(),
                frozen: p.frozen,
            })
            .collect();
        Self { meta, tensors }
    }

    /// Append optimizer moments so training can resume bit-identically.
    pub fn with_optimizer(mut self, adam: &Adam, store: &ParamStore) -> Self {
        for (i, p) in store.iter().enumerate() {
            for (prefix, buf) in [(ADAM_M, &adam.m[i]), (ADAM_V, &adam.v[i])] {
                self.tensors.push(NamedTensor {
                    name: format!("{prefix}{}", p.name),
                    tensor: buf.clone(),
                    frozen: false,
                });
            }
        }
        if let serde_json::Value::Object(map) = &mut self.meta {
            map.insert("adam_step".into(), adam.step.into());
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copy values (and frozen flags) into a store built with the same
    /// architecture.
    pub fn restore_store(&self, store: &mut ParamStore) -> Result<()> {
        for p in store.iter_mut() {
            let src = self
                .get(&p.name)
                .ok_or_else(|| TensorError::Format(format!("checkpoint lacks parameter {}", p.name)))?;
            if src.tensor.shape() != p.value.shape() {
                return Err(TensorError::Shape {
                    op: "restore_store",
                    lhs: p.value.shape().to_vec(),
                    rhs: src.tensor.shape().to_vec(),
                });
            }
            p.value = src.tensor.clone();
            p.frozen = src.frozen;
        }
        Ok(())
    }

    pub fn restore_optimizer(&self, config: AdamConfig, store: &ParamStore) -> Option<Adam> {
        let step = self.meta.get("adam_step")?.as_u64()?;
        let mut adam = Adam::new(config, store);
        adam.step = step;
        for (i, p) in store.iter().enumerate() {
            adam.m[i] = self.get(&format!("{ADAM_M}{}", p.name))?.tensor.clone();
            adam.v[i] = self.get(&format!("{ADAM_V}{}", p.name))?.tensor.clone();
        }
        Some(adam)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|t| {
                let e = Entry {
                    name: t.name.clone(),
                    shape: t.tensor.shape().to_vec(),
                    frozen: t.frozen,
                    offset,
                };
                offset += t.tensor.numel();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            format: 1,
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for x in t.tensor.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(TensorError::Format("bad magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| TensorError::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
        if header.format != 1 {
            return Err(TensorError::Format(format!("unsupported format {}", header.format)));
        }
        let payload = &bytes[header_end..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset * 8;
            let end = start + n * 8;
            if end > payload.len() {
                return Err(TensorError::Format(format!("payload too short for {}", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(NamedTensor {
                name: e.name,
                tensor: Tensor::new(e.shape, data)?,
                frozen: e.frozen,
            });
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes()?)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn header_layout_is_as_documented() {
        let mut ps = ParamStore::new();
        ps.add("w", Tensor::new([2], vec![1.5, -2.0]).unwrap()).unwrap();
        let bytes = Checkpoint::from_store(&ps, serde_json::json!({})).to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        assert_eq!(header["tensors"][0]["name"], "w");
        assert_eq!(header["tensors"][0]["shape"], serde_json::json!([2]));
        let payload = &bytes[16 + hlen..];
        assert_eq!(payload.len(), 16);
        assert_eq!(f64::from_le_bytes(payload[..8].try_into().unwrap()), 1.5);
    }

    #[test]
    fn store_and_optimizer_survive_a_file_round_trip() {
        let mut rng = SplitMix64::new(5);
        let mut ps = ParamStore::new();
        ps.kaiming("a", 3, 4, &mut rng).unwrap();
        let b = ps.kaiming("b", 4, 2, &mut rng).unwrap();
        ps.set_frozen(b, true);
        let mut adam = Adam::new(AdamConfig::default(), &ps);
        for p in ps.iter_mut() {
            p.grad = Tensor::uniform(p.value.shape().to_vec(), -1.0, 1.0, &mut rng);
        }
        adam.step(&mut ps);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        Checkpoint::from_store(&ps, serde_json::json!({"note": "t"}))
            .with_optimizer(&adam, &ps)
            .save(&path)
            .unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        let mut fresh = ParamStore::new();
        fresh.kaiming("a", 3, 4, &mut SplitMix64::new(99)).unwrap();
        fresh.kaiming("b", 4, 2, &mut SplitMix64::new(99)).unwrap();
        ck.restore_store(&mut fresh).unwrap();
        for (x, y) in ps.iter().zip(fresh.iter()) {
            assert_eq!(x.value, y.value);
            assert_eq!(x.frozen, y.frozen);
        }
        let adam2 = ck.restore_optimizer(AdamConfig::default(), &fresh).unwrap();
        assert_eq!(adam2.step, 1);
        assert_eq!(adam2.m, adam.m);
        assert_eq!(adam2.v, adam.v);
        assert_eq!(ck.meta["note"], "t");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&1000u64.to_le_bytes());
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
