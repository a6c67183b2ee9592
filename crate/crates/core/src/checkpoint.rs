//! Versioned parameter files: an 8-byte magic, a format version, a JSON
//! header describing named tensors, then their little-endian `f64` data.

use std::fs;
use std::path::Path;

use deephedge_autodiff::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DHCKPT01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Named tensors plus free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub entries: Vec<TensorEntry>,
    pub data: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, meta: serde_json::Value) -> Self {
        let mut entries = Vec::with_capacity(store.len());
        let mut data = Vec::with_capacity(store.len());
        for (name, tensor, trainable) in store.iter() {
            entries.push(TensorEntry { name: name.to_string(), shape: tensor.shape().to_vec(), trainable });
            data.push(tensor.data().to_vec());
        }
        Checkpoint { meta, entries, data }
    }

    /// Overwrites every tensor of `store` with the entry of the same name.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let k = self
                .entries
                .iter()
                .position(|e| e.name == name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {name:?}")))?;
            let tensor = Tensor::new(self.entries[k].shape.clone(), self.data[k].clone())?;
            store.set(id, tensor)?;
            store.set_trainable(id, self.entries[k].trainable);
        }
        if self.entries.len() != store.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} tensors stored, model has {}", self.entries.len(), store.len()),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header { version: CHECKPOINT_VERSION, meta: self.meta.clone(), tensors: self.entries.clone() };
        let json = serde_json::to_vec(&header)?;
        let total: usize = self.data.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for values in &self.data {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + len).ok_or_else(|| Error::format("checkpoint", "truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut offset = 20 + len;
        let mut data = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let count: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 8 * count)
                .ok_or_else(|| Error::format("checkpoint", format!("truncated tensor {:?}", entry.name)))?;
            data.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
            offset += 8 * count;
        }
        if offset != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Checkpoint { meta: header.meta, entries: header.tensors, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::matrix(2, 2, vec![0.1, -2.5, 1e-300, 3.0]).unwrap(), true);
        store.add("b", Tensor::vector(vec![std::f64::consts::PI]), false);
        let ck = Checkpoint::from_store(&store, serde_json::json!({"kind": "test"}));
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let mut other = ParamStore::new();
        let a = other.add("a", Tensor::zeros(&[2, 2]), true);
        let b = other.add("b", Tensor::zeros(&[1]), true);
        back.restore_into(&mut other).unwrap();
        assert_eq!(other.get(a).data(), store.get(a).data());
        assert!(!other.is_trainable(b));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(Checkpoint::from_bytes(b"NOTACKPT00000000000000").is_err());
        let store = ParamStore::new();
        let mut bytes = Checkpoint::from_store(&store, serde_json::Value::Null).to_bytes().unwrap();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
