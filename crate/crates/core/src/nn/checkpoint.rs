//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "SACMOECK"
//! version  u32
//! length   u64       byte length of the manifest
//! manifest JSON      {"version", "meta", "tensors": [{name, dtype, shape, offset, len}]}
//! payload            concatenated little-endian arrays
//! ```
//!
//! `offset` is relative to the start of the payload and `len` counts
//! elements. Round trips are bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::params::ParamStore;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SACMOECK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub meta: Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub manifest: Manifest,
    payload: Vec<u8>,
}

impl Archive {
    pub fn new(meta: Value) -> Self {
        Self {
            manifest: Manifest {
                version: VERSION,
                meta,
                tensors: Vec::new(),
            },
            payload: Vec::new(),
        }
    }

    pub fn meta(&self) -> &Value {
        &self.manifest.meta
    }

    fn push_entry(&mut self, name: &str, dtype: &str, shape: Vec<usize>, len: usize, bytes: Vec<u8>) {
        self.manifest.tensors.push(TensorEntry {
            name: name.to_string(),
            dtype: dtype.to_string(),
            shape,
            offset: self.payload.len(),
            len,
        });
        self.payload.extend(bytes);
    }

    pub fn put_real<F: Real>(&mut self, name: &str, shape: Vec<usize>, values: &[F]) {
        let mut bytes = Vec::with_capacity(values.len() * F::BYTES);
        for &v in values {
            v.write_le(&mut bytes);
        }
        self.push_entry(name, F::DTYPE, shape, values.len(), bytes);
    }

    pub fn put_u64(&mut self, name: &str, values: &[u64]) {
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.push_entry(name, "u64", vec![values.len()], values.len(), bytes);
    }

    pub fn put_store<F: Real>(&mut self, prefix: &str, store: &ParamStore<F>) {
        for (_, p) in store.iter() {
            self.put_real(
                &format!("{prefix}/{}", p.name),
                vec![p.value.rows, p.value.cols],
                &p.value.data,
            );
        }
    }

    fn entry(&self, name: &str) -> Result<&TensorEntry> {
        self.manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::BadCheckpoint(format!("missing tensor `{name}`")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.tensors.iter().any(|t| t.name == name)
    }

    pub fn get_real<F: Real>(&self, name: &str) -> Result<(Vec<usize>, Vec<F>)> {
        let e = self.entry(name)?;
        if e.dtype != F::DTYPE {
            return Err(Error::BadCheckpoint(format!(
                "tensor `{name}` has dtype {}, expected {}",
                e.dtype,
                F::DTYPE
            )));
        }
        let raw = self.slice(e, F::BYTES)?;
        let values = raw.chunks_exact(F::BYTES).map(F::read_le).collect();
        Ok((e.shape.clone(), values))
    }

    pub fn get_u64(&self, name: &str) -> Result<Vec<u64>> {
        let e = self.entry(name)?;
        if e.dtype != "u64" {
            return Err(Error::BadCheckpoint(format!("tensor `{name}` is not u64")));
        }
        let raw = self.slice(e, 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn slice(&self, e: &TensorEntry, width: usize) -> Result<&[u8]> {
        let end = e.offset + e.len * width;
        self.payload
            .get(e.offset..end)
            .ok_or_else(|| Error::BadCheckpoint(format!("tensor `{}` exceeds payload", e.name)))
    }

    /// Overwrite every parameter of `store` from `prefix/<name>` entries.
    pub fn load_store<F: Real>(&self, prefix: &str, store: &mut ParamStore<F>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = format!("{prefix}/{}", store.name(id));
            let (shape, data) = self.get_real::<F>(&name)?;
            if shape.len() != 2 {
                return Err(Error::BadCheckpoint(format!("tensor `{name}` is not 2-D")));
            }
            store.set(id, Tensor::from_vec(shape[0], shape[1], data)?)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::with_capacity(20 + manifest.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::BadCheckpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::CheckpointVersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let manifest_bytes = bytes
            .get(20..20 + len)
            .ok_or_else(|| Error::BadCheckpoint("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(manifest_bytes)?;
        if manifest.version != version {
            return Err(Error::CheckpointVersionMismatch {
                found: manifest.version,
                expected: VERSION,
            });
        }
        Ok(Self {
            manifest,
            payload: bytes[20 + len..].to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            a in prop::collection::vec(any::<f32>(), 0..64),
            b in prop::collection::vec(any::<f64>(), 1..64),
            c in prop::collection::vec(any::<u64>(), 0..8),
        ) {
            let mut ar = Archive::new(serde_json::json!({"kind": "test"}));
            ar.put_real("a", vec![a.len()], &a);
            ar.put_real("b", vec![1, b.len()], &b);
            ar.put_u64("c", &c);
            let bytes = ar.to_bytes().unwrap();
            let back = Archive::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
            let (_, a2) = back.get_real::<f32>("a").unwrap();
            prop_assert!(a.iter().zip(&a2).all(|(x, y)| x.to_bits() == y.to_bits()));
            let (_, b2) = back.get_real::<f64>("b").unwrap();
            prop_assert!(b.iter().zip(&b2).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert_eq!(back.get_u64("c").unwrap(), c);
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let ar = Archive::new(Value::Null);
        let mut bytes = ar.to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Archive::from_bytes(&bytes),
            Err(Error::CheckpointVersionMismatch { found: 7, .. })
        ));
    }

    #[test]
    fn dtype_mismatch_is_an_error() {
        let mut ar = Archive::new(Value::Null);
        ar.put_real::<f32>("w", vec![1], &[1.0]);
        assert!(ar.get_real::<f64>("w").is_err());
    }
}
