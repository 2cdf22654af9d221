//! Single-file checkpoints: an 8-byte little-endian manifest length, the JSON
//! manifest, then every tensor as raw little-endian f64 in manifest order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{NnError, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Hyperparameters and network specs.
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset };
                offset += t.len();
                e
            })
            .collect();
        let manifest = Manifest { format_version: CHECKPOINT_FORMAT_VERSION, meta: self.meta.clone(), tensors };
        let json = serde_json::to_vec(&manifest)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(offset * 8);
        for (_, t) in &self.tensors {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 30 {
            return Err(NnError::Checkpoint(format!("implausible manifest length {len}")));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let manifest: Manifest = serde_json::from_slice(&json)?;
        if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {}", manifest.format_version)));
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if payload.len() % 8 != 0 {
            return Err(NnError::Checkpoint("payload is not a whole number of f64 values".into()));
        }
        let mut expected = 0;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset != expected || e.offset + n > values.len() {
                return Err(NnError::Checkpoint(format!("tensor {} lies outside the payload", e.name)));
            }
            expected += n;
            tensors.push((e.name, Tensor::new(e.shape, values[e.offset..e.offset + n].to_vec())?));
        }
        if expected != values.len() {
            return Err(NnError::Checkpoint("payload has trailing values".into()));
        }
        Ok(Checkpoint { meta: manifest.meta, tensors })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let ck = Checkpoint {
            meta: serde_json::json!({"step": 3, "spec": {"base": 8}}),
            tensors: vec![
                ("a".into(), Tensor::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap()),
                ("b".into(), Tensor::scalar(std::f64::consts::PI)),
            ],
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.meta, ck.meta);
        for ((na, ta), (nb, tb)) in ck.tensors.iter().zip(&back.tensors) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            assert!(ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let len = u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize;
        assert_eq!(buf.len(), 8 + len + 5 * 8);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let ck = Checkpoint { meta: serde_json::Value::Null, tensors: vec![("a".into(), Tensor::zeros(&[4]))] };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 8);
        assert!(Checkpoint::read_from(buf.as_slice()).is_err());
    }
}
