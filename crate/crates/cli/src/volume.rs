//! The `.dcev` volume format and its JSON sidecar.
//!
//! Layout, all little-endian: the magic `DCEV`, a u16 format version, a u8
//! dtype code (0 = f32, 1 = f64), a u8 dimension count, one u32 per
//! dimension, then the C-order payload. The sidecar shares the basename with
//! a `.json` extension.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dcepk_core::{AcqParams, TkModel};
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"DCEV";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: Vec<usize>,
    pub dtype: Dtype,
    pub units: String,
    #[serde(default)]
    pub model: Option<TkModel>,
    #[serde(default)]
    pub acq: Option<AcqParams>,
    /// Command-specific metadata.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

impl Sidecar {
    pub fn new(dtype: Dtype, units: impl Into<String>) -> Self {
        Sidecar { dims: Vec::new(), dtype, units: units.into(), model: None, acq: None, extra: serde_json::Value::Null }
    }

    pub fn with_model(mut self, model: TkModel) -> Self {
        self.model = Some(model);
        self
    }

    pub fn with_acq(mut self, acq: AcqParams) -> Self {
        self.acq = Some(acq);
        self
    }

    pub fn with_extra(mut self, extra: serde_json::Value) -> Self {
        self.extra = extra;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    /// Values widened to f64; f32 payloads convert exactly.
    pub data: ArrayD<f64>,
    pub sidecar: Sidecar,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Serialises the header and payload. f32 volumes round each value to the
/// nearest f32.
pub fn encode(data: &ArrayD<f64>, dtype: Dtype) -> Result<Vec<u8>> {
    if data.ndim() > u8::MAX as usize {
        return Err(CliError::config("too many dimensions for a volume file"));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * data.ndim() + data.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(data.ndim() as u8);
    for &d in data.shape() {
        let d = u32::try_from(d).map_err(|_| CliError::config(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in data.iter() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

/// Parses a volume payload; `what` names the source in error messages.
pub fn decode(bytes: &[u8], what: &str) -> Result<(ArrayD<f64>, Dtype)> {
    let bad = |msg: &str| CliError::config(format!("{what}: {msg}"));
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("not a DCEV volume"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let dtype = Dtype::from_code(bytes[6]).ok_or_else(|| bad(&format!("unknown dtype code {}", bytes[6])))?;
    let n_dims = bytes[7] as usize;
    let payload_start = HEADER_LEN + 4 * n_dims;
    if bytes.len() < payload_start {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = bytes[HEADER_LEN..payload_start]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n: usize = dims.iter().product();
    let payload = &bytes[payload_start..];
    if payload.len() != n * dtype.size() {
        return Err(bad(&format!("payload has {} bytes, dims {dims:?} need {}", payload.len(), n * dtype.size())));
    }
    let values: Vec<f64> = match dtype {
        Dtype::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect(),
        Dtype::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect(),
    };
    let data = ArrayD::from_shape_vec(IxDyn(&dims), values).map_err(|e| bad(&e.to_string()))?;
    Ok((data, dtype))
}

/// Writes `path` and its sidecar. The sidecar's dims and dtype are filled in.
pub fn write_volume(path: &Path, data: &ArrayD<f64>, sidecar: &Sidecar) -> Result<()> {
    let bytes = encode(data, sidecar.dtype)?;
    let mut meta = sidecar.clone();
    meta.dims = data.shape().to_vec();
    let json = serde_json::to_string_pretty(&meta).map_err(|e| CliError::config(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    let side = sidecar_path(path);
    let mut f = fs::File::create(&side).map_err(|e| CliError::io(&side, e))?;
    writeln!(f, "{json}").map_err(|e| CliError::io(&side, e))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let (data, dtype) = decode(&bytes, &path.display().to_string())?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| CliError::io(&side, e))?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", side.display())))?;
    if sidecar.dims != data.shape() || sidecar.dtype != dtype {
        return Err(CliError::config(format!(
            "{}: sidecar declares {:?} {:?}, payload is {:?} {:?}",
            side.display(),
            sidecar.dims,
            sidecar.dtype,
            data.shape(),
            dtype
        )));
    }
    Ok(Volume { data, sidecar })
}

impl Volume {
    pub fn into_2d(self, what: &str) -> Result<Array2<f64>> {
        let shape = self.data.shape().to_vec();
        self.data.into_dimensionality().map_err(|_| CliError::config(format!("{what}: expected 2-D, got {shape:?}")))
    }

    pub fn into_3d(self, what: &str) -> Result<Array3<f64>> {
        let shape = self.data.shape().to_vec();
        self.data.into_dimensionality().map_err(|_| CliError::config(format!("{what}: expected 3-D, got {shape:?}")))
    }
}

pub fn mask_to_f64(mask: &Array2<bool>) -> ArrayD<f64> {
    mask.mapv(|m| if m { 1.0 } else { 0.0 }).into_dyn()
}
