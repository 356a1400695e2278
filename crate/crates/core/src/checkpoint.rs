//! Named-tensor archive used for checkpoints and backbone weights.
//!
//! Layout: `CIGANCKP`, u32 format version, u64 header length, a JSON header holding the
//! metadata block and the tensor manifest, then the raw little-endian tensor bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use cigan_autograd::{DType, Real, Shape, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CiganError, Result};

pub const MAGIC: &[u8; 8] = b"CIGANCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn shape(&self) -> Shape {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            StoredTensor::F32(_) => DType::F32,
            StoredTensor::F64(_) => DType::F64,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 4],
    pub dtype: String,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: Value,
    tensors: Vec<ManifestEntry>,
}

/// In-memory archive: a metadata document plus named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub metadata: Value,
    tensors: BTreeMap<String, StoredTensor>,
}

impl Archive {
    pub fn new(metadata: Value) -> Self {
        Archive {
            metadata,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert_f32(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.insert(name.into(), StoredTensor::F32(t));
    }

    pub fn insert_f64(&mut self, name: impl Into<String>, t: Tensor<f64>) {
        self.tensors.insert(name.into(), StoredTensor::F64(t));
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|k| k.as_str())
    }

    /// Tensor converted to f32 when stored at another precision.
    pub fn tensor_f32(&self, name: &str) -> Result<Tensor<f32>> {
        match self.lookup(name)? {
            StoredTensor::F32(t) => Ok(t.clone()),
            StoredTensor::F64(t) => Ok(t.cast()),
        }
    }

    pub fn tensor_f64(&self, name: &str) -> Result<Tensor<f64>> {
        match self.lookup(name)? {
            StoredTensor::F32(t) => Ok(t.cast()),
            StoredTensor::F64(t) => Ok(t.clone()),
        }
    }

    fn lookup(&self, name: &str) -> Result<&StoredTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| CiganError::Invalid(format!("archive has no tensor {name}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut data = Vec::new();
        let mut manifest = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let offset = data.len() as u64;
            match t {
                StoredTensor::F32(t) => write_data(t, &mut data),
                StoredTensor::F64(t) => write_data(t, &mut data),
            }
            manifest.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().dims(),
                dtype: t.dtype().as_str().to_owned(),
                offset,
                nbytes: data.len() as u64 - offset,
            });
        }
        let header = serde_json::to_vec(&Header {
            metadata: self.metadata.clone(),
            tensors: manifest,
        })
        .map_err(|e| CiganError::Invalid(format!("header serialization: {e}")))?;
        let mut out = Vec::with_capacity(20 + header.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = 20usize
            .checked_add(hlen)
            .filter(|&end| end <= bytes.len())
            .ok_or("truncated header")?;
        let header: Header =
            serde_json::from_slice(&bytes[20..body]).map_err(|e| format!("header: {e}"))?;
        let data = &bytes[body..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let dtype = DType::parse(&e.dtype).ok_or_else(|| format!("{}: unknown dtype {}", e.name, e.dtype))?;
            let shape = Shape(e.shape);
            let (start, len) = (e.offset as usize, e.nbytes as usize);
            if len != shape.numel() * dtype.size_of() {
                return Err(format!("{}: byte count {len} does not match {shape} {dtype}", e.name));
            }
            let chunk = data
                .get(start..start + len)
                .ok_or_else(|| format!("{}: data out of range", e.name))?;
            let t = match dtype {
                DType::F32 => StoredTensor::F32(read_data(shape, chunk)),
                DType::F64 => StoredTensor::F64(read_data(shape, chunk)),
            };
            tensors.insert(e.name, t);
        }
        Ok(Archive {
            metadata: header.metadata,
            tensors,
        })
    }

    /// Writes through a temporary file so a crash never leaves a half-written archive.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| CiganError::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| CiganError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CiganError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CiganError::io(path, e))
    }
}

pub fn read(path: &Path) -> Result<Archive> {
    let bytes = fs::read(path).map_err(|e| CiganError::io(path, e))?;
    Archive::from_bytes(&bytes).map_err(|message| CiganError::Checkpoint {
        path: path.to_owned(),
        message,
    })
}

fn write_data<T: Real>(t: &Tensor<T>, out: &mut Vec<u8>) {
    for &v in t.data() {
        v.write_le(out);
    }
}

fn read_data<T: Real>(shape: Shape, bytes: &[u8]) -> Tensor<T> {
    let n = T::DTYPE.size_of();
    let data = bytes.chunks_exact(n).map(T::read_le).collect();
    Tensor::from_vec(shape, data).expect("length checked by caller")
}
