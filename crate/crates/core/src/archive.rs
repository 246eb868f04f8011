//! Tensor archive: a plain-text manifest followed by raw little-endian data.
//!
//! Layout, byte for byte:
//!
//! ```text
//! MEANBA-TENSORS 1\n
//! <name>\t<dtype>\t<dim>,<dim>,...\n     one line per tensor, payload order
//! %%END%%\n
//! <payload>
//! ```
//!
//! * `dtype` is `f32` or `f64`.
//! * The dim list is comma separated decimal; an empty list denotes a scalar.
//! * Names are non-empty UTF-8 without tab, newline or carriage return and
//!   must be unique.
//! * The payload is every tensor's elements, little-endian, concatenated in
//!   manifest order with no padding. Its length must equal the sum of
//!   `dtype size × product(dims)` exactly.

use std::collections::HashSet;
use std::path::Path;

use crate::tensor::{DType, Real, Tensor3, Tensor4};
use crate::{Error, Result};

pub const MAGIC: &str = "MEANBA-TENSORS 1";
pub const SENTINEL: &str = "%%END%%";

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("trailing bytes after payload: expected {expected} bytes, found {found}")]
    TrailingData { expected: usize, found: usize },
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("invalid tensor name {0:?}")]
    InvalidName(String),
    #[error("tensor `{name}`: {reason}")]
    Mismatch { name: String, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Borrow as `T`, if the stored dtype is `T`.
    pub fn as_slice<T: Real>(&self) -> Option<&[T]> {
        let any: &dyn std::any::Any = match self {
            TensorData::F32(v) => v,
            TensorData::F64(v) => v,
        };
        any.downcast_ref::<Vec<T>>().map(Vec::as_slice)
    }

    pub fn from_vec<T: Real>(v: Vec<T>) -> Self {
        let any: Box<dyn std::any::Any> = Box::new(v);
        match any.downcast::<Vec<f32>>() {
            Ok(v) => TensorData::F32(*v),
            Err(any) => TensorData::F64(*any.downcast::<Vec<f64>>().expect("Real is f32 or f64")),
        }
    }

    /// Element values widened to `f64`.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

/// One archive entry.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(ArchiveError::Mismatch {
                name,
                reason: format!("shape {shape:?} needs {expected} elements, got {}", data.len()),
            }
            .into());
        }
        Ok(Self { name, shape, data })
    }

    pub fn from_vec<T: Real>(name: impl Into<String>, shape: Vec<usize>, v: Vec<T>) -> Result<Self> {
        Self::new(name, shape, TensorData::from_vec(v))
    }

    pub fn from_tensor3<T: Real>(name: impl Into<String>, t: &Tensor3<T>) -> Self {
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: TensorData::from_vec(t.data().to_vec()),
        }
    }

    pub fn from_tensor4<T: Real>(name: impl Into<String>, t: &Tensor4<T>) -> Self {
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: TensorData::from_vec(t.data().to_vec()),
        }
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    fn mismatch(&self, reason: impl Into<String>) -> Error {
        ArchiveError::Mismatch {
            name: self.name.clone(),
            reason: reason.into(),
        }
        .into()
    }

    /// Values as `T`, converting between `f32` and `f64` when needed.
    pub fn values<T: Real>(&self) -> Vec<T> {
        match self.data.as_slice::<T>() {
            Some(s) => s.to_vec(),
            None => self.data.to_f64_vec().into_iter().map(T::of).collect(),
        }
    }

    pub fn to_tensor3<T: Real>(&self) -> Result<Tensor3<T>> {
        let shape: [usize; 3] = self
            .shape
            .as_slice()
            .try_into()
            .map_err(|_| self.mismatch(format!("expected rank 3, got shape {:?}", self.shape)))?;
        Tensor3::new(self.values(), shape)
    }

    pub fn to_tensor4<T: Real>(&self) -> Result<Tensor4<T>> {
        let shape: [usize; 4] = self
            .shape
            .as_slice()
            .try_into()
            .map_err(|_| self.mismatch(format!("expected rank 4, got shape {:?}", self.shape)))?;
        Tensor4::new(self.values(), shape)
    }
}

/// Looks up a tensor by name.
pub fn find<'a>(set: &'a [NamedTensor], name: &str) -> Option<&'a NamedTensor> {
    set.iter().find(|t| t.name == name)
}

fn validate_name(name: &str) -> Result<(), ArchiveError> {
    if name.is_empty() || name == SENTINEL || name.contains(['\t', '\n', '\r']) {
        return Err(ArchiveError::InvalidName(name.to_string()));
    }
    Ok(())
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>, ArchiveError> {
    let mut seen = HashSet::new();
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    for t in tensors {
        validate_name(&t.name)?;
        if !seen.insert(t.name.as_str()) {
            return Err(ArchiveError::DuplicateName(t.name.clone()));
        }
        if t.data.len() != t.shape.iter().product::<usize>() {
            return Err(ArchiveError::Mismatch {
                name: t.name.clone(),
                reason: "element count does not match shape".into(),
            });
        }
        let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        header.push_str(&format!("{}\t{}\t{}\n", t.name, t.dtype(), dims.join(",")));
    }
    header.push_str(SENTINEL);
    header.push('\n');

    let mut out = header.into_bytes();
    for t in tensors {
        match &t.data {
            TensorData::F32(v) => f32::extend_le_bytes(v, &mut out),
            TensorData::F64(v) => f64::extend_le_bytes(v, &mut out),
        }
    }
    Ok(out)
}

struct Entry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
}

fn parse_entry(line: &str) -> Result<Entry, ArchiveError> {
    let bad = |why: &str| ArchiveError::MalformedManifest(format!("{why}: {line:?}"));
    let mut fields = line.split('\t');
    let (Some(name), Some(dtype), Some(dims), None) =
        (fields.next(), fields.next(), fields.next(), fields.next())
    else {
        return Err(bad("expected three tab-separated fields"));
    };
    validate_name(name)?;
    let dtype = match dtype {
        "f32" => DType::F32,
        "f64" => DType::F64,
        _ => return Err(bad("unknown dtype")),
    };
    let shape = if dims.is_empty() {
        Vec::new()
    } else {
        dims.split(',')
            .map(|d| d.parse::<usize>().map_err(|_| bad("bad dimension")))
            .collect::<Result<Vec<_>, _>>()?
    };
    Ok(Entry {
        name: name.to_string(),
        dtype,
        shape,
    })
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>, ArchiveError> {
    let mut pos = 0usize;
    let mut next_line = |what: &str| -> Result<&str, ArchiveError> {
        let rest = &bytes[pos..];
        let nl = rest.iter().position(|&c| c == b'\n').ok_or_else(|| {
            ArchiveError::MalformedManifest(format!("missing newline while reading {what}"))
        })?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| ArchiveError::MalformedManifest("manifest is not UTF-8".into()))?;
        pos += nl + 1;
        Ok(line)
    };

    if next_line("magic")? != MAGIC {
        return Err(ArchiveError::MalformedManifest("bad magic line".into()));
    }
    let mut entries = Vec::new();
    loop {
        let line = next_line("manifest")?;
        if line == SENTINEL {
            break;
        }
        entries.push(parse_entry(line)?);
    }

    let mut seen = HashSet::new();
    let mut expected = 0usize;
    for e in &entries {
        if !seen.insert(e.name.as_str()) {
            return Err(ArchiveError::DuplicateName(e.name.clone()));
        }
        let count = e
            .shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|c| c.checked_mul(e.dtype.size_bytes()))
            .ok_or_else(|| ArchiveError::MalformedManifest(format!("`{}` too large", e.name)))?;
        expected += count;
    }
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(ArchiveError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(ArchiveError::TrailingData {
            expected,
            found: payload.len(),
        });
    }

    let mut offset = 0;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let n: usize = e.shape.iter().product();
        let size = n * e.dtype.size_bytes();
        let raw = &payload[offset..offset + size];
        offset += size;
        let data = match e.dtype {
            DType::F32 => TensorData::F32(f32::from_le_bytes_slice(raw)),
            DType::F64 => TensorData::F64(f64::from_le_bytes_slice(raw)),
        };
        out.push(NamedTensor {
            name: e.name,
            shape: e.shape,
            data,
        });
    }
    Ok(out)
}

pub fn archive_write(tensors: &[NamedTensor], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn archive_read(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}
