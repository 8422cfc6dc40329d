//! The `VSNT` tensor container used for checkpoints, feature files and
//! embedding dumps.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "VSNT" | version u16 | entry count u32
//! per entry:  name len u16 | name (UTF-8) | rank u8 | rank × dim u32 | dtype u8
//! then every entry's raw element data, concatenated in entry order
//! ```

use std::io::{self, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor_core::Tensor;

pub const MAGIC: &[u8; 4] = b"VSNT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorData {
    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.shape(),
            TensorData::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    /// Converts to the requested precision.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        match self {
            TensorData::F32(t) => t.cast(),
            TensorData::F64(t) => t.cast(),
        }
    }

    fn write_data(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F32(t) => t.data().iter().for_each(|&x| x.put_le(out)),
            TensorData::F64(t) => t.data().iter().for_each(|&x| x.put_le(out)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    entries: Vec<Entry>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Scalar>(&mut self, name: &str, tensor: &Tensor<T>) {
        let data = match T::DTYPE {
            DType::F32 => TensorData::F32(tensor.cast()),
            DType::F64 => TensorData::F64(tensor.cast()),
        };
        self.entries.push(Entry {
            name: name.to_string(),
            data,
        });
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("container has no entry named {name:?}")))
    }

    pub fn get<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        self.entry(name).map(|e| e.data.to_tensor())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.entries.len()).map_err(|_| Error::Format("too many entries".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("entry name too long: {}", e.name)))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            let shape = e.data.shape();
            let rank = u8::try_from(shape.len()).map_err(|_| Error::Format("rank exceeds 255".into()))?;
            out.push(rank);
            for &d in shape {
                let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.push(e.data.dtype() as u8);
        }
        for e in &self.entries {
            e.data.write_data(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}, expected \"VSNT\"", String::from_utf8_lossy(&magic))));
        }
        let version = read_u16(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut headers = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = read_u16(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
            let rank = read_u8(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r)? as usize);
            }
            let code = read_u8(&mut r)?;
            let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("unknown dtype code {code}")))?;
            headers.push((name, shape, dtype));
        }
        let mut entries = Vec::with_capacity(headers.len());
        for (name, shape, dtype) in headers {
            let n: usize = shape.iter().product();
            let nbytes = n
                .checked_mul(dtype.size())
                .ok_or_else(|| Error::Format(format!("entry {name:?} is too large")))?;
            if r.len() < nbytes {
                return Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    format!("container truncated inside entry {name:?}"),
                )
                .into());
            }
            let (blob, rest) = r.split_at(nbytes);
            r = rest;
            let data = match dtype {
                DType::F32 => TensorData::F32(Tensor::new(shape, decode(blob))?),
                DType::F64 => TensorData::F64(Tensor::new(shape, decode(blob))?),
            };
            entries.push(Entry { name, data });
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after last entry", r.len())));
        }
        Ok(Container { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::MissingFile {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn decode<T: Scalar>(blob: &[u8]) -> Vec<T> {
    blob.chunks_exact(T::DTYPE.size()).map(T::take_le).collect()
}

fn read_u8(r: &mut &[u8]) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u16(r: &mut &[u8]) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut &[u8]) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
