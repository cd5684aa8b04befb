//! Binary tensor container used for datasets, rollouts and checkpoints.
//!
//! Layout (little-endian): magic `SKDS`, `u16` version (1), `u8` dtype
//! (0 = f32, 1 = f64), `u8` rank, `rank × u64` extents, the row-major payload,
//! then a `u64` byte count followed by UTF-8 `key=value` lines.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

const MAGIC: &[u8; 4] = b"SKDS";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum SkdsError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not an SKDS container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u16),
    #[error("unknown dtype code {0}")]
    Dtype(u8),
    #[error("container truncated while reading {0}")]
    Truncated(&'static str),
    #[error("metadata is not valid UTF-8")]
    Utf8,
    #[error("metadata line without '=': {0:?}")]
    Metadata(String),
    #[error("payload of {got} values does not match extents {shape:?}")]
    Payload { shape: Vec<usize>, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub meta: Vec<(String, String)>,
}

impl Container {
    pub fn new(dtype: Dtype, shape: Vec<usize>, data: Vec<f64>) -> Result<Self, SkdsError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(SkdsError::Payload { shape, got: data.len() });
        }
        Ok(Container {
            dtype,
            shape,
            data,
            meta: Vec::new(),
        })
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn push_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.push((key.into(), value.to_string()));
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype.code());
        out.push(self.shape.len() as u8);
        for &e in &self.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        match self.dtype {
            Dtype::F32 => self.data.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            Dtype::F64 => self.data.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
        }
        let text: String = self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SkdsError> {
        let mut r = bytes;
        let mut take = |n: usize, what: &'static str| -> Result<&[u8], SkdsError> {
            if r.len() < n {
                return Err(SkdsError::Truncated(what));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(4, "magic")? != MAGIC {
            return Err(SkdsError::BadMagic);
        }
        let version = u16::from_le_bytes(take(2, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(SkdsError::Version(version));
        }
        let dtype = match take(1, "dtype")?[0] {
            0 => Dtype::F32,
            1 => Dtype::F64,
            other => return Err(SkdsError::Dtype(other)),
        };
        let rank = take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(8, "extents")?.try_into().unwrap()) as usize);
        }
        let count: usize = shape.iter().product();
        let data = match dtype {
            Dtype::F32 => take(4 * count, "payload")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64 => take(8 * count, "payload")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        let len = u64::from_le_bytes(take(8, "metadata length")?.try_into().unwrap()) as usize;
        let text = std::str::from_utf8(take(len, "metadata")?).map_err(|_| SkdsError::Utf8)?;
        let meta = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| SkdsError::Metadata(l.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Container { dtype, shape, data, meta })
    }

    pub fn write(&self, path: &Path) -> Result<(), SkdsError> {
        let io = |source| SkdsError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, SkdsError> {
        let io = |source| SkdsError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
        Container::from_bytes(&bytes)
    }
}
