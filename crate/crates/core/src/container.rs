//! Versioned binary model file shared by every trained artifact.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RFSM" | u32 version | str kind | u64 vocab hash
//! u32 n_meta  { str key | str value }*
//! u32 n_tensors { str name | u8 dtype | u32 ndim | u64 dim* | data }*
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8. `dtype` 0 is f32, 1 is u32.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"RFSM";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    BadVersion(u32),
    #[error("expected a {expected:?} model, found {found:?}")]
    WrongKind { expected: String, found: String },
    #[error("model was built for vocabulary {expected:016x}, current vocabulary is {found:016x}")]
    VocabMismatch { expected: u64, found: u64 },
    #[error("truncated or corrupt model file: {0}")]
    Corrupt(String),
    #[error("missing {0:?} in model file")]
    Missing(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: TensorData::F32(data),
        }
    }

    pub fn u32(shape: Vec<usize>, data: Vec<u32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: TensorData::U32(data),
        }
    }

    /// f64 parameters narrowed to f32. Callers that need a lossless round
    /// trip keep their parameters f32-representable.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Self {
        Self::f32(shape, data.iter().map(|&v| v as f32).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub kind: String,
    pub vocab_hash: u64,
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelFile {
    pub fn new(kind: &str, vocab_hash: u64) -> Self {
        ModelFile {
            kind: kind.to_string(),
            vocab_hash,
            meta: BTreeMap::new(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta<T: std::str::FromStr>(&self, key: &str) -> Result<T, ContainerError> {
        self.meta
            .get(key)
            .ok_or_else(|| ContainerError::Missing(key.to_string()))?
            .parse()
            .map_err(|_| ContainerError::Corrupt(format!("metadata {key:?} does not parse")))
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        self.tensors.insert(name.to_string(), tensor);
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, ContainerError> {
        self.tensors
            .get(name)
            .ok_or_else(|| ContainerError::Missing(name.to_string()))
    }

    pub fn f32s(&self, name: &str) -> Result<&[f32], ContainerError> {
        match &self.tensor(name)?.data {
            TensorData::F32(v) => Ok(v),
            TensorData::U32(_) => Err(ContainerError::Corrupt(format!("{name:?} is not f32"))),
        }
    }

    pub fn u32s(&self, name: &str) -> Result<&[u32], ContainerError> {
        match &self.tensor(name)?.data {
            TensorData::U32(v) => Ok(v),
            TensorData::F32(_) => Err(ContainerError::Corrupt(format!("{name:?} is not u32"))),
        }
    }

    pub fn expect(&self, kind: &str, vocab_hash: u64) -> Result<(), ContainerError> {
        if self.kind != kind {
            return Err(ContainerError::WrongKind {
                expected: kind.to_string(),
                found: self.kind.clone(),
            });
        }
        if self.vocab_hash != vocab_hash {
            return Err(ContainerError::VocabMismatch {
                expected: self.vocab_hash,
                found: vocab_hash,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&self.vocab_hash.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.push(match t.data {
                TensorData::F32(_) => 0,
                TensorData::U32(_) => 1,
            });
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ContainerError::BadVersion(version));
        }
        let kind = r.string()?;
        let vocab_hash = r.u64()?;
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            meta.insert(k, r.string()?);
        }
        let mut tensors = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| ContainerError::Corrupt("tensor too large".into()))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| ContainerError::Corrupt("tensor too large".into()))?)?;
            let words = raw.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
            let data = match dtype {
                0 => TensorData::F32(words.map(f32::from_le_bytes).collect()),
                1 => TensorData::U32(words.map(u32::from_le_bytes).collect()),
                d => return Err(ContainerError::Corrupt(format!("unknown dtype {d}"))),
            };
            tensors.insert(name, Tensor { shape, data });
        }
        if r.pos != bytes.len() {
            return Err(ContainerError::Corrupt("trailing bytes".into()));
        }
        Ok(ModelFile {
            kind,
            vocab_hash,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        let io = |source| ContainerError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        let io = |source| ContainerError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io)?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ContainerError::Corrupt(format!("unexpected end at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ContainerError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| ContainerError::Corrupt("invalid UTF-8 string".into()))
    }
}
