//! Named parameter storage and the `PVNN` checkpoint format.
//!
//! ```text
//! "PVNN" | version u32 | arch len u32 | arch utf8 | tensor count u32
//!   per tensor: name len u32 | name utf8 | kind u8 (0 weight, 1 buffer)
//!               | ndim u32 | dims u32... | f32 data
//! ```
//! Integers and floats are little-endian.

use std::fs;
use std::path::Path;

use pcvox_core::{Error, Result, Scalar};
use rand::Rng;
use sha2::{Digest, Sha256};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PVNN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Buffers (batch-norm running statistics) are saved but never trained.
    pub buffer: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Registers a tensor; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<T>, buffer: bool) -> ParamId {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape of {name}");
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, shape: shape.to_vec(), data, buffer });
        ParamId(self.params.len() as u32 - 1)
    }

    /// Uniform initialisation in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`.
    pub fn add_he_uniform<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> ParamId {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
        self.add(name, shape, data, false)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(|i| ParamId(i as u32))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0 as usize]
    }

    pub fn data(&self, id: ParamId) -> &[T] {
        &self.params[id.0 as usize].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.params[id.0 as usize].data
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i as u32), p))
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| !p.buffer).map(|p| p.data.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|&v| U::of(v.f64())).collect(),
                    buffer: p.buffer,
                })
                .collect(),
        }
    }

    pub fn to_checkpoint(&self, arch: &str) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, arch);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            put_str(&mut out, &p.name);
            out.push(p.buffer as u8);
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &p.data {
                out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint, returning its architecture descriptor and tensors.
    pub fn from_checkpoint(bytes: &[u8]) -> Result<(String, Self)> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Header("not a PVNN checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Header(format!("unsupported checkpoint version {version}")));
        }
        let arch = r.string()?;
        let n = r.u32()? as usize;
        let mut store = Self::new();
        for _ in 0..n {
            let name = r.string()?;
            let buffer = match r.take(1)?[0] {
                0 => false,
                1 => true,
                k => return Err(Error::Header(format!("bad tensor kind {k}"))),
            };
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(4).ok_or(Error::Truncated)?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect();
            if store.find(&name).is_some() {
                return Err(Error::Header(format!("duplicate tensor {name}")));
            }
            store.add(name, &shape, data, buffer);
        }
        if r.pos != bytes.len() {
            return Err(Error::Header("trailing bytes in checkpoint".into()));
        }
        Ok((arch, store))
    }

    /// Replaces every tensor's values from a checkpoint with the same
    /// architecture, names and shapes.
    pub fn load_checkpoint(&mut self, bytes: &[u8], arch: &str) -> Result<()> {
        let (got, other) = Self::from_checkpoint(bytes)?;
        if got != arch {
            return Err(Error::Config(format!("checkpoint architecture {got:?}, expected {arch:?}")));
        }
        if other.len() != self.len() {
            return Err(Error::Config("checkpoint tensor count differs".into()));
        }
        for (mine, theirs) in self.params.iter_mut().zip(other.params) {
            if mine.name != theirs.name || mine.shape != theirs.shape {
                return Err(Error::Config(format!(
                    "checkpoint tensor {} {:?} does not match {} {:?}",
                    theirs.name, theirs.shape, mine.name, mine.shape
                )));
            }
            mine.data = theirs.data;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, arch: &str) -> Result<()> {
        fs::write(path, self.to_checkpoint(arch))?;
        Ok(())
    }
}

/// First eight bytes of the SHA-256 of a checkpoint, little-endian.
pub fn checkpoint_hash(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
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
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Header("non-utf8 name".into()))
    }
}
