//! `PVX1` bitstream container.
//!
//! ```text
//! "PVX1" | codec u8 | depth u8 | scale f32 | leaf count u64 | payload len u32
//!        | [codec 1 only: checkpoint hash u64 | coarse level count u8]
//!        | payload
//! ```
//! All multi-byte fields are little-endian.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PVX1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodecId {
    /// Context-modelled octree codec.
    Octree = 0,
    /// Learned surrogate entropy model.
    Surrogate = 1,
}

impl TryFrom<u8> for CodecId {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(CodecId::Octree),
            1 => Ok(CodecId::Surrogate),
            _ => Err(Error::Header(format!("unknown codec id {v}"))),
        }
    }
}

/// Header extension carried by surrogate-coded streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SurrogateExt {
    pub checkpoint_hash: u64,
    pub coarse_levels: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub codec: CodecId,
    pub depth: u8,
    pub scale: f32,
    pub point_count: u64,
    pub surrogate: Option<SurrogateExt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub header: Header,
    pub payload: Vec<u8>,
}

impl Bitstream {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        let len = u32::try_from(self.payload.len())
            .map_err(|_| Error::Header("payload exceeds 4 GiB".into()))?;
        let mut out = Vec::with_capacity(31 + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(h.codec as u8);
        out.push(h.depth);
        out.extend_from_slice(&h.scale.to_le_bytes());
        out.extend_from_slice(&h.point_count.to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        match (h.codec, h.surrogate) {
            (CodecId::Surrogate, Some(ext)) => {
                out.extend_from_slice(&ext.checkpoint_hash.to_le_bytes());
                out.push(ext.coarse_levels);
            }
            (CodecId::Octree, None) => {}
            _ => return Err(Error::Header("extension must be present iff codec is surrogate".into())),
        }
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Header("bad magic".into()));
        }
        let codec = CodecId::try_from(r.u8()?)?;
        let depth = r.u8()?;
        if !(1..=16).contains(&depth) {
            return Err(Error::Header(format!("depth {depth} outside 1..=16")));
        }
        let scale = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let point_count = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let surrogate = if codec == CodecId::Surrogate {
            let checkpoint_hash = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
            let coarse_levels = r.u8()?;
            Some(SurrogateExt { checkpoint_hash, coarse_levels })
        } else {
            None
        };
        let payload = r.take(len)?.to_vec();
        if r.pos != bytes.len() {
            return Err(Error::Header(format!(
                "{} trailing bytes after payload",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { header: Header { codec, depth, scale, point_count, surrogate }, payload })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Payload size in bits.
    pub fn payload_bits(&self) -> u64 {
        self.payload.len() as u64 * 8
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(codec: CodecId) -> Bitstream {
        Bitstream {
            header: Header {
                codec,
                depth: 10,
                scale: 0.25,
                point_count: 123_456,
                surrogate: (codec == CodecId::Surrogate)
                    .then_some(SurrogateExt { checkpoint_hash: 0xdead_beef_0102_0304, coarse_levels: 2 }),
            },
            payload: vec![1, 2, 3, 250],
        }
    }

    #[test]
    fn layout_is_bit_exact() {
        let bytes = sample(CodecId::Octree).to_bytes().unwrap();
        let mut expected = b"PVX1".to_vec();
        expected.extend_from_slice(&[0, 10]);
        expected.extend_from_slice(&0.25f32.to_le_bytes());
        expected.extend_from_slice(&123_456u64.to_le_bytes());
        expected.extend_from_slice(&4u32.to_le_bytes());
        expected.extend_from_slice(&[1, 2, 3, 250]);
        assert_eq!(bytes, expected);
        assert_eq!(Bitstream::from_bytes(&bytes).unwrap(), sample(CodecId::Octree));
    }

    #[test]
    fn surrogate_extension_round_trips() {
        let bs = sample(CodecId::Surrogate);
        let bytes = bs.to_bytes().unwrap();
        assert_eq!(bytes.len(), 22 + 9 + 4);
        assert_eq!(Bitstream::from_bytes(&bytes).unwrap(), bs);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Bitstream::from_bytes(b"PVX2").is_err());
        let mut bytes = sample(CodecId::Octree).to_bytes().unwrap();
        bytes.pop();
        assert!(matches!(Bitstream::from_bytes(&bytes), Err(Error::Truncated)));
        bytes[4] = 9;
        assert!(matches!(Bitstream::from_bytes(&bytes), Err(Error::Header(_))));
    }
}
