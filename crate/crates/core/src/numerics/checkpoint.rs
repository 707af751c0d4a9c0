//! Binary checkpoint: magic, JSON header, then named little-endian f64 arrays.
//!
//! Layout: `HSBCKPT\x01`, u32 header length, header bytes, u32 array count,
//! then per array: u16 name length, name, u8 rank, rank x u64 dims, data.

use std::io::{Read, Write};

use serde_json::Value;

use super::{NumericsError, ParamSet, Tensor};

const MAGIC: &[u8; 8] = b"HSBCKPT\x01";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Value,
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_params<P: ParamSet>(header: Value, params: &P) -> Self {
        let arrays = params.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
        Self { header, arrays }
    }

    pub fn array(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|a| a.0 == name).map(|a| &a.1)
    }
}

fn bad(msg: impl Into<String>) -> NumericsError {
    NumericsError::Checkpoint(msg.into())
}

fn io(e: std::io::Error) -> NumericsError {
    NumericsError::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<(), NumericsError> {
    let header = serde_json::to_vec(&ckpt.header).map_err(|e| bad(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(ckpt.arrays.len() as u32).to_le_bytes());
    for (name, t) in &ckpt.arrays {
        let name_len = u16::try_from(name.len()).map_err(|_| bad(format!("array name too long: {name}")))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.shape().len() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NumericsError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], NumericsError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, NumericsError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u32::from_le_bytes(c.array()?) as usize;
    let header: Value = serde_json::from_slice(c.take(hlen)?).map_err(|e| bad(format!("header: {e}")))?;
    let count = u32::from_le_bytes(c.array()?) as usize;
    let mut arrays = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let nlen = u16::from_le_bytes(c.array()?) as usize;
        let name = String::from_utf8(c.take(nlen)?.to_vec()).map_err(|_| bad("array name is not UTF-8"))?;
        let rank = c.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(c.array()?) as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflow"))?;
        let raw = c.take(n.checked_mul(8).ok_or_else(|| bad("shape overflow"))?)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8"))).collect();
        arrays.push((name, Tensor::from_vec(&shape, data)?));
    }
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint { header, arrays })
}
