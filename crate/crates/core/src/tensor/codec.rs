//! `DBT1` binary tensor container: magic, `u32` rank, `u32` dims, then the
//! little-endian `f64` payload. Checkpoints are several of these back to back.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"DBT1";

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn write_tensors<W: Write>(w: &mut W, ts: &[&Tensor]) -> std::io::Result<()> {
    for t in ts {
        write_tensor(w, t)?;
    }
    Ok(())
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: "<tensor stream>".into(),
        location: format!("byte {offset}"),
        message: message.into(),
    }
}

/// Reads one tensor from `bytes[*pos..]`, advancing `pos`.
fn read_one(bytes: &[u8], pos: &mut usize) -> Result<Tensor> {
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(*pos..*pos + n)
            .ok_or_else(|| parse_err(*pos, "truncated tensor"))?;
        *pos += n;
        Ok(s)
    };
    let start = *pos;
    if take(pos, 4)? != TENSOR_MAGIC {
        return Err(parse_err(start, "bad magic, expected DBT1"));
    }
    let rank = u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()) as usize;
    if rank > 8 {
        return Err(parse_err(start + 4, format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()) as usize);
    }
    let count: usize = shape.iter().product();
    let payload = take(pos, count * 8)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io("<tensor stream>", e))?;
    let mut pos = 0;
    read_one(&bytes, &mut pos)
}

/// Reads tensors until the stream is exhausted.
pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<Tensor>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io("<tensor stream>", e))?;
    let mut pos = 0;
    let mut out = Vec::new();
    while pos < bytes.len() {
        out.push(read_one(&bytes, &mut pos)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::from_rows(&[[1.5, -2.0]]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"DBT1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(&buf[16..24], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 32);
        assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn truncated_and_bad_magic_fail() {
        let t = Tensor::row(&[1.0, 2.0, 3.0]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert!(read_tensor(&mut &buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }
}
