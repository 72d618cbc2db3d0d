//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "SPCKPT\0\0"
//! version    u32 LE
//! meta_len   u32 LE, followed by meta_len bytes of UTF-8 JSON metadata
//! count      u32 LE
//! per parameter:
//!   name_len u32 LE, name bytes (UTF-8)
//!   ndim     u32 LE, ndim × u64 LE extents
//!   values   product(extents) × f64 LE, row-major
//! ```

use std::io::{Read, Write};

use super::tensor::Tensor;
use super::NnError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub struct Checkpoint {
    pub metadata: String,
    pub params: Vec<(String, Tensor)>,
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    metadata: &str,
    params: &[(String, Tensor)],
) -> Result<(), NnError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    write_bytes(&mut w, metadata.as_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params {
        write_bytes(&mut w, name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> Result<(), NnError> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R) -> Result<String, NnError> {
    let len = read_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| NnError::Checkpoint(format!("invalid UTF-8: {e}")))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let metadata = read_string(&mut r)?;
    let count = read_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string(&mut r)?;
        let ndim = read_u32(&mut r)? as usize;
        let shape = (0..ndim)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push((name, Tensor::new(shape, data)?));
    }
    Ok(Checkpoint { metadata, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let params = vec![
            ("a".to_string(), Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, 0.0]).unwrap()),
            ("b.bias".to_string(), Tensor::row_vector(vec![f64::MIN_POSITIVE])),
        ];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "{\"k\":1}", &params).unwrap();
        let ck = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(ck.metadata, "{\"k\":1}");
        assert_eq!(ck.params, params);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        assert!(read_checkpoint(&b"NOTACKPT0000"[..]).is_err());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "", &[]).unwrap();
        buf[8] = 99;
        match read_checkpoint(&buf[..]) {
            Err(NnError::Checkpoint(m)) => assert!(m.contains("version 99")),
            other => panic!("{:?}", other.err()),
        }
    }
}
