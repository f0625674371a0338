//! Flat binary checkpoint of named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "RFLWCKPT"
//! version  u32      1
//! width    u32      4 or 8 (bytes per stored float)
//! count    u64
//! count × { name_len u64, name bytes, rank u64, extents u64 × rank, values }
//! meta_len u64, meta bytes (UTF-8 "key=value" lines)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::Tensor;
use crate::binio::{put_string, put_u32, put_u64, ByteReader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RFLWCKPT";
const VERSION: u32 = 1;
const MAX_NAME: usize = 4096;
const MAX_META: usize = 1 << 20;
const MAX_RANK: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FloatWidth {
    F32,
    #[default]
    F64,
}

impl FloatWidth {
    pub fn bytes(self) -> u32 {
        match self {
            FloatWidth::F32 => 4,
            FloatWidth::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint, width: FloatWidth) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, width.bytes())?;
    put_u64(w, ckpt.tensors.len() as u64)?;
    for (name, t) in &ckpt.tensors {
        put_string(w, name)?;
        put_u64(w, t.rank() as u64)?;
        for &e in t.shape() {
            put_u64(w, e as u64)?;
        }
        let mut buf = Vec::with_capacity(t.len() * width.bytes() as usize);
        for &v in t.data() {
            match width {
                FloatWidth::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
                FloatWidth::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
        w.write_all(&buf)?;
    }
    let mut meta = String::new();
    for (k, v) in &ckpt.metadata {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::invalid(format!(
                "metadata entry {k:?} not representable"
            )));
        }
        meta.push_str(k);
        meta.push('=');
        meta.push_str(v);
        meta.push('\n');
    }
    put_string(w, &meta)?;
    Ok(())
}

pub fn read_checkpoint(r: impl Read) -> Result<Checkpoint> {
    let mut r = ByteReader::new(r);
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return r.fail(format!("unsupported checkpoint version {version}"));
    }
    let width = match r.u32()? {
        4 => FloatWidth::F32,
        8 => FloatWidth::F64,
        other => return r.fail(format!("unsupported float width {other}")),
    };
    let count = r.u64()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name = r.string(MAX_NAME)?;
        let rank = r.u64()?;
        if rank > MAX_RANK {
            return r.fail(format!("rank {rank} of tensor {name} too large"));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&n| n <= 1 << 32);
        let Some(n) = n else {
            return r.fail(format!("tensor {name} has implausible shape {shape:?}"));
        };
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(match width {
                FloatWidth::F32 => r.f32()? as f64,
                FloatWidth::F64 => r.f64()?,
            });
        }
        tensors.push((name, Tensor::new(shape, data)?));
    }
    let at = r.offset();
    let meta = r.string(MAX_META)?;
    let mut metadata = BTreeMap::new();
    for line in meta.lines() {
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Format {
                offset: at,
                msg: format!("malformed metadata line {line:?}"),
            });
        };
        metadata.insert(k.to_string(), v.to_string());
    }
    r.expect_end()?;
    Ok(Checkpoint { tensors, metadata })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut metadata = BTreeMap::new();
        metadata.insert("stage".into(), "1-RF".into());
        Checkpoint {
            tensors: vec![
                (
                    "w".into(),
                    Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.25, 0.0, 1e-3]).unwrap(),
                ),
                ("b".into(), Tensor::from_vec(vec![7.0])),
            ],
            metadata,
        }
    }

    #[test]
    fn f64_roundtrip_is_exact() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample(), FloatWidth::F64).unwrap();
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample(), FloatWidth::F32).unwrap();
        assert_eq!(&buf[..8], b"RFLWCKPT");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 2);
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.tensor("w").unwrap().data()[5], 1e-3f32 as f64);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample(), FloatWidth::F64).unwrap();
        buf.truncate(40);
        match read_checkpoint(buf.as_slice()) {
            Err(Error::Format { offset, .. }) => assert!(offset <= 40),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample(), FloatWidth::F64).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            read_checkpoint(buf.as_slice()),
            Err(Error::Format { offset: 0, .. })
        ));
    }
}
