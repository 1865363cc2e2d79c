//! Named-tensor checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "DNCFCKPT"
//! version   u32      1
//! count     u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rank     u32, dims (rank × u64)
//!   payload  product(dims) × f64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DNCFCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_documented_one() {
        let c = Checkpoint {
            tensors: vec![NamedTensor {
                name: "ab".into(),
                dims: vec![1],
                data: vec![1.5],
            }],
        };
        let b = c.to_bytes();
        assert_eq!(&b[..8], b"DNCFCKPT");
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..20], &2u32.to_le_bytes());
        assert_eq!(&b[20..22], b"ab");
        assert_eq!(&b[22..26], &1u32.to_le_bytes());
        assert_eq!(&b[26..34], &1u64.to_le_bytes());
        assert_eq!(&b[34..42], &1.5f64.to_le_bytes());
        assert_eq!(b.len(), 42);
    }

    #[test]
    fn corrupt_inputs() {
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
        let mut b = Checkpoint::default().to_bytes();
        b.push(0);
        assert!(Checkpoint::from_bytes(&b).is_err());
        let b = Checkpoint {
            tensors: vec![NamedTensor {
                name: "x".into(),
                dims: vec![2],
                data: vec![1.0, 2.0],
            }],
        }
        .to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn bitwise_round_trip(
            rows in 0usize..4,
            cols in 1usize..4,
            bits in prop::collection::vec(any::<u64>(), 16),
            name in "[a-z._0-9]{1,12}",
        ) {
            // arbitrary bit patterns, including NaN payloads and signed zeros
            let data: Vec<f64> = bits.iter().take(rows * cols).map(|&b| f64::from_bits(b)).collect();
            let c = Checkpoint { tensors: vec![
                NamedTensor { name: name.clone(), dims: vec![rows, cols], data },
                NamedTensor { name: format!("{name}.b"), dims: vec![], data: vec![f64::from_bits(bits[15])] },
            ]};
            let bytes = c.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            for (a, b) in back.tensors.iter().zip(&c.tensors) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.dims, &b.dims);
                let (x, y): (Vec<u64>, Vec<u64>) = (a.data.iter().map(|v| v.to_bits()).collect(), b.data.iter().map(|v| v.to_bits()).collect());
                prop_assert_eq!(x, y);
            }
        }
    }
}
