//! Parameter checkpoint files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "DALBTPRM"
//! version    u32      1
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (u64 × ndim)
//!   data     f64 × prod(dims), row-major
//! ```

use std::fs;
use std::path::Path;

use super::{ArchSpec, NamedTensor, Network};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DALBTPRM";
pub const VERSION: u32 = 1;

pub fn encode(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a parameter checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(NamedTensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(&net.named_tensors()))?;
    Ok(())
}

/// Loads parameters into a network built from `arch`; names and shapes must match.
pub fn load(arch: &ArchSpec, path: impl AsRef<Path>) -> Result<Network> {
    let tensors = decode(&fs::read(path)?)?;
    let mut net = Network::init(arch, 0)?;
    let expected = net.named_tensors();
    if expected.len() != tensors.len() {
        return Err(Error::Consistency(format!(
            "checkpoint has {} tensors, architecture needs {}",
            tensors.len(),
            expected.len()
        )));
    }
    let mut flat = Vec::with_capacity(net.num_params());
    for (e, t) in expected.iter().zip(&tensors) {
        if e.name != t.name || e.shape != t.shape {
            return Err(Error::Consistency(format!(
                "checkpoint tensor {} {:?} does not match {} {:?}",
                t.name, t.shape, e.name, e.shape
            )));
        }
        flat.extend_from_slice(&t.data);
    }
    net.set_flat_params(&flat)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_and_load() {
        let arch = ArchSpec::small_conv((16, 16, 1), 6, 5, 4, 3);
        let net = Network::init(&arch, 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save(&net, &path).unwrap();
        let back = load(&arch, &path).unwrap();
        assert_eq!(back.flat_params(), net.flat_params());

        let other = ArchSpec::mlp((1, 1, 4), 3, 2, 0, 0, 2);
        assert!(load(&other, &path).is_err());
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&[NamedTensor {
            name: "w".into(),
            shape: vec![2],
            data: vec![1.0, -2.5],
        }]);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 4 + 4 + 4 + 1 + 4 + 8 + 16);
        assert_eq!(&bytes[bytes.len() - 8..], &(-2.5f64).to_le_bytes());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
