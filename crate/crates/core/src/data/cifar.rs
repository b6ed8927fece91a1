//! CIFAR-10 binary batches: 3073-byte records, label byte then R, G, B planes.

use std::fs;
use std::path::Path;

use super::{Image, Origin, Sample};
use crate::error::{Error, Result};

pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 1024;

/// Decodes records from one batch; ids continue from `first_id`.
pub fn parse_cifar_records(bytes: &[u8], first_id: usize) -> Result<Vec<Sample>> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::Format(format!(
            "CIFAR batch of {} bytes is not a multiple of {CIFAR_RECORD_LEN}",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(CIFAR_RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            let planes = &rec[1..];
            let mut data = vec![0.0; 3072];
            for p in 0..1024 {
                for c in 0..3 {
                    data[p * 3 + c] = planes[c * 1024 + p] as f64 / 255.0;
                }
            }
            Sample {
                id: first_id + i,
                image: Image::from_clamped(32, 32, 3, data),
                label: Some(rec[0] as usize),
                origin: Origin::InDist,
            }
        })
        .collect())
}

pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for path in paths {
        let bytes = fs::read(path.as_ref())?;
        let batch = parse_cifar_records(&bytes, out.len())?;
        out.extend(batch);
    }
    Ok(out)
}
