//! IDX (MNIST-family) reader and writer. Files may be gzip-compressed.

use std::fs;
use std::io::{self, Read};
use std::path::Path;

use flate2::read::GzDecoder;

use super::{Image, Origin, Sample};
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads a file, transparently inflating it when it starts with the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn truncated(what: &str) -> Error {
    Error::Io(io::Error::new(
        io::ErrorKind::UnexpectedEof,
        format!("truncated IDX {what}"),
    ))
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| truncated(what))
}

/// Parses an IDX image file into `(rows, cols, per-image byte slices)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<&[u8]>)> {
    let magic = be_u32(bytes, 0, "image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4, "image header")? as usize;
    let rows = be_u32(bytes, 8, "image header")? as usize;
    let cols = be_u32(bytes, 12, "image header")? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * size {
        return Err(truncated("image data"));
    }
    let images = (0..count).map(|i| &body[i * size..(i + 1) * size]).collect();
    Ok((rows, cols, images))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4, "label header")? as usize;
    bytes.get(8..8 + count).ok_or_else(|| truncated("label data"))
}

fn to_image(rows: usize, cols: usize, raw: &[u8]) -> Image {
    Image::from_clamped(rows, cols, 1, raw.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Loads a labeled IDX image/label pair. Ids are assigned in file order.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let image_bytes = read_maybe_gz(images_path.as_ref())?;
    let label_bytes = read_maybe_gz(labels_path.as_ref())?;
    let (rows, cols, images) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if images.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    Ok(images
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(id, (raw, &label))| Sample {
            id,
            image: to_image(rows, cols, raw),
            label: Some(label as usize),
            origin: Origin::InDist,
        })
        .collect())
}

/// Loads an unlabeled IDX image file, tagging every sample with `origin`.
pub fn load_idx_images(images_path: impl AsRef<Path>, origin: Origin) -> Result<Vec<Sample>> {
    let image_bytes = read_maybe_gz(images_path.as_ref())?;
    let (rows, cols, images) = parse_idx_images(&image_bytes)?;
    Ok(images
        .into_iter()
        .enumerate()
        .map(|(id, raw)| Sample {
            id,
            image: to_image(rows, cols, raw),
            label: None,
            origin: origin.clone(),
        })
        .collect())
}

fn to_byte(p: f64) -> u8 {
    (p * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Serializes single-channel samples back to IDX image bytes.
pub fn write_idx_images(samples: &[Sample]) -> Result<Vec<u8>> {
    let (rows, cols) = match samples.first() {
        Some(s) => (s.image.height(), s.image.width()),
        None => (0, 0),
    };
    let mut out = Vec::with_capacity(16 + samples.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for s in samples {
        if s.image.shape() != (rows, cols, 1) {
            return Err(Error::Consistency(format!(
                "sample {} has shape {:?}, IDX needs {rows}x{cols}x1",
                s.id,
                s.image.shape()
            )));
        }
        out.extend(s.image.pixels().iter().map(|&p| to_byte(p)));
    }
    Ok(out)
}

pub fn write_idx_labels(samples: &[Sample]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + samples.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    for s in samples {
        let label = s
            .label
            .filter(|&l| l <= u8::MAX as usize)
            .ok_or_else(|| Error::Consistency(format!("sample {} has no byte label", s.id)))?;
        out.push(label as u8);
    }
    Ok(out)
}
