//! Samples, dataset ingestion and the labeled/unlabeled pool.

mod cifar;
mod idx;
mod pool;
mod synth;

pub use cifar::{load_cifar_binary, parse_cifar_records, CIFAR_RECORD_LEN};
pub use idx::{
    load_idx, load_idx_images, parse_idx_images, parse_idx_labels, read_maybe_gz, write_idx_images,
    write_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use pool::{inject_ood, make_splits, Annotation, OracleSim, Pool, SplitSizes, Splits};
pub use synth::{random_class_means, synth_blobs, synth_ood_blob};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a sample came from. Only in-distribution samples can be labeled.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    InDist,
    Ood(String),
}

impl Origin {
    pub fn is_in_dist(&self) -> bool {
        matches!(self, Origin::InDist)
    }
}

/// An H×W×C image with values in `[0, 1]`, stored row-major in HWC order.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Consistency(format!(
                "image buffer has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(p) = data.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Consistency(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    /// Builds an image from a buffer, clamping every value into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width * channels, "image buffer size");
        for p in &mut data {
            *p = p.clamp(0.0, 1.0);
        }
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.data
    }

    /// Writes the image into `out` in channel-major (CHW) order, the layout
    /// the network consumes.
    pub fn write_chw(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.data.len());
        let plane = self.height * self.width;
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub image: Image,
    pub label: Option<usize>,
    pub origin: Origin,
}

/// Renumbers samples consecutively starting at `start`.
pub fn assign_ids(samples: &mut [Sample], start: usize) {
    for (i, s) in samples.iter_mut().enumerate() {
        s.id = start + i;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range_pixels() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 2, 1, vec![0.5]).is_err());
        assert!(Image::new(1, 2, 1, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn chw_layout() {
        // 1x2 RGB: pixel0 = (1,2,3)/10, pixel1 = (4,5,6)/10
        let img = Image::new(1, 2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let mut out = vec![0.0; 6];
        img.write_chw(&mut out);
        assert_eq!(out, vec![0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
    }
}
