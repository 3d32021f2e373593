//! Dense per-pixel grids: RGB images, label maps and identity feature maps.
//!
//! All grids are row-major with channels interleaved per pixel.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value for pixels without an instance.
pub const SENTINEL_UNLABELED: u8 = 255;

/// Largest supported instance count, so labels fit in one byte below the
/// sentinel.
pub const MAX_INSTANCES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// `height * width * 3` values in `[0, 1]` once clamped.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Image::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape("image buffer does not match width*height*3"));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn clamp(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn clamped(mut self) -> Self {
        self.clamp();
        self
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Quantizes to 8 bits per channel, as written to disk.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8)
            .collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::shape("byte buffer does not match width*height*3"));
        }
        Ok(Image {
            width,
            height,
            data: bytes.iter().map(|b| *b as f64 / 255.0).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        LabelMap::filled(width, height, SENTINEL_UNLABELED)
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        LabelMap {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape("label buffer does not match width*height"));
        }
        Ok(LabelMap {
            width,
            height,
            labels,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn same_shape(&self, other: &LabelMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Checks every non-sentinel entry is below `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .find(|&&l| l != SENTINEL_UNLABELED && l as usize >= k)
        {
            Some(l) => Err(Error::config(
                "labels",
                alloc::format!("label {l} not below instance count {k}"),
            )),
            None => Ok(()),
        }
    }

    /// Instance ids present in the map.
    pub fn label_set(&self) -> BTreeSet<u8> {
        self.labels
            .iter()
            .copied()
            .filter(|&l| l != SENTINEL_UNLABELED)
            .collect()
    }

    /// Largest instance id plus one, or 0 for an unlabeled map.
    pub fn instance_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l != SENTINEL_UNLABELED)
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn labeled_pixels(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l != SENTINEL_UNLABELED)
            .count()
    }
}

/// Per-pixel identity features, `height * width * channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        FeatureMap {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_round_trip_clamps() {
        let img = Image::from_data(1, 1, vec![-0.5, 0.5, 2.0]).unwrap();
        let b = img.to_bytes();
        assert_eq!(b, vec![0, 128, 255]);
        let back = Image::from_bytes(1, 1, &b).unwrap();
        assert!(back.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn label_validation() {
        let m = LabelMap::from_labels(2, 1, vec![0, 3]).unwrap();
        assert!(m.validate(4).is_ok());
        assert!(m.validate(3).is_err());
        assert_eq!(m.instance_count(), 4);
        let m = LabelMap::new(3, 3);
        assert!(m.validate(1).is_ok());
        assert_eq!(m.labeled_pixels(), 0);
    }
}
