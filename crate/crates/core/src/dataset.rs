//! In-memory multi-view sequence: cameras, frames, and per-view label maps.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image::{Image, LabelMap};

/// Initialization point with an optional evaluation label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedPoint {
    pub position: Vec3,
    pub color: [f64; 3],
    /// Canonical instance id, when known; only used for evaluation.
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_instances: usize,
    pub cameras: Vec<Camera>,
    /// `frames[v][t]`.
    pub frames: Vec<Vec<Image>>,
    /// `labels[v][t]`, each in that view's own label space.
    pub labels: Vec<Vec<LabelMap>>,
    pub seed_points: Vec<SeedPoint>,
    /// Canonical labels whose Gaussians get no motion bases.
    pub static_labels: Vec<u8>,
    /// Views held out from training.
    pub test_views: Vec<usize>,
    pub reference_view: usize,
}

/// Held-out views: every 7th view (6, 13, ...).
pub fn default_test_views(views: usize) -> Vec<usize> {
    (0..views).filter(|v| (v + 1) % 7 == 0).collect()
}

impl Dataset {
    pub fn views(&self) -> usize {
        self.cameras.len()
    }

    pub fn timesteps(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }

    pub fn training_views(&self) -> Vec<usize> {
        (0..self.views())
            .filter(|v| !self.test_views.contains(v))
            .collect()
    }

    /// Views to evaluate on; all views when none are held out.
    pub fn evaluation_views(&self) -> Vec<usize> {
        if self.test_views.is_empty() {
            (0..self.views()).collect()
        } else {
            self.test_views.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.views();
        if v == 0 {
            return Err(Error::config("views", "dataset has no views"));
        }
        if self.num_instances == 0 || self.num_instances > crate::image::MAX_INSTANCES {
            return Err(Error::config("num_instances", "must lie in 1..=16"));
        }
        if self.frames.len() != v || self.labels.len() != v {
            return Err(Error::shape("frames and labels must cover every view"));
        }
        let t = self.timesteps();
        if t == 0 {
            return Err(Error::config("timesteps", "dataset has no frames"));
        }
        for (vi, cam) in self.cameras.iter().enumerate() {
            cam.validate()?;
            if self.frames[vi].len() != t || self.labels[vi].len() != t {
                return Err(Error::shape("every view needs the same number of frames"));
            }
            for (img, lab) in self.frames[vi].iter().zip(&self.labels[vi]) {
                if img.width != cam.width
                    || img.height != cam.height
                    || lab.width != cam.width
                    || lab.height != cam.height
                {
                    return Err(Error::shape("frame size differs from camera"));
                }
                lab.validate(self.num_instances)?;
            }
        }
        if self.reference_view >= v || self.test_views.contains(&self.reference_view) {
            return Err(Error::config("reference_view", "must be a training view"));
        }
        if self.test_views.iter().any(|&x| x >= v) {
            return Err(Error::config("test_views", "view index out of range"));
        }
        Ok(())
    }
}
