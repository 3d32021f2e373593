//! The Gaussian set: appearance, identity features, and per-timestep poses.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Quat, Vec3};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

/// Means and rotations of every Gaussian at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub means: Vec<Vec3>,
    pub rotations: Vec<Quat>,
}

/// Gaussians in structure-of-arrays form.
///
/// Opacity is stored as a logit and scale as a log so that `o ∈ (0, 1)` and
/// `s > 0` hold for any parameter value. `frames[0]` holds the canonical
/// pose; later frames are appended as the sequence is optimized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSet {
    pub feature_dim: usize,
    /// Instance count `K`; a label equal to `K` means unassigned/static.
    pub num_instances: usize,
    pub colors: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub log_scales: Vec<[f64; 3]>,
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
    pub frames: Vec<Frame>,
}

impl GaussianSet {
    pub fn new(feature_dim: usize, num_instances: usize) -> Self {
        GaussianSet {
            feature_dim,
            num_instances,
            colors: Vec::new(),
            opacity_logits: Vec::new(),
            log_scales: Vec::new(),
            features: Vec::new(),
            labels: Vec::new(),
            frames: vec![Frame {
                means: Vec::new(),
                rotations: Vec::new(),
            }],
        }
    }

    pub fn unassigned(&self) -> u8 {
        self.num_instances as u8
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        mean: Vec3,
        rotation: Quat,
        scale: [f64; 3],
        opacity: f64,
        color: [f64; 3],
        feature: &[f64],
        label: u8,
    ) -> Result<()> {
        if self.frames.len() != 1 {
            return Err(Error::shape(
                "gaussians can only be added before timesteps are materialized",
            ));
        }
        if feature.len() != self.feature_dim {
            return Err(Error::shape("feature length differs from feature_dim"));
        }
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Degenerate("non-positive gaussian scale".into()));
        }
        self.colors.push(color);
        self.opacity_logits.push(logit(opacity));
        self.log_scales
            .push([scale[0].ln(), scale[1].ln(), scale[2].ln()]);
        self.features.extend_from_slice(feature);
        self.labels.push(label);
        self.frames[0].means.push(mean);
        self.frames[0].rotations.push(rotation.normalized());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn timesteps(&self) -> usize {
        self.frames.len()
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn scale(&self, i: usize) -> [f64; 3] {
        let l = self.log_scales[i];
        [l[0].exp(), l[1].exp(), l[2].exp()]
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn feature_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.feature_dim;
        &mut self.features[i * c..(i + 1) * c]
    }

    pub fn mean(&self, t: usize, i: usize) -> Vec3 {
        self.frames[t].means[i]
    }

    pub fn rotation(&self, t: usize, i: usize) -> Quat {
        self.frames[t].rotations[i]
    }

    pub fn is_assigned(&self, i: usize) -> bool {
        (self.labels[i] as usize) < self.num_instances
    }

    /// Appends a frame copied from the last one.
    pub fn push_frame_copy(&mut self) {
        let last = self.frames.last().cloned().expect("frame 0 always exists");
        self.frames.push(last);
    }

    /// Truncates to the first `n` timesteps (at least one).
    pub fn truncate_frames(&mut self, n: usize) {
        self.frames.truncate(n.max(1));
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let ok = self.opacity_logits.len() == n
            && self.log_scales.len() == n
            && self.labels.len() == n
            && self.features.len() == n * self.feature_dim
            && self
                .frames
                .iter()
                .all(|f| f.means.len() == n && f.rotations.len() == n);
        if !ok {
            return Err(Error::shape("gaussian attribute arrays disagree in length"));
        }
        if self.labels.iter().any(|&l| l as usize > self.num_instances) {
            return Err(Error::shape("gaussian label exceeds the instance count"));
        }
        Ok(())
    }

    /// Axis-aligned bounding box diagonal of the canonical means.
    pub fn diameter(&self) -> f64 {
        bbox_diagonal(&self.frames[0].means)
    }
}

pub fn bbox_diagonal(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    (hi - lo).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reparameterizations_hold_constraints() {
        for x in [-800.0, -20.0, 0.0, 3.0, 800.0] {
            let o = sigmoid(x);
            assert!((0.0..=1.0).contains(&o) && o.is_finite());
        }
        assert!((sigmoid(logit(0.3)) - 0.3).abs() < 1e-12);
        let mut g = GaussianSet::new(2, 1);
        g.push(
            Vec3::ZERO,
            Quat::IDENTITY,
            [0.1, 0.2, 0.3],
            0.7,
            [1.0, 0.0, 0.0],
            &[0.0, 1.0],
            0,
        )
        .unwrap();
        g.log_scales[0][0] = -50.0;
        assert!(g.scale(0)[0] > 0.0);
        assert!((g.opacity(0) - 0.7).abs() < 1e-12);
        assert!(g
            .push(
                Vec3::ZERO,
                Quat::IDENTITY,
                [0.0, 0.2, 0.3],
                0.7,
                [1.0; 3],
                &[0.0, 1.0],
                0
            )
            .is_err());
    }

    #[test]
    fn frames_grow() {
        let mut g = GaussianSet::new(1, 1);
        g.push(
            Vec3::ZERO,
            Quat::IDENTITY,
            [0.1; 3],
            0.5,
            [0.5; 3],
            &[0.0],
            0,
        )
        .unwrap();
        g.push_frame_copy();
        g.push_frame_copy();
        assert_eq!(g.timesteps(), 3);
        assert!(g.validate().is_ok());
        assert!(g
            .push(
                Vec3::ZERO,
                Quat::IDENTITY,
                [0.1; 3],
                0.5,
                [0.5; 3],
                &[0.0],
                0
            )
            .is_err());
    }
}
