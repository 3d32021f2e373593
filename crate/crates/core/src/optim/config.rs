use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scaffold::{RigidityWeights, ScaffoldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub means: f64,
    pub colors: f64,
    pub opacity: f64,
    pub scales: f64,
    pub rotations: f64,
    pub features: f64,
    pub decoder: f64,
    pub latent: f64,
    pub base_rotation: f64,
    pub base_translation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            means: 1e-3,
            colors: 1e-2,
            opacity: 2e-2,
            scales: 5e-3,
            rotations: 5e-3,
            features: 2e-2,
            decoder: 5e-3,
            latent: 5e-2,
            base_rotation: 2e-3,
            base_translation: 2e-3,
        }
    }
}

impl LearningRates {
    fn all(&self) -> [(&'static str, f64); 10] {
        [
            ("lr.means", self.means),
            ("lr.colors", self.colors),
            ("lr.opacity", self.opacity),
            ("lr.scales", self.scales),
            ("lr.rotations", self.rotations),
            ("lr.features", self.features),
            ("lr.decoder", self.decoder),
            ("lr.latent", self.latent),
            ("lr.base_rotation", self.base_rotation),
            ("lr.base_translation", self.base_translation),
        ]
    }
}

/// Runtime switches for each ablation axis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Use the raw latent as the soft permutation.
    pub no_sinkhorn: bool,
    pub no_track_masking: bool,
    /// Every training view supervises from the first step.
    pub no_progressive: bool,
    /// Attachment and base graph ignore instance labels.
    pub no_instance_grouping: bool,
    /// One base per dynamic Gaussian.
    pub no_motion_bases: bool,
    /// Hard permutation forward, soft gradient backward.
    pub straight_through: bool,
    /// Keep optimizing colors, opacity and scales during sequential tracking.
    pub finetune_appearance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_l1: f64,
    pub lambda_ssim: f64,
    pub lr: LearningRates,
    pub stage1_steps: u64,
    pub steps_per_timestep: u64,
    pub activation_threshold: f64,
    /// Steps between confidence checks.
    pub activation_interval: u64,
    pub bases_per_instance: usize,
    pub k_nn: usize,
    pub graph_knn: usize,
    pub rigidity: RigidityWeights,
    /// Initial feature standard deviation.
    pub feature_init: f64,
    /// Entries kept in the loss history.
    pub history_capacity: usize,
    pub seed: u64,
    pub ablations: Ablations,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_l1: 0.8,
            lambda_ssim: 0.2,
            lr: LearningRates::default(),
            stage1_steps: 3000,
            steps_per_timestep: 120,
            activation_threshold: 0.9,
            activation_interval: 100,
            bases_per_instance: 16,
            k_nn: 4,
            graph_knn: 6,
            rigidity: RigidityWeights::default(),
            feature_init: 0.1,
            history_capacity: 1 << 20,
            seed: 0,
            ablations: Ablations::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.lr.all() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "learning rates must be positive"));
            }
        }
        if !(self.lambda_l1 >= 0.0) || !(self.lambda_ssim >= 0.0) {
            return Err(Error::config(
                "lambda_l1/lambda_ssim",
                "must be non-negative",
            ));
        }
        if self.stage1_steps == 0 || self.steps_per_timestep == 0 {
            return Err(Error::config(
                "stage1_steps/steps_per_timestep",
                "must be at least 1",
            ));
        }
        if self.activation_interval == 0 {
            return Err(Error::config("activation_interval", "must be at least 1"));
        }
        if !(self.activation_threshold > 0.0 && self.activation_threshold <= 1.0) {
            return Err(Error::config("activation_threshold", "must lie in (0, 1]"));
        }
        if self.bases_per_instance == 0 || self.k_nn == 0 {
            return Err(Error::config(
                "bases_per_instance/k_nn",
                "must be at least 1",
            ));
        }
        if !(self.feature_init >= 0.0) {
            return Err(Error::config("feature_init", "must be non-negative"));
        }
        if self.history_capacity == 0 {
            return Err(Error::config("history_capacity", "must be at least 1"));
        }
        Ok(())
    }

    pub fn scaffold(&self) -> ScaffoldConfig {
        ScaffoldConfig {
            bases_per_instance: self.bases_per_instance,
            k_nn: self.k_nn,
            graph_knn: self.graph_knn,
            group_by_instance: !self.ablations.no_instance_grouping,
            per_gaussian_bases: self.ablations.no_motion_bases,
        }
    }
}
