//! Deterministic synthetic multi-view scenes with known instances,
//! trajectories, and per-view label scrambles.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::Range;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::align::{IdentityDecoder, Permutation, FEATURE_DIM, HIDDEN_DIM};
use crate::camera::Camera;
use crate::dataset::{default_test_views, Dataset, SeedPoint};
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::geometry::{Quat, Se3, Vec3};
use crate::image::{Image, LabelMap, MAX_INSTANCES, SENTINEL_UNLABELED};
use crate::raster::{labels_from_logits, rasterize, RenderOptions};
use crate::rng::{normal, rng_for, rng_for_item, stream, uniform, DetRng};
use crate::scaffold::{Attachment, MotionBase, Scaffold, ScaffoldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionFamily {
    Static,
    Linear,
    Circular,
    /// Two halves of one instance; the second swings about a hinge.
    Articulated,
}

/// Removes one canonical instance from a view's labels for `frames`
/// (end exclusive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropSpec {
    pub instance: u8,
    pub view: usize,
    pub frames: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_instances: usize,
    pub gaussians_per_instance: usize,
    pub timesteps: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    /// Per instance; cycled when shorter than `num_instances`, all linear
    /// when empty.
    pub motions: Vec<MotionFamily>,
    /// Multiplies every motion speed.
    pub motion_scale: f64,
    pub label_noise: f64,
    pub drops: Vec<DropSpec>,
    /// Draw random per-view permutations; identity everywhere otherwise.
    pub scramble: bool,
    /// Defaults to every 7th view.
    pub test_views: Option<Vec<usize>>,
    /// Standard deviation of the noise added to seed point positions.
    pub seed_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_instances: 4,
            gaussians_per_instance: 96,
            timesteps: 1,
            views: 4,
            width: 64,
            height: 64,
            motions: Vec::new(),
            motion_scale: 1.0,
            label_noise: 0.0,
            drops: Vec::new(),
            scramble: true,
            test_views: None,
            seed_jitter: 0.01,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_instances == 0 || self.num_instances > MAX_INSTANCES {
            return Err(Error::config("num_instances", "must lie in 1..=16"));
        }
        if self.views == 0 {
            return Err(Error::config("views", "must be at least 1"));
        }
        if self.timesteps == 0 {
            return Err(Error::config("timesteps", "must be at least 1"));
        }
        if self.gaussians_per_instance == 0 {
            return Err(Error::config(
                "gaussians_per_instance",
                "must be at least 1",
            ));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::config("width/height", "frames must be at least 8x8"));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::config("label_noise", "must lie in [0, 1]"));
        }
        if !(self.motion_scale >= 0.0) || !(self.seed_jitter >= 0.0) {
            return Err(Error::config(
                "motion_scale/seed_jitter",
                "must be non-negative",
            ));
        }
        for (i, d) in self.drops.iter().enumerate() {
            if d.instance as usize >= self.num_instances
                || d.view >= self.views
                || d.frames.end > self.timesteps
            {
                return Err(Error::Config {
                    field: alloc::format!("drops[{i}]"),
                    reason: "instance, view, or frame range out of bounds".into(),
                });
            }
        }
        if let Some(tv) = &self.test_views {
            if tv.iter().any(|&v| v >= self.views || v == 0) {
                return Err(Error::config(
                    "test_views",
                    "must be valid non-reference views",
                ));
            }
        }
        Ok(())
    }

    pub fn motion(&self, instance: usize) -> MotionFamily {
        if self.motions.is_empty() {
            MotionFamily::Linear
        } else {
            self.motions[instance % self.motions.len()]
        }
    }
}

/// One rigidly moving piece of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartTrajectory {
    pub instance: u8,
    /// Maps `t = 0` positions to timestep `t`; `poses[0]` is the identity.
    pub poses: Vec<Se3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSilhouette {
    pub view: usize,
    pub t: usize,
    pub instance: u8,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Per view, canonical → local.
    pub permutations: Vec<Permutation>,
    pub parts: Vec<PartTrajectory>,
    /// Part index of every ground-truth Gaussian.
    pub gaussian_parts: Vec<usize>,
    /// Ground-truth Gaussians with one-hot identity features and every
    /// frame materialized.
    pub gaussians: GaussianSet,
    /// Decoder that reproduces the canonical label maps from `gaussians`.
    pub decoder: IdentityDecoder,
    /// `canonical_labels[v][t]`.
    pub canonical_labels: Vec<Vec<LabelMap>>,
    pub dropped: Vec<DroppedSilhouette>,
}

impl GroundTruth {
    pub fn instance_motion(&self, instance: u8) -> Vec<&PartTrajectory> {
        self.parts
            .iter()
            .filter(|p| p.instance == instance)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub config: SynthConfig,
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.fract() * 6.0).min(5.999_999);
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn rotation_about(axis: Vec3, angle: f64, pivot: Vec3) -> Se3 {
    let q = Quat::from_axis_angle(axis, angle);
    Se3 {
        rotation: q,
        translation: pivot - q.rotate(pivot),
    }
}

/// Decoder that labels a pixel with the argmax of one-hot instance
/// features when their accumulated alpha reaches 0.5, background
/// otherwise.
pub fn oracle_decoder(k: usize) -> IdentityDecoder {
    let mut d = IdentityDecoder::zeros(FEATURE_DIM, HIDDEN_DIM, k + 1);
    for c in 0..k {
        d.w1[c * FEATURE_DIM + c] = 1.0;
        d.w2[c * HIDDEN_DIM + c] = 1.0;
    }
    // hidden unit k = relu(0.5 - Σ f)
    for c in 0..k {
        d.w1[k * FEATURE_DIM + c] = -1.0;
    }
    d.b1[k] = 0.5;
    d.w2[k * HIDDEN_DIM + k] = 1e9;
    d
}

/// One base per rigid part following its true trajectory, every Gaussian
/// bound to its part with weight 1.
pub fn oracle_scaffold(truth: &GroundTruth) -> Scaffold {
    let g = &truth.gaussians;
    let mut bases = Vec::with_capacity(truth.parts.len());
    for (p, part) in truth.parts.iter().enumerate() {
        let source = truth
            .gaussian_parts
            .iter()
            .position(|&q| q == p)
            .unwrap_or(0);
        let rest = Se3 {
            rotation: g.rotation(0, source),
            translation: g.mean(0, source),
        };
        bases.push(MotionBase {
            instance_label: part.instance,
            source,
            anchor: rest.translation,
            trajectory: part.poses.iter().map(|pose| pose.compose(&rest)).collect(),
        });
    }
    let attachments = truth
        .gaussian_parts
        .iter()
        .enumerate()
        .map(|(i, &p)| Attachment {
            gaussian: i,
            bases: vec![p],
            weights: vec![1.0],
        })
        .collect();
    Scaffold {
        config: ScaffoldConfig::default(),
        bases,
        attachments,
        edges: Vec::new(),
        skipped_labels: Vec::new(),
    }
}

struct Scene {
    gaussians: GaussianSet,
    parts: Vec<PartTrajectory>,
    gaussian_parts: Vec<usize>,
}

fn build_scene(cfg: &SynthConfig) -> Scene {
    let k = cfg.num_instances;
    let mut rng = rng_for(cfg.seed, stream::SCENE);
    let mut g = GaussianSet::new(FEATURE_DIM, k);
    let mut parts = Vec::new();
    let mut gaussian_parts = Vec::new();
    let up = Vec3::new(0.0, 1.0, 0.0);
    let t_count = cfg.timesteps;
    for inst in 0..k {
        let angle = 2.0 * PI * inst as f64 / k as f64 + uniform(&mut rng, -0.3, 0.3);
        let ring = if k == 1 { 0.0 } else { 0.55 };
        let center = Vec3::new(
            ring * angle.cos(),
            uniform(&mut rng, -0.15, 0.15),
            ring * angle.sin(),
        );
        let extent = [
            uniform(&mut rng, 0.09, 0.15),
            uniform(&mut rng, 0.09, 0.15),
            uniform(&mut rng, 0.09, 0.15),
        ];
        let base_color = hsv(inst as f64 / k as f64 + 0.03, 0.75, 0.9);
        let family = cfg.motion(inst);
        let speed = cfg.motion_scale;
        let dir = {
            let a = uniform(&mut rng, 0.0, 2.0 * PI);
            Vec3::new(a.cos(), uniform(&mut rng, -0.2, 0.2), a.sin())
        };
        let spin = uniform(&mut rng, -1.0, 1.0);
        let main: Vec<Se3> = (0..t_count)
            .map(|t| {
                let t = t as f64;
                match family {
                    MotionFamily::Static => Se3::IDENTITY,
                    MotionFamily::Linear | MotionFamily::Articulated => {
                        let r = rotation_about(up, 0.02 * spin * speed * t, center);
                        Se3 {
                            rotation: r.rotation,
                            translation: r.translation + dir.scale(0.02 * speed * t),
                        }
                    }
                    MotionFamily::Circular => rotation_about(up, 0.05 * speed * t, Vec3::ZERO),
                }
            })
            .collect();
        let first_part = parts.len();
        parts.push(PartTrajectory {
            instance: inst as u8,
            poses: main.clone(),
        });
        if family == MotionFamily::Articulated {
            let hinge_axis = Vec3::new(0.0, 0.0, 1.0);
            let swing: Vec<Se3> = (0..t_count)
                .map(|t| {
                    let a = 0.5 * (0.2 * speed * t as f64).sin();
                    main[t].compose(&rotation_about(hinge_axis, a, center))
                })
                .collect();
            parts.push(PartTrajectory {
                instance: inst as u8,
                poses: swing,
            });
        }
        let mut feature = [0.0; FEATURE_DIM];
        feature[inst] = 1.0;
        for _ in 0..cfg.gaussians_per_instance {
            let off = Vec3::new(
                normal(&mut rng) * extent[0],
                normal(&mut rng) * extent[1],
                normal(&mut rng) * extent[2],
            );
            let q = Quat::new(
                normal(&mut rng),
                normal(&mut rng),
                normal(&mut rng),
                normal(&mut rng),
            );
            let s = [
                uniform(&mut rng, 0.035, 0.06),
                uniform(&mut rng, 0.035, 0.06),
                uniform(&mut rng, 0.035, 0.06),
            ];
            let tint = uniform(&mut rng, -0.08, 0.08);
            let color = [
                (base_color[0] + tint).clamp(0.0, 1.0),
                (base_color[1] + tint).clamp(0.0, 1.0),
                (base_color[2] + tint).clamp(0.0, 1.0),
            ];
            g.push(center + off, q, s, 0.85, color, &feature, inst as u8)
                .expect("positive scales and matching feature width");
            let part = if family == MotionFamily::Articulated && off.x > 0.0 {
                first_part + 1
            } else {
                first_part
            };
            gaussian_parts.push(part);
        }
    }
    for t in 1..t_count {
        g.push_frame_copy();
        for i in 0..g.len() {
            let pose = parts[gaussian_parts[i]].poses[t];
            let (m0, r0) = (g.mean(0, i), g.rotation(0, i));
            g.frames[t].means[i] = pose.apply(m0);
            g.frames[t].rotations[i] = (pose.rotation * r0).normalized();
        }
    }
    Scene {
        gaussians: g,
        parts,
        gaussian_parts,
    }
}

/// Cameras on a ring around the vertical axis, all looking at the origin.
pub fn ring_cameras(views: usize, width: usize, height: usize) -> Result<Vec<Camera>> {
    (0..views)
        .map(|v| {
            let a = 2.0 * PI * v as f64 / views as f64;
            let eye = Vec3::new(2.8 * a.sin(), 0.9, -2.8 * a.cos());
            Camera::look_at(
                eye,
                Vec3::ZERO,
                Vec3::new(0.0, 1.0, 0.0),
                1.2 * width as f64,
                width,
                height,
            )
        })
        .collect()
}

fn random_permutation(k: usize, rng: &mut DetRng) -> Permutation {
    let mut p: Vec<usize> = (0..k).collect();
    p.shuffle(rng);
    Permutation::new(p).expect("a shuffle is a bijection")
}

/// Flips each labeled pixel to a uniformly random other instance with
/// probability `rate`. Returns the number of flipped pixels.
pub fn corrupt_labels(map: &mut LabelMap, k: usize, rate: f64, rng: &mut DetRng) -> usize {
    if k < 2 || rate <= 0.0 {
        return 0;
    }
    let mut flipped = 0;
    for l in &mut map.labels {
        if *l == SENTINEL_UNLABELED || (*l as usize) >= k {
            continue;
        }
        if rng.random::<f64>() < rate {
            let other = rng.random_range(0..k - 1) as u8;
            *l = if other >= *l { other + 1 } else { other };
            flipped += 1;
        }
    }
    flipped
}

/// Replaces `local_id` with the sentinel in `maps[frames]`.
pub fn drop_object(maps: &mut [LabelMap], local_id: u8, frames: Range<usize>) -> Result<()> {
    if frames.end > maps.len() {
        return Err(Error::config("drop.frames", "range exceeds the sequence"));
    }
    if local_id == SENTINEL_UNLABELED {
        return Err(Error::config("drop.instance", "cannot drop the sentinel"));
    }
    for m in &mut maps[frames] {
        for l in &mut m.labels {
            if *l == local_id {
                *l = SENTINEL_UNLABELED;
            }
        }
    }
    Ok(())
}

/// Renders the frames and canonical labels of `gaussians` for one view.
pub fn render_view(
    gaussians: &GaussianSet,
    decoder: &IdentityDecoder,
    camera: &Camera,
    t: usize,
) -> Result<(Image, LabelMap)> {
    let out = rasterize(gaussians, t, camera, RenderOptions::default())?;
    let (logits, _) = decoder.forward(&out.features)?;
    let labels = labels_from_logits(&logits, None)?;
    // frames are stored as 8-bit; keep the in-memory copy identical
    let img = Image::from_bytes(camera.width, camera.height, &out.image.to_bytes())?;
    Ok((img, labels))
}

pub fn generate(cfg: &SynthConfig) -> Result<Synthetic> {
    cfg.validate()?;
    let k = cfg.num_instances;
    let scene = build_scene(cfg);
    let cameras = ring_cameras(cfg.views, cfg.width, cfg.height)?;
    let decoder = oracle_decoder(k);
    let permutations: Vec<Permutation> = (0..cfg.views)
        .map(|v| {
            if v == 0 || !cfg.scramble {
                Permutation::identity(k)
            } else {
                random_permutation(
                    k,
                    &mut rng_for_item(cfg.seed, stream::PERMUTATIONS, v as u64, 0),
                )
            }
        })
        .collect();
    let mut frames = Vec::with_capacity(cfg.views);
    let mut canonical = Vec::with_capacity(cfg.views);
    let mut local = Vec::with_capacity(cfg.views);
    for (v, cam) in cameras.iter().enumerate() {
        let mut fv = Vec::with_capacity(cfg.timesteps);
        let mut cv = Vec::with_capacity(cfg.timesteps);
        let mut lv = Vec::with_capacity(cfg.timesteps);
        for t in 0..cfg.timesteps {
            let (img, labels) = render_view(&scene.gaussians, &decoder, cam, t)?;
            let mut loc = labels.clone();
            for l in &mut loc.labels {
                *l = permutations[v].relabel(*l);
            }
            let mut rng = rng_for_item(cfg.seed, stream::LABEL_NOISE, v as u64, t as u64);
            corrupt_labels(&mut loc, k, cfg.label_noise, &mut rng);
            fv.push(img);
            cv.push(labels);
            lv.push(loc);
        }
        frames.push(fv);
        canonical.push(cv);
        local.push(lv);
    }
    let mut dropped = Vec::new();
    for d in &cfg.drops {
        let local_id = permutations[d.view].relabel(d.instance);
        drop_object(&mut local[d.view], local_id, d.frames.clone())?;
        for t in d.frames.clone() {
            dropped.push(DroppedSilhouette {
                view: d.view,
                t,
                instance: d.instance,
                mask: canonical[d.view][t]
                    .labels
                    .iter()
                    .map(|&l| l == d.instance)
                    .collect(),
            });
        }
    }
    let mut rng = rng_for(cfg.seed, stream::INIT);
    let seed_points = (0..scene.gaussians.len())
        .map(|i| {
            let j = Vec3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng))
                .scale(cfg.seed_jitter);
            SeedPoint {
                position: scene.gaussians.mean(0, i) + j,
                color: scene.gaussians.colors[i],
                label: scene.gaussians.labels[i],
            }
        })
        .collect();
    let static_labels = (0..k)
        .filter(|&i| {
            cfg.motion(i) == MotionFamily::Static || cfg.timesteps == 1 || cfg.motion_scale == 0.0
        })
        .map(|i| i as u8)
        .collect();
    let dataset = Dataset {
        num_instances: k,
        cameras,
        frames,
        labels: local,
        seed_points,
        static_labels,
        test_views: cfg
            .test_views
            .clone()
            .unwrap_or_else(|| default_test_views(cfg.views)),
        reference_view: 0,
    };
    dataset.validate()?;
    Ok(Synthetic {
        config: cfg.clone(),
        dataset,
        truth: GroundTruth {
            permutations,
            parts: scene.parts,
            gaussian_parts: scene.gaussian_parts,
            gaussians: scene.gaussians,
            decoder,
            canonical_labels: canonical,
            dropped,
        },
    })
}
