//! Coordinate, length, and isometry rigidity terms between consecutive
//! timesteps.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::bases::Scaffold;
use super::blend::BaseGrads;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::geometry::{Mat3, Quat, Vec3};
use crate::raster::{normalize_vjp, quat_matrix_vjp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidityWeights {
    pub coord: f64,
    pub len: f64,
    pub iso: f64,
}

impl Default for RigidityWeights {
    fn default() -> Self {
        RigidityWeights {
            coord: 1.0,
            len: 1.0,
            iso: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidityLoss {
    pub coord: f64,
    pub len: f64,
    pub iso: f64,
    /// Weighted sum of the three terms.
    pub total: f64,
    /// Direct gradient of `total` with respect to base poses at `t`.
    pub base_grads: BaseGrads,
    /// Gradient of `total` with respect to Gaussian means at `t`; feed it
    /// through the blend reverse pass together with the render gradients.
    pub d_means: Vec<Vec3>,
}

fn outer(a: Vec3, b: Vec3) -> Mat3 {
    let (a, b) = (a.to_array(), b.to_array());
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i] * b[j];
        }
    }
    m
}

fn unit(q: Quat) -> Quat {
    q.scale(1.0 / q.norm())
}

/// Evaluates the rigidity terms at timestep `t >= 1`. Gaussian frame `t`
/// must already hold the scaffold-driven poses.
pub fn rigidity_loss(
    scaffold: &Scaffold,
    gaussians: &GaussianSet,
    t: usize,
    weights: RigidityWeights,
) -> Result<RigidityLoss> {
    if t == 0 {
        return Err(Error::config("t", "rigidity needs a previous timestep"));
    }
    if scaffold.timesteps() <= t || gaussians.timesteps() <= t {
        return Err(Error::Missing(alloc::format!("poses at timestep {t}")));
    }
    let nb = scaffold.bases.len();
    let mut grads = BaseGrads::zeros(nb);
    let mut d_means = vec![Vec3::ZERO; gaussians.len()];
    let pos = |j: usize, s: usize| scaffold.bases[j].trajectory[s].translation;

    let ne = scaffold.edges.len();
    let (mut coord, mut len) = (0.0, 0.0);
    if ne > 0 {
        let inv = 1.0 / ne as f64;
        for &(j, k) in &scaffold.edges {
            let raw = scaffold.bases[j].trajectory[t].rotation;
            let prev = unit(scaffold.bases[j].trajectory[t - 1].rotation);
            let inc = unit(raw) * prev.conj();
            let d_prev = pos(k, t - 1) - pos(j, t - 1);
            let d_now = pos(k, t) - pos(j, t);
            let e = inc.rotate(d_prev) - d_now;
            coord += e.norm_squared() * inv;
            let de = e.scale(2.0 * weights.coord * inv);
            grads.translations[k] += -de;
            grads.translations[j] += de;
            let d_inc = quat_matrix_vjp(inc, &outer(de, d_prev));
            grads.rotations[j] += normalize_vjp(raw, d_inc * prev);

            let rest = (pos(k, 0) - pos(j, 0)).norm();
            let cur = d_now.norm();
            let l = cur - rest;
            len += l * l * inv;
            if cur > 0.0 {
                let g = d_now.scale(2.0 * l * weights.len * inv / cur);
                grads.translations[k] += g;
                grads.translations[j] += -g;
            }
        }
    }

    let np: usize = scaffold.attachments.iter().map(|a| a.bases.len()).sum();
    let mut iso = 0.0;
    if np > 0 {
        let inv = 1.0 / np as f64;
        for a in &scaffold.attachments {
            let i = a.gaussian;
            for &j in &a.bases {
                let c = gaussians.mean(t, i) - pos(j, t);
                let rest = (gaussians.mean(0, i) - pos(j, 0)).norm();
                let cur = c.norm();
                let l = cur - rest;
                iso += l * l * inv;
                if cur > 0.0 {
                    let g = c.scale(2.0 * l * weights.iso * inv / cur);
                    d_means[i] += g;
                    grads.translations[j] += -g;
                }
            }
        }
    }
    Ok(RigidityLoss {
        coord,
        len,
        iso,
        total: weights.coord * coord + weights.len * len + weights.iso * iso,
        base_grads: grads,
        d_means,
    })
}

#[cfg(test)]
mod tests {
    use super::super::bases::{build_scaffold, MotionBase, ScaffoldConfig};
    use super::super::blend::{apply_scaffold, scaffold_backward};
    use super::*;
    use crate::geometry::Se3;
    use crate::rng::{normal, rng_for, uniform};

    fn scene(seed: u64, n: usize, k: usize) -> GaussianSet {
        let mut rng = rng_for(seed, 29);
        let mut g = GaussianSet::new(1, k);
        for i in 0..n {
            let p = Vec3::new(
                uniform(&mut rng, -1.0, 1.0),
                uniform(&mut rng, -1.0, 1.0),
                uniform(&mut rng, -1.0, 1.0),
            );
            g.push(
                p,
                Quat::IDENTITY,
                [0.1; 3],
                0.5,
                [0.5; 3],
                &[0.0],
                (i % k) as u8,
            )
            .unwrap();
        }
        g.push_frame_copy();
        g.push_frame_copy();
        g
    }

    fn jitter(rng: &mut crate::rng::DetRng, s: f64) -> Se3 {
        Se3::new(
            Quat::new(1.0, normal(rng) * s, normal(rng) * s, normal(rng) * s),
            Vec3::new(normal(rng), normal(rng), normal(rng)).scale(s),
        )
    }

    #[test]
    fn shared_rigid_motion_is_free() {
        let mut g = scene(1, 60, 2);
        let mut s = build_scaffold(&g, &[], ScaffoldConfig::default(), 4).unwrap();
        let mut rng = rng_for(2, 2);
        let m1 = jitter(&mut rng, 0.5);
        let m2 = jitter(&mut rng, 0.5);
        for m in [m1, m2.compose(&m1)] {
            let poses: Vec<Se3> = s
                .bases
                .iter()
                .map(|b| m.compose(&b.trajectory[0]))
                .collect();
            s.push_poses(&poses).unwrap();
        }
        for t in 1..3 {
            apply_scaffold(&mut g, &s, t).unwrap();
            let r = rigidity_loss(&s, &g, t, RigidityWeights::default()).unwrap();
            assert!(r.coord < 1e-10 && r.len < 1e-10 && r.iso < 1e-10, "{r:?}");
        }
    }

    #[test]
    fn lone_translated_base_length_term() {
        let base = |x: f64| MotionBase {
            instance_label: 0,
            source: 0,
            anchor: Vec3::new(x, 0.0, 0.0),
            trajectory: vec![Se3::from_translation(Vec3::new(x, 0.0, 0.0))],
        };
        let mut g = scene(3, 2, 1);
        g.frames.truncate(1);
        g.frames[0].means = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        g.push_frame_copy();
        let mut s = Scaffold {
            config: ScaffoldConfig::default(),
            bases: vec![base(0.0), base(2.0)],
            attachments: Vec::new(),
            edges: vec![(0, 1), (1, 0)],
            skipped_labels: Vec::new(),
        };
        let delta = Vec3::new(0.5, 1.0, 0.0);
        s.push_poses(&[
            Se3::IDENTITY,
            Se3::from_translation(Vec3::new(2.0, 0.0, 0.0) + delta),
        ])
        .unwrap();
        let r = rigidity_loss(&s, &g, 1, RigidityWeights::default()).unwrap();
        let edge = Vec3::new(2.0, 0.0, 0.0);
        let expected = ((edge + delta).norm() - edge.norm()).powi(2);
        assert!((r.len - expected).abs() < 1e-12);
        assert_eq!(r.iso, 0.0);
        // a single base has no edges
        let lone = Scaffold {
            bases: vec![base(0.0)],
            edges: Vec::new(),
            ..s.clone()
        };
        let mut lone = lone;
        lone.bases[0].trajectory.push(Se3::from_translation(delta));
        let r = rigidity_loss(&lone, &g, 1, RigidityWeights::default()).unwrap();
        assert_eq!((r.coord, r.len), (0.0, 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3u64 {
            let mut g = scene(10 + seed, 30, 1);
            let cfg = ScaffoldConfig {
                bases_per_instance: 6,
                k_nn: 3,
                graph_knn: 3,
                ..ScaffoldConfig::default()
            };
            let mut s = build_scaffold(&g, &[], cfg, seed).unwrap();
            let mut rng = rng_for(seed, 3);
            for _ in 0..2 {
                let poses: Vec<Se3> = s
                    .bases
                    .iter()
                    .map(|b| jitter(&mut rng, 0.2).compose(b.trajectory.last().unwrap()))
                    .collect();
                s.push_poses(&poses).unwrap();
            }
            let w = RigidityWeights {
                coord: 1.0,
                len: 0.7,
                iso: 1.3,
            };
            let t = 2;
            let total = |g: &mut GaussianSet, s: &Scaffold| -> f64 {
                apply_scaffold(g, s, t).unwrap();
                rigidity_loss(s, g, t, w).unwrap().total
            };
            total(&mut g, &s);
            let r = rigidity_loss(&s, &g, t, w).unwrap();
            let mut grads = r.base_grads.clone();
            let zero_rot = vec![Quat::ZERO; g.len()];
            grads.add(&scaffold_backward(&g, &s, t, &r.d_means, &zero_rot).unwrap());
            let h = 1e-6;
            for j in 0..s.bases.len() {
                for c in 0..7 {
                    let bump = |s: &mut Scaffold, d: f64| {
                        let p = &mut s.bases[j].trajectory[t];
                        match c {
                            0 => p.rotation.w += d,
                            1 => p.rotation.x += d,
                            2 => p.rotation.y += d,
                            3 => p.rotation.z += d,
                            4 => p.translation.x += d,
                            5 => p.translation.y += d,
                            _ => p.translation.z += d,
                        }
                    };
                    let mut sp = s.clone();
                    bump(&mut sp, h);
                    let mut sm = s.clone();
                    bump(&mut sm, -h);
                    let fd = (total(&mut g, &sp) - total(&mut g, &sm)) / (2.0 * h);
                    let q = grads.rotations[j];
                    let tr = grads.translations[j];
                    let an = [q.w, q.x, q.y, q.z, tr.x, tr.y, tr.z][c];
                    let denom = fd.abs().max(an.abs()).max(1e-6);
                    assert!(
                        (fd - an).abs() / denom < 1e-4,
                        "seed {seed} base {j} comp {c}: fd {fd} analytic {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn needs_previous_timestep() {
        let g = scene(5, 10, 1);
        let s = build_scaffold(&g, &[], ScaffoldConfig::default(), 0).unwrap();
        assert!(rigidity_loss(&s, &g, 0, RigidityWeights::default()).is_err());
        assert!(rigidity_loss(&s, &g, 1, RigidityWeights::default()).is_err());
    }
}
