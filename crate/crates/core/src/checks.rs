//! Seeded property and gradient checks shared by the self-test command
//! and the acceptance suite.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::align::{
    harden, hungarian_assign, instance_ce_loss, remap_logits, remap_logits_backward,
    sinkhorn_backward, sinkhorn_normalize, DecoderGrads, IdentityDecoder, Permutation,
    SquareMatrix, SINKHORN_ITERS,
};
use crate::camera::Camera;
use crate::gaussian::GaussianSet;
use crate::geometry::{DualQuat, Quat, Se3, Vec3};
use crate::image::{FeatureMap, Image, LabelMap, SENTINEL_UNLABELED};
use crate::raster::{rasterize, rasterize_backward, ssim_loss, RenderOptions};
use crate::rng::{normal, rng_for, uniform, DetRng};
use crate::scaffold::{
    apply_scaffold, build_scaffold, dqb, rigidity_loss, scaffold_backward, RigidityWeights,
    Scaffold, ScaffoldConfig,
};

const CHECK_STREAM: u64 = 0xC0DE;

/// Outcome of one family of checks over several seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// Worst observed error; relative for gradients.
    pub worst: f64,
    pub tolerance: f64,
    pub instances: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst.is_finite() && self.worst < self.tolerance
    }
}

type Nudge = fn(&mut GaussianSet, usize, f64);

fn rel(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6)
}

fn central(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

fn randn(rng: &mut DetRng, n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|_| s * normal(rng)).collect()
}

fn fmap(w: usize, h: usize, c: usize, data: Vec<f64>) -> FeatureMap {
    FeatureMap {
        width: w,
        height: h,
        channels: c,
        data,
    }
}

fn sinkhorn_grad(seed: u64) -> f64 {
    let mut rng = rng_for(seed, CHECK_STREAM);
    let k = rng.random_range(2..=5);
    let z = SquareMatrix::from_vec(k, randn(&mut rng, k * k, 1.5)).unwrap();
    let m = SquareMatrix::from_vec(k, randn(&mut rng, k * k, 1.0)).unwrap();
    let g = sinkhorn_backward(&z, SINKHORN_ITERS, &m).unwrap();
    let loss = |z: &SquareMatrix| -> f64 {
        let s = sinkhorn_normalize(z, SINKHORN_ITERS).unwrap();
        s.0.data.iter().zip(&m.data).map(|(a, b)| a * b).sum()
    };
    (0..k * k)
        .map(|i| {
            let fd = central(1e-5, |d| {
                let mut zz = z.clone();
                zz.data[i] += d;
                loss(&zz)
            });
            rel(fd, g.data[i])
        })
        .fold(0.0, f64::max)
}

fn decoder_grad(seed: u64) -> f64 {
    let mut rng = rng_for(seed, CHECK_STREAM + 1);
    let (c, hdim, o, pix) = (5, 7, 4, 6);
    let dec = IdentityDecoder::random(c, hdim, o, &mut rng);
    let feats = fmap(pix, 1, c, randn(&mut rng, pix * c, 1.0));
    let w = randn(&mut rng, pix * o, 1.0);
    let loss = |d: &IdentityDecoder, f: &FeatureMap| -> f64 {
        let (l, _) = d.forward(f).unwrap();
        l.data.iter().zip(&w).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = dec.forward(&feats).unwrap();
    let mut grads = DecoderGrads::zeros_like(&dec);
    let df = dec
        .backward(&feats, &cache, &fmap(pix, 1, o, w.clone()), &mut grads)
        .unwrap();
    let mut worst = 0.0f64;
    let h = 1e-6;
    for i in 0..feats.data.len() {
        let fd = central(h, |d| {
            let mut f = feats.clone();
            f.data[i] += d;
            loss(&dec, &f)
        });
        worst = worst.max(rel(fd, df.data[i]));
    }
    for which in 0..4 {
        let an: &[f64] = [&grads.w1, &grads.w2, &grads.b1, &grads.b2][which];
        for (idx, &a) in an.iter().enumerate() {
            let fd = central(h, |d| {
                let mut dd = dec.clone();
                [&mut dd.w1, &mut dd.w2, &mut dd.b1, &mut dd.b2][which][idx] += d;
                loss(&dd, &feats)
            });
            worst = worst.max(rel(fd, a));
        }
    }
    worst
}

fn ce_grad(seed: u64) -> f64 {
    let mut rng = rng_for(seed, CHECK_STREAM + 2);
    let (k, pix) = (3, 8);
    let logits = fmap(pix, 1, k + 1, randn(&mut rng, pix * (k + 1), 2.0));
    let labels: Vec<u8> = (0..pix)
        .map(|_| {
            let r = rng.random_range(0..=k);
            if r == k {
                SENTINEL_UNLABELED
            } else {
                r as u8
            }
        })
        .collect();
    let labels = LabelMap::from_labels(pix, 1, labels).unwrap();
    let mask: Vec<bool> = (0..pix).map(|_| rng.random::<f64>() < 0.8).collect();
    let base = instance_ce_loss(&logits, &labels, &mask).unwrap();
    (0..logits.data.len())
        .map(|i| {
            let fd = central(1e-6, |d| {
                let mut l = logits.clone();
                l.data[i] += d;
                instance_ce_loss(&l, &labels, &mask).unwrap().loss
            });
            rel(fd, base.grad.data[i])
        })
        .fold(0.0, f64::max)
}

fn remap_grad(seed: u64) -> f64 {
    let mut rng = rng_for(seed, CHECK_STREAM + 3);
    let (k, pix) = (4, 5);
    let s = SquareMatrix::from_vec(k, randn(&mut rng, k * k, 1.0)).unwrap();
    let x = fmap(pix, 1, k + 1, randn(&mut rng, pix * (k + 1), 1.0));
    let w = randn(&mut rng, pix * (k + 1), 1.0);
    let loss = |s: &SquareMatrix, x: &FeatureMap| -> f64 {
        remap_logits(s, x)
            .unwrap()
            .data
            .iter()
            .zip(&w)
            .map(|(a, b)| a * b)
            .sum()
    };
    let (dx, ds) = remap_logits_backward(&s, &x, &fmap(pix, 1, k + 1, w.clone()), true).unwrap();
    let dx = dx.unwrap();
    let mut worst = 0.0f64;
    for i in 0..x.data.len() {
        let fd = central(1e-6, |d| {
            let mut xx = x.clone();
            xx.data[i] += d;
            loss(&s, &xx)
        });
        worst = worst.max(rel(fd, dx.data[i]));
    }
    for i in 0..k * k {
        let fd = central(1e-6, |d| {
            let mut ss = s.clone();
            ss.data[i] += d;
            loss(&ss, &x)
        });
        worst = worst.max(rel(fd, ds.data[i]));
    }
    worst
}

fn ssim_grad(seed: u64) -> f64 {
    let mut rng = rng_for(seed, CHECK_STREAM + 4);
    let (w, h) = (9, 7);
    let a = Image::from_data(
        w,
        h,
        (0..w * h * 3)
            .map(|_| uniform(&mut rng, 0.1, 0.9))
            .collect(),
    )
    .unwrap();
    let b = Image::from_data(
        w,
        h,
        (0..w * h * 3)
            .map(|_| uniform(&mut rng, 0.1, 0.9))
            .collect(),
    )
    .unwrap();
    let g = ssim_loss(&a, &b).unwrap().grad;
    (0..a.data.len())
        .step_by(5)
        .map(|i| {
            let fd = central(1e-6, |d| {
                let mut x = a.clone();
                x.data[i] += d;
                ssim_loss(&x, &b).unwrap().loss
            });
            rel(fd, g.data[i])
        })
        .fold(0.0, f64::max)
}

/// Parameter classes of the rasterizer gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterParam {
    Color,
    Opacity,
    Scale,
    Rotation,
    Mean,
    Feature,
}

fn raster_scene(seed: u64) -> (GaussianSet, Camera) {
    let mut rng = rng_for(seed, CHECK_STREAM + 5);
    let c = 2;
    let mut g = GaussianSet::new(c, 1);
    for _ in 0..4 {
        let mean = Vec3::new(
            uniform(&mut rng, -0.4, 0.4),
            uniform(&mut rng, -0.4, 0.4),
            uniform(&mut rng, -0.4, 0.4),
        );
        let q = Quat::new(
            normal(&mut rng),
            normal(&mut rng),
            normal(&mut rng),
            normal(&mut rng),
        );
        let s = [
            uniform(&mut rng, 0.1, 0.3),
            uniform(&mut rng, 0.1, 0.3),
            uniform(&mut rng, 0.1, 0.3),
        ];
        let col = [
            uniform(&mut rng, 0.0, 1.0),
            uniform(&mut rng, 0.0, 1.0),
            uniform(&mut rng, 0.0, 1.0),
        ];
        let f = randn(&mut rng, c, 1.0);
        g.push(mean, q, s, uniform(&mut rng, 0.2, 0.8), col, &f, 0)
            .unwrap();
    }
    let cam = Camera::look_at(
        Vec3::new(0.3, 0.2, -3.0),
        Vec3::ZERO,
        Vec3::new(0.0, 1.0, 0.0),
        14.0,
        12,
        12,
    )
    .unwrap();
    (g, cam)
}

fn raster_grad(seed: u64, param: RasterParam) -> f64 {
    let (g, cam) = raster_scene(seed);
    let npix = cam.pixel_count();
    let mut rng = rng_for(seed, CHECK_STREAM + 6);
    let wi = randn(&mut rng, npix * 3, 1.0 / npix as f64);
    let wf = randn(&mut rng, npix * 2, 1.0 / npix as f64);
    let loss = |g: &GaussianSet| -> f64 {
        let out = rasterize(g, 0, &cam, RenderOptions::default()).unwrap();
        let a: f64 = out.image.data.iter().zip(&wi).map(|(x, y)| x * y).sum();
        a + out
            .features
            .data
            .iter()
            .zip(&wf)
            .map(|(x, y)| x * y)
            .sum::<f64>()
    };
    let out = rasterize(&g, 0, &cam, RenderOptions::default()).unwrap();
    let di = Image::from_data(cam.width, cam.height, wi.clone()).unwrap();
    let df = fmap(cam.width, cam.height, 2, wf.clone());
    let gr = rasterize_backward(&g, &cam, &out, &di, Some(&df)).unwrap();
    let mut worst = 0.0f64;
    for i in 0..g.len() {
        let coords: Vec<(f64, Nudge)> = match param {
            RasterParam::Color => vec![
                (gr.colors[i][0], |s, i, d| s.colors[i][0] += d),
                (gr.colors[i][1], |s, i, d| s.colors[i][1] += d),
                (gr.colors[i][2], |s, i, d| s.colors[i][2] += d),
            ],
            RasterParam::Opacity => {
                vec![(gr.opacity_logits[i], |s, i, d| s.opacity_logits[i] += d)]
            }
            RasterParam::Scale => vec![
                (gr.log_scales[i][0], |s, i, d| s.log_scales[i][0] += d),
                (gr.log_scales[i][1], |s, i, d| s.log_scales[i][1] += d),
                (gr.log_scales[i][2], |s, i, d| s.log_scales[i][2] += d),
            ],
            RasterParam::Rotation => vec![
                (gr.rotations[i].w, |s, i, d| s.frames[0].rotations[i].w += d),
                (gr.rotations[i].x, |s, i, d| s.frames[0].rotations[i].x += d),
                (gr.rotations[i].y, |s, i, d| s.frames[0].rotations[i].y += d),
                (gr.rotations[i].z, |s, i, d| s.frames[0].rotations[i].z += d),
            ],
            RasterParam::Mean => vec![
                (gr.means[i].x, |s, i, d| s.frames[0].means[i].x += d),
                (gr.means[i].y, |s, i, d| s.frames[0].means[i].y += d),
                (gr.means[i].z, |s, i, d| s.frames[0].means[i].z += d),
            ],
            RasterParam::Feature => vec![
                (gr.features[2 * i], |s, i, d| s.features[2 * i] += d),
                (gr.features[2 * i + 1], |s, i, d| s.features[2 * i + 1] += d),
            ],
        };
        for (an, bump) in coords {
            let fd = central(1e-6, |d| {
                let mut gg = g.clone();
                bump(&mut gg, i, d);
                loss(&gg)
            });
            worst = worst.max(rel(fd, an));
        }
    }
    worst
}

fn random_pose(rng: &mut DetRng, s: f64) -> Se3 {
    Se3::new(
        Quat::new(1.0, normal(rng) * s, normal(rng) * s, normal(rng) * s),
        Vec3::new(normal(rng), normal(rng), normal(rng)).scale(s),
    )
}

fn scaffold_scene(seed: u64) -> (GaussianSet, Scaffold) {
    let mut rng = rng_for(seed, CHECK_STREAM + 7);
    let mut g = GaussianSet::new(1, 1);
    for _ in 0..24 {
        let p = Vec3::new(
            uniform(&mut rng, -1.0, 1.0),
            uniform(&mut rng, -1.0, 1.0),
            uniform(&mut rng, -1.0, 1.0),
        );
        let q = Quat::new(
            normal(&mut rng),
            normal(&mut rng),
            normal(&mut rng),
            normal(&mut rng),
        );
        g.push(p, q, [0.1; 3], 0.5, [0.5; 3], &[0.0], 0).unwrap();
    }
    let cfg = ScaffoldConfig {
        bases_per_instance: 5,
        k_nn: 3,
        graph_knn: 3,
        ..ScaffoldConfig::default()
    };
    let mut s = build_scaffold(&g, &[], cfg, seed).unwrap();
    for _ in 0..2 {
        g.push_frame_copy();
        let poses: Vec<Se3> = s
            .bases
            .iter()
            .map(|b| random_pose(&mut rng, 0.2).compose(b.trajectory.last().unwrap()))
            .collect();
        s.push_poses(&poses).unwrap();
    }
    (g, s)
}

fn bump_pose(s: &mut Scaffold, j: usize, t: usize, c: usize, d: f64) {
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
}

fn pose_component(q: Quat, tr: Vec3, c: usize) -> f64 {
    [q.w, q.x, q.y, q.z, tr.x, tr.y, tr.z][c]
}

/// Gradient of `Σ w·μ_t + Σ v·r_t` through blending and application.
fn dqb_chain_grad(seed: u64) -> f64 {
    let (mut g, s) = scaffold_scene(seed);
    let t = 2;
    let mut rng = rng_for(seed, CHECK_STREAM + 8);
    let wm: Vec<Vec3> = (0..g.len())
        .map(|_| Vec3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)))
        .collect();
    let wr: Vec<Quat> = (0..g.len())
        .map(|_| {
            Quat::new(
                normal(&mut rng),
                normal(&mut rng),
                normal(&mut rng),
                normal(&mut rng),
            )
        })
        .collect();
    let loss = |g: &mut GaussianSet, s: &Scaffold| -> f64 {
        apply_scaffold(g, s, t).unwrap();
        (0..g.len())
            .map(|i| g.mean(t, i).dot(wm[i]) + g.rotation(t, i).dot(wr[i]))
            .sum()
    };
    loss(&mut g, &s);
    let grads = scaffold_backward(&g, &s, t, &wm, &wr).unwrap();
    let mut worst = 0.0f64;
    for j in 0..s.bases.len() {
        for c in 0..7 {
            let fd = central(1e-6, |d| {
                let mut sp = s.clone();
                bump_pose(&mut sp, j, t, c, d);
                loss(&mut g, &sp)
            });
            worst = worst.max(rel(
                fd,
                pose_component(grads.rotations[j], grads.translations[j], c),
            ));
        }
    }
    worst
}

fn rigidity_grad(seed: u64, weights: RigidityWeights) -> f64 {
    let (mut g, s) = scaffold_scene(seed);
    let t = 2;
    let total = |g: &mut GaussianSet, s: &Scaffold| -> f64 {
        apply_scaffold(g, s, t).unwrap();
        rigidity_loss(s, g, t, weights).unwrap().total
    };
    total(&mut g, &s);
    let r = rigidity_loss(&s, &g, t, weights).unwrap();
    let mut grads = r.base_grads.clone();
    grads.add(&scaffold_backward(&g, &s, t, &r.d_means, &vec![Quat::ZERO; g.len()]).unwrap());
    let mut worst = 0.0f64;
    for j in 0..s.bases.len() {
        for c in 0..7 {
            let fd = central(1e-6, |d| {
                let mut sp = s.clone();
                bump_pose(&mut sp, j, t, c, d);
                total(&mut g, &sp)
            });
            worst = worst.max(rel(
                fd,
                pose_component(grads.rotations[j], grads.translations[j], c),
            ));
        }
    }
    worst
}

fn family(
    name: &'static str,
    tolerance: f64,
    instances: usize,
    f: impl Fn(u64) -> f64,
) -> CheckResult {
    let worst = (0..instances as u64).map(&f).fold(0.0, f64::max);
    CheckResult {
        name,
        worst,
        tolerance,
        instances,
    }
}

/// Central-difference agreement of every hand-written backward pass.
pub fn gradient_suite(instances: usize) -> Vec<CheckResult> {
    let one = |c, l, i| RigidityWeights {
        coord: c,
        len: l,
        iso: i,
    };
    vec![
        family("sinkhorn_backward", 1e-4, instances, sinkhorn_grad),
        family("decoder", 1e-4, instances, decoder_grad),
        family("cross_entropy", 1e-4, instances, ce_grad),
        family("remap_logits", 1e-4, instances, remap_grad),
        family("ssim", 1e-4, instances, ssim_grad),
        family("raster_color", 1e-3, instances, |s| {
            raster_grad(s, RasterParam::Color)
        }),
        family("raster_opacity", 1e-3, instances, |s| {
            raster_grad(s, RasterParam::Opacity)
        }),
        family("raster_scale", 1e-3, instances, |s| {
            raster_grad(s, RasterParam::Scale)
        }),
        family("raster_rotation", 1e-3, instances, |s| {
            raster_grad(s, RasterParam::Rotation)
        }),
        family("raster_mean", 1e-3, instances, |s| {
            raster_grad(s, RasterParam::Mean)
        }),
        family("raster_feature", 1e-3, instances, |s| {
            raster_grad(s, RasterParam::Feature)
        }),
        family("rigidity_coord", 1e-4, instances, move |s| {
            rigidity_grad(s, one(1.0, 0.0, 0.0))
        }),
        family("rigidity_len", 1e-4, instances, move |s| {
            rigidity_grad(s, one(0.0, 1.0, 0.0))
        }),
        family("rigidity_iso", 1e-4, instances, move |s| {
            rigidity_grad(s, one(0.0, 0.0, 1.0))
        }),
        family("dqb_chain", 1e-4, instances, dqb_chain_grad),
    ]
}

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in all_permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Exhaustive maximum-weight permutation, lowest array among ties.
pub fn brute_force_max(s: &SquareMatrix) -> Permutation {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in all_permutations(s.n) {
        let w: f64 = p.iter().enumerate().map(|(i, &j)| s[(i, j)]).sum();
        if best.as_ref().is_none_or(|(_, b)| w > *b + 1e-12) {
            best = Some((p, w));
        }
    }
    Permutation::new(best.expect("n! >= 1").0).expect("a permutation")
}

/// Largest row or column marginal error after Sinkhorn, over `instances`
/// standard normal latents with `K` up to 16.
pub fn sinkhorn_marginals(instances: usize) -> CheckResult {
    let worst = (0..instances as u64)
        .map(|seed| {
            let mut rng = rng_for(seed, CHECK_STREAM + 9);
            let k = rng.random_range(1..=16);
            let z = SquareMatrix::from_vec(k, randn(&mut rng, k * k, 1.0)).unwrap();
            sinkhorn_normalize(&z, SINKHORN_ITERS)
                .unwrap()
                .max_marginal_error()
        })
        .fold(0.0, f64::max);
    CheckResult {
        name: "sinkhorn_marginals",
        worst,
        tolerance: 1e-3,
        instances,
    }
}

/// Fraction of sharpened latents whose hardened match differs from
/// exhaustive search, `K <= 6`.
pub fn harden_vs_brute_force(instances: usize) -> CheckResult {
    let misses = (0..instances as u64)
        .filter(|&seed| {
            let mut rng = rng_for(seed, CHECK_STREAM + 10);
            let k = rng.random_range(1..=6);
            let z = SquareMatrix::from_vec(k, randn(&mut rng, k * k, 4.0)).unwrap();
            let s = sinkhorn_normalize(&z, SINKHORN_ITERS).unwrap();
            harden(&s).unwrap() != brute_force_max(&s.0)
        })
        .count();
    CheckResult {
        name: "harden_vs_brute_force",
        worst: misses as f64,
        tolerance: 0.5,
        instances,
    }
}

/// Hungarian on random and tie-heavy costs against exhaustive search.
pub fn hungarian_oracle(instances: usize) -> CheckResult {
    let misses = (0..instances as u64)
        .filter(|&seed| {
            let mut rng = rng_for(seed, CHECK_STREAM + 11);
            let k = rng.random_range(1..=6);
            let ints = seed % 2 == 0;
            let data: Vec<f64> = (0..k * k)
                .map(|_| {
                    if ints {
                        rng.random_range(0..3) as f64
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect();
            let c = SquareMatrix::from_vec(k, data).unwrap();
            hungarian_assign(&c).unwrap() != brute_force_max(&c.scaled(-1.0))
        })
        .count();
    CheckResult {
        name: "hungarian_oracle",
        worst: misses as f64,
        tolerance: 0.5,
        instances,
    }
}

/// Dual-quaternion round trips and blending identities.
pub fn dqb_identities(instances: usize) -> CheckResult {
    let worst = (0..instances as u64)
        .map(|seed| {
            let mut rng = rng_for(seed, CHECK_STREAM + 12);
            let a = random_pose(&mut rng, 0.8);
            let b = random_pose(&mut rng, 0.8);
            let p = Vec3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng));
            let round = DualQuat::from_se3(&a).to_se3().unwrap();
            let e1 = (round.apply(p) - a.apply(p)).norm();
            let one = dqb(&[a, b], &[1.0, 0.0]).unwrap();
            let e2 = (one.apply(p) - a.apply(p)).norm();
            let same = dqb(&[a, a], &[0.3, 0.7]).unwrap();
            let e3 = (same.apply(p) - a.apply(p)).norm();
            let id = dqb(&[Se3::IDENTITY, Se3::IDENTITY], &[0.5, 0.5]).unwrap();
            let e4 = (id.apply(p) - p).norm();
            e1.max(e2).max(e3).max(e4)
        })
        .fold(0.0, f64::max);
    CheckResult {
        name: "dqb_identities",
        worst,
        tolerance: 1e-9,
        instances,
    }
}
