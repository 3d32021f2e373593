use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::bases::{Attachment, MotionBase, Scaffold};
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::geometry::{DualQuat, Mat3, Quat, Se3, Vec3};
use crate::raster::{normalize_vjp, quat_matrix_vjp};

const DEGENERATE_REAL: f64 = 1e-9;

/// Gradients with respect to each base's pose at one timestep. Rotation
/// gradients are taken with respect to the raw stored quaternion.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseGrads {
    pub rotations: Vec<Quat>,
    pub translations: Vec<Vec3>,
}

impl BaseGrads {
    pub fn zeros(n: usize) -> Self {
        BaseGrads {
            rotations: vec![Quat::ZERO; n],
            translations: vec![Vec3::ZERO; n],
        }
    }

    pub fn add(&mut self, o: &BaseGrads) {
        for (a, b) in self.rotations.iter_mut().zip(&o.rotations) {
            *a += *b;
        }
        for (a, b) in self.translations.iter_mut().zip(&o.translations) {
            *a += *b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rotations.iter().all(|q| q.is_finite())
            && self.translations.iter().all(|v| v.is_finite())
    }
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

/// Motion of one base since `t = 0`, `trajectory[t] ∘ trajectory[0]⁻¹`,
/// with the pieces the reverse pass needs.
#[derive(Debug, Clone, Copy)]
struct Relative {
    raw: Quat,
    q0: Quat,
    t0: Vec3,
    real: Quat,
    translation: Vec3,
    dual: Quat,
}

fn relative(base: &MotionBase, t: usize) -> Result<Relative> {
    let pose = base
        .trajectory
        .get(t)
        .ok_or_else(|| Error::Missing(format!("base trajectory entry at timestep {t}")))?;
    let origin = base.trajectory[0];
    let raw = pose.rotation;
    let q = raw.scale(1.0 / raw.norm());
    let q0 = origin.rotation;
    let real = q * q0.conj();
    let translation = pose.translation - real.rotate(origin.translation);
    Ok(Relative {
        raw,
        q0,
        t0: origin.translation,
        real,
        translation,
        dual: (Quat::pure(translation) * real).scale(0.5),
    })
}

/// `trajectory[t] ∘ trajectory[0]⁻¹` as a rigid transform.
pub fn relative_transform(base: &MotionBase, t: usize) -> Result<Se3> {
    let r = relative(base, t)?;
    Ok(Se3 {
        rotation: r.real,
        translation: r.translation,
    })
}

struct Blended {
    signs: Vec<f64>,
    real: Quat,
    dual: Quat,
    rotation: Quat,
    translation: Vec3,
}

fn blend(att: &Attachment, rels: &[Relative]) -> Result<Blended> {
    let first = rels[att.bases[0]].real;
    let mut real = Quat::ZERO;
    let mut dual = Quat::ZERO;
    let mut signs = Vec::with_capacity(att.bases.len());
    for (&j, &w) in att.bases.iter().zip(&att.weights) {
        let s = if rels[j].real.dot(first) < 0.0 {
            -1.0
        } else {
            1.0
        };
        real += rels[j].real.scale(s * w);
        dual += rels[j].dual.scale(s * w);
        signs.push(s);
    }
    let n2 = real.dot(real);
    if !(n2.sqrt() >= DEGENERATE_REAL) {
        return Err(Error::Degenerate(format!(
            "blend for gaussian {} cancels out",
            att.gaussian
        )));
    }
    Ok(Blended {
        signs,
        real,
        dual,
        rotation: real.scale(1.0 / n2.sqrt()),
        translation: (dual * real.conj()).vector().scale(2.0 / n2),
    })
}

/// Dual-quaternion blend of rigid transforms: sign-align real parts to the
/// first transform's hemisphere, take the weighted sum, normalize.
pub fn dqb(transforms: &[Se3], weights: &[f64]) -> Result<Se3> {
    if transforms.is_empty() || transforms.len() != weights.len() {
        return Err(Error::shape("dqb needs one weight per transform"));
    }
    let first = transforms[0].rotation;
    let mut acc = DualQuat {
        real: Quat::ZERO,
        dual: Quat::ZERO,
    };
    for (t, &w) in transforms.iter().zip(weights) {
        let dq = DualQuat::from_se3(t);
        let s = if dq.real.dot(first) < 0.0 { -w } else { w };
        let d = dq.scale(s);
        acc = DualQuat {
            real: acc.real + d.real,
            dual: acc.dual + d.dual,
        };
    }
    if !(acc.real.norm() >= DEGENERATE_REAL) {
        return Err(Error::Degenerate("blended real part vanishes".into()));
    }
    acc.normalized()?.to_se3()
}

fn relatives(scaffold: &Scaffold, t: usize) -> Result<Vec<Relative>> {
    scaffold.bases.iter().map(|b| relative(b, t)).collect()
}

fn check_frames(gaussians: &GaussianSet, t: usize) -> Result<()> {
    if t >= gaussians.timesteps() {
        return Err(Error::Missing(format!("gaussian frame at timestep {t}")));
    }
    Ok(())
}

/// Writes frame `t` of every Gaussian. Attached Gaussians follow their
/// blended base motion; the rest keep the `t = 0` pose.
pub fn apply_scaffold(gaussians: &mut GaussianSet, scaffold: &Scaffold, t: usize) -> Result<()> {
    check_frames(gaussians, t)?;
    let rels = relatives(scaffold, t)?;
    let origin = gaussians.frames[0].clone();
    let frame = &mut gaussians.frames[t];
    frame.means.copy_from_slice(&origin.means);
    frame.rotations.copy_from_slice(&origin.rotations);
    for att in &scaffold.attachments {
        let b = blend(att, &rels)?;
        let i = att.gaussian;
        frame.means[i] = b.rotation.rotate(origin.means[i]) + b.translation;
        frame.rotations[i] = b.rotation * origin.rotations[i];
    }
    Ok(())
}

/// Reverse pass of [`apply_scaffold`] at timestep `t`, given gradients with
/// respect to the Gaussians' means and raw rotations at `t`.
pub fn scaffold_backward(
    gaussians: &GaussianSet,
    scaffold: &Scaffold,
    t: usize,
    d_means: &[Vec3],
    d_rotations: &[Quat],
) -> Result<BaseGrads> {
    if d_means.len() != gaussians.len() || d_rotations.len() != gaussians.len() {
        return Err(Error::shape("gradient arrays differ from gaussian count"));
    }
    let rels = relatives(scaffold, t)?;
    let mut grads = BaseGrads::zeros(scaffold.bases.len());
    for att in &scaffold.attachments {
        let i = att.gaussian;
        let (dmu, dr) = (d_means[i], d_rotations[i]);
        if dmu == Vec3::ZERO && dr == Quat::ZERO {
            continue;
        }
        let b = blend(att, &rels)?;
        let mu0 = gaussians.mean(0, i);
        let r0 = gaussians.rotation(0, i);

        // mean = R(q) mu0 + tau, rotation = q r0
        let mut d_q = dr * r0.conj() + quat_matrix_vjp(b.rotation, &outer(dmu, mu0));
        let d_tau = dmu;
        // tau = 2 vec(D R*) / |R|^2, q = R / |R|
        let n2 = b.real.dot(b.real);
        let d_p = Quat::pure(d_tau.scale(2.0 / n2));
        let d_dual = d_p * b.real;
        let mut d_real = (b.dual.conj() * d_p).conj();
        d_real += b.real.scale(-2.0 * d_tau.dot(b.translation) / n2);
        d_q = normalize_vjp(b.real, d_q);
        d_real += d_q;

        for ((&j, &w), &s) in att.bases.iter().zip(&att.weights).zip(&b.signs) {
            let r = &rels[j];
            let dr_j = d_real.scale(s * w);
            let dd_j = d_dual.scale(s * w);
            // dual = 0.5 (0, tr) real,  tr = t - R(real) t0,  real = q q0*
            let d_tr = (dd_j * r.real.conj()).vector().scale(0.5);
            let mut d_rel = dr_j + (Quat::pure(r.translation).conj() * dd_j).scale(0.5);
            d_rel += quat_matrix_vjp(r.real, &outer(-d_tr, r.t0));
            grads.translations[j] += d_tr;
            grads.rotations[j] += normalize_vjp(r.raw, d_rel * r.q0);
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::super::bases::{build_scaffold, ScaffoldConfig};
    use super::*;
    use crate::rng::{normal, rng_for, uniform};

    fn random_se3(rng: &mut crate::rng::DetRng, spread: f64) -> Se3 {
        let q = Quat::new(
            1.0 + normal(rng) * spread,
            normal(rng) * spread,
            normal(rng) * spread,
            normal(rng) * spread,
        );
        Se3::new(q, Vec3::new(normal(rng), normal(rng), normal(rng)))
    }

    fn scene(seed: u64, n: usize, k: usize) -> GaussianSet {
        let mut rng = rng_for(seed, 23);
        let mut g = GaussianSet::new(1, k);
        for i in 0..n {
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
            g.push(p, q, [0.1; 3], 0.5, [0.5; 3], &[0.0], (i % (k + 1)) as u8)
                .unwrap();
        }
        g.push_frame_copy();
        g
    }

    #[test]
    fn dqb_examples() {
        assert_eq!(
            dqb(&[Se3::IDENTITY, Se3::IDENTITY], &[0.3, 0.7]).unwrap(),
            Se3::IDENTITY
        );
        let mut rng = rng_for(1, 1);
        let t = random_se3(&mut rng, 0.5);
        let expect = DualQuat::from_se3(&t)
            .normalized()
            .unwrap()
            .to_se3()
            .unwrap();
        assert_eq!(
            dqb(&[t, random_se3(&mut rng, 0.5)], &[1.0, 0.0]).unwrap(),
            expect
        );
        assert!(
            (dqb(&[t], &[1.0]).unwrap().apply(Vec3::new(1.0, 2.0, 3.0))
                - t.apply(Vec3::new(1.0, 2.0, 3.0)))
            .norm()
                < 1e-12
        );
        let a = Se3::from_translation(Vec3::new(1.0, 0.0, 2.0));
        let b = Se3::from_translation(Vec3::new(-3.0, 4.0, 0.0));
        let m = dqb(&[a, b], &[0.25, 0.75]).unwrap();
        let lin = Vec3::new(1.0, 0.0, 2.0).scale(0.25) + Vec3::new(-3.0, 4.0, 0.0).scale(0.75);
        assert!((m.translation - lin).norm() < 1e-12);
        assert!((m.rotation - Quat::IDENTITY).norm() < 1e-12);
    }

    #[test]
    fn dqb_antipodal_is_degenerate() {
        let a = DualQuat::IDENTITY;
        let flipped = DualQuat {
            real: Quat::new(0.0, 1.0, 0.0, 0.0),
            dual: Quat::ZERO,
        };
        // opposite hemispheres after alignment only cancel if weights do
        let t1 = a.to_se3().unwrap();
        let t2 = flipped.to_se3().unwrap();
        assert!(dqb(&[t1, t2], &[0.5, 0.5]).is_ok());
        assert!(dqb(&[t1, t1], &[1.0, -1.0]).is_err());
    }

    #[test]
    fn static_bases_keep_gaussians_fixed() {
        let mut g = scene(2, 60, 3);
        let s = build_scaffold(&g, &[], ScaffoldConfig::default(), 1).unwrap();
        let mut s = s;
        let poses: Vec<Se3> = s.bases.iter().map(|b| b.trajectory[0]).collect();
        s.push_poses(&poses).unwrap();
        apply_scaffold(&mut g, &s, 1).unwrap();
        for i in 0..g.len() {
            assert!((g.mean(1, i) - g.mean(0, i)).norm() < 1e-12);
            let (a, b) = (g.rotation(1, i).to_matrix(), g.rotation(0, i).to_matrix());
            for r in 0..3 {
                for c in 0..3 {
                    assert!((a[r][c] - b[r][c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rigid_motion_propagates_exactly() {
        let mut g = scene(3, 80, 2);
        let mut s = build_scaffold(&g, &[], ScaffoldConfig::default(), 2).unwrap();
        let mut rng = rng_for(5, 5);
        let motion: Vec<Se3> = (0..2).map(|_| random_se3(&mut rng, 0.6)).collect();
        let poses: Vec<Se3> = s
            .bases
            .iter()
            .map(|b| motion[b.instance_label as usize].compose(&b.trajectory[0]))
            .collect();
        s.push_poses(&poses).unwrap();
        apply_scaffold(&mut g, &s, 1).unwrap();
        for i in 0..g.len() {
            let l = g.labels[i] as usize;
            if l >= 2 {
                assert_eq!(g.mean(1, i), g.mean(0, i));
                continue;
            }
            let expect = motion[l].apply(g.mean(0, i));
            assert!((g.mean(1, i) - expect).norm() < 1e-9);
            let er = (motion[l].rotation * g.rotation(0, i)).to_matrix();
            let got = g.rotation(1, i).to_matrix();
            for r in 0..3 {
                for c in 0..3 {
                    assert!((er[r][c] - got[r][c]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn translated_single_base() {
        let mut g = scene(4, 20, 1);
        let mut s = build_scaffold(
            &g,
            &[],
            ScaffoldConfig {
                bases_per_instance: 1,
                ..ScaffoldConfig::default()
            },
            0,
        )
        .unwrap();
        let v = Vec3::new(0.3, -0.2, 0.5);
        let b0 = s.bases[0].trajectory[0];
        s.push_poses(&[Se3 {
            rotation: b0.rotation,
            translation: b0.translation + v,
        }])
        .unwrap();
        apply_scaffold(&mut g, &s, 1).unwrap();
        for a in &s.attachments {
            assert!((g.mean(1, a.gaussian) - g.mean(0, a.gaussian) - v).norm() < 1e-12);
        }
        assert!(apply_scaffold(&mut g, &s, 2).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut g = scene(6, 40, 2);
        let mut s = build_scaffold(
            &g,
            &[],
            ScaffoldConfig {
                bases_per_instance: 4,
                k_nn: 3,
                ..ScaffoldConfig::default()
            },
            3,
        )
        .unwrap();
        let mut rng = rng_for(8, 8);
        let poses: Vec<Se3> = s
            .bases
            .iter()
            .map(|b| random_se3(&mut rng, 0.3).compose(&b.trajectory[0]))
            .collect();
        s.push_poses(&poses).unwrap();
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
            apply_scaffold(g, s, 1).unwrap();
            (0..g.len())
                .map(|i| g.mean(1, i).dot(wm[i]) + g.rotation(1, i).dot(wr[i]))
                .sum()
        };
        loss(&mut g, &s);
        let grads = scaffold_backward(&g, &s, 1, &wm, &wr).unwrap();
        let h = 1e-6;
        for j in 0..s.bases.len() {
            for c in 0..7 {
                let bump = |s: &mut Scaffold, d: f64| {
                    let p = &mut s.bases[j].trajectory[1];
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
                let fd = (loss(&mut g, &sp) - loss(&mut g, &sm)) / (2.0 * h);
                let an = match c {
                    0 => grads.rotations[j].w,
                    1 => grads.rotations[j].x,
                    2 => grads.rotations[j].y,
                    3 => grads.rotations[j].z,
                    4 => grads.translations[j].x,
                    5 => grads.translations[j].y,
                    _ => grads.translations[j].z,
                };
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / denom < 1e-5,
                    "base {j} comp {c}: fd {fd} analytic {an}"
                );
            }
        }
    }
}
