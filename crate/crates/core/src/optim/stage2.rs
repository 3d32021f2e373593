//! Sequential per-timestep tracking of the motion bases.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, step_array3, step_quat, step_vec3, AdamHyper, Moments};
use super::config::TrainConfig;
use super::exec::ViewExecutor;
use super::history::{LossHistory, LossRecord};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::geometry::{Quat, Se3, Vec3};
use crate::raster::{
    l1_loss, rasterize, rasterize_backward, ssim_loss, GaussianGrads, RenderOptions,
};
use crate::scaffold::{apply_scaffold, build_scaffold, rigidity_loss, scaffold_backward, Scaffold};

/// Pose at `t` from the last two: `p[t-1] (p[t-2])^-1 p[t-1]`. The first
/// new pose copies `t = 0`.
pub fn extrapolate(trajectory: &[Se3]) -> Se3 {
    match trajectory {
        [] => Se3::IDENTITY,
        [only] => *only,
        [.., a, b] => {
            let delta = b.compose(&a.inverse());
            let p = delta.compose(b);
            Se3 {
                rotation: p.rotation.normalized(),
                translation: p.translation,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimestepLoss {
    pub photometric: f64,
    pub l1: f64,
    pub ssim: f64,
    pub rigidity: f64,
}

/// Called after each tracked timestep with the state so far.
pub type TimestepHook<'a> = &'a mut dyn FnMut(usize, &GaussianSet, &Scaffold) -> Result<()>;

#[derive(Debug, Clone)]
struct ViewPhoto {
    l1: f64,
    ssim: f64,
    grads: GaussianGrads,
}

fn photo_pass(
    g: &GaussianSet,
    dataset: &Dataset,
    config: &TrainConfig,
    v: usize,
    t: usize,
) -> Result<ViewPhoto> {
    let cam = &dataset.cameras[v];
    let opts = RenderOptions {
        skip_features: true,
        ..RenderOptions::default()
    };
    let out = rasterize(g, t, cam, opts)?;
    let gt = &dataset.frames[v][t];
    let l1 = l1_loss(&out.image, gt)?;
    let ss = ssim_loss(&out.image, gt)?;
    let mut d = l1.grad;
    for (a, b) in d.data.iter_mut().zip(&ss.grad.data) {
        *a = config.lambda_l1 * *a + config.lambda_ssim * b;
    }
    let grads = rasterize_backward(g, cam, &out, &d, None)?;
    Ok(ViewPhoto {
        l1: l1.loss,
        ssim: ss.loss,
        grads,
    })
}

/// Moments of one timestep's optimization.
#[derive(Debug, Clone)]
struct StepMoments {
    rot: Moments,
    tr: Moments,
    colors: Moments,
    opacity: Moments,
    scales: Moments,
}

/// Optimizes the base poses at timestep `t` for `steps` steps.
/// `gaussians` must hold frame `t` and `scaffold` poses up to `t`.
#[allow(clippy::too_many_arguments)]
pub fn track_timestep<E: ViewExecutor>(
    gaussians: &mut GaussianSet,
    scaffold: &mut Scaffold,
    dataset: &Dataset,
    config: &TrainConfig,
    t: usize,
    steps: u64,
    exec: &E,
    history: &mut LossHistory,
) -> Result<TimestepLoss> {
    let views = dataset.training_views();
    if views.is_empty() {
        return Err(Error::Missing(alloc::format!(
            "training views at timestep {t}"
        )));
    }
    let nb = scaffold.bases.len();
    let n = gaussians.len();
    let mut m = StepMoments {
        rot: Moments::zeros(4 * nb),
        tr: Moments::zeros(3 * nb),
        colors: Moments::zeros(3 * n),
        opacity: Moments::zeros(n),
        scales: Moments::zeros(3 * n),
    };
    let h = AdamHyper::default();
    let lr = config.lr;
    let inv = 1.0 / views.len() as f64;
    let mut last = TimestepLoss {
        photometric: 0.0,
        l1: 0.0,
        ssim: 0.0,
        rigidity: 0.0,
    };
    for step in 1..=steps {
        apply_scaffold(gaussians, scaffold, t)?;
        let g = &*gaussians;
        let passes: Vec<ViewPhoto> = exec
            .map(views.len(), |i| photo_pass(g, dataset, config, views[i], t))
            .into_iter()
            .collect::<Result<_>>()?;
        let mut gg = GaussianGrads::zeros(n, g.feature_dim);
        let (mut l1, mut ss) = (0.0, 0.0);
        for p in &passes {
            gg.add(&p.grads);
            l1 += p.l1 * inv;
            ss += p.ssim * inv;
        }
        gg.scale(inv);
        let photometric = config.lambda_l1 * l1 + config.lambda_ssim * ss;
        let (rig_total, base) = if nb > 0 {
            let rig = rigidity_loss(scaffold, g, t, config.rigidity)?;
            let d_means: Vec<Vec3> = gg
                .means
                .iter()
                .zip(&rig.d_means)
                .map(|(a, b)| *a + *b)
                .collect();
            let mut bg = scaffold_backward(g, scaffold, t, &d_means, &gg.rotations)?;
            bg.add(&rig.base_grads);
            (rig.total, bg)
        } else {
            (0.0, crate::scaffold::BaseGrads::zeros(0))
        };
        last = TimestepLoss {
            photometric,
            l1,
            ssim: ss,
            rigidity: rig_total,
        };
        let finite = base.is_finite() && gg.is_finite();
        history.push(LossRecord {
            stage: 2,
            t,
            step,
            total: photometric + rig_total,
            ce: 0.0,
            l1,
            ssim: ss,
            rigidity: rig_total,
            active_views: views.len(),
            skipped: !finite,
        });
        if !finite {
            continue;
        }
        if nb > 0 {
            let mut rots: Vec<Quat> = scaffold
                .bases
                .iter()
                .map(|b| b.trajectory[t].rotation)
                .collect();
            let mut trs: Vec<Vec3> = scaffold
                .bases
                .iter()
                .map(|b| b.trajectory[t].translation)
                .collect();
            step_quat(
                &mut rots,
                &base.rotations,
                &mut m.rot,
                lr.base_rotation,
                step,
                h,
            )?;
            step_vec3(
                &mut trs,
                &base.translations,
                &mut m.tr,
                lr.base_translation,
                step,
                h,
            )?;
            for (b, (q, p)) in scaffold.bases.iter_mut().zip(rots.iter().zip(&trs)) {
                b.trajectory[t] = Se3 {
                    rotation: q.normalized(),
                    translation: *p,
                };
            }
        }
        if config.ablations.finetune_appearance {
            step_array3(
                &mut gaussians.colors,
                &gg.colors,
                &mut m.colors,
                lr.colors,
                step,
                h,
            )?;
            adam_step(
                &mut gaussians.opacity_logits,
                &gg.opacity_logits,
                &mut m.opacity,
                lr.opacity,
                step,
                h,
            )?;
            step_array3(
                &mut gaussians.log_scales,
                &gg.log_scales,
                &mut m.scales,
                lr.scales,
                step,
                h,
            )?;
            for c in gaussians.colors.iter_mut().flatten() {
                *c = c.clamp(0.0, 1.0);
            }
        }
    }
    apply_scaffold(gaussians, scaffold, t)?;
    Ok(last)
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    /// Every frame materialized.
    pub gaussians: GaussianSet,
    pub scaffold: Scaffold,
    pub history: LossHistory,
    /// Last-step loss of each timestep `1..T`.
    pub timestep_losses: Vec<TimestepLoss>,
}

/// Builds the scaffold on labeled stage-1 Gaussians and tracks every
/// later timestep in order.
pub fn stage2_sequential<E: ViewExecutor>(
    dataset: &Dataset,
    gaussians: &GaussianSet,
    config: &TrainConfig,
    exec: &E,
) -> Result<Stage2Output> {
    config.validate()?;
    let mut g = gaussians.clone();
    g.truncate_frames(1);
    let scaffold = build_scaffold(&g, &dataset.static_labels, config.scaffold(), config.seed)?;
    continue_stage2(dataset, g, scaffold, config, exec, None)
}

/// Resumes tracking from whatever timesteps `scaffold` already holds.
pub fn continue_stage2<E: ViewExecutor>(
    dataset: &Dataset,
    mut g: GaussianSet,
    mut scaffold: Scaffold,
    config: &TrainConfig,
    exec: &E,
    mut on_timestep: Option<TimestepHook<'_>>,
) -> Result<Stage2Output> {
    let mut history = LossHistory::new(config.history_capacity);
    let mut losses = Vec::new();
    let start = scaffold.timesteps().min(g.timesteps());
    g.truncate_frames(start);
    scaffold.truncate(start);
    for t in start..dataset.timesteps() {
        g.push_frame_copy();
        let poses: Vec<Se3> = scaffold
            .bases
            .iter()
            .map(|b| extrapolate(&b.trajectory))
            .collect();
        scaffold.push_poses(&poses)?;
        let l = track_timestep(
            &mut g,
            &mut scaffold,
            dataset,
            config,
            t,
            config.steps_per_timestep,
            exec,
            &mut history,
        )?;
        losses.push(l);
        if let Some(cb) = on_timestep.as_mut() {
            cb(t, &g, &scaffold)?;
        }
    }
    Ok(Stage2Output {
        gaussians: g,
        scaffold,
        history,
        timestep_losses: losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_velocity() {
        let a = Se3::from_translation(Vec3::new(0.0, 0.0, 0.0));
        let b = Se3::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let c = extrapolate(&[a, b]);
        assert!((c.translation - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(extrapolate(&[b]), b);
        let r1 = Se3::from_rotation(Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.1));
        let r2 = Se3::from_rotation(Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.2));
        let r3 = extrapolate(&[r1, r2]);
        let want = Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.3);
        assert!((r3.rotation.canonical() - want.canonical()).norm() < 1e-12);
    }
}
