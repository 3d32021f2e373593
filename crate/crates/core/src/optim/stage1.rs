//! Identity-field initialization at `t = 0` with per-view permutation
//! learning.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, step_array3, step_quat, step_vec3, AdamHyper, Moments};
use super::config::TrainConfig;
use super::exec::ViewExecutor;
use super::history::{LossHistory, LossRecord};
use crate::align::sinkhorn::permutation_matrix;
use crate::align::{
    harden, instance_ce_loss, overlap_matrix, permutation_confidence, remap_logits,
    remap_logits_backward, sinkhorn_backward, sinkhorn_normalize, unseen_mask, update_active_set,
    verify_by_overlap, ActiveViewSet, DecoderGrads, IdentityDecoder, Permutation,
    PermutationLatent, SquareMatrix, FEATURE_DIM, HIDDEN_DIM, SINKHORN_ITERS,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gaussian::{logit, GaussianSet};
use crate::geometry::{Quat, Vec3};
use crate::image::{Image, LabelMap};
use crate::raster::{
    l1_loss, labels_from_logits, rasterize, rasterize_backward, ssim_loss, GaussianGrads,
    RenderOptions,
};
use crate::rng::{normal, rng_for, stream};

/// Everything stage 1 learns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Model {
    pub gaussians: GaussianSet,
    pub decoder: IdentityDecoder,
    /// One latent per dataset view; held-out views keep their initial value.
    pub latents: Vec<PermutationLatent>,
    pub active: ActiveViewSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Moments {
    pub colors: Moments,
    pub opacity: Moments,
    pub scales: Moments,
    pub rotations: Moments,
    pub means: Moments,
    pub features: Moments,
    pub w1: Moments,
    pub b1: Moments,
    pub w2: Moments,
    pub b2: Moments,
    pub latents: Vec<Moments>,
}

impl Stage1Moments {
    fn for_model(m: &Stage1Model) -> Self {
        let n = m.gaussians.len();
        let d = &m.decoder;
        Stage1Moments {
            colors: Moments::zeros(3 * n),
            opacity: Moments::zeros(n),
            scales: Moments::zeros(3 * n),
            rotations: Moments::zeros(4 * n),
            means: Moments::zeros(3 * n),
            features: Moments::zeros(m.gaussians.features.len()),
            w1: Moments::zeros(d.w1.len()),
            b1: Moments::zeros(d.b1.len()),
            w2: Moments::zeros(d.w2.len()),
            b2: Moments::zeros(d.b2.len()),
            latents: m
                .latents
                .iter()
                .map(|l| Moments::zeros(l.z.data.len()))
                .collect(),
        }
    }
}

/// Optimizer state between steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub moments: Stage1Moments,
    pub history: LossHistory,
    pub skipped_steps: u64,
}

/// Per-view forward and backward results of one step.
#[derive(Debug, Clone)]
pub struct ViewPass {
    pub view: usize,
    pub ce: f64,
    pub l1: f64,
    pub ssim: f64,
    pub gaussians: GaussianGrads,
    /// Present only for active views.
    pub decoder: Option<DecoderGrads>,
    /// Absent for the reference view.
    pub latent: Option<SquareMatrix>,
    pub rendered: LabelMap,
}

/// Soft permutation used in the forward pass of view `v`.
pub fn view_permutation(
    model: &Stage1Model,
    dataset: &Dataset,
    config: &TrainConfig,
    v: usize,
) -> Result<SquareMatrix> {
    let k = dataset.num_instances;
    if v == dataset.reference_view {
        return Ok(SquareMatrix::identity(k));
    }
    let z = &model.latents[v].z;
    if config.ablations.no_sinkhorn {
        return Ok(z.clone());
    }
    let s = sinkhorn_normalize(z, SINKHORN_ITERS)?;
    if config.ablations.straight_through {
        Ok(permutation_matrix(&harden(&s)?))
    } else {
        Ok(s.0)
    }
}

/// Hardened canonical → local permutation of every view.
pub fn learned_permutations(
    model: &Stage1Model,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<Vec<Permutation>> {
    (0..dataset.views())
        .map(|v| {
            let s = view_permutation(model, dataset, config, v)?;
            Ok(crate::align::hungarian_assign(&s.scaled(-1.0))?.inverse())
        })
        .collect()
}

/// Agreement between the labels rendered at `t = 0` and view `v`'s local
/// labels under `canonical_to_local`.
pub fn view_confidence(
    gaussians: &GaussianSet,
    decoder: &IdentityDecoder,
    dataset: &Dataset,
    canonical_to_local: &Permutation,
    v: usize,
) -> Result<f64> {
    let out = rasterize(gaussians, 0, &dataset.cameras[v], RenderOptions::default())?;
    let (logits, _) = decoder.forward(&out.features)?;
    let rendered = labels_from_logits(&logits, None)?;
    permutation_confidence(&rendered, &dataset.labels[v][0], canonical_to_local)
}

fn nearest_spacing(points: &[Vec3], i: usize, k: usize) -> f64 {
    let mut d: Vec<f64> = points
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, p)| (*p - points[i]).norm_squared())
        .collect();
    d.sort_by(|a, b| a.total_cmp(b));
    let take = k.min(d.len());
    if take == 0 {
        return 0.05;
    }
    d[..take].iter().map(|x| x.sqrt()).sum::<f64>() / take as f64
}

/// Fresh model from the dataset's seed points.
pub fn init_model(dataset: &Dataset, config: &TrainConfig) -> Result<Stage1Model> {
    if dataset.seed_points.is_empty() {
        return Err(Error::Missing("seed points".into()));
    }
    let k = dataset.num_instances;
    let mut rng = rng_for(config.seed, stream::INIT);
    let mut g = GaussianSet::new(FEATURE_DIM, k);
    let pos: Vec<Vec3> = dataset.seed_points.iter().map(|p| p.position).collect();
    for (i, p) in dataset.seed_points.iter().enumerate() {
        let s = nearest_spacing(&pos, i, 3).clamp(1e-3, 1.0);
        let f: Vec<f64> = (0..FEATURE_DIM)
            .map(|_| config.feature_init * normal(&mut rng))
            .collect();
        g.push(
            p.position,
            Quat::IDENTITY,
            [s; 3],
            0.5,
            p.color,
            &f,
            k as u8,
        )?;
    }
    let decoder = IdentityDecoder::random(FEATURE_DIM, HIDDEN_DIM, k + 1, &mut rng);
    let latents = (0..dataset.views())
        .map(|v| PermutationLatent::zeros(v, k))
        .collect();
    let active = if config.ablations.no_progressive {
        let mut a = ActiveViewSet::new(dataset.reference_view, config.activation_threshold)?;
        a.active.extend(dataset.training_views());
        a
    } else {
        ActiveViewSet::new(dataset.reference_view, config.activation_threshold)?
    };
    Ok(Stage1Model {
        gaussians: g,
        decoder,
        latents,
        active,
    })
}

fn photometric_grad(img: &Image, gt: &Image, config: &TrainConfig) -> Result<(f64, f64, Image)> {
    let l1 = l1_loss(img, gt)?;
    let ss = ssim_loss(img, gt)?;
    let mut d = l1.grad;
    for (a, b) in d.data.iter_mut().zip(&ss.grad.data) {
        *a = config.lambda_l1 * *a + config.lambda_ssim * b;
    }
    Ok((l1.loss, ss.loss, d))
}

/// Forward and backward pass for one training view at `t = 0`.
pub fn view_pass(
    model: &Stage1Model,
    dataset: &Dataset,
    config: &TrainConfig,
    v: usize,
) -> Result<ViewPass> {
    let cam = &dataset.cameras[v];
    let g = &model.gaussians;
    let out = rasterize(g, 0, cam, RenderOptions::default())?;
    let (l1, ssim, d_image) = photometric_grad(&out.image, &dataset.frames[v][0], config)?;

    let (logits, cache) = model.decoder.forward(&out.features)?;
    let rendered = labels_from_logits(&logits, None)?;
    let s = view_permutation(model, dataset, config, v)?;
    let local = remap_logits(&s, &logits)?;
    let labels = &dataset.labels[v][0];
    let mask = if config.ablations.no_track_masking {
        vec![true; labels.len()]
    } else {
        let c2l = crate::align::hungarian_assign(&s.scaled(-1.0))?.inverse();
        unseen_mask(&rendered, &c2l, labels)?
    };
    let ce = instance_ce_loss(&local, labels, &mask)?;
    let active = model.active.contains(v);
    let (d_logits, d_s) = remap_logits_backward(&s, &logits, &ce.grad, active)?;

    let latent = if v == dataset.reference_view {
        None
    } else if config.ablations.no_sinkhorn {
        Some(d_s)
    } else {
        Some(sinkhorn_backward(
            &model.latents[v].z,
            SINKHORN_ITERS,
            &d_s,
        )?)
    };
    let (decoder, d_features) = match d_logits {
        Some(dl) => {
            let mut dg = DecoderGrads::zeros_like(&model.decoder);
            let df = model
                .decoder
                .backward(&out.features, &cache, &dl, &mut dg)?;
            (Some(dg), Some(df))
        }
        None => (None, None),
    };
    let grads = rasterize_backward(g, cam, &out, &d_image, d_features.as_ref())?;
    Ok(ViewPass {
        view: v,
        ce: ce.loss,
        l1,
        ssim,
        gaussians: grads,
        decoder,
        latent,
        rendered,
    })
}

/// Stepwise stage-1 optimizer.
#[derive(Debug, Clone)]
pub struct Stage1<'a> {
    pub dataset: &'a Dataset,
    pub config: &'a TrainConfig,
    pub model: Stage1Model,
    pub state: TrainState,
}

impl<'a> Stage1<'a> {
    pub fn new(dataset: &'a Dataset, config: &'a TrainConfig) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let model = init_model(dataset, config)?;
        Ok(Self::resume(dataset, config, model, None))
    }

    /// Continues from a saved model; moments restart at zero when absent.
    pub fn resume(
        dataset: &'a Dataset,
        config: &'a TrainConfig,
        model: Stage1Model,
        state: Option<TrainState>,
    ) -> Self {
        let state = state.unwrap_or_else(|| TrainState {
            step: 0,
            moments: Stage1Moments::for_model(&model),
            history: LossHistory::new(config.history_capacity),
            skipped_steps: 0,
        });
        Stage1 {
            dataset,
            config,
            model,
            state,
        }
    }

    pub fn step<E: ViewExecutor>(&mut self, exec: &E) -> Result<LossRecord> {
        let views = self.dataset.training_views();
        if views.is_empty() {
            return Err(Error::Missing("training views".into()));
        }
        let (model, dataset, config) = (&self.model, self.dataset, self.config);
        let passes: Vec<ViewPass> = exec
            .map(views.len(), |i| view_pass(model, dataset, config, views[i]))
            .into_iter()
            .collect::<Result<_>>()?;

        let inv = 1.0 / views.len() as f64;
        let n = self.model.gaussians.len();
        let mut gg = GaussianGrads::zeros(n, self.model.gaussians.feature_dim);
        let mut dg = DecoderGrads::zeros_like(&self.model.decoder);
        let mut dz: Vec<Option<SquareMatrix>> = vec![None; self.dataset.views()];
        let (mut ce, mut l1, mut ss) = (0.0, 0.0, 0.0);
        for p in &passes {
            ce += p.ce * inv;
            l1 += p.l1 * inv;
            ss += p.ssim * inv;
            gg.add(&p.gaussians);
            if let Some(d) = &p.decoder {
                dg.add(d);
            }
            dz[p.view] = p.latent.clone();
        }
        gg.scale(inv);
        scale_decoder(&mut dg, inv);
        for z in dz.iter_mut().flatten() {
            z.data.iter_mut().for_each(|v| *v *= inv);
        }

        self.state.step += 1;
        let t = self.state.step;
        let finite = gg.is_finite()
            && [&dg.w1, &dg.b1, &dg.w2, &dg.b2]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
            && dz.iter().flatten().all(|z| z.is_finite());
        if finite {
            self.apply(&gg, &dg, &dz, t)?;
        } else {
            self.state.skipped_steps += 1;
        }

        if t.is_multiple_of(self.config.activation_interval)
            && !self.config.ablations.no_progressive
        {
            self.update_activation(&passes)?;
        }
        let rec = LossRecord {
            stage: 1,
            t: 0,
            step: t,
            total: ce + self.config.lambda_l1 * l1 + self.config.lambda_ssim * ss,
            ce,
            l1,
            ssim: ss,
            rigidity: 0.0,
            active_views: self.model.active.len(),
            skipped: !finite,
        };
        self.state.history.push(rec);
        Ok(rec)
    }

    fn apply(
        &mut self,
        gg: &GaussianGrads,
        dg: &DecoderGrads,
        dz: &[Option<SquareMatrix>],
        t: u64,
    ) -> Result<()> {
        let h = AdamHyper::default();
        let lr = self.config.lr;
        let m = &mut self.state.moments;
        let g = &mut self.model.gaussians;
        step_array3(&mut g.colors, &gg.colors, &mut m.colors, lr.colors, t, h)?;
        adam_step(
            &mut g.opacity_logits,
            &gg.opacity_logits,
            &mut m.opacity,
            lr.opacity,
            t,
            h,
        )?;
        step_array3(
            &mut g.log_scales,
            &gg.log_scales,
            &mut m.scales,
            lr.scales,
            t,
            h,
        )?;
        step_quat(
            &mut g.frames[0].rotations,
            &gg.rotations,
            &mut m.rotations,
            lr.rotations,
            t,
            h,
        )?;
        step_vec3(
            &mut g.frames[0].means,
            &gg.means,
            &mut m.means,
            lr.means,
            t,
            h,
        )?;
        adam_step(
            &mut g.features,
            &gg.features,
            &mut m.features,
            lr.features,
            t,
            h,
        )?;
        let d = &mut self.model.decoder;
        adam_step(&mut d.w1, &dg.w1, &mut m.w1, lr.decoder, t, h)?;
        adam_step(&mut d.b1, &dg.b1, &mut m.b1, lr.decoder, t, h)?;
        adam_step(&mut d.w2, &dg.w2, &mut m.w2, lr.decoder, t, h)?;
        adam_step(&mut d.b2, &dg.b2, &mut m.b2, lr.decoder, t, h)?;
        for (v, z) in dz.iter().enumerate() {
            if let Some(z) = z {
                let lat = &mut self.model.latents[v];
                adam_step(&mut lat.z.data, &z.data, &mut m.latents[v], lr.latent, t, h)?;
                lat.clip();
            }
        }
        // projections
        for q in &mut g.frames[0].rotations {
            *q = q.normalized();
        }
        for c in g.colors.iter_mut().flatten() {
            *c = c.clamp(0.0, 1.0);
        }
        for s in g.log_scales.iter_mut().flatten() {
            *s = s.clamp(-12.0, 2.0);
        }
        for o in &mut g.opacity_logits {
            *o = o.clamp(logit(1e-4), logit(1.0 - 1e-4));
        }
        Ok(())
    }

    fn update_activation(&mut self, passes: &[ViewPass]) -> Result<()> {
        let views = self.dataset.views();
        let k = self.dataset.num_instances;
        let mut scores = vec![0.0; views];
        let mut eligible = vec![false; views];
        for p in passes {
            let v = p.view;
            if v == self.dataset.reference_view {
                continue;
            }
            // pre-update latent, matching the rendered labels
            let s = view_permutation(&self.model, self.dataset, self.config, v)?;
            let l2c = crate::align::hungarian_assign(&s.scaled(-1.0))?;
            let local = &self.dataset.labels[v][0];
            scores[v] = permutation_confidence(&p.rendered, local, &l2c.inverse())?;
            eligible[v] = verify_by_overlap(&l2c, &overlap_matrix(&p.rendered, local, k)?)?;
        }
        self.model.active = update_active_set(&self.model.active, &scores, Some(&eligible));
        Ok(())
    }

    pub fn run<E: ViewExecutor>(&mut self, exec: &E, steps: u64) -> Result<()> {
        for _ in 0..steps {
            self.step(exec)?;
        }
        Ok(())
    }
}

fn scale_decoder(d: &mut DecoderGrads, s: f64) {
    for v in [&mut d.w1, &mut d.b1, &mut d.w2, &mut d.b2] {
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Sets each Gaussian's label to the decoder argmax of its own feature;
/// background becomes the unassigned label.
pub fn label_gaussians(gaussians: &mut GaussianSet, decoder: &IdentityDecoder) -> Result<()> {
    if decoder.input != gaussians.feature_dim || decoder.output != gaussians.num_instances + 1 {
        return Err(Error::shape("decoder does not match the gaussian features"));
    }
    for i in 0..gaussians.len() {
        let c = decoder.classify(gaussians.feature(i));
        gaussians.labels[i] = c as u8;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub model: Stage1Model,
    pub state: TrainState,
    /// Canonical → local, per view.
    pub permutations: Vec<Permutation>,
}

/// Runs `config.stage1_steps` steps and labels the Gaussians.
pub fn stage1_init<E: ViewExecutor>(
    dataset: &Dataset,
    config: &TrainConfig,
    exec: &E,
) -> Result<Stage1Output> {
    if dataset.labels[dataset.reference_view].is_empty() {
        return Err(Error::Missing("reference view labels at t = 0".into()));
    }
    let mut s = Stage1::new(dataset, config)?;
    s.run(exec, config.stage1_steps)?;
    finish_stage1(s)
}

pub fn finish_stage1(s: Stage1<'_>) -> Result<Stage1Output> {
    let mut model = s.model;
    label_gaussians(&mut model.gaussians, &model.decoder)?;
    let permutations = learned_permutations(&model, s.dataset, s.config)?;
    Ok(Stage1Output {
        model,
        state: s.state,
        permutations,
    })
}
