//! Evaluation of a checkpoint against a dataset directory.

use std::path::Path;

use sha2::{Digest, Sha256};

use inst4dgs_core::align::Permutation;
use inst4dgs_core::dataset::Dataset;
use inst4dgs_core::geometry::Vec3;
use inst4dgs_core::image::{Image, LabelMap};
use inst4dgs_core::metrics::{
    perm_accuracy, relabel, test_time_align, traj_rmse, traj_rmse_per_timestep, Metric,
    MetricsBundle, MseAccumulator, SceneMetrics, SegmentationCounts,
};
use inst4dgs_core::optim::ViewExecutor;
use inst4dgs_core::raster::{labels_from_logits, rasterize, ssim, RenderOptions};

use crate::checkpoint::{read_checkpoint, Checkpoint};
use crate::dataset_io::{read_dataset, read_truth, Truth};
use crate::error::{Error, Result};
use crate::files;
use crate::run::{read_config, read_log_totals};

/// Rendered frame (quantized like the dataset) and canonical labels.
pub fn render_frame(
    model: &Checkpoint,
    dataset: &Dataset,
    v: usize,
    t: usize,
) -> Result<(Image, LabelMap)> {
    let out = rasterize(
        &model.gaussians,
        t,
        &dataset.cameras[v],
        RenderOptions::default(),
    )?;
    let img = &out.image;
    let image = Image::from_bytes(img.width, img.height, &img.to_bytes())?;
    let (logits, _) = model.decoder.forward(&out.features)?;
    Ok((image, labels_from_logits(&logits, None)?))
}

struct ViewEval {
    mse: MseAccumulator,
    ssim: Vec<f64>,
    counts: SegmentationCounts,
    /// Aligned prediction per timestep.
    aligned: Vec<LabelMap>,
}

fn eval_view(
    model: &Checkpoint,
    dataset: &Dataset,
    gt_labels: &[LabelMap],
    v: usize,
    timesteps: usize,
) -> Result<ViewEval> {
    let mut mse = MseAccumulator::default();
    let mut ssims = Vec::with_capacity(timesteps);
    let mut preds = Vec::with_capacity(timesteps);
    for t in 0..timesteps {
        let (img, labels) = render_frame(model, dataset, v, t)?;
        let gt = &dataset.frames[v][t];
        mse.add(&img, gt)?;
        ssims.push(ssim(&img, gt)?);
        preds.push(labels);
    }
    let align = test_time_align(&preds, &gt_labels[..timesteps], dataset.num_instances)?;
    let mut counts = SegmentationCounts::new();
    let mut aligned = Vec::with_capacity(timesteps);
    for (p, g) in preds.iter().zip(gt_labels) {
        let a = relabel(p, &align);
        counts.add(&a, g)?;
        aligned.push(a);
    }
    Ok(ViewEval {
        mse,
        ssim: ssims,
        counts,
        aligned,
    })
}

/// Base positions against the true part motion, each base following the
/// part of the ground-truth Gaussian nearest its anchor.
pub fn trajectory_error(
    model: &Checkpoint,
    truth: &Truth,
    timesteps: usize,
) -> Result<(Metric, Vec<f64>)> {
    let Some(scaffold) = &model.scaffold else {
        return Ok((Metric::UNDEFINED, Vec::new()));
    };
    let g = &truth.model.gaussians;
    let horizon = timesteps
        .min(scaffold.timesteps())
        .min(truth.parts.first().map_or(0, |p| p.poses.len()));
    let mut pred: Vec<Vec<Vec3>> = Vec::with_capacity(scaffold.bases.len());
    let mut gt: Vec<Vec<Vec3>> = Vec::with_capacity(scaffold.bases.len());
    for b in &scaffold.bases {
        let nearest = (0..g.len())
            .min_by(|&i, &j| {
                let di = (g.mean(0, i) - b.anchor).norm_squared();
                let dj = (g.mean(0, j) - b.anchor).norm_squared();
                di.total_cmp(&dj)
            })
            .ok_or_else(|| Error::Missing("ground-truth gaussians".into()))?;
        let part = &truth.parts[truth.gaussian_parts[nearest]];
        pred.push((0..horizon).map(|t| b.trajectory[t].translation).collect());
        gt.push(
            (0..horizon)
                .map(|t| part.poses[t].apply(b.anchor))
                .collect(),
        );
    }
    if pred.is_empty() || horizon == 0 {
        return Ok((Metric::UNDEFINED, Vec::new()));
    }
    Ok((traj_rmse(&pred, &gt)?, traj_rmse_per_timestep(&pred, &gt)?))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: SceneMetrics,
    /// `aligned[i][t]` for the i-th evaluation view.
    pub aligned: Vec<Vec<LabelMap>>,
    pub views: Vec<usize>,
}

/// Renders every evaluation view at every timestep the model covers.
pub fn evaluate<E: ViewExecutor>(
    model: &Checkpoint,
    dataset: &Dataset,
    truth: Option<&Truth>,
    scene: &str,
    exec: &E,
) -> Result<Evaluation> {
    let views = dataset.evaluation_views();
    let timesteps = model.gaussians.timesteps().min(dataset.timesteps());
    let gt_labels = |v: usize| -> &[LabelMap] {
        match truth.and_then(|t| t.canonical_labels.as_ref()) {
            Some(c) => &c[v],
            None => &dataset.labels[v],
        }
    };
    let per_view: Vec<ViewEval> = exec
        .map(views.len(), |i| {
            eval_view(model, dataset, gt_labels(views[i]), views[i], timesteps)
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let mut mse = MseAccumulator::default();
    let mut counts = SegmentationCounts::new();
    let mut ssims = Vec::new();
    let mut aligned = Vec::with_capacity(per_view.len());
    for pv in per_view {
        mse.sum += pv.mse.sum;
        mse.count += pv.mse.count;
        counts.merge(&pv.counts);
        ssims.extend(pv.ssim);
        aligned.push(pv.aligned);
    }
    let mut m = SceneMetrics::empty(scene);
    m.miou_instance = counts.miou_instance();
    m.macc = counts.macc();
    m.miou_dynamic = counts.miou_dynamic();
    m.psnr = mse.psnr();
    m.ssim = if ssims.is_empty() {
        Metric::UNDEFINED
    } else {
        Metric::Value(ssims.iter().sum::<f64>() / ssims.len() as f64)
    };
    if let Some(truth) = truth {
        let learned = model.canonical_to_local()?;
        let train = dataset.training_views();
        let l: Vec<Permutation> = train.iter().map(|&v| learned[v].clone()).collect();
        let g: Vec<Permutation> = train
            .iter()
            .map(|&v| truth.permutations[v].clone())
            .collect();
        m.perm_accuracy = perm_accuracy(&l, &g)?;
        let (rmse, per_t) = trajectory_error(model, truth, timesteps)?;
        m.traj_rmse = rmse;
        m.traj_error_per_timestep = per_t;
    }
    Ok(Evaluation {
        metrics: m,
        aligned,
        views,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Evaluates a run directory (its `model/`) or a bare checkpoint
/// directory on `data` as one scene.
pub fn eval_run<E: ViewExecutor>(run: &Path, data: &Path, exec: &E) -> Result<MetricsBundle> {
    let (model_dir, hashed, seed) = if run.join("model").is_dir() {
        (
            run.join("model"),
            run.join("config.json"),
            read_config(run)?.train.seed,
        )
    } else if run.join("meta.json").is_file() {
        (run.to_path_buf(), run.join("meta.json"), 0)
    } else {
        return Err(Error::Missing(format!(
            "{} holds neither model/ nor a checkpoint",
            run.display()
        )));
    };
    let model = read_checkpoint(&model_dir)?;
    let dataset = read_dataset(data)?;
    if model.meta.num_instances != dataset.num_instances {
        return Err(Error::Config(
            "model and dataset disagree on the instance count".into(),
        ));
    }
    let truth = if data.join("gt/model").is_dir() {
        Some(read_truth(data, &dataset)?)
    } else {
        None
    };
    let scene = data
        .file_name()
        .map_or_else(|| "scene".to_string(), |n| n.to_string_lossy().into_owned());
    let mut ev = evaluate(&model, &dataset, truth.as_ref(), &scene, exec)?;
    let log = run.join("log.csv");
    if log.exists() {
        ev.metrics.loss_history = read_log_totals(&log)?;
    }
    let hash = sha256_hex(&files::read(&hashed)?);
    Ok(MetricsBundle::new(seed, hash, vec![ev.metrics]))
}
