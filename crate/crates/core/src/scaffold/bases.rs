use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::geometry::{Se3, Vec3};
use crate::rng::{rng_for_item, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionBase {
    pub instance_label: u8,
    /// Gaussian the base was sampled from.
    pub source: usize,
    pub anchor: Vec3,
    /// Pose per materialized timestep, `trajectory[0]` at the source
    /// Gaussian's canonical pose.
    pub trajectory: Vec<Se3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub gaussian: usize,
    pub bases: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaffoldConfig {
    pub bases_per_instance: usize,
    pub k_nn: usize,
    pub graph_knn: usize,
    /// Restrict attachments and base-graph edges to one instance.
    pub group_by_instance: bool,
    /// Every dynamic Gaussian becomes its own base with weight 1.
    pub per_gaussian_bases: bool,
}

impl Default for ScaffoldConfig {
    fn default() -> Self {
        ScaffoldConfig {
            bases_per_instance: 16,
            k_nn: 4,
            graph_knn: 6,
            group_by_instance: true,
            per_gaussian_bases: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaffold {
    pub config: ScaffoldConfig,
    pub bases: Vec<MotionBase>,
    /// One entry per dynamic Gaussian, in Gaussian order.
    pub attachments: Vec<Attachment>,
    /// Directed base-graph edges `(j, k)` with `k` among `j`'s neighbors.
    pub edges: Vec<(usize, usize)>,
    /// Dynamic labels that owned no Gaussians.
    pub skipped_labels: Vec<u8>,
}

impl Scaffold {
    pub fn timesteps(&self) -> usize {
        self.bases
            .iter()
            .map(|b| b.trajectory.len())
            .min()
            .unwrap_or(0)
    }

    /// Appends a pose for every base at the next timestep.
    pub fn push_poses(&mut self, poses: &[Se3]) -> Result<()> {
        if poses.len() != self.bases.len() {
            return Err(Error::shape("pose count differs from base count"));
        }
        for (b, p) in self.bases.iter_mut().zip(poses) {
            b.trajectory.push(*p);
        }
        Ok(())
    }

    pub fn truncate(&mut self, timesteps: usize) {
        for b in &mut self.bases {
            b.trajectory.truncate(timesteps.max(1));
        }
    }
}

/// Samples up to `per_instance` Gaussians of each listed label without
/// replacement. Returns the bases (grouped by label, ascending source within
/// a label) and the labels that had no Gaussians.
pub fn sample_bases(
    gaussians: &GaussianSet,
    labels: &[u8],
    per_instance: usize,
    seed: u64,
) -> (Vec<MotionBase>, Vec<u8>) {
    let mut bases = Vec::new();
    let mut skipped = Vec::new();
    for &label in labels {
        let members: Vec<usize> = (0..gaussians.len())
            .filter(|&i| gaussians.labels[i] == label)
            .collect();
        if members.is_empty() {
            skipped.push(label);
            continue;
        }
        let amount = per_instance.min(members.len());
        let mut rng = rng_for_item(seed, stream::BASES, label as u64, 0);
        let mut picked: Vec<usize> = index::sample(&mut rng, members.len(), amount)
            .into_iter()
            .map(|k| members[k])
            .collect();
        picked.sort_unstable();
        for i in picked {
            bases.push(MotionBase {
                instance_label: label,
                source: i,
                anchor: gaussians.mean(0, i),
                trajectory: vec![Se3 {
                    rotation: gaussians.rotation(0, i),
                    translation: gaussians.mean(0, i),
                }],
            });
        }
    }
    (bases, skipped)
}

/// Gaussian RBF weights `exp(-d^2 / 2r^2)` normalized to sum 1, falling back
/// to one-hot on the nearest when every weight underflows.
pub fn blend_weights(distances: &[f64], radius: f64) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Err(Error::shape("no neighbors to weight"));
    }
    if !(radius > 0.0) {
        return Err(Error::config("radius", "must be positive"));
    }
    let raw: Vec<f64> = distances
        .iter()
        .map(|d| (-d * d / (2.0 * radius * radius)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        return Ok(raw.into_iter().map(|w| w / sum).collect());
    }
    let nearest = distances
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut w = vec![0.0; distances.len()];
    w[nearest] = 1.0;
    Ok(w)
}

/// Indices of the `k` candidates nearest to `p`, ties to the lower index.
fn nearest(p: Vec3, candidates: &[(usize, Vec3)], k: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&(j, q)| (j, (q - p).norm()))
        .collect();
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.truncate(k);
    d
}

/// Attaches each Gaussian that `is_dynamic` accepts to its `k_nn` nearest
/// bases by `t = 0` distance, restricted to its own label when grouping.
pub fn attach(
    gaussians: &GaussianSet,
    bases: &[MotionBase],
    k_nn: usize,
    group_by_instance: bool,
    is_dynamic: impl Fn(usize) -> bool,
) -> Result<Vec<Attachment>> {
    if k_nn == 0 {
        return Err(Error::config("k_nn", "must be at least 1"));
    }
    let group_of = |label: u8| if group_by_instance { label as usize } else { 0 };
    let groups = if group_by_instance { 256 } else { 1 };
    let mut candidates: Vec<Vec<(usize, Vec3)>> = vec![Vec::new(); groups];
    for (j, b) in bases.iter().enumerate() {
        candidates[group_of(b.instance_label)].push((j, b.anchor));
    }
    let mut found: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
    for i in (0..gaussians.len()).filter(|&i| is_dynamic(i)) {
        let label = gaussians.labels[i];
        let cands = &candidates[group_of(label)];
        if cands.is_empty() {
            return Err(Error::Missing(format!(
                "motion bases for instance label {label}"
            )));
        }
        found.push((i, nearest(gaussians.mean(0, i), cands, k_nn)));
    }
    // per-group radius: mean distance to the k-th neighbor
    let mut sum = vec![0.0; groups];
    let mut count = vec![0usize; groups];
    for (i, nn) in &found {
        let g = group_of(gaussians.labels[*i]);
        sum[g] += nn.last().map_or(0.0, |x| x.1);
        count[g] += 1;
    }
    let mut out = Vec::with_capacity(found.len());
    for (i, nn) in found {
        let g = group_of(gaussians.labels[i]);
        let r = (sum[g] / count[g] as f64).max(f64::MIN_POSITIVE);
        let d: Vec<f64> = nn.iter().map(|x| x.1).collect();
        out.push(Attachment {
            gaussian: i,
            bases: nn.iter().map(|x| x.0).collect(),
            weights: blend_weights(&d, r)?,
        });
    }
    Ok(out)
}

/// Directed KNN graph over base anchors.
pub fn base_graph(
    bases: &[MotionBase],
    knn: usize,
    group_by_instance: bool,
) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for (j, b) in bases.iter().enumerate() {
        let cands: Vec<(usize, Vec3)> = bases
            .iter()
            .enumerate()
            .filter(|(k, o)| {
                *k != j && (!group_by_instance || o.instance_label == b.instance_label)
            })
            .map(|(k, o)| (k, o.anchor))
            .collect();
        for (k, _) in nearest(b.anchor, &cands, knn) {
            edges.push((j, k));
        }
    }
    edges
}

/// Errors if any attachment or edge crosses instance labels.
pub fn check_label_purity(gaussians: &GaussianSet, scaffold: &Scaffold) -> Result<()> {
    for a in &scaffold.attachments {
        let l = gaussians.labels[a.gaussian];
        if a.bases
            .iter()
            .any(|&j| scaffold.bases[j].instance_label != l)
        {
            return Err(Error::Degenerate(format!(
                "gaussian {} attaches across labels",
                a.gaussian
            )));
        }
    }
    for &(j, k) in &scaffold.edges {
        if scaffold.bases[j].instance_label != scaffold.bases[k].instance_label {
            return Err(Error::Degenerate(format!(
                "base edge ({j}, {k}) crosses labels"
            )));
        }
    }
    Ok(())
}

/// Samples, attaches, and links bases for every label not marked static.
/// Unassigned Gaussians stay fixed.
pub fn build_scaffold(
    gaussians: &GaussianSet,
    static_labels: &[u8],
    config: ScaffoldConfig,
    seed: u64,
) -> Result<Scaffold> {
    let k = gaussians.num_instances;
    let dynamic_labels: Vec<u8> = (0..k as u8)
        .filter(|l| !static_labels.contains(l))
        .collect();
    let is_dynamic = |i: usize| {
        let l = gaussians.labels[i];
        (l as usize) < k && !static_labels.contains(&l)
    };
    let (bases, attachments, skipped) = if config.per_gaussian_bases {
        let mut bases = Vec::new();
        let mut atts = Vec::new();
        for i in (0..gaussians.len()).filter(|&i| is_dynamic(i)) {
            atts.push(Attachment {
                gaussian: i,
                bases: vec![bases.len()],
                weights: vec![1.0],
            });
            bases.push(MotionBase {
                instance_label: gaussians.labels[i],
                source: i,
                anchor: gaussians.mean(0, i),
                trajectory: vec![Se3 {
                    rotation: gaussians.rotation(0, i),
                    translation: gaussians.mean(0, i),
                }],
            });
        }
        let skipped = dynamic_labels
            .iter()
            .copied()
            .filter(|&l| !gaussians.labels.contains(&l))
            .collect();
        (bases, atts, skipped)
    } else {
        let (bases, skipped) =
            sample_bases(gaussians, &dynamic_labels, config.bases_per_instance, seed);
        let atts = attach(
            gaussians,
            &bases,
            config.k_nn,
            config.group_by_instance,
            is_dynamic,
        )?;
        (bases, atts, skipped)
    };
    let edges = base_graph(&bases, config.graph_knn, config.group_by_instance);
    let scaffold = Scaffold {
        config,
        bases,
        attachments,
        edges,
        skipped_labels: skipped,
    };
    if config.group_by_instance {
        check_label_purity(gaussians, &scaffold)?;
    }
    Ok(scaffold)
}
