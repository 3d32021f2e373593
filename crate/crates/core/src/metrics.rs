//! Segmentation, image, and tracking metrics.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::align::{hungarian_assign, Permutation, SquareMatrix};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image::{Image, LabelMap, SENTINEL_UNLABELED};

/// Version of the serialized [`MetricsBundle`] layout.
pub const METRICS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricFlag {
    #[serde(rename = "INFINITE")]
    Infinite,
    #[serde(rename = "UNDEFINED")]
    Undefined,
}

/// A number, or a flag where no finite value exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metric {
    Value(f64),
    Flag(MetricFlag),
}

impl Metric {
    pub const INFINITE: Metric = Metric::Flag(MetricFlag::Infinite);
    pub const UNDEFINED: Metric = Metric::Flag(MetricFlag::Undefined);

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::Flag(_) => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == Metric::INFINITE
    }

    /// Mean of the defined entries. Infinite only when every defined
    /// entry is; otherwise infinite entries are left out.
    pub fn mean(items: &[Metric]) -> Metric {
        let finite: Vec<f64> = items.iter().filter_map(|m| m.value()).collect();
        if !finite.is_empty() {
            return Metric::Value(finite.iter().sum::<f64>() / finite.len() as f64);
        }
        if items.iter().any(|m| m.is_infinite()) {
            Metric::INFINITE
        } else {
            Metric::UNDEFINED
        }
    }

    /// Bare number or flag name, for tables.
    pub fn display(self) -> String {
        match self {
            Metric::Value(v) => alloc::format!("{v:.6}"),
            Metric::Flag(MetricFlag::Infinite) => "INFINITE".into(),
            Metric::Flag(MetricFlag::Undefined) => "UNDEFINED".into(),
        }
    }
}

fn check_pair(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::shape("prediction and ground truth differ in size"));
    }
    Ok(())
}

/// Per-instance intersection, union, and ground-truth pixel counts pooled
/// over any number of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationCounts {
    inter: [u64; 256],
    union: [u64; 256],
    gt: [u64; 256],
    labeled: u64,
    correct: u64,
    fg_inter: u64,
    fg_union: u64,
}

impl Default for SegmentationCounts {
    fn default() -> Self {
        Self::new()
    }
}

impl SegmentationCounts {
    pub fn new() -> Self {
        SegmentationCounts {
            inter: [0; 256],
            union: [0; 256],
            gt: [0; 256],
            labeled: 0,
            correct: 0,
            fg_inter: 0,
            fg_union: 0,
        }
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        check_pair(pred, gt)?;
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if g != SENTINEL_UNLABELED {
                self.gt[g as usize] += 1;
                self.labeled += 1;
                if p == g {
                    self.correct += 1;
                    self.inter[g as usize] += 1;
                }
            }
            if g != SENTINEL_UNLABELED {
                self.union[g as usize] += 1;
            }
            if p != SENTINEL_UNLABELED && p != g {
                self.union[p as usize] += 1;
            }
            let (pf, gf) = (p != SENTINEL_UNLABELED, g != SENTINEL_UNLABELED);
            self.fg_inter += (pf && gf) as u64;
            self.fg_union += (pf || gf) as u64;
        }
        Ok(())
    }

    /// Pools another set of counts into this one.
    pub fn merge(&mut self, o: &SegmentationCounts) {
        for k in 0..256 {
            self.inter[k] += o.inter[k];
            self.union[k] += o.union[k];
            self.gt[k] += o.gt[k];
        }
        self.labeled += o.labeled;
        self.correct += o.correct;
        self.fg_inter += o.fg_inter;
        self.fg_union += o.fg_union;
    }

    /// `Σ_k w_k IoU_k` with `w_k` the ground-truth share of instance `k`.
    pub fn miou_instance(&self) -> Metric {
        let total: u64 = self.gt.iter().take(SENTINEL_UNLABELED as usize).sum();
        if total == 0 {
            return Metric::UNDEFINED;
        }
        let mut acc = 0.0;
        for k in 0..SENTINEL_UNLABELED as usize {
            if self.gt[k] > 0 {
                let w = self.gt[k] as f64 / total as f64;
                acc += w * self.inter[k] as f64 / self.union[k] as f64;
            }
        }
        Metric::Value(acc)
    }

    /// Accuracy over ground-truth labeled pixels only.
    pub fn macc(&self) -> Metric {
        if self.labeled == 0 {
            Metric::UNDEFINED
        } else {
            Metric::Value(self.correct as f64 / self.labeled as f64)
        }
    }

    /// Binary foreground IoU, foreground being any instance label.
    pub fn miou_dynamic(&self) -> Metric {
        if self.fg_union == 0 {
            Metric::UNDEFINED
        } else {
            Metric::Value(self.fg_inter as f64 / self.fg_union as f64)
        }
    }
}

pub fn miou_instance(pred: &LabelMap, gt: &LabelMap) -> Result<Metric> {
    let mut c = SegmentationCounts::new();
    c.add(pred, gt)?;
    Ok(c.miou_instance())
}

pub fn macc(pred: &LabelMap, gt: &LabelMap) -> Result<Metric> {
    let mut c = SegmentationCounts::new();
    c.add(pred, gt)?;
    Ok(c.macc())
}

pub fn miou_dynamic(pred: &LabelMap, gt: &LabelMap) -> Result<Metric> {
    let mut c = SegmentationCounts::new();
    c.add(pred, gt)?;
    Ok(c.miou_dynamic())
}

/// Predicted → ground-truth assignment maximizing pixel co-occurrence over
/// the whole stream.
pub fn test_time_align(pred: &[LabelMap], gt: &[LabelMap], k: usize) -> Result<Permutation> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(Error::Missing(
            "aligned prediction and ground-truth streams".into(),
        ));
    }
    let mut o = SquareMatrix::zeros(k);
    for (p, g) in pred.iter().zip(gt) {
        check_pair(p, g)?;
        for (&a, &b) in p.labels.iter().zip(&g.labels) {
            if (a as usize) < k && (b as usize) < k {
                o[(a as usize, b as usize)] -= 1.0;
            }
        }
    }
    hungarian_assign(&o)
}

pub fn relabel(map: &LabelMap, perm: &Permutation) -> LabelMap {
    let mut out = map.clone();
    out.labels.iter_mut().for_each(|l| *l = perm.relabel(*l));
    out
}

/// Running squared-error sum for PSNR over several frames.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MseAccumulator {
    pub sum: f64,
    pub count: u64,
}

impl MseAccumulator {
    pub fn add(&mut self, img: &Image, gt: &Image) -> Result<()> {
        if !img.same_shape(gt) {
            return Err(Error::shape("images differ in size"));
        }
        self.sum += img
            .data
            .iter()
            .zip(&gt.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        self.count += img.data.len() as u64;
        Ok(())
    }

    pub fn psnr(&self) -> Metric {
        if self.count == 0 {
            return Metric::UNDEFINED;
        }
        psnr_from_mse(self.sum / self.count as f64)
    }
}

pub fn psnr_from_mse(mse: f64) -> Metric {
    if mse <= 0.0 {
        Metric::INFINITE
    } else {
        Metric::Value(10.0 * (1.0 / mse).log10())
    }
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`.
pub fn psnr(img: &Image, gt: &Image) -> Result<Metric> {
    let mut acc = MseAccumulator::default();
    acc.add(img, gt)?;
    Ok(acc.psnr())
}

/// Root mean square position error over every `(base, t)` pair;
/// `pred[b][t]` pairs with `gt[b][t]`.
pub fn traj_rmse(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<Metric> {
    if pred.len() != gt.len() {
        return Err(Error::shape("trajectory counts differ"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(Error::shape("trajectory lengths differ"));
        }
        for (a, b) in p.iter().zip(g) {
            sum += (*a - *b).norm_squared();
            n += 1;
        }
    }
    Ok(if n == 0 {
        Metric::UNDEFINED
    } else {
        Metric::Value((sum / n as f64).sqrt())
    })
}

/// RMSE at each timestep separately.
pub fn traj_rmse_per_timestep(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<Vec<f64>> {
    traj_rmse(pred, gt)?;
    let t = pred.first().map_or(0, |p| p.len());
    Ok((0..t)
        .map(|t| {
            let s: f64 = pred
                .iter()
                .zip(gt)
                .map(|(p, g)| (p[t] - g[t]).norm_squared())
                .sum();
            (s / pred.len() as f64).sqrt()
        })
        .collect())
}

/// Fraction of views whose learned permutation equals the ground truth.
pub fn perm_accuracy(learned: &[Permutation], gt: &[Permutation]) -> Result<Metric> {
    if learned.len() != gt.len() {
        return Err(Error::shape("permutation lists differ in length"));
    }
    if learned.is_empty() {
        return Ok(Metric::UNDEFINED);
    }
    let hits = learned.iter().zip(gt).filter(|(a, b)| a == b).count();
    Ok(Metric::Value(hits as f64 / learned.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene: String,
    pub miou_instance: Metric,
    pub macc: Metric,
    pub miou_dynamic: Metric,
    pub psnr: Metric,
    pub ssim: Metric,
    pub traj_rmse: Metric,
    pub perm_accuracy: Metric,
    /// Trajectory RMSE at each timestep.
    #[serde(default)]
    pub traj_error_per_timestep: Vec<f64>,
    /// `(step, total loss)` pairs from training.
    #[serde(default)]
    pub loss_history: Vec<(u64, f64)>,
}

impl SceneMetrics {
    pub fn empty(scene: impl Into<String>) -> Self {
        SceneMetrics {
            scene: scene.into(),
            miou_instance: Metric::UNDEFINED,
            macc: Metric::UNDEFINED,
            miou_dynamic: Metric::UNDEFINED,
            psnr: Metric::UNDEFINED,
            ssim: Metric::UNDEFINED,
            traj_rmse: Metric::UNDEFINED,
            perm_accuracy: Metric::UNDEFINED,
            traj_error_per_timestep: Vec::new(),
            loss_history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub scenes: Vec<SceneMetrics>,
    pub aggregate: SceneMetrics,
}

impl MetricsBundle {
    pub fn new(seed: u64, config_hash: impl Into<String>, scenes: Vec<SceneMetrics>) -> Self {
        let agg = |f: fn(&SceneMetrics) -> Metric| {
            Metric::mean(&scenes.iter().map(f).collect::<Vec<_>>())
        };
        let aggregate = SceneMetrics {
            scene: "aggregate".into(),
            miou_instance: agg(|s| s.miou_instance),
            macc: agg(|s| s.macc),
            miou_dynamic: agg(|s| s.miou_dynamic),
            psnr: agg(|s| s.psnr),
            ssim: agg(|s| s.ssim),
            traj_rmse: agg(|s| s.traj_rmse),
            perm_accuracy: agg(|s| s.perm_accuracy),
            traj_error_per_timestep: vec![],
            loss_history: vec![],
        };
        MetricsBundle {
            version: METRICS_VERSION,
            seed,
            config_hash: config_hash.into(),
            scenes,
            aggregate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, l: &[u8]) -> LabelMap {
        LabelMap::from_labels(w, h, l.to_vec()).unwrap()
    }

    #[test]
    fn miou_examples() {
        let gt = map(2, 2, &[1, 1, 2, 2]);
        assert_eq!(miou_instance(&gt, &gt).unwrap(), Metric::Value(1.0));
        let pred = map(2, 2, &[1, 1, 1, 2]);
        let m = miou_instance(&pred, &gt).unwrap().value().unwrap();
        assert!((m - 7.0 / 12.0).abs() < 1e-15);
        let disjoint = map(2, 2, &[3, 3, 3, 3]);
        assert_eq!(miou_instance(&disjoint, &gt).unwrap(), Metric::Value(0.0));
        let empty = LabelMap::new(2, 2);
        assert_eq!(miou_instance(&gt, &empty).unwrap(), Metric::UNDEFINED);
        assert!(miou_instance(&gt, &LabelMap::new(3, 2)).is_err());
    }

    #[test]
    fn macc_and_dynamic() {
        let gt = map(4, 1, &[0, 1, SENTINEL_UNLABELED, 1]);
        let pred = map(4, 1, &[0, 0, 1, SENTINEL_UNLABELED]);
        assert_eq!(macc(&pred, &gt).unwrap(), Metric::Value(1.0 / 3.0));
        // fg: pred {0,1,2}, gt {0,1,3}
        assert_eq!(miou_dynamic(&pred, &gt).unwrap(), Metric::Value(0.5));
    }

    #[test]
    fn alignment_examples() {
        let a = map(4, 1, &[0, 1, 1, 2]);
        assert!(
            test_time_align(core::slice::from_ref(&a), core::slice::from_ref(&a), 3)
                .unwrap()
                .is_identity()
        );
        let swap = Permutation::new(vec![1, 2, 0]).unwrap();
        let b = relabel(&a, &swap);
        let p = test_time_align(core::slice::from_ref(&b), core::slice::from_ref(&a), 3).unwrap();
        assert_eq!(relabel(&b, &p), a);
        assert!(test_time_align(&[], &[], 3).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(2, 2, [0.5; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), Metric::INFINITE);
        let z = Image::filled(2, 2, [0.0; 3]);
        let o = Image::filled(2, 2, [1.0; 3]);
        assert_eq!(psnr(&z, &o).unwrap(), Metric::Value(0.0));
        let b = Image::filled(2, 2, [0.6; 3]);
        let p = psnr(&a, &b).unwrap().value().unwrap();
        assert!((p - 20.0).abs() < 1e-9);
    }

    #[test]
    fn trajectory_and_permutations() {
        let p = vec![vec![Vec3::ZERO, Vec3::new(3.0, 0.0, 0.0)]];
        let g = vec![vec![Vec3::ZERO, Vec3::new(0.0, 4.0, 0.0)]];
        let r = traj_rmse(&p, &g).unwrap().value().unwrap();
        assert!((r - (25.0f64 / 2.0).sqrt()).abs() < 1e-12);
        assert_eq!(traj_rmse_per_timestep(&p, &g).unwrap(), vec![0.0, 5.0]);
        let id = Permutation::identity(2);
        let sw = Permutation::new(vec![1, 0]).unwrap();
        assert_eq!(
            perm_accuracy(&[id.clone(), sw.clone()], &[id.clone(), id]).unwrap(),
            Metric::Value(0.5)
        );
    }

    #[test]
    fn aggregate_means() {
        let mut a = SceneMetrics::empty("a");
        a.psnr = Metric::INFINITE;
        a.miou_instance = Metric::Value(0.5);
        let mut b = SceneMetrics::empty("b");
        b.psnr = Metric::INFINITE;
        b.miou_instance = Metric::Value(1.0);
        let bundle = MetricsBundle::new(0, "x", vec![a, b]);
        assert_eq!(bundle.aggregate.psnr, Metric::INFINITE);
        assert_eq!(bundle.aggregate.miou_instance, Metric::Value(0.75));
        assert_eq!(bundle.aggregate.macc, Metric::UNDEFINED);
    }
}
