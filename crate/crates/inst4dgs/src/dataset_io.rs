//! On-disk dataset directories.
//!
//! ```text
//! manifest.json                  version, config echo, dimensions, inventory
//! cameras.json
//! view_{v:03}/frame_{t:04}.ppm
//! view_{v:03}/label_{t:04}.pgm   local labels, 255 = unlabeled
//! gt/permutations.json           canonical → local per view
//! gt/trajectories.{bin,json}     per rigid part, f64 poses
//! gt/seed_points.json
//! gt/canonical/view_{v:03}/label_{t:04}.pgm
//! gt/dropped.json
//! gt/model/                      checkpoint of the generating scene
//! ```
//!
//! Only the manifest, cameras, frames, labels and seed points are needed
//! to train; the rest of `gt/` is for evaluation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use inst4dgs_core::align::{Permutation, PermutationLatent, SquareMatrix};
use inst4dgs_core::camera::Camera;
use inst4dgs_core::dataset::{Dataset, SeedPoint};
use inst4dgs_core::geometry::{Quat, Se3, Vec3};
use inst4dgs_core::image::LabelMap;
use inst4dgs_core::optim::view_confidence;
use inst4dgs_core::synth::{
    oracle_scaffold, DroppedSilhouette, PartTrajectory, SynthConfig, Synthetic,
};

use crate::checkpoint::{self, Checkpoint, Meta, Stage, TrajectoryHeader};
use crate::error::{Error, Result};
use crate::files;
use crate::netpbm;

pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
const KIND: &str = "inst4dgs-dataset";
/// Latent magnitude of the ground-truth match in `gt/model`.
const ORACLE_LATENT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    /// Generator settings when the data is synthetic.
    pub generator: Option<SynthConfig>,
    pub num_instances: usize,
    pub views: usize,
    pub timesteps: usize,
    pub width: usize,
    pub height: usize,
    pub reference_view: usize,
    pub test_views: Vec<usize>,
    pub static_labels: Vec<u8>,
    /// Every other file in the directory, sorted.
    pub files: Vec<String>,
}

/// Intrinsics plus a row-major world-to-camera matrix. The quaternion and
/// translation repeat the matrix exactly so reloaded cameras are bitwise
/// equal to the generator's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_camera: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_wxyz: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<[f64; 3]>,
}

impl CameraRecord {
    pub fn from_camera(c: &Camera) -> Self {
        CameraRecord {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            world_to_camera: c.world_to_camera.to_matrix4(),
            rotation_wxyz: Some(c.world_to_camera.rotation.to_array()),
            translation: Some(c.world_to_camera.translation.to_array()),
        }
    }

    pub fn to_camera(&self) -> inst4dgs_core::Result<Camera> {
        let pose = match (self.rotation_wxyz, self.translation) {
            (Some(q), Some(t)) => Se3 {
                rotation: Quat::from_array(q),
                translation: Vec3::from_array(t),
            },
            _ => Se3::from_matrix4(&self.world_to_camera),
        };
        Camera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            pose,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CameraFile {
    format_version: u32,
    cameras: Vec<CameraRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PermutationsFile {
    format_version: u32,
    /// `canonical_to_local[v][c]`.
    canonical_to_local: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PartsHeader {
    #[serde(flatten)]
    trajectories: TrajectoryHeader,
    part_instances: Vec<u8>,
    gaussian_parts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DroppedRecord {
    view: usize,
    t: usize,
    instance: u8,
    /// Indices of silhouette pixels.
    pixels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SeedFile {
    format_version: u32,
    points: Vec<SeedPoint>,
}

pub fn frame_path(v: usize, t: usize) -> PathBuf {
    PathBuf::from(format!("view_{v:03}/frame_{t:04}.ppm"))
}

pub fn label_path(v: usize, t: usize) -> PathBuf {
    PathBuf::from(format!("view_{v:03}/label_{t:04}.pgm"))
}

fn canonical_path(v: usize, t: usize) -> PathBuf {
    Path::new("gt/canonical").join(label_path(v, t))
}

/// Checkpoint that reproduces the generator's scene exactly.
pub fn oracle_checkpoint(s: &Synthetic) -> Result<Checkpoint> {
    let k = s.dataset.num_instances;
    let g = &s.truth.gaussians;
    let mut permutations = Vec::with_capacity(s.dataset.views());
    for (v, c2l) in s.truth.permutations.iter().enumerate() {
        let mut z = SquareMatrix::zeros(k);
        for c in 0..k {
            z[(c2l.apply(c), c)] = ORACLE_LATENT;
        }
        let latent = PermutationLatent { video_id: v, z };
        let confidence = view_confidence(g, &s.truth.decoder, &s.dataset, c2l, v)?;
        permutations.push(checkpoint::permutation_record(&latent, c2l, confidence));
    }
    Ok(Checkpoint {
        meta: Meta {
            format_version: checkpoint::CHECKPOINT_VERSION,
            stage: Stage::Seq,
            stage1_complete: true,
            step: 0,
            timesteps: g.timesteps(),
            num_gaussians: g.len(),
            num_instances: k,
            feature_dim: g.feature_dim,
            reference_view: s.dataset.reference_view,
            activation_threshold: 0.0,
            active_views: s.dataset.training_views(),
        },
        gaussians: g.clone(),
        decoder: s.truth.decoder.clone(),
        permutations,
        scaffold: Some(oracle_scaffold(&s.truth)),
    })
}

/// Writes `s` into a freshly emptied `dir`.
pub fn write_synthetic(dir: &Path, s: &Synthetic) -> Result<()> {
    let d = &s.dataset;
    files::reset_dir(dir)?;
    let cameras = CameraFile {
        format_version: DATASET_VERSION,
        cameras: d.cameras.iter().map(CameraRecord::from_camera).collect(),
    };
    files::write_json(&dir.join("cameras.json"), &cameras)?;
    for v in 0..d.views() {
        for t in 0..d.timesteps() {
            files::write(
                &dir.join(frame_path(v, t)),
                &netpbm::encode_ppm(&d.frames[v][t]),
            )?;
            files::write(
                &dir.join(label_path(v, t)),
                &netpbm::encode_pgm(&d.labels[v][t]),
            )?;
            let canon = &s.truth.canonical_labels[v][t];
            files::write(&dir.join(canonical_path(v, t)), &netpbm::encode_pgm(canon))?;
        }
    }
    let gt = dir.join("gt");
    files::write_json(
        &gt.join("seed_points.json"),
        &SeedFile {
            format_version: DATASET_VERSION,
            points: d.seed_points.clone(),
        },
    )?;
    files::write_json(
        &gt.join("permutations.json"),
        &PermutationsFile {
            format_version: DATASET_VERSION,
            canonical_to_local: s
                .truth
                .permutations
                .iter()
                .map(|p| p.as_slice().to_vec())
                .collect(),
        },
    )?;
    let poses: Vec<&[Se3]> = s.truth.parts.iter().map(|p| p.poses.as_slice()).collect();
    let (header, bytes) = checkpoint::encode_trajectories(&poses, true)?;
    files::write(&gt.join("trajectories.bin"), &bytes)?;
    files::write_json(
        &gt.join("trajectories.json"),
        &PartsHeader {
            trajectories: header,
            part_instances: s.truth.parts.iter().map(|p| p.instance).collect(),
            gaussian_parts: s.truth.gaussian_parts.clone(),
        },
    )?;
    let dropped: Vec<DroppedRecord> = s
        .truth
        .dropped
        .iter()
        .map(|d| DroppedRecord {
            view: d.view,
            t: d.t,
            instance: d.instance,
            pixels: d
                .mask
                .iter()
                .enumerate()
                .filter(|(_, &m)| m)
                .map(|(i, _)| i)
                .collect(),
        })
        .collect();
    files::write_json(&gt.join("dropped.json"), &dropped)?;
    checkpoint::write_checkpoint(&gt.join("model"), &oracle_checkpoint(s)?)?;

    let manifest = Manifest {
        format_version: DATASET_VERSION,
        kind: KIND.into(),
        generator: Some(s.config.clone()),
        num_instances: d.num_instances,
        views: d.views(),
        timesteps: d.timesteps(),
        width: d.cameras[0].width,
        height: d.cameras[0].height,
        reference_view: d.reference_view,
        test_views: d.test_views.clone(),
        static_labels: d.static_labels.clone(),
        files: files::inventory(dir)?,
    };
    files::write_json(&dir.join(MANIFEST), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let raw: serde_json::Value = files::read_json(&path)?;
    let found = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if found != DATASET_VERSION {
        return Err(Error::Version {
            path,
            found,
            expected: DATASET_VERSION,
        });
    }
    let m: Manifest =
        serde_json::from_value(raw).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.kind != KIND {
        return Err(Error::format(
            &path,
            format!("kind {:?} is not a dataset", m.kind),
        ));
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    for f in &m.files {
        if !dir.join(f).is_file() {
            return Err(Error::Missing(format!(
                "{} (listed in the manifest)",
                dir.join(f).display()
            )));
        }
    }
    let cam_path = dir.join("cameras.json");
    let cams: CameraFile = files::read_json(&cam_path)?;
    if cams.cameras.len() != m.views {
        return Err(Error::format(
            &cam_path,
            "camera count differs from the manifest",
        ));
    }
    let cameras = cams
        .cameras
        .iter()
        .map(|c| {
            c.to_camera()
                .map_err(|e| Error::format(&cam_path, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut frames = Vec::with_capacity(m.views);
    let mut labels = Vec::with_capacity(m.views);
    for v in 0..m.views {
        let fv = (0..m.timesteps)
            .map(|t| netpbm::read_ppm(&dir.join(frame_path(v, t))))
            .collect::<Result<Vec<_>>>()?;
        let lv = (0..m.timesteps)
            .map(|t| netpbm::read_pgm(&dir.join(label_path(v, t))))
            .collect::<Result<Vec<_>>>()?;
        frames.push(fv);
        labels.push(lv);
    }
    let seeds: SeedFile = files::read_json(&dir.join("gt/seed_points.json"))?;
    let d = Dataset {
        num_instances: m.num_instances,
        cameras,
        frames,
        labels,
        seed_points: seeds.points,
        static_labels: m.static_labels,
        test_views: m.test_views,
        reference_view: m.reference_view,
    };
    d.validate()
        .map_err(|e| Error::format(dir.join(MANIFEST), e.to_string()))?;
    Ok(d)
}

/// Evaluation-side ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// Canonical → local, per view.
    pub permutations: Vec<Permutation>,
    pub parts: Vec<PartTrajectory>,
    pub gaussian_parts: Vec<usize>,
    /// Clean canonical labels, when the directory carries them.
    pub canonical_labels: Option<Vec<Vec<LabelMap>>>,
    pub dropped: Vec<DroppedSilhouette>,
    pub model: Checkpoint,
}

pub fn read_truth(dir: &Path, dataset: &Dataset) -> Result<Truth> {
    let gt = dir.join("gt");
    let ppath = gt.join("permutations.json");
    let pf: PermutationsFile = files::read_json(&ppath)?;
    let permutations = pf
        .canonical_to_local
        .into_iter()
        .map(|p| Permutation::new(p).map_err(|e| Error::format(&ppath, e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let hpath = gt.join("trajectories.json");
    let header: PartsHeader = files::read_json(&hpath)?;
    let bpath = gt.join("trajectories.bin");
    let poses =
        checkpoint::decode_trajectories(&header.trajectories, &files::read(&bpath)?, &bpath)?;
    if header.part_instances.len() != poses.len() {
        return Err(Error::format(
            &hpath,
            "instance list differs from part count",
        ));
    }
    let parts = poses
        .into_iter()
        .zip(&header.part_instances)
        .map(|(poses, &instance)| PartTrajectory { instance, poses })
        .collect();
    let canonical_labels = if gt.join("canonical").is_dir() {
        let mut all = Vec::with_capacity(dataset.views());
        for v in 0..dataset.views() {
            all.push(
                (0..dataset.timesteps())
                    .map(|t| netpbm::read_pgm(&dir.join(canonical_path(v, t))))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Some(all)
    } else {
        None
    };
    let dpath = gt.join("dropped.json");
    let dropped = if dpath.exists() {
        let recs: Vec<DroppedRecord> = files::read_json(&dpath)?;
        recs.into_iter()
            .map(|r| {
                let n = dataset.cameras.get(r.view).map_or(0, |c| c.pixel_count());
                let mut mask = vec![false; n];
                for p in r.pixels {
                    *mask
                        .get_mut(p)
                        .ok_or_else(|| Error::format(&dpath, "pixel index out of range"))? = true;
                }
                Ok(DroppedSilhouette {
                    view: r.view,
                    t: r.t,
                    instance: r.instance,
                    mask,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(Truth {
        permutations,
        parts,
        gaussian_parts: header.gaussian_parts,
        canonical_labels,
        dropped,
        model: checkpoint::read_checkpoint(&gt.join("model"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use inst4dgs_core::synth::generate;

    fn tiny() -> SynthConfig {
        SynthConfig {
            num_instances: 2,
            gaussians_per_instance: 12,
            timesteps: 2,
            views: 2,
            width: 16,
            height: 16,
            seed: 5,
            drops: vec![inst4dgs_core::synth::DropSpec {
                instance: 1,
                view: 1,
                frames: 1..2,
            }],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let s = generate(&tiny()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_synthetic(dir.path(), &s).unwrap();
        let d = read_dataset(dir.path()).unwrap();
        assert_eq!(d, s.dataset);
        let truth = read_truth(dir.path(), &d).unwrap();
        assert_eq!(truth.permutations, s.truth.permutations);
        assert_eq!(truth.parts, s.truth.parts);
        assert_eq!(truth.gaussian_parts, s.truth.gaussian_parts);
        assert_eq!(
            truth.canonical_labels.as_ref().unwrap(),
            &s.truth.canonical_labels
        );
        assert_eq!(truth.dropped, s.truth.dropped);
        assert_eq!(truth.model.gaussians, s.truth.gaussians);
        let m = read_manifest(dir.path()).unwrap();
        assert!(m.files.contains(&"view_001/label_0001.pgm".to_string()));
        assert!(!m.files.contains(&MANIFEST.to_string()));
    }

    #[test]
    fn missing_file_and_bad_version() {
        let s = generate(&tiny()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_synthetic(dir.path(), &s).unwrap();
        std::fs::remove_file(dir.path().join(frame_path(1, 1))).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Missing(_))));
        let mut m = read_manifest(dir.path()).unwrap();
        m.format_version = 7;
        files::write_json(&dir.path().join(MANIFEST), &m).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap_err().exit_code(), 4);
    }
}
