//! Model checkpoints: Gaussians, decoder, permutation latents, scaffold.
//!
//! ```text
//! meta.json           format version, stage, step, counts, active views
//! gaussians.bin       little-endian f64 sections (see `encode_gaussians`)
//! decoder.json
//! permutations.json   per view: raw Z (row-major), hardened, confidence
//! scaffold.json       optional; bases, attachments, edges
//! trajectories.bin    optional; f32 base poses, header in trajectories.json
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use inst4dgs_core::align::{IdentityDecoder, Permutation, PermutationLatent, SquareMatrix};
use inst4dgs_core::gaussian::{Frame, GaussianSet};
use inst4dgs_core::geometry::{Quat, Se3, Vec3};
use inst4dgs_core::scaffold::{Attachment, MotionBase, Scaffold, ScaffoldConfig};

use crate::error::{Error, Result};
use crate::files::{self, LeReader, LeWriter};

pub const CHECKPOINT_VERSION: u32 = 1;
const GAUSSIAN_MAGIC: &[u8; 8] = b"I4DGAUSS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Init,
    Seq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub format_version: u32,
    pub stage: Stage,
    /// Stage 1 has run to completion and Gaussians carry labels.
    pub stage1_complete: bool,
    pub step: u64,
    pub timesteps: usize,
    pub num_gaussians: usize,
    pub num_instances: usize,
    pub feature_dim: usize,
    pub reference_view: usize,
    pub activation_threshold: f64,
    pub active_views: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationRecord {
    pub view: usize,
    pub k: usize,
    pub z: Vec<f64>,
    /// Local → canonical.
    pub hardened: Vec<usize>,
    pub canonical_to_local: Vec<usize>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Meta,
    pub gaussians: GaussianSet,
    pub decoder: IdentityDecoder,
    pub permutations: Vec<PermutationRecord>,
    pub scaffold: Option<Scaffold>,
}

impl Checkpoint {
    pub fn latents(&self) -> Vec<PermutationLatent> {
        self.permutations
            .iter()
            .map(|p| PermutationLatent {
                video_id: p.view,
                z: SquareMatrix {
                    n: p.k,
                    data: p.z.clone(),
                },
            })
            .collect()
    }

    /// Canonical → local, per view.
    pub fn canonical_to_local(&self) -> Result<Vec<Permutation>> {
        self.permutations
            .iter()
            .map(|p| Ok(Permutation::new(p.canonical_to_local.clone())?))
            .collect()
    }
}

/// Builds the record of one view; `canonical_to_local` is what training
/// actually uses (identity for the reference view).
pub fn permutation_record(
    latent: &PermutationLatent,
    canonical_to_local: &Permutation,
    confidence: f64,
) -> PermutationRecord {
    PermutationRecord {
        view: latent.video_id,
        k: latent.z.n,
        z: latent.z.data.clone(),
        hardened: canonical_to_local.inverse().as_slice().to_vec(),
        canonical_to_local: canonical_to_local.as_slice().to_vec(),
        confidence,
    }
}

fn encode_gaussians(g: &GaussianSet) -> Vec<u8> {
    let n = g.len();
    let mut w = LeWriter::default();
    w.bytes(GAUSSIAN_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u64(n as u64);
    w.u32(g.feature_dim as u32);
    w.u32(g.num_instances as u32);
    w.u32(g.timesteps() as u32);
    w.f64s(g.colors.iter().flatten().copied());
    w.f64s(g.opacity_logits.iter().copied());
    w.f64s(g.log_scales.iter().flatten().copied());
    w.f64s(g.features.iter().copied());
    w.bytes(&g.labels);
    for f in &g.frames {
        w.f64s(f.means.iter().flat_map(|m| m.to_array()));
        w.f64s(f.rotations.iter().flat_map(|q| q.to_array()));
    }
    w.buf
}

fn take3(v: Vec<f64>) -> Vec<[f64; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn decode_gaussians(data: &[u8], path: &Path) -> Result<GaussianSet> {
    let mut r = LeReader::new(data, path);
    if r.take(8)? != GAUSSIAN_MAGIC {
        return Err(Error::format(path, "not a gaussian file"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let n = r.u64()? as usize;
    let feature_dim = r.u32()? as usize;
    let num_instances = r.u32()? as usize;
    let timesteps = r.u32()? as usize;
    let colors = take3(r.f64s(3 * n)?);
    let opacity_logits = r.f64s(n)?;
    let log_scales = take3(r.f64s(3 * n)?);
    let features = r.f64s(n * feature_dim)?;
    let labels = r.take(n)?.to_vec();
    let mut frames = Vec::with_capacity(timesteps);
    for _ in 0..timesteps {
        let means = take3(r.f64s(3 * n)?)
            .into_iter()
            .map(Vec3::from_array)
            .collect();
        let rotations = r
            .f64s(4 * n)?
            .chunks_exact(4)
            .map(|c| Quat::new(c[0], c[1], c[2], c[3]))
            .collect();
        frames.push(Frame { means, rotations });
    }
    r.finish()?;
    let g = GaussianSet {
        feature_dim,
        num_instances,
        colors,
        opacity_logits,
        log_scales,
        features,
        labels,
        frames,
    };
    g.validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(g)
}

#[derive(Serialize, Deserialize)]
struct ScaffoldBaseRecord {
    instance_label: u8,
    source: usize,
    anchor: Vec3,
}

#[derive(Serialize, Deserialize)]
struct ScaffoldRecord {
    config: ScaffoldConfig,
    bases: Vec<ScaffoldBaseRecord>,
    attachments: Vec<Attachment>,
    edges: Vec<(usize, usize)>,
    skipped_labels: Vec<u8>,
}

/// Header of a pose-trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub format_version: u32,
    /// `f32` or `f64`.
    pub dtype: String,
    pub count: usize,
    pub timesteps: usize,
    /// Values per pose: quaternion wxyz then translation xyz.
    pub layout: String,
}

/// Serializes `trajectories[i][t]` as rows of `w x y z tx ty tz`.
pub fn encode_trajectories(
    trajectories: &[&[Se3]],
    double: bool,
) -> Result<(TrajectoryHeader, Vec<u8>)> {
    let timesteps = trajectories.first().map_or(0, |t| t.len());
    if trajectories.iter().any(|t| t.len() != timesteps) {
        return Err(Error::Config("trajectories differ in length".into()));
    }
    let mut buf = Vec::new();
    for tr in trajectories {
        for p in tr.iter() {
            let q = p.rotation;
            let t = p.translation;
            for v in [q.w, q.x, q.y, q.z, t.x, t.y, t.z] {
                if double {
                    buf.extend_from_slice(&v.to_le_bytes());
                } else {
                    buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }
    let header = TrajectoryHeader {
        format_version: CHECKPOINT_VERSION,
        dtype: if double { "f64" } else { "f32" }.into(),
        count: trajectories.len(),
        timesteps,
        layout: "qw qx qy qz tx ty tz".into(),
    };
    Ok((header, buf))
}

pub fn decode_trajectories(
    header: &TrajectoryHeader,
    data: &[u8],
    path: &Path,
) -> Result<Vec<Vec<Se3>>> {
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: header.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::format(path, format!("unknown dtype {other}"))),
    };
    let expected = header.count * header.timesteps * 7 * width;
    if data.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes, found {}", data.len()),
        ));
    }
    let values: Vec<f64> = data
        .chunks_exact(width)
        .map(|c| {
            if width == 4 {
                f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64
            } else {
                f64::from_le_bytes(c.try_into().expect("8 bytes"))
            }
        })
        .collect();
    let mut out = Vec::with_capacity(header.count);
    let mut poses = values.chunks_exact(7);
    for _ in 0..header.count {
        let tr = (0..header.timesteps)
            .map(|_| {
                let c = poses.next().expect("length checked above");
                Se3 {
                    rotation: Quat::new(c[0], c[1], c[2], c[3]),
                    translation: Vec3::new(c[4], c[5], c[6]),
                }
            })
            .collect();
        out.push(tr);
    }
    Ok(out)
}

pub fn write_trajectories(
    dir: &Path,
    stem: &str,
    trajectories: &[&[Se3]],
    double: bool,
) -> Result<()> {
    let (header, bytes) = encode_trajectories(trajectories, double)?;
    files::write(&dir.join(format!("{stem}.bin")), &bytes)?;
    files::write_json(&dir.join(format!("{stem}.json")), &header)
}

pub fn read_trajectories(dir: &Path, stem: &str) -> Result<Vec<Vec<Se3>>> {
    let header: TrajectoryHeader = files::read_json(&dir.join(format!("{stem}.json")))?;
    let path = dir.join(format!("{stem}.bin"));
    decode_trajectories(&header, &files::read(&path)?, &path)
}

fn check_version(path: &Path, found: u32) -> Result<()> {
    if found != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PermutationFile {
    format_version: u32,
    views: Vec<PermutationRecord>,
}

/// Writes `ck` into a freshly emptied `dir`.
pub fn write_checkpoint(dir: &Path, ck: &Checkpoint) -> Result<()> {
    files::reset_dir(dir)?;
    files::write_json(&dir.join("meta.json"), &ck.meta)?;
    files::write(&dir.join("gaussians.bin"), &encode_gaussians(&ck.gaussians))?;
    files::write_json(&dir.join("decoder.json"), &ck.decoder)?;
    files::write_json(
        &dir.join("permutations.json"),
        &PermutationFile {
            format_version: CHECKPOINT_VERSION,
            views: ck.permutations.clone(),
        },
    )?;
    if let Some(s) = &ck.scaffold {
        let record = ScaffoldRecord {
            config: s.config,
            bases: s
                .bases
                .iter()
                .map(|b| ScaffoldBaseRecord {
                    instance_label: b.instance_label,
                    source: b.source,
                    anchor: b.anchor,
                })
                .collect(),
            attachments: s.attachments.clone(),
            edges: s.edges.clone(),
            skipped_labels: s.skipped_labels.clone(),
        };
        files::write_json(&dir.join("scaffold.json"), &record)?;
        let tr: Vec<&[Se3]> = s.bases.iter().map(|b| b.trajectory.as_slice()).collect();
        write_trajectories(dir, "trajectories", &tr, false)?;
    }
    Ok(())
}

pub fn read_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let meta_path = dir.join("meta.json");
    let raw: serde_json::Value = files::read_json(&meta_path)?;
    let found = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    check_version(&meta_path, found)?;
    let meta: Meta =
        serde_json::from_value(raw).map_err(|e| Error::format(&meta_path, e.to_string()))?;

    let gpath = dir.join("gaussians.bin");
    let gaussians = decode_gaussians(&files::read(&gpath)?, &gpath)?;
    let decoder: IdentityDecoder = files::read_json(&dir.join("decoder.json"))?;
    let ppath = dir.join("permutations.json");
    let perms: PermutationFile = files::read_json(&ppath)?;
    check_version(&ppath, perms.format_version)?;
    for p in &perms.views {
        if p.z.len() != p.k * p.k || p.hardened.len() != p.k || p.canonical_to_local.len() != p.k {
            return Err(Error::format(
                &ppath,
                format!("view {} has inconsistent sizes", p.view),
            ));
        }
    }

    let spath = dir.join("scaffold.json");
    let scaffold = if spath.exists() {
        let record: ScaffoldRecord = files::read_json(&spath)?;
        let trajectories = read_trajectories(dir, "trajectories")?;
        if trajectories.len() != record.bases.len() {
            return Err(Error::format(
                &spath,
                "base count differs from trajectory count",
            ));
        }
        let bases = record
            .bases
            .into_iter()
            .zip(trajectories)
            .map(|(b, trajectory)| MotionBase {
                instance_label: b.instance_label,
                source: b.source,
                anchor: b.anchor,
                trajectory,
            })
            .collect();
        Some(Scaffold {
            config: record.config,
            bases,
            attachments: record.attachments,
            edges: record.edges,
            skipped_labels: record.skipped_labels,
        })
    } else {
        None
    };

    if meta.num_gaussians != gaussians.len() || meta.timesteps != gaussians.timesteps() {
        return Err(Error::format(
            &meta_path,
            "meta does not match gaussians.bin",
        ));
    }
    Ok(Checkpoint {
        meta,
        gaussians,
        decoder,
        permutations: perms.views,
        scaffold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> GaussianSet {
        let mut g = GaussianSet::new(2, 3);
        for i in 0..4 {
            let f = i as f64;
            g.push(
                Vec3::new(f, -f, 0.5 * f),
                Quat::new(1.0, 0.0, 0.1 * f, 0.0).normalized(),
                [0.05, 0.1, 0.2 + f],
                0.25 + 0.1 * f,
                [0.1, 0.2, 0.3],
                &[f, 1.0 / 3.0],
                (i % 4) as u8,
            )
            .unwrap();
        }
        g.push_frame_copy();
        g.frames[1].means[2] = Vec3::new(9.0, 8.0, 7.0);
        g
    }

    #[test]
    fn gaussians_round_trip_bit_exact() {
        let g = sample_set();
        let p = Path::new("g.bin");
        assert_eq!(decode_gaussians(&encode_gaussians(&g), p).unwrap(), g);
    }

    #[test]
    fn gaussians_reject_truncation_and_version() {
        let bytes = encode_gaussians(&sample_set());
        let p = Path::new("g.bin");
        assert!(matches!(
            decode_gaussians(&bytes[..bytes.len() - 1], p),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            decode_gaussians(&bad, p),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn trajectories_round_trip() {
        let a = vec![
            Se3::IDENTITY,
            Se3::from_translation(Vec3::new(1.0, 2.0, 3.0)),
        ];
        let b = vec![
            Se3::from_rotation(Quat::new(0.0, 1.0, 0.0, 0.0)),
            Se3::IDENTITY,
        ];
        let (h, bytes) = encode_trajectories(&[&a, &b], true).unwrap();
        assert_eq!(bytes.len(), 2 * 2 * 7 * 8);
        let back = decode_trajectories(&h, &bytes, Path::new("t.bin")).unwrap();
        assert_eq!(back, vec![a.clone(), b]);
        let (h, bytes) = encode_trajectories(&[&a], false).unwrap();
        assert_eq!(h.dtype, "f32");
        assert_eq!(bytes.len(), 2 * 7 * 4);
    }
}
