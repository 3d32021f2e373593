//! Training runs on disk.
//!
//! ```text
//! config.json              resolved configuration
//! log.csv                  one row per optimizer step
//! checkpoints/step_{n}/    periodic and end-of-stage checkpoints
//! model/                   final checkpoint of the last stage run
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use inst4dgs_core::dataset::Dataset;
use inst4dgs_core::optim::{
    finish_stage1, learned_permutations, stage2_sequential, view_confidence, LossRecord, Stage1,
    Stage1Model, TrainConfig, ViewExecutor,
};

use crate::checkpoint::{self, read_checkpoint, write_checkpoint, Checkpoint, Meta, Stage};
use crate::error::{Error, Result};
use crate::files;

pub const RUN_VERSION: u32 = 1;
pub const LOG_HEADER: &str = "stage,t,step,total,ce,l1,ssim,rigidity,active_views,skipped";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageSelect {
    Init,
    Seq,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub format_version: u32,
    /// Dataset directory as given on the command line.
    pub data: PathBuf,
    pub stage: StageSelect,
    /// Stage-1 steps between intermediate checkpoints; 0 keeps only the
    /// end-of-stage ones.
    pub checkpoint_interval: u64,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn new(data: impl Into<PathBuf>, stage: StageSelect, train: TrainConfig) -> Self {
        RunConfig {
            format_version: RUN_VERSION,
            data: data.into(),
            stage,
            checkpoint_interval: 0,
            train,
        }
    }
}

fn checkpoint_dir(run: &Path, step: u64) -> PathBuf {
    run.join("checkpoints").join(format!("step_{step}"))
}

pub fn log_row(r: &LossRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.stage,
        r.t,
        r.step,
        r.total,
        r.ce,
        r.l1,
        r.ssim,
        r.rigidity,
        r.active_views,
        u8::from(r.skipped)
    )
}

/// `(row, total)` of every row in a log file, rows counted from 1 across
/// both stages.
pub fn read_log_totals(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || Error::format(path, format!("line {}: malformed row", i + 1));
        if cols.len() != 10 {
            return Err(bad());
        }
        let total = cols[3].parse().map_err(|_| bad())?;
        out.push((i as u64, total));
    }
    Ok(out)
}

/// Checkpoint of the stage-1 model after `step` steps.
pub fn stage1_checkpoint(
    model: &Stage1Model,
    dataset: &Dataset,
    config: &TrainConfig,
    step: u64,
    complete: bool,
) -> Result<Checkpoint> {
    let perms = learned_permutations(model, dataset, config)?;
    let mut records = Vec::with_capacity(perms.len());
    for (v, c2l) in perms.iter().enumerate() {
        let confidence = view_confidence(&model.gaussians, &model.decoder, dataset, c2l, v)?;
        records.push(checkpoint::permutation_record(
            &model.latents[v],
            c2l,
            confidence,
        ));
    }
    Ok(Checkpoint {
        meta: Meta {
            format_version: checkpoint::CHECKPOINT_VERSION,
            stage: Stage::Init,
            stage1_complete: complete,
            step,
            timesteps: model.gaussians.timesteps(),
            num_gaussians: model.gaussians.len(),
            num_instances: model.gaussians.num_instances,
            feature_dim: model.gaussians.feature_dim,
            reference_view: model.active.reference_view,
            activation_threshold: model.active.threshold,
            active_views: model.active.active.iter().copied().collect(),
        },
        gaussians: model.gaussians.clone(),
        decoder: model.decoder.clone(),
        permutations: records,
        scaffold: None,
    })
}

/// Newest checkpoint in `run` that finished stage 1.
pub fn latest_stage1(run: &Path) -> Result<Checkpoint> {
    let dir = run.join("checkpoints");
    let mut best: Option<(u64, PathBuf)> = None;
    if let Ok(entries) = fs::read_dir(&dir) {
        for e in entries {
            let e = e.map_err(|err| Error::io(&dir, err))?;
            let name = e.file_name().to_string_lossy().into_owned();
            let Some(step) = name
                .strip_prefix("step_")
                .and_then(|s| s.parse::<u64>().ok())
            else {
                continue;
            };
            let meta: Meta = match files::read_json(&e.path().join("meta.json")) {
                Ok(m) => m,
                Err(_) => continue,
            };
            if meta.stage == Stage::Init
                && meta.stage1_complete
                && best.as_ref().is_none_or(|(s, _)| step > *s)
            {
                best = Some((step, e.path()));
            }
        }
    }
    let (_, path) = best.ok_or_else(|| {
        Error::Missing(format!(
            "no completed stage-1 checkpoint under {}",
            dir.display()
        ))
    })?;
    read_checkpoint(&path)
}

fn remove_seq_checkpoints(run: &Path) -> Result<()> {
    let dir = run.join("checkpoints");
    let Ok(entries) = fs::read_dir(&dir) else {
        return Ok(());
    };
    for e in entries {
        let e = e.map_err(|err| Error::io(&dir, err))?;
        let meta: Result<Meta> = files::read_json(&e.path().join("meta.json"));
        if matches!(meta, Ok(m) if m.stage == Stage::Seq) {
            fs::remove_dir_all(e.path()).map_err(|err| Error::io(e.path(), err))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Checkpoint written to `model/`.
    pub model: Checkpoint,
    /// Rows logged by this invocation.
    pub records: Vec<LossRecord>,
}

fn run_stage1<E: ViewExecutor>(
    run: &Path,
    dataset: &Dataset,
    cfg: &RunConfig,
    exec: &E,
    log: &mut String,
) -> Result<(Checkpoint, Vec<LossRecord>)> {
    let train = &cfg.train;
    let mut s = Stage1::new(dataset, train)?;
    let mut records = Vec::new();
    for _ in 0..train.stage1_steps {
        let r = s.step(exec)?;
        writeln!(log, "{}", log_row(&r)).expect("string write");
        records.push(r);
        let step = s.state.step;
        if cfg.checkpoint_interval > 0
            && step % cfg.checkpoint_interval == 0
            && step < train.stage1_steps
        {
            let ck = stage1_checkpoint(&s.model, dataset, train, step, false)?;
            write_checkpoint(&checkpoint_dir(run, step), &ck)?;
        }
    }
    let step = s.state.step;
    let out = finish_stage1(s)?;
    let ck = stage1_checkpoint(&out.model, dataset, train, step, true)?;
    write_checkpoint(&checkpoint_dir(run, step), &ck)?;
    Ok((ck, records))
}

fn run_stage2<E: ViewExecutor>(
    run: &Path,
    dataset: &Dataset,
    cfg: &RunConfig,
    init: Checkpoint,
    exec: &E,
    log: &mut String,
) -> Result<(Checkpoint, Vec<LossRecord>)> {
    let out = stage2_sequential(dataset, &init.gaussians, &cfg.train, exec)?;
    let records: Vec<LossRecord> = out.history.iter().copied().collect();
    for r in &records {
        writeln!(log, "{}", log_row(r)).expect("string write");
    }
    let extra = (dataset.timesteps() as u64).saturating_sub(1) * cfg.train.steps_per_timestep;
    let step = init.meta.step + extra;
    let ck = Checkpoint {
        meta: Meta {
            stage: Stage::Seq,
            step,
            timesteps: out.gaussians.timesteps(),
            ..init.meta
        },
        gaussians: out.gaussians,
        decoder: init.decoder,
        permutations: init.permutations,
        scaffold: Some(out.scaffold),
    };
    // a single-frame sequence adds no steps; keep the stage-1 checkpoint
    if extra > 0 {
        write_checkpoint(&checkpoint_dir(run, step), &ck)?;
    }
    Ok((ck, records))
}

/// Trains into `run`. `init` and `all` start from an empty directory;
/// `seq` continues from the newest completed stage-1 checkpoint.
pub fn train<E: ViewExecutor>(
    run: &Path,
    dataset: &Dataset,
    cfg: &RunConfig,
    exec: &E,
) -> Result<RunOutput> {
    cfg.train.validate()?;
    dataset.validate()?;
    let mut log = String::new();
    log.push_str(LOG_HEADER);
    log.push('\n');
    let (model, records) = match cfg.stage {
        StageSelect::Init | StageSelect::All => {
            files::reset_dir(run)?;
            files::write_json(&run.join("config.json"), cfg)?;
            let (ck, mut records) = run_stage1(run, dataset, cfg, exec, &mut log)?;
            if cfg.stage == StageSelect::All {
                let (ck2, r2) = run_stage2(run, dataset, cfg, ck, exec, &mut log)?;
                records.extend(r2);
                (ck2, records)
            } else {
                (ck, records)
            }
        }
        StageSelect::Seq => {
            let init = latest_stage1(run)?;
            remove_seq_checkpoints(run)?;
            let log_path = run.join("log.csv");
            if let Ok(old) = fs::read_to_string(&log_path) {
                for line in old.lines().skip(1).filter(|l| l.starts_with("1,")) {
                    log.push_str(line);
                    log.push('\n');
                }
            }
            files::write_json(&run.join("config.json"), cfg)?;
            run_stage2(run, dataset, cfg, init, exec, &mut log)?
        }
    };
    files::write(&run.join("log.csv"), log.as_bytes())?;
    write_checkpoint(&run.join("model"), &model)?;
    Ok(RunOutput { model, records })
}

pub fn read_config(run: &Path) -> Result<RunConfig> {
    let path = run.join("config.json");
    let cfg: RunConfig = files::read_json(&path)?;
    if cfg.format_version != RUN_VERSION {
        return Err(Error::Version {
            path,
            found: cfg.format_version,
            expected: RUN_VERSION,
        });
    }
    Ok(cfg)
}
