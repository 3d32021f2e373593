use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use inst4dgs_core::optim::TrainConfig;
use inst4dgs_core::synth::{generate, SynthConfig};

use crate::dataset_io::{read_dataset, write_synthetic};
use crate::error::{Error, Result};
use crate::eval::eval_run;
use crate::exec::Parallel;
use crate::files;
use crate::report::{emit_report, read_bundle, write_bundle};
use crate::run::{train, RunConfig, StageSelect};
use crate::selftest::{format_result, run_selftest, SelftestSizes};

#[derive(Debug, Parser)]
#[command(
    name = "inst4dgs",
    version,
    about = "Instance-decomposed 4D Gaussian splatting"
)]
pub struct Cli {
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true, env = "INST4DGS_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Gen {
        /// Generator config (JSON); missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a run (or a bare checkpoint) against a dataset.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write CSV and SVG reports from a metrics file.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient, Sinkhorn, Hungarian and blending checks.
    Selftest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Init,
    Seq,
    All,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub stage: StageArg,
    /// Training config (JSON); missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stage1_steps: Option<u64>,
    #[arg(long)]
    pub steps_per_timestep: Option<u64>,
    /// Stage-1 steps between intermediate checkpoints (0: none).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_interval: u64,
    #[arg(long)]
    pub no_sinkhorn: bool,
    #[arg(long)]
    pub no_track_masking: bool,
    #[arg(long)]
    pub no_progressive: bool,
    #[arg(long)]
    pub no_instance_grouping: bool,
    #[arg(long)]
    pub no_motion_bases: bool,
    #[arg(long)]
    pub straight_through: bool,
    #[arg(long)]
    pub finetune_appearance: bool,
}

fn parse_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = files::read(path)?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Error::Config(format!("{}: {field}: {}", path.display(), e.inner()))
    })
}

fn check_config(r: inst4dgs_core::Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        inst4dgs_core::Error::Config { field, reason } => {
            Error::Config(format!("{field}: {reason}"))
        }
        other => Error::Core(other),
    })
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut train: TrainConfig = match &self.config {
            Some(p) => parse_json(p)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            train.seed = s;
        }
        if let Some(n) = self.stage1_steps {
            train.stage1_steps = n;
        }
        if let Some(n) = self.steps_per_timestep {
            train.steps_per_timestep = n;
        }
        let a = &mut train.ablations;
        a.no_sinkhorn |= self.no_sinkhorn;
        a.no_track_masking |= self.no_track_masking;
        a.no_progressive |= self.no_progressive;
        a.no_instance_grouping |= self.no_instance_grouping;
        a.no_motion_bases |= self.no_motion_bases;
        a.straight_through |= self.straight_through;
        a.finetune_appearance |= self.finetune_appearance;
        check_config(train.validate())?;
        let stage = match self.stage {
            StageArg::Init => StageSelect::Init,
            StageArg::Seq => StageSelect::Seq,
            StageArg::All => StageSelect::All,
        };
        let mut cfg = RunConfig::new(&self.data, stage, train);
        cfg.checkpoint_interval = self.checkpoint_interval;
        Ok(cfg)
    }
}

fn executor(threads: Option<usize>) -> Result<Parallel> {
    let n = match threads {
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Parallel::new(n)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out, seed } => {
            let mut cfg: SynthConfig = match &config {
                Some(p) => parse_json(p)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            check_config(cfg.validate())?;
            let s = generate(&cfg)?;
            write_synthetic(&out, &s)
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let exec = executor(cli.threads)?;
            let dataset = read_dataset(&args.data)?;
            let out = train(&args.out, &dataset, &cfg, &exec)?;
            if let Some(r) = out.records.last() {
                println!(
                    "step {} total {:.6} active views {}",
                    r.step, r.total, r.active_views
                );
            }
            Ok(())
        }
        Command::Eval { run, data, out } => {
            let exec = executor(cli.threads)?;
            let bundle = eval_run(&run, &data, &exec)?;
            write_bundle(&out, &bundle)?;
            let a = &bundle.aggregate;
            println!(
                "miou {} macc {} psnr {} perm {}",
                a.miou_instance.display(),
                a.macc.display(),
                a.psnr.display(),
                a.perm_accuracy.display()
            );
            Ok(())
        }
        Command::Report { metrics, out } => emit_report(&read_bundle(&metrics)?, &out),
        Command::Selftest => {
            let results = run_selftest(SelftestSizes::default());
            let mut failed = 0;
            for r in &results {
                println!("{}", format_result(r));
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                return Err(Error::Check(failed));
            }
            Ok(())
        }
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
