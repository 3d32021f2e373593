use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const TINY: &str = r#"{"num_instances": 2, "gaussians_per_instance": 16, "timesteps": 2, "views": 2, "width": 20, "height": 20, "test_views": [], "seed": 3}"#;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inst4dgs"))
        .args(args)
        .env_remove("INST4DGS_THREADS")
        .output()
        .expect("spawn inst4dgs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_dataset(root: &Path) -> PathBuf {
    let cfg = root.join("gen.json");
    fs::write(&cfg, TINY).unwrap();
    let data = root.join("data");
    let o = bin(&["gen", "--config", s(&cfg), "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    data
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        s(data),
        "--out",
        s(out),
        "--stage1-steps",
        "8",
        "--steps-per-timestep",
        "3",
    ];
    args.extend_from_slice(extra);
    bin(&args)
}

/// Hash over every file's relative path and contents.
fn tree_hash(root: &Path) -> String {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    let mut files = Vec::new();
    walk(root, root, &mut files);
    files.sort();
    let mut h = Sha256::new();
    for (name, bytes) in files {
        h.update(name.as_bytes());
        h.update([0]);
        h.update(&bytes);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn gen_writes_frames_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    for v in 0..2 {
        for t in 0..2 {
            assert!(data.join(format!("view_{v:03}/frame_{t:04}.ppm")).is_file());
            assert!(data.join(format!("view_{v:03}/label_{t:04}.pgm")).is_file());
        }
    }
    assert!(data.join("manifest.json").is_file());
    assert!(data.join("cameras.json").is_file());
}

#[test]
fn gen_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(
        tree_hash(&tiny_dataset(a.path())),
        tree_hash(&tiny_dataset(b.path()))
    );
}

#[test]
fn gen_rejects_zero_instances() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"num_instances": 0}"#).unwrap();
    let o = bin(&[
        "gen",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_type_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"views": "four"}"#).unwrap();
    let o = bin(&[
        "gen",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("views"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&bin(&["train", "--bogus"])), 2);
}

#[test]
fn train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let run = dir.path().join("run");
    let o = train(&data, &run, &["--checkpoint-interval", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "config.json",
        "log.csv",
        "model/meta.json",
        "model/gaussians.bin",
        "model/scaffold.json",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    assert!(run.join("checkpoints/step_4/meta.json").is_file());
    assert!(run.join("checkpoints/step_8/meta.json").is_file());
    assert!(run.join("checkpoints/step_11/meta.json").is_file());
    let log = fs::read_to_string(run.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 8 + 3);

    let metrics = dir.path().join("metrics.json");
    let o = bin(&[
        "eval",
        "--run",
        s(&run),
        "--data",
        s(&data),
        "--out",
        s(&metrics),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = dir.path().join("report");
    assert_eq!(
        code(&bin(&[
            "report",
            "--metrics",
            s(&metrics),
            "--out",
            s(&report)
        ])),
        0
    );
    let csv = fs::read_to_string(report.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("data,"));
    assert!(report.join("loss.svg").is_file() && report.join("traj_error.svg").is_file());
}

#[test]
fn ablation_flags_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let run = dir.path().join("run");
    assert_eq!(
        code(&train(&data, &run, &["--no-sinkhorn", "--stage", "init"])),
        0
    );
    let cfg: serde_json::Value =
        serde_json::from_slice(&fs::read(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["train"]["ablations"]["no_sinkhorn"], true);
    assert_eq!(cfg["train"]["ablations"]["no_track_masking"], false);
    assert_eq!(cfg["stage"], "init");
}

#[test]
fn runs_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&train(&data, &a, &["--threads", "1"])), 0);
    assert_eq!(code(&train(&data, &b, &["--threads", "2"])), 0);
    assert_eq!(tree_hash(&a), tree_hash(&b));
}

#[test]
fn seq_without_stage1_is_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let o = train(&data, &dir.path().join("empty"), &["--stage", "seq"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn seq_rerun_is_idempotent_and_matches_all() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let split = dir.path().join("split");
    let whole = dir.path().join("whole");
    assert_eq!(code(&train(&data, &split, &["--stage", "init"])), 0);
    assert_eq!(code(&train(&data, &split, &["--stage", "seq"])), 0);
    let first = tree_hash(&split);
    assert_eq!(code(&train(&data, &split, &["--stage", "seq"])), 0);
    assert_eq!(tree_hash(&split), first);
    assert_eq!(code(&train(&data, &whole, &[])), 0);
    for f in ["log.csv", "model/gaussians.bin", "model/trajectories.bin"] {
        assert_eq!(
            fs::read(split.join(f)).unwrap(),
            fs::read(whole.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn checkpoint_version_mismatch_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let meta = data.join("gt/model/meta.json");
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&meta).unwrap()).unwrap();
    v["format_version"] = 99.into();
    fs::write(&meta, serde_json::to_vec(&v).unwrap()).unwrap();
    let o = bin(&[
        "eval",
        "--run",
        s(&data.join("gt/model")),
        "--data",
        s(&data),
        "--out",
        s(&dir.path().join("m.json")),
    ]);
    assert_eq!(code(&o), 4);
}

#[test]
fn oracle_checkpoint_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let out = dir.path().join("m.json");
    let o = bin(&[
        "eval",
        "--run",
        s(&data.join("gt/model")),
        "--data",
        s(&data),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    let scene = &m["scenes"][0];
    assert_eq!(scene["miou_instance"], 1.0);
    assert_eq!(scene["perm_accuracy"], 1.0);
    assert_eq!(scene["psnr"], "INFINITE");
}

#[test]
fn empty_metrics_report_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json");
    let bundle = inst4dgs_core::metrics::MetricsBundle::new(0, "", vec![]);
    fs::write(&m, serde_json::to_vec(&bundle).unwrap()).unwrap();
    let out = dir.path().join("r");
    assert_eq!(
        code(&bin(&["report", "--metrics", s(&m), "--out", s(&out)])),
        0
    );
    assert_eq!(
        fs::read_to_string(out.join("metrics.csv")).unwrap(),
        format!("{}\n", inst4dgs::report::CSV_HEADER)
    );
}

#[test]
fn selftest_passes() {
    let o = bin(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}
