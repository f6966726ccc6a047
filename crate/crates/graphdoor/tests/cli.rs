//! End-to-end checks of the command-line binary: every subcommand, the
//! staged file formats, and the documented exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graphdoor"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const TINY_CONFIG: &str = r#"
seed = 0
runs = 1

[dataset]
source = "sbm"
blocks = 3
n = 90
p_in = 0.3
p_out = 0.02
dim = 8
noise = 0.1

[attack]
poisoned = 5
candidates = 30
trigger_size = 3
pool_per_category = 2
aps_threshold = 0.0
outer_iters = 3
minibatch = 32

[defense]
method = "prune"
prune_fraction = 0.1

[victim]
archs = ["gcn"]
epochs = 30
dropout = 0.0
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn gen_sbm_and_split_write_bundles() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    run_ok(&[
        "gen-sbm",
        "--blocks",
        "3",
        "--n",
        "60",
        "--dim",
        "6",
        "--p-in",
        "0.3",
        "--p-out",
        "0.02",
        "--seed",
        "1",
        "--out-dir",
        data.to_str().unwrap(),
    ]);
    for f in ["edges.tsv", "features.bin", "labels.tsv", "split.tsv"] {
        assert!(data.join(f).is_file(), "missing {f}");
    }

    let split_dir = tmp.path().join("split");
    let out = run_ok(&[
        "split",
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "2",
        "--out-dir",
        split_dir.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("target"), "split summary: {stdout}");
    let roles = std::fs::read_to_string(split_dir.join("split.tsv")).unwrap();
    assert!(roles.contains("target") && roles.contains("clean") && roles.contains("train"));
}

#[test]
fn staged_attack_defend_train_eval_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_CONFIG);
    let run_dir = tmp.path().join("run");
    let run = run_dir.to_str().unwrap();

    run_ok(&["attack", "--config", &cfg, "--out-dir", run]);
    for f in [
        "dataset/edges.tsv",
        "backdoored/edges.tsv",
        "backdoored/origins.tsv",
        "backdoored/idmap.tsv",
        "backdoored/orig_map.tsv",
        "manifest.jsonl",
        "pool/pool.json",
        "bilevel_log.csv",
        "config.toml",
    ] {
        assert!(run_dir.join(f).exists(), "attack output missing {f}");
    }

    run_ok(&["defend", "--config", &cfg, "--run-dir", run]);
    assert!(run_dir.join("defended/edges.tsv").is_file());
    assert!(run_dir.join("defended/orig_map.tsv").is_file());
    assert!(run_dir.join("defense.json").is_file());

    let defended = run_dir.join("defended");
    run_ok(&[
        "train",
        "--config",
        &cfg,
        "--data",
        defended.to_str().unwrap(),
        "--arch",
        "gcn",
        "--out-dir",
        run,
    ]);
    assert!(run_dir.join("model_gcn.bin").is_file());

    let out = run_ok(&["eval", "--config", &cfg, "--run-dir", run]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gcn"), "eval summary: {stdout}");
    for f in ["reports.json", "report.csv", "report.md"] {
        assert!(run_dir.join(f).is_file(), "eval output missing {f}");
    }
    let reports = std::fs::read_to_string(run_dir.join("reports.json")).unwrap();
    assert!(reports.contains("asr_per_category"));
    assert!(reports.contains("\"method\": \"prune\""));

    let md = tmp.path().join("table.md");
    run_ok(&[
        "report",
        "--reports",
        run_dir.join("reports.json").to_str().unwrap(),
        "--format",
        "markdown",
        "--out",
        md.to_str().unwrap(),
    ]);
    let table = std::fs::read_to_string(&md).unwrap();
    assert!(table.contains("| Model | ASR | Clean Accuracy |"));
}

#[test]
fn in_memory_eval_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_CONFIG);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_ok(&["eval", "--config", &cfg, "--out-dir", a.to_str().unwrap()]);
    run_ok(&["eval", "--config", &cfg, "--out-dir", b.to_str().unwrap()]);
    let ra = std::fs::read(a.join("reports.json")).unwrap();
    let rb = std::fs::read(b.join("reports.json")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn simhist_writes_histogram_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_CONFIG);
    let out = tmp.path().join("hist");
    run_ok(&[
        "simhist",
        "--config",
        &cfg,
        "--bins",
        "20",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(out.join("similarity_histogram.csv")).unwrap();
    assert!(csv.starts_with("bin,clean_count,trigger_count"));
    assert_eq!(csv.lines().count(), 21);
    let summary = std::fs::read_to_string(out.join("similarity.json")).unwrap();
    assert!(summary.contains("connection_mean"));
}

#[test]
fn bad_config_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "definitely_not_a_field = 1\n");
    let out = bin()
        .args(["eval", "--config", &cfg, "--out-dir", tmp.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().args(["eval"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "missing required flag");
}

#[test]
fn uncovered_category_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &TINY_CONFIG.replace("aps_threshold = 0.0", "aps_threshold = 10.0"),
    );
    let out = bin()
        .args([
            "attack",
            "--config",
            &cfg,
            "--out-dir",
            tmp.path().join("run").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}
