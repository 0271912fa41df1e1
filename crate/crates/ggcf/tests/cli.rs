//! End-to-end tests of the `ggcf` binary surface: prepare / train / evaluate /
//! grid / ablate round trips on a hand-written miniature dataset.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ggcf")
}

fn run_in(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("GGCF_OUT_DIR")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Six users, ten movies, enough interactions that every user keeps at least
/// one test item under the default 0.8 split.
fn mini_csv(dir: &Path) -> PathBuf {
    let path = dir.join("ratings.csv");
    let mut text = String::from("userId,movieId,rating,timestamp\n");
    let rows: &[(u64, &[u64])] = &[
        (1, &[101, 102, 103, 104, 105]),
        (2, &[101, 102, 106, 107]),
        (3, &[103, 104, 108, 109]),
        (4, &[105, 106, 109, 110]),
        (5, &[101, 104, 107, 110]),
        (6, &[102, 103, 105, 108, 110]),
    ];
    let mut ts = 1_000_000u64;
    for (u, items) in rows {
        for i in *items {
            text.push_str(&format!("{u},{i},4.0,{ts}\n"));
            ts += 1;
        }
    }
    std::fs::write(&path, text).unwrap();
    path
}

fn train_args<'a>(csv: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train",
        "--dataset",
        "movielens",
        "--data-path",
        csv,
        "--out",
        out,
        "--dim",
        "4",
        "--layers",
        "2",
        "--lr",
        "0.01",
        "--l2",
        "0.0001",
        "--batch",
        "8",
        "--epochs",
        "3",
        "--eval-every",
        "3",
        "--seed",
        "7",
        "--deterministic",
    ]
}

#[test]
fn prepare_reports_counts_and_freezes_split() {
    let dir = tempfile::tempdir().unwrap();
    let csv = mini_csv(dir.path());
    let args = [
        "prepare",
        "--dataset",
        "movielens",
        "--data-path",
        csv.to_str().unwrap(),
        "--out",
        "out",
    ];
    let (code, stdout, stderr) = run_in(dir.path(), &args);
    assert_eq!(code, 0, "stderr: {stderr}");
    assert!(stdout.contains("users: 6"), "stdout: {stdout}");
    assert!(stdout.contains("items: 10"));
    assert!(stdout.contains("interactions: 26"));
    let split = dir.path().join("out/movielens-split.tsv");
    assert!(split.exists());
    assert!(dir.path().join("out/movielens-prepare.json").exists());

    let first = std::fs::read(&split).unwrap();
    let (code, _, _) = run_in(dir.path(), &args);
    assert_eq!(code, 0);
    assert_eq!(std::fs::read(&split).unwrap(), first, "rerun must be byte-identical");
}

#[test]
fn train_writes_history_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let csv = mini_csv(dir.path());
    let (code, stdout, stderr) = run_in(dir.path(), &train_args(csv.to_str().unwrap(), "out"));
    assert_eq!(code, 0, "stderr: {stderr}");
    assert!(stdout.contains("checkpoint:"));
    let history = std::fs::read_to_string(dir.path().join("out/history.jsonl")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines.len(), 3);
    for line in &lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["config_hash"].is_string());
        assert!(v["loss"].is_number());
    }
    // Only the final epoch was evaluated under eval_every = 3.
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    let last: serde_json::Value = serde_json::from_str(lines[2]).unwrap();
    assert!(first["recall"].is_null());
    assert!(last["recall"].is_number());
    assert!(dir.path().join("out/model.ckpt").exists());
}

#[test]
fn one_epoch_yields_one_history_record() {
    let dir = tempfile::tempdir().unwrap();
    let csv = mini_csv(dir.path());
    let mut args = train_args(csv.to_str().unwrap(), "out");
    let pos = args.iter().position(|a| *a == "--epochs").unwrap();
    args[pos + 1] = "1";
    let pos = args.iter().position(|a| *a == "--eval-every").unwrap();
    args[pos + 1] = "1";
    let (code, _, stderr) = run_in(dir.path(), &args);
    assert_eq!(code, 0, "stderr: {stderr}");
    let history = std::fs::read_to_string(dir.path().join("out/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 1);
}

#[test]
fn evaluate_after_train_matches_final_history_record() {
    let dir = tempfile::tempdir().unwrap();
    let csv = mini_csv(dir.path());
    let (code, _, stderr) = run_in(dir.path(), &train_args(csv.to_str().unwrap(), "out"));
    assert_eq!(code, 0, "stderr: {stderr}");
    let (code, stdout, stderr) = run_in(
        dir.path(),
        &[
            "evaluate",
            "out/model.ckpt",
            "out/movielens-split.tsv",
            "--k",
            "20",
            "--out",
            "out",
        ],
    );
    assert_eq!(code, 0, "stderr: {stderr}");
    let report: serde_json::Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    let history = std::fs::read_to_string(dir.path().join("out/history.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(history.lines().last().unwrap()).unwrap();
    assert_eq!(report["recall"], last["recall"]);
    assert_eq!(report["ndcg"], last["ndcg"]);
    assert!(dir.path().join("out/eval.json").exists());
}

#[test]
fn evaluate_rejects_tampered_version_field() {
    let dir = tempfile::tempdir().unwrap();
    let csv = mini_csv(dir.path());
    let (code, _, _) = run_in(dir.path(), &train_args(csv.to_str().unwrap(), "out"));
    assert_eq!(code, 0);
    let ckpt = dir.path().join("out/model.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[4] = 0xEE;
    std::fs::write(&ckpt, bytes).unwrap();
    let (code, _, stderr) = run_in(
        dir.path(),
        &["evaluate", "out/model.ckpt", "out/movielens-split.tsv"],
    );
    assert_eq!(code, 2, "stderr: {stderr}");
    assert!(stderr.contains("incompatible"), "stderr: {stderr}");
}

#[test]
fn evaluate_rejects_mismatched_split() {
    let dir = tempfile::tempdir().unwrap();
    let csv = mini_csv(dir.path());
    let (code, _, _) = run_in(dir.path(), &train_args(csv.to_str().unwrap(), "out"));
    assert_eq!(code, 0);
    let (code, _, _) = run_in(
        dir.path(),
        &[
            "prepare",
            "--dataset",
            "movielens",
            "--data-path",
            csv.to_str().unwrap(),
            "--split-seed",
            "999",
            "--out",
            "other",
        ],
    );
    assert_eq!(code, 0);
    let (code, _, stderr) = run_in(
        dir.path(),
        &["evaluate", "out/model.ckpt", "other/movielens-split.tsv"],
    );
    assert_eq!(code, 2, "stderr: {stderr}");
    assert!(stderr.contains("incompatible"), "stderr: {stderr}");
}

#[test]
fn deterministic_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let csv = mini_csv(dir.path());
    let args = train_args(csv.to_str().unwrap(), "out");
    let (code, _, _) = run_in(dir.path(), &args);
    assert_eq!(code, 0);
    let first_history = std::fs::read(dir.path().join("out/history.jsonl")).unwrap();
    let first_ckpt = std::fs::read(dir.path().join("out/model.ckpt")).unwrap();
    let (code, _, _) = run_in(dir.path(), &args);
    assert_eq!(code, 0);
    assert_eq!(
        std::fs::read(dir.path().join("out/history.jsonl")).unwrap(),
        first_history
    );
    assert_eq!(
        std::fs::read(dir.path().join("out/model.ckpt")).unwrap(),
        first_ckpt
    );
}

#[test]
fn grid_shares_one_split_and_tabulates_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = mini_csv(dir.path());
    let (code, stdout, stderr) = run_in(
        dir.path(),
        &[
            "grid",
            "--dataset",
            "movielens",
            "--data-path",
            csv.to_str().unwrap(),
            "--out",
            "out",
            "--grid-layers",
            "1,2",
            "--dim",
            "4",
            "--epochs",
            "2",
            "--batch",
            "8",
            "--eval-every",
            "2",
            "--deterministic",
        ],
    );
    assert_eq!(code, 0, "stderr: {stderr}");
    let grid: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/grid.json")).unwrap())
            .unwrap();
    let rows = grid["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row["status"], "ok");
        assert!(row["recall"].is_number());
    }
    assert!(grid["split_sha256"].is_string());
    assert!(stdout.contains("split sha256:"));

    let (code, _, _) = run_in(
        dir.path(),
        &[
            "grid",
            "--dataset",
            "movielens",
            "--out",
            "out",
            "--grid-layers",
            "1",
            "--dim",
            "4",
            "--epochs",
            "1",
            "--batch",
            "8",
        ],
    );
    assert_eq!(code, 0);
    let grid: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/grid.json")).unwrap())
            .unwrap();
    assert_eq!(grid["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn ablate_emits_four_rows_on_one_split() {
    let dir = tempfile::tempdir().unwrap();
    let csv = mini_csv(dir.path());
    let (code, _, stderr) = run_in(
        dir.path(),
        &[
            "ablate",
            "--dataset",
            "movielens",
            "--data-path",
            csv.to_str().unwrap(),
            "--out",
            "out",
            "--dim",
            "4",
            "--layers",
            "2",
            "--epochs",
            "2",
            "--batch",
            "8",
            "--eval-every",
            "2",
            "--deterministic",
        ],
    );
    assert_eq!(code, 0, "stderr: {stderr}");
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/ablate.json")).unwrap())
            .unwrap();
    let rows = table["rows"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["variant"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        ["full", "no-interaction", "euclidean-only", "hyperbolic-only"]
    );
    for row in rows {
        assert_eq!(row["status"], "ok", "row: {row}");
        assert!(row["ndcg"].is_number());
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let csv = mini_csv(dir.path());
    let toml_path = dir.path().join("run.toml");
    std::fs::write(
        &toml_path,
        format!(
            "dataset = \"movielens\"\ndata_path = \"{}\"\ndim = 4\nlayers = 1\nepochs = 2\nbatch_size = 8\ndeterministic = true\n",
            csv.display()
        ),
    )
    .unwrap();
    let (code, _, stderr) = run_in(
        dir.path(),
        &[
            "train",
            "--config",
            toml_path.to_str().unwrap(),
            "--out",
            "out",
            "--epochs",
            "1",
            "--eval-every",
            "5",
        ],
    );
    assert_eq!(code, 0, "stderr: {stderr}");
    let history = std::fs::read_to_string(dir.path().join("out/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 1, "flag override must win");
}

#[test]
fn out_dir_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let csv = mini_csv(dir.path());
    let out = Command::new(bin())
        .args([
            "prepare",
            "--dataset",
            "movielens",
            "--data-path",
            csv.to_str().unwrap(),
        ])
        .current_dir(dir.path())
        .env("GGCF_OUT_DIR", dir.path().join("from-env"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("from-env/movielens-split.tsv").exists());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = run_in(dir.path(), &["train", "--no-such-flag"]);
    assert_eq!(code, 1);
    let (code, _, stderr) = run_in(dir.path(), &["prepare", "--dataset", "movielens"]);
    assert_eq!(code, 1, "stderr: {stderr}");
    let (code, _, _) = run_in(dir.path(), &["train", "--lr", "-1"]);
    assert_eq!(code, 1);
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = run_in(
        dir.path(),
        &[
            "prepare",
            "--dataset",
            "movielens",
            "--data-path",
            "no-such-file.csv",
        ],
    );
    assert_eq!(code, 2);
}

#[test]
fn numeric_blowup_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let csv = mini_csv(dir.path());
    let mut args = train_args(csv.to_str().unwrap(), "out");
    let pos = args.iter().position(|a| *a == "--lr").unwrap();
    args[pos + 1] = "1e155";
    let (code, _, stderr) = run_in(dir.path(), &args);
    assert_eq!(code, 3, "stderr: {stderr}");
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run_in(dir.path(), &["--help"]);
    assert_eq!(code, 0);
    for cmd in ["prepare", "train", "evaluate", "grid", "ablate"] {
        assert!(stdout.contains(cmd), "help must list {cmd}");
    }
    let (code, _, _) = run_in(dir.path(), &["--version"]);
    assert_eq!(code, 0);
}
