//! End-to-end checks of the compiled binary: subcommand wiring, config
//! precedence, artifact layout, determinism, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_privmarket"));
    cmd.env_remove("PRIVMARKET_SEED");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary should launch")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Fast training flags shared by the CLI tests.
fn tiny_train_args(out_dir: &Path) -> Vec<String> {
    vec![
        "train".into(),
        "--out-dir".into(),
        out_dir.display().to_string(),
        "--outer_iters".into(),
        "1".into(),
        "--inner_steps".into(),
        "1".into(),
        "--batch_size".into(),
        "2".into(),
        "--pga_steps".into(),
        "2".into(),
        "--n_clients".into(),
        "3".into(),
    ]
}

#[test]
fn train_writes_one_log_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args(tiny_train_args(dir.path())));
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let log = fs::read_to_string(dir.path().join("training_log.csv")).unwrap();
    let header_comments = log.lines().filter(|l| l.starts_with('#')).count();
    let data_rows: Vec<&str> = log.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(header_comments >= 27, "resolved config must be embedded");
    assert!(log.lines().next().unwrap().starts_with("# privmarket v"));
    assert!(log.contains("# outer_iters=1"));
    assert!(log.contains("# scenario=uniform"));
    assert_eq!(data_rows.len(), 2, "csv header plus exactly one row");
    assert!(data_rows[0].starts_with("iteration,"));

    assert!(dir.path().join("checkpoint.txt").exists());
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let d3 = tempfile::tempdir().unwrap();
    assert!(run(bin().args(tiny_train_args(d1.path()))).status.success());
    assert!(run(bin().args(tiny_train_args(d2.path()))).status.success());
    assert!(run(bin().args(tiny_train_args(d3.path())).args(["--seed", "99"]))
        .status
        .success());
    let c1 = fs::read_to_string(d1.path().join("checkpoint.txt")).unwrap();
    let c2 = fs::read_to_string(d2.path().join("checkpoint.txt")).unwrap();
    let c3 = fs::read_to_string(d3.path().join("checkpoint.txt")).unwrap();
    assert_eq!(c1, c2, "same configuration must be bit-reproducible");
    assert_ne!(c1, c3, "the seed must matter");
}

#[test]
fn config_precedence_is_defaults_file_env_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    fs::write(&cfg_path, "seed=11\nbatch_size=2\n# comment line\n\nzeta=0.3\n").unwrap();

    // File beats defaults.
    let out_a = dir.path().join("a");
    let mut cmd = bin();
    cmd.args(tiny_train_args(&out_a));
    cmd.args(["--config", cfg_path.to_str().unwrap()]);
    assert!(run(&mut cmd).status.success());
    let log = fs::read_to_string(out_a.join("training_log.csv")).unwrap();
    assert!(log.contains("# seed=11"));
    assert!(log.contains("# zeta=0.3"));

    // Environment beats the file.
    let out_b = dir.path().join("b");
    let mut cmd = bin();
    cmd.args(tiny_train_args(&out_b));
    cmd.args(["--config", cfg_path.to_str().unwrap()]);
    cmd.env("PRIVMARKET_SEED", "22");
    assert!(run(&mut cmd).status.success());
    let log = fs::read_to_string(out_b.join("training_log.csv")).unwrap();
    assert!(log.contains("# seed=22"));

    // Flags beat the environment.
    let out_c = dir.path().join("c");
    let mut cmd = bin();
    cmd.args(tiny_train_args(&out_c));
    cmd.args(["--config", cfg_path.to_str().unwrap(), "--seed", "33"]);
    cmd.env("PRIVMARKET_SEED", "22");
    assert!(run(&mut cmd).status.success());
    let log = fs::read_to_string(out_c.join("training_log.csv")).unwrap();
    assert!(log.contains("# seed=33"));
}

#[test]
fn malformed_inputs_map_to_the_documented_exit_codes() {
    // Unknown subcommand and unknown flag: usage error.
    assert_eq!(run(bin().arg("frobnicate")).status.code(), Some(1));
    assert_eq!(
        run(bin().args(["train", "--no-such-flag", "1"])).status.code(),
        Some(1)
    );
    // Bad scenario name: usage error.
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = bin();
    cmd.args(tiny_train_args(dir.path()));
    cmd.args(["--scenario", "gaussian"]);
    assert_eq!(run(&mut cmd).status.code(), Some(1));
    // Bad environment seed: usage error.
    let mut cmd = bin();
    cmd.args(tiny_train_args(dir.path()));
    cmd.env("PRIVMARKET_SEED", "not-a-number");
    assert_eq!(run(&mut cmd).status.code(), Some(1));
    // Unreadable config file: runtime error.
    let mut cmd = bin();
    cmd.args(tiny_train_args(dir.path()));
    cmd.args(["--config", "/nonexistent/path.cfg"]);
    assert_eq!(run(&mut cmd).status.code(), Some(2));
    // Help and version succeed.
    assert_eq!(run(bin().arg("--help")).status.code(), Some(0));
    assert_eq!(run(bin().arg("--version")).status.code(), Some(0));
}

#[test]
fn inspect_checkpoint_reports_shape_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(bin().args(tiny_train_args(dir.path()))).status.success());
    let ckpt = dir.path().join("checkpoint.txt");
    let out = run(bin().arg("inspect-checkpoint").arg(&ckpt));
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("3 clients x 1 items"));
    assert!(text.contains("hash: "));
    assert!(text.contains("header: dims"));
    assert!(text.contains("parameters: "));
    // Missing and corrupted files: runtime error.
    assert_eq!(
        run(bin().args(["inspect-checkpoint", "/nonexistent.ckpt"])).status.code(),
        Some(2)
    );
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "definitely not a checkpoint").unwrap();
    assert_eq!(run(bin().arg("inspect-checkpoint").arg(&bad)).status.code(), Some(2));
}

#[test]
fn verify_list_enumerates_all_criteria() {
    let out = run(bin().args(["verify", "--list"]));
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 12);
    assert!(text.contains("classical-exactness"));
    assert!(text.contains("value-baseline-variance"));
}

#[test]
fn verify_runs_a_selected_criterion_and_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args([
        "verify",
        "--only",
        "10",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]));
    let text = stdout(&out);
    assert!(
        out.status.success(),
        "noise calibration should pass, output:\n{text}"
    );
    assert!(text.contains("criterion 10"));
    assert!(text.contains("noise-calibration"));
    let report = fs::read_to_string(dir.path().join("acceptance_report.txt")).unwrap();
    assert!(report.contains("noise-calibration"));
    // Out-of-range ids are usage errors.
    assert_eq!(run(bin().args(["verify", "--only", "13"])).status.code(), Some(1));
}

#[test]
fn rq1_writes_a_regret_csv_per_mechanism() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args([
        "rq1",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--mechanisms",
        "pac,vcg",
        "--samples",
        "3",
        "--n_clients",
        "5",
    ]));
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for name in ["rq1_regret_pac.csv", "rq1_regret_vcg.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.contains("# mechanism="));
        assert!(text.contains("client,mean_normalized_regret"));
    }
    // The learned mechanism without a checkpoint is a usage error unless
    // inline training was requested.
    let out = run(bin().args([
        "rq1",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--mechanisms",
        "learned",
        "--samples",
        "2",
    ]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn rq2_writes_the_scaling_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args([
        "rq2",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--mechanisms",
        "pac",
        "--sizes",
        "10,50,100",
        "--reps",
        "2",
    ]));
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("rq2_scaling.csv")).unwrap();
    let data_rows = text.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(data_rows, 1 + 3, "header plus one row per size");
    assert!(text.contains("# sizes=10,50,100"));
}

#[test]
fn rq3_writes_csv_and_markdown_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args([
        "rq3",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--mechanisms",
        "pac,vcg",
        "--rounds",
        "3",
        "--seeds",
        "0,1",
        "--n_clients",
        "6",
    ]));
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let md = fs::read_to_string(dir.path().join("rq3_efficiency.md")).unwrap();
    assert!(md.contains("| mechanism |"));
    assert!(md.contains("| pac |"));
    assert!(md.contains("| vcg |"));
    let csv = fs::read_to_string(dir.path().join("rq3_efficiency.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn rq4_writes_round_series_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args([
        "rq4",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--mechanism",
        "pac",
        "--rounds",
        "2",
        "--fixed-eps",
        "1.0",
        "--no-dp-baseline",
        "false",
        "--n_clients",
        "5",
        "--fl-epochs",
        "1",
    ]));
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let rounds = fs::read_to_string(dir.path().join("rq4_rounds_pac.csv")).unwrap();
    assert_eq!(rounds.lines().filter(|l| !l.starts_with('#')).count(), 3);
    assert!(rounds.contains("round,revenue"));
    assert!(dir.path().join("rq4_rounds_fixed_eps_1.csv").exists());
    let summary = fs::read_to_string(dir.path().join("rq4_summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("pac,")));
    assert!(summary.lines().any(|l| l.starts_with("fixed_eps_1,")));
}
