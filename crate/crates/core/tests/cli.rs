use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use endofair::cli::{resolve_config, Cli};
use endofair::evalkit::SweepPlan;
use serde_json::Value;

fn endofair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_endofair"))
        .args(args)
        .env("ENDOFAIR_THREADS", "1")
        .output()
        .expect("spawn endofair")
}

fn ok(args: &[&str]) {
    let out = endofair(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn out_dir(tmp: &tempfile::TempDir, name: &str) -> PathBuf {
    tmp.path().join(name)
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file))
        .unwrap_or_else(|e| panic!("{}: {e}", dir.join(file).display()))
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&read(dir, "manifest.json")).unwrap()
}

#[test]
fn train_writes_trace_checkpoint_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "train");
    ok(&["train", "--out", dir.to_str().unwrap()]);
    let trace = read(&dir, "trace.csv");
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("epoch,combined,wasserstein,supervised"));
    assert_eq!(lines.count(), 300);
    assert!(dir.join("params.json").exists() && dir.join("params.bin").exists());
    let m = manifest(&dir);
    assert_eq!(m["format_version"], 1);
    assert_eq!(m["subcommand"], "train");
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(m["git_describe"].is_string());
    assert!(m["wall_time_secs"].as_f64().unwrap() > 0.0);
    assert!(m["metrics"]["train_mse"].as_f64().unwrap().is_finite());

    let eval_dir = out_dir(&tmp, "eval");
    let ckpt = dir.join("params.json");
    ok(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(read(&eval_dir, "metrics.csv"), read(&dir, "metrics.csv"));
}

#[test]
fn gen_bundle_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (out_dir(&tmp, "a"), out_dir(&tmp, "b"), out_dir(&tmp, "c"));
    ok(&["gen", "--seed", "4", "--out", a.to_str().unwrap()]);
    ok(&["gen", "--seed", "4", "--out", b.to_str().unwrap()]);
    ok(&["gen", "--seed", "5", "--out", c.to_str().unwrap()]);
    for f in [
        "phi_star.csv",
        "y.csv",
        "grid.json",
        "meta.json",
        "instruments.csv",
    ] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    assert_ne!(read(&a, "y.csv"), read(&c, "y.csv"));
    assert_eq!(read(&a, "phi_star.csv"), read(&c, "phi_star.csv"));
    let meta: Value = serde_json::from_str(&read(&a, "meta.json")).unwrap();
    assert_eq!(meta["seed"], 4);
    assert_eq!(meta["noise"]["kind"], "one_d");
    assert_eq!(read(&a, "y.csv").lines().count(), 201);
}

#[test]
fn overrides_take_precedence_over_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let first = out_dir(&tmp, "first");
    ok(&[
        "gen",
        "--seed",
        "3",
        "--epochs",
        "12",
        "--out",
        first.to_str().unwrap(),
    ]);
    let cfg_path = first.join("manifest.json");
    let cfg = cfg_path.to_str().unwrap();

    let kept = out_dir(&tmp, "kept");
    ok(&["gen", "--config", cfg, "--out", kept.to_str().unwrap()]);
    let m = manifest(&kept);
    assert_eq!(
        (m["seed"].as_u64(), m["config"]["train"]["epochs"].as_u64()),
        (Some(3), Some(12))
    );

    let overridden = out_dir(&tmp, "overridden");
    ok(&[
        "gen",
        "--config",
        cfg,
        "--seed",
        "9",
        "--epochs",
        "40",
        "--out",
        overridden.to_str().unwrap(),
    ]);
    let m = manifest(&overridden);
    assert_eq!(
        (m["seed"].as_u64(), m["config"]["train"]["epochs"].as_u64()),
        (Some(9), Some(40))
    );
}

#[test]
fn sweep_writes_rows_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "sweep");
    ok(&[
        "sweep",
        "--scenario",
        "pnorm",
        "--epochs",
        "5",
        "--fractions",
        "0,0.01",
        "--realizations",
        "2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    let rows = read(&dir, "sweep.csv");
    assert!(rows.starts_with(
        "fraction,realization,seed,train_mse,test_mse,train_error_norm,test_error_norm,final_w1\n"
    ));
    assert_eq!(rows.lines().count(), 5);
    let summary = read(&dir, "sweep_summary.csv");
    assert!(summary.starts_with("fraction,train_mean,train_std,test_mean,test_std\n"));
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn default_sweep_has_sixty_cells() {
    use clap::Parser;
    let cli = Cli::try_parse_from(["endofair", "sweep", "--scenario", "pnorm"]).unwrap();
    let cfg = resolve_config(&cli.command, &cli.common).unwrap();
    let plan = SweepPlan::new(
        cfg.sweep.fractions.clone(),
        cfg.sweep.realizations,
        cfg.seed,
    );
    assert_eq!(plan.cells().len(), 60);
}

#[test]
fn iv_writes_reconstruction_and_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "iv");
    ok(&[
        "iv",
        "--k",
        "3",
        "--max-n",
        "8",
        "--c",
        "0.4",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(read(&dir, "iv_estimate.csv").lines().count(), 201);
    let diag: Value = serde_json::from_str(&read(&dir, "iv_diagnostics.json")).unwrap();
    assert_eq!(diag["k"], 3);
    assert!(diag["bandwidth_t"]["bandwidth"].as_f64().unwrap() > 0.0);
    let n = diag["iteration"]["chosen_n"].as_u64().unwrap();
    assert!(n <= 8);
    assert!(!diag["residuals"].as_array().unwrap().is_empty());
}

#[test]
fn track_writes_phase_column() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "track");
    ok(&["track", "--epochs", "4", "--out", dir.to_str().unwrap()]);
    let trace = read(&dir, "trace.csv");
    assert!(trace.starts_with("epoch,combined,wasserstein,supervised,phase\n"));
    assert_eq!(trace.lines().count(), 17);
    let m = manifest(&dir);
    assert_eq!(m["metrics"]["boundaries"], serde_json::json!([4, 8, 12]));
}

fn error_report(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("error line");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("not JSON: {last}: {e}"))
}

#[test]
fn failures_exit_with_json_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": "zero"}"#).unwrap();
    let out = endofair(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_report(&out)["error"], "schema-violation");

    let out = endofair(&["train", "--labeled-fraction", "1.5"]);
    assert_eq!(out.status.code(), Some(2));

    let missing = tmp.path().join("missing.json");
    let out = endofair(&["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_report(&out)["exit_code"], 4);

    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = endofair(&["gen", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));

    let out = endofair(&[
        "iv",
        "--scenario",
        "pnorm",
        "--out",
        tmp.path().join("iv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = endofair(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_report(&out)["error"], "usage");
}
