use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lcl_core::experiments::ExperimentConfig;
use sha2::{Digest, Sha256};

fn configs() -> PathBuf {
  Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn lcl(args: &[&str]) -> Output {
  Command::new(env!("CARGO_BIN_EXE_lcl")).args(args).env_remove("LCL_THREADS").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
  String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Desk config shrunk to 4 t-values and 100 replicates.
fn small_config(dir: &Path, edit: impl Fn(&mut serde_json::Value)) -> PathBuf {
  let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(configs().join("desk_comonotonic.json")).unwrap()).unwrap();
  v["replicates"] = 100.into();
  v["t_grid"] = serde_json::json!({"kind": "log_spaced", "lo": 1e-3, "hi": 1e-1, "n": 4});
  edit(&mut v);
  let path = dir.join("small.json");
  fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
  path
}

#[test]
fn validate_bundled_spec_passes_every_check() {
  let o = lcl(&["validate", "--config", configs().join("tempered_alpha07.json").to_str().unwrap()]);
  assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
  let out = stdout(&o);
  assert!(out.contains("all 7 checks passed"), "{out}");
  assert!(!out.contains("FAIL"));
}

#[test]
fn bounds_of_zero_difference_summary_is_zero() {
  let o = lcl(&["bounds", "--order", "1", "--config", configs().join("zero_summary.json").to_str().unwrap()]);
  assert_eq!(o.status.code(), Some(0));
  assert!(stdout(&o).lines().any(|l| l == "bound = 0"), "{}", stdout(&o));
}

#[test]
fn full_grid_flag_queues_51_t_values() {
  let dir = tempfile::tempdir().unwrap();
  let cfg = configs().join("thinning_full_grid.json");
  let o = lcl(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--seed", "1", "--paper-grid", "--dry-run"]);
  assert_eq!(o.status.code(), Some(0));
  assert!(stdout(&o).starts_with("queued 51 t-values x 5000 replicates"), "{}", stdout(&o));
}

#[test]
fn usage_errors_exit_one() {
  assert_eq!(lcl(&["frobnicate"]).status.code(), Some(1));
  let cfg = configs().join("desk_comonotonic.json");
  // --seed is mandatory.
  assert_eq!(lcl(&["simulate", "--config", cfg.to_str().unwrap(), "--out", "/nonexistent"]).status.code(), Some(1));
  assert_eq!(lcl(&["validate", "--config", "/nonexistent.json"]).status.code(), Some(1));
}

#[test]
fn numeric_failure_exits_two_with_diagnostics() {
  let dir = tempfile::tempdir().unwrap();
  let cfg = small_config(dir.path(), |v| v["eps"] = serde_json::json!({"kind": "l1", "target": 1e-300}));
  let out = dir.path().join("out");
  let o = lcl(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "1"]);
  assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
  let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
  assert!(diag["error"].as_str().unwrap().contains("truncation level"));
}

#[test]
fn simulate_echo_round_trips_and_hashes_match() {
  let dir = tempfile::tempdir().unwrap();
  let cfg = small_config(dir.path(), |_| {});
  let out = dir.path().join("out");
  let o = lcl(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "9"]);
  assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
  let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
  let echo: ExperimentConfig = serde_json::from_value(summary["config"].clone()).unwrap();
  let mut original = ExperimentConfig::from_json(&fs::read_to_string(&cfg).unwrap()).unwrap();
  original.seed = Some(9);
  assert_eq!(echo, original);
  assert_eq!(summary["run_id"].as_str().unwrap(), original.run_id());
  let outputs = summary["outputs"].as_array().unwrap();
  assert_eq!(outputs.len(), 3);
  for f in outputs {
    let bytes = fs::read(out.join(f["path"].as_str().unwrap())).unwrap();
    assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
  }
  let samples = fs::read_to_string(out.join("samples.csv")).unwrap();
  assert!(samples.starts_with("run_id,t,replicate,distance,aborted\n"));
  assert_eq!(samples.lines().count(), 401);
  assert!(fs::read_to_string(out.join("tails.csv")).unwrap().starts_with("run_id,t,r,prob,n,aborted\n"));
  assert!(fs::read_to_string(out.join("ratefit.csv")).unwrap().starts_with("run_id,statistic,slope,stderr,intercept\n"));
}

#[test]
fn samples_do_not_depend_on_worker_count() {
  let dir = tempfile::tempdir().unwrap();
  let cfg = small_config(dir.path(), |_| {});
  let mut files = Vec::new();
  for threads in ["1", "4"] {
    let out = dir.path().join(format!("out{threads}"));
    let o = lcl(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3", "--threads", threads]);
    assert_eq!(o.status.code(), Some(0));
    files.push(fs::read(out.join("samples.csv")).unwrap());
  }
  assert_eq!(files[0], files[1]);
}

#[test]
fn resume_never_recomputes_completed_cells() {
  let dir = tempfile::tempdir().unwrap();
  let cfg = small_config(dir.path(), |_| {});
  let out = dir.path().join("out");
  let args = ["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "4"];
  assert_eq!(lcl(&args).status.code(), Some(0));
  let full = fs::read(out.join("samples.csv")).unwrap();
  let mut resumed = args.to_vec();
  resumed.push("--resume");
  let o = lcl(&resumed);
  assert!(stdout(&o).contains("resumed: 400 cells kept, 0 computed"), "{}", stdout(&o));
  assert_eq!(fs::read(out.join("samples.csv")).unwrap(), full);

  // Half the rows survive; the rest are recomputed bit for bit.
  let text = String::from_utf8(full.clone()).unwrap();
  let half: String = text.lines().take(201).map(|l| format!("{l}\n")).collect();
  fs::write(out.join("samples.csv"), half).unwrap();
  let o = lcl(&resumed);
  assert!(stdout(&o).contains("resumed: 200 cells kept, 200 computed"), "{}", stdout(&o));
  assert_eq!(fs::read(out.join("samples.csv")).unwrap(), full);

  // Another seed is another run.
  let mut other = resumed.clone();
  other[6] = "5";
  assert_eq!(lcl(&other).status.code(), Some(1));
}

#[test]
fn post_processing_reads_the_summary_echo() {
  let dir = tempfile::tempdir().unwrap();
  let cfg = small_config(dir.path(), |_| {});
  let out = dir.path().join("out");
  assert_eq!(lcl(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "2"]).status.code(), Some(0));
  let o = lcl(&["tails", "--out", out.to_str().unwrap(), "--r-points", "16"]);
  assert_eq!(o.status.code(), Some(0));
  assert_eq!(fs::read_to_string(out.join("tails.csv")).unwrap().lines().count(), 1 + 4 * 16);
  let o = lcl(&["rates", "--out", out.to_str().unwrap(), "--statistic", "trimmed-mean"]);
  assert_eq!(o.status.code(), Some(0));
  assert!(fs::read_to_string(out.join("ratefit.csv")).unwrap().contains(",trimmed_mean_0.1,"));
  // alpha = 0.7: the mean needs --force-mean.
  assert_eq!(lcl(&["rates", "--out", out.to_str().unwrap(), "--statistic", "mean"]).status.code(), Some(1));
  assert_eq!(lcl(&["rates", "--out", out.to_str().unwrap(), "--statistic", "mean", "--force-mean"]).status.code(), Some(0));
  let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
  let tails_hash = summary["outputs"].as_array().unwrap().iter().find(|f| f["path"] == "tails.csv").unwrap()["sha256"].clone();
  assert_eq!(tails_hash.as_str().unwrap(), hex::encode(Sha256::digest(fs::read(out.join("tails.csv")).unwrap())));
}

#[test]
fn dump_paths_writes_both_solutions() {
  let dir = tempfile::tempdir().unwrap();
  let out = dir.path().join("out");
  let cfg = configs().join("paths_alpha07.json");
  let o = lcl(&["dump-paths", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "1", "--paths", "2", "--dump-events"]);
  assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
  let text = fs::read_to_string(out.join("paths.csv")).unwrap();
  assert!(text.starts_with("replicate,path,time,x_0,x_1\n"));
  for key in ["0,1,", "0,2,", "1,1,", "1,2,"] {
    assert!(text.lines().any(|l| l.starts_with(key)), "missing rows {key}");
  }
  assert!(out.join("events.csv").exists());
}

#[test]
fn discrepancy_sweep_writes_csv() {
  let dir = tempfile::tempdir().unwrap();
  let o = lcl(&["discrepancy", "--config", configs().join("tempered_alpha07.json").to_str().unwrap(), "--t", "1e-2,1e-3", "--out", dir.path().to_str().unwrap()]);
  assert_eq!(o.status.code(), Some(0));
  let text = fs::read_to_string(dir.path().join("discrepancy.csv")).unwrap();
  assert_eq!(text.lines().count(), 3);
  assert!(text.starts_with("t,lhs,envelope,ratio,drift_gap\n"));
}
