//! `lcl`: command-line front-end to the coupled simulation laboratory.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure
//! (a `diagnostics.json` is written next to the other outputs).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lcl_core::bounds::{self, additive_wasserstein_factor, balancing_holds, discrepancy_integrals, gronwall_bound_como, gronwall_bound_thinning, CrossTerms, DriverSummary};
use lcl_core::couplings::{CoupledJumpStream, CouplingKind};
use lcl_core::experiments::{
  default_r_grid, group_by_t, merge_records, prepare_pair, rate_fit, read_samples, replicate_key, replicate_stream, tail_curves, write_ratefits, write_samples, write_tails,
  ExperimentConfig, RunOptions, Statistic, TGrid, DEFAULT_R_POINTS,
};
use lcl_core::levy_model::{doa_tail_limit_check, AugmentedSpec, LEVY_SPEC_SCHEMA};
use lcl_core::sde_engine::{integrate_pair, SamplePath};

/// Replicates per t written by `--dump-events` / `--dump-paths`.
const DUMP_REPLICATES: u64 = 4;
const SUMMARY_FILE: &str = "summary.json";
const SAMPLES_FILE: &str = "samples.csv";

#[derive(Parser)]
#[command(name = "lcl", version, about = "Coupled small-time simulation of Levy-driven SDEs")]
struct Cli {
  #[command(subcommand)]
  cmd: Cmd,
}

#[derive(Args, Clone)]
struct RunArgs {
  #[arg(long)]
  config: PathBuf,
  #[arg(long)]
  out: PathBuf,
  /// Master seed; mandatory, there is no clock-based seeding.
  #[arg(long)]
  seed: u64,
  /// Worker count, capped by LCL_THREADS when set.
  #[arg(long)]
  threads: Option<usize>,
  /// Replace the configured grid with exp(1 - e^{k/20}), k = 0..50.
  #[arg(long)]
  paper_grid: bool,
  /// Keep completed (t, replicate) cells of an earlier run in --out.
  #[arg(long)]
  resume: bool,
  /// Write coupled jump streams of the first replicates at each t.
  #[arg(long)]
  dump_events: bool,
  /// Write both solution paths of the first replicates at each t.
  #[arg(long)]
  dump_paths: bool,
}

#[derive(Subcommand)]
enum Cmd {
  /// Simulate coupled pairs over the t grid and write samples, tails and rate fits.
  Simulate {
    #[command(flatten)]
    run: RunArgs,
    /// Print the work queue and exit without simulating.
    #[arg(long)]
    dry_run: bool,
  },
  /// Recompute tail curves from samples.csv in --out.
  Tails {
    #[arg(long)]
    out: PathBuf,
    /// Config whose rate rescales distances; defaults to the summary echo.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_R_POINTS)]
    r_points: usize,
  },
  /// Fit log-log rate slopes from samples.csv in --out.
  Rates {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// median | trimmed-mean[:FRAC] | quantile:Q | mean
    #[arg(long)]
    statistic: Option<String>,
    /// Allow the mean statistic for alpha < 1.
    #[arg(long)]
    force_mean: bool,
  },
  /// Evaluate the Gronwall bound from a driver-summary JSON.
  Bounds {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 2)]
    order: u8,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    /// Also print the additive Wasserstein factor for this order q <= 1.
    #[arg(long)]
    wasserstein_q: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
  },
  /// Sweep the tempered discrepancy integrals of the configured driver over t.
  Discrepancy {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    /// Comma-separated t values; defaults to 1e-1, ..., 1e-6.
    #[arg(long, value_delimiter = ',')]
    t: Option<Vec<f64>>,
    /// Coupling; defaults to the config's.
    #[arg(long)]
    coupling: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
  },
  /// Check a Levy spec or an experiment config and run the DoA tail-limit diagnostic.
  Validate {
    #[arg(long)]
    config: PathBuf,
  },
  /// Write solution paths of coupled pairs at the largest grid t.
  DumpPaths {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = DUMP_REPLICATES)]
    paths: u64,
  },
}

/// A failure with its exit code.
struct Failure {
  code: u8,
  error: anyhow::Error,
  diagnostics: Vec<(String, f64)>,
}

impl From<anyhow::Error> for Failure {
  fn from(error: anyhow::Error) -> Self {
    let mut code = 1;
    let mut diagnostics = Vec::new();
    for cause in error.chain() {
      if let Some(e) = cause.downcast_ref::<lcl_core::Error>() {
        match e {
          lcl_core::Error::Numeric { diagnostics: d, .. } => {
            code = 2;
            diagnostics = d.clone();
          }
          lcl_core::Error::Overflow { time } => {
            code = 2;
            diagnostics = vec![("time".into(), *time)];
          }
          _ => {}
        }
      }
    }
    Failure { code, error, diagnostics }
  }
}

impl From<lcl_core::Error> for Failure {
  fn from(e: lcl_core::Error) -> Self {
    Failure::from(anyhow::Error::from(e))
  }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
  env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
  let cli = match Cli::try_parse() {
    Ok(c) => c,
    Err(e) => {
      let _ = e.print();
      return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
    }
  };
  let diag_dir = diagnostics_dir(&cli.cmd);
  match dispatch(cli.cmd) {
    Ok(()) => ExitCode::SUCCESS,
    Err(f) => {
      eprintln!("error: {:#}", f.error);
      if f.code == 2 {
        let path = diag_dir.join("diagnostics.json");
        let body = serde_json::json!({
          "error": format!("{:#}", f.error),
          "diagnostics": f.diagnostics.iter().map(|(k, v)| serde_json::json!({"name": k, "value": v})).collect::<Vec<_>>(),
        });
        if fs::create_dir_all(&diag_dir).and_then(|_| fs::write(&path, serde_json::to_string_pretty(&body).unwrap_or_default())).is_ok() {
          eprintln!("diagnostics written to {}", path.display());
        }
      }
      ExitCode::from(f.code)
    }
  }
}

fn diagnostics_dir(cmd: &Cmd) -> PathBuf {
  match cmd {
    Cmd::Simulate { run, .. } | Cmd::DumpPaths { run, .. } => run.out.clone(),
    Cmd::Tails { out, .. } | Cmd::Rates { out, .. } => out.clone(),
    Cmd::Bounds { out: Some(o), .. } | Cmd::Discrepancy { out: Some(o), .. } => o.clone(),
    _ => PathBuf::from("."),
  }
}

fn dispatch(cmd: Cmd) -> CliResult<()> {
  match cmd {
    Cmd::Simulate { run, dry_run } => simulate(&run, dry_run),
    Cmd::Tails { out, config, r_points } => tails(&out, config.as_deref(), r_points),
    Cmd::Rates { out, config, statistic, force_mean } => rates(&out, config.as_deref(), statistic.as_deref(), force_mean),
    Cmd::Bounds { config, order, horizon, wasserstein_q, out } => bounds_cmd(&config, order, horizon, wasserstein_q, out.as_deref()),
    Cmd::Discrepancy { config, theta, r, t, coupling, out } => discrepancy(&config, theta, r, t, coupling.as_deref(), out.as_deref()),
    Cmd::Validate { config } => validate(&config),
    Cmd::DumpPaths { run, paths } => dump_paths(&run, paths),
  }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
  fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
  ExperimentConfig::from_json(&read_text(path)?).with_context(|| format!("invalid experiment config {}", path.display()))
}

/// Config with command-line overrides applied.
fn resolved_config(run: &RunArgs) -> anyhow::Result<ExperimentConfig> {
  let mut cfg = load_config(&run.config)?;
  cfg.seed = Some(run.seed);
  if run.paper_grid {
    cfg.t_grid = TGrid::Paper;
  }
  cfg.validate()?;
  Ok(cfg)
}

/// `--threads` capped by `LCL_THREADS`.
fn resolve_threads(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
  let cap = match std::env::var("LCL_THREADS") {
    Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| anyhow!("LCL_THREADS must be a positive integer, got {v:?}"))?),
    Err(_) => None,
  };
  if flag == Some(0) || cap == Some(0) {
    bail!("thread count must be positive");
  }
  Ok(match (flag, cap) {
    (Some(a), Some(b)) => Some(a.min(b)),
    (a, b) => a.or(b),
  })
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
  Ok(hex::encode(Sha256::digest(fs::read(path).with_context(|| format!("cannot hash {}", path.display()))?)))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct OutputFile {
  path: String,
  sha256: String,
}

/// Provenance record kept in `summary.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
  tool: String,
  version: String,
  subcommand: String,
  config_path: String,
  config_hash: String,
  run_id: String,
  seed: Option<u64>,
  threads: Option<usize>,
  wall_time_s: f64,
  exit_status: u8,
  flagged: bool,
  #[serde(default)]
  per_t: serde_json::Value,
  #[serde(default)]
  notes: Vec<String>,
  outputs: Vec<OutputFile>,
  config: ExperimentConfig,
}

fn config_hash(cfg: &ExperimentConfig) -> String {
  hex::encode(Sha256::digest(serde_json::to_string(cfg).expect("config serialises").as_bytes()))
}

fn read_manifest(out: &Path) -> anyhow::Result<Option<Manifest>> {
  let path = out.join(SUMMARY_FILE);
  if !path.exists() {
    return Ok(None);
  }
  Ok(Some(serde_json::from_str(&read_text(&path)?).with_context(|| format!("cannot parse {}", path.display()))?))
}

/// Records `files` (relative to `out`) with fresh hashes, replacing older
/// entries of the same name.
fn record_outputs(m: &mut Manifest, out: &Path, files: &[String]) -> anyhow::Result<()> {
  for f in files {
    let sha256 = sha256_file(&out.join(f))?;
    m.outputs.retain(|o| &o.path != f);
    m.outputs.push(OutputFile { path: f.clone(), sha256 });
  }
  m.outputs.sort_by(|a, b| a.path.cmp(&b.path));
  Ok(())
}

fn write_manifest(out: &Path, m: &Manifest) -> anyhow::Result<()> {
  fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(m)? + "\n").context("cannot write summary.json")
}

fn create_file(path: &Path) -> anyhow::Result<fs::File> {
  fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

fn simulate(run: &RunArgs, dry_run: bool) -> CliResult<()> {
  let start = Instant::now();
  let cfg = resolved_config(run)?;
  let threads = resolve_threads(run.threads)?;
  let grid = cfg.t_grid.points()?;
  println!("queued {} t-values x {} replicates ({} cells), {} coupling", grid.len(), cfg.replicates, grid.len() * cfg.replicates, cfg.coupling);
  if dry_run {
    return Ok(());
  }
  fs::create_dir_all(&run.out).with_context(|| format!("cannot create {}", run.out.display()))?;
  let run_id = cfg.run_id();
  let samples_path = run.out.join(SAMPLES_FILE);
  let mut old = Vec::new();
  if run.resume && samples_path.exists() {
    let (id, recs) = read_samples(create_reader(&samples_path)?)?;
    if let Some(id) = id {
      if id != run_id {
        return Err(anyhow!("{} belongs to run {id}, this config is run {run_id}; refusing to resume", samples_path.display()).into());
      }
    }
    old = recs;
  } else if samples_path.exists() && !run.resume {
    log::warn!("overwriting {}", samples_path.display());
  }
  // Re-key old records against the current grid.
  for r in &mut old {
    r.t_index = grid.iter().position(|t| *t == r.t).ok_or_else(|| anyhow!("existing samples contain t = {} outside the grid", r.t))?;
  }
  let skip: HashSet<(usize, u64)> = old.iter().map(|r| (r.t_index, r.replicate)).collect();
  let resumed = skip.len();
  let out = lcl_core::experiments::run_coupled_mc(&cfg, &RunOptions { threads, skip })?;
  let computed = out.records.len();
  let records = merge_records(old, out.records);
  write_samples(create_file(&samples_path)?, &run_id, &records)?;
  let mut files = vec![SAMPLES_FILE.to_string()];
  let mut notes = Vec::new();
  if resumed > 0 {
    notes.push(format!("resumed: {resumed} cells kept, {computed} computed"));
  }

  let samples = group_by_t(&records);
  let f = |t: f64| cfg.rate_at(t).expect("rate validated with the config");
  if samples.iter().all(|s| !s.distances.is_empty()) {
    let grid_r = default_r_grid(&samples, f, DEFAULT_R_POINTS);
    let curves = tail_curves(&samples, f, &grid_r)?;
    write_tails(create_file(&run.out.join("tails.csv"))?, &run_id, &curves)?;
    files.push("tails.csv".into());
  } else {
    notes.push("tails skipped: some t has no completed replicate".into());
  }
  match rate_fit(&samples, cfg.statistic, Some(cfg.driver.alpha()), false) {
    Ok(fit) => {
      println!("rate fit ({}): slope {:.4} +- {:.4}", fit.statistic.name(), fit.slope, fit.stderr);
      write_ratefits(create_file(&run.out.join("ratefit.csv"))?, &run_id, &[fit])?;
      files.push("ratefit.csv".into());
    }
    Err(e) => notes.push(format!("rate fit skipped: {e}")),
  }
  if run.dump_events || run.dump_paths {
    files.extend(write_dumps(&cfg, &run.out, run.dump_events, run.dump_paths)?);
  }

  let mut m = Manifest {
    tool: "lcl".into(),
    version: env!("CARGO_PKG_VERSION").into(),
    subcommand: "simulate".into(),
    config_path: run.config.display().to_string(),
    config_hash: config_hash(&cfg),
    run_id: run_id.clone(),
    seed: cfg.seed,
    threads,
    wall_time_s: start.elapsed().as_secs_f64(),
    exit_status: 0,
    flagged: out.diagnostics.iter().any(|d| d.flagged),
    per_t: serde_json::to_value(&out.diagnostics).context("serialising diagnostics")?,
    notes: notes.clone(),
    outputs: Vec::new(),
    config: cfg,
  };
  record_outputs(&mut m, &run.out, &files)?;
  write_manifest(&run.out, &m)?;
  for n in &notes {
    println!("note: {n}");
  }
  if m.flagged {
    println!("flagged: abort rate above 5% at some t (see summary.json)");
  }
  println!("run {run_id}: {} rows in {}", records.len(), samples_path.display());
  Ok(())
}

fn create_reader(path: &Path) -> anyhow::Result<fs::File> {
  fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

/// Event and path dumps for the first replicates at each t, one file per
/// grid index.
fn write_dumps(cfg: &ExperimentConfig, out: &Path, events: bool, paths: bool) -> anyhow::Result<Vec<String>> {
  let seed = cfg.seed()?;
  let field = cfg.field()?;
  let mut files = Vec::new();
  for (ti, &t) in cfg.t_grid.points()?.iter().enumerate() {
    let pair = prepare_pair(cfg, t)?;
    let n = DUMP_REPLICATES.min(cfg.replicates as u64);
    if events {
      let name = format!("events_t{ti:02}.csv");
      let mut w = csv::Writer::from_writer(create_file(&out.join(&name))?);
      w.write_record(CoupledJumpStream::csv_header(cfg.driver.dimension()))?;
      for r in 0..n {
        replicate_stream(cfg, &pair, replicate_key(seed, ti, r))?.write_csv(&mut w, r)?;
      }
      w.flush()?;
      files.push(name);
    }
    if paths {
      let name = format!("paths_t{ti:02}.csv");
      write_paths(cfg, &field, &pair, ti, n, &out.join(&name))?;
      files.push(name);
    }
  }
  Ok(files)
}

fn write_paths(cfg: &ExperimentConfig, field: &lcl_core::sde_engine::CoefficientField, pair: &lcl_core::experiments::PreparedPair, ti: usize, n: u64, path: &Path) -> anyhow::Result<()> {
  let seed = cfg.seed()?;
  let mut w = csv::Writer::from_writer(create_file(path)?);
  w.write_record(SamplePath::csv_header(field.m))?;
  for r in 0..n {
    let stream = replicate_stream(cfg, pair, replicate_key(seed, ti, r))?;
    let (p1, p2) = integrate_pair(&stream, field, &cfg.x0, cfg.h)?;
    p1.write_csv(&mut w, r, 1)?;
    p2.write_csv(&mut w, r, 2)?;
  }
  w.flush()?;
  Ok(())
}

fn dump_paths(run: &RunArgs, paths: u64) -> CliResult<()> {
  let cfg = resolved_config(run)?;
  let threads = resolve_threads(run.threads)?;
  if threads.is_some() {
    log::info!("dump-paths runs single-threaded; --threads ignored");
  }
  fs::create_dir_all(&run.out).with_context(|| format!("cannot create {}", run.out.display()))?;
  let t = cfg.t_grid.points()?[0];
  let pair = prepare_pair(&cfg, t)?;
  let path = run.out.join("paths.csv");
  write_paths(&cfg, &cfg.field()?, &pair, 0, paths, &path)?;
  if run.dump_events {
    let mut w = csv::Writer::from_writer(create_file(&run.out.join("events.csv"))?);
    w.write_record(CoupledJumpStream::csv_header(cfg.driver.dimension())).context("writing events.csv")?;
    for r in 0..paths {
      replicate_stream(&cfg, &pair, replicate_key(run.seed, 0, r))?.write_csv(&mut w, r)?;
    }
    w.flush().context("writing events.csv")?;
  }
  println!("wrote {paths} path pairs at t = {t} to {}", path.display());
  Ok(())
}

/// Config for post-processing: `--config` when given, else the summary echo.
fn post_config(out: &Path, config: Option<&Path>) -> anyhow::Result<(ExperimentConfig, Option<Manifest>)> {
  let manifest = read_manifest(out)?;
  let cfg = match (config, &manifest) {
    (Some(p), _) => load_config(p)?,
    (None, Some(m)) => m.config.clone(),
    (None, None) => bail!("no --config given and no {SUMMARY_FILE} in {}", out.display()),
  };
  Ok((cfg, manifest))
}

fn load_samples(out: &Path) -> anyhow::Result<(String, Vec<lcl_core::experiments::TSamples>)> {
  let path = out.join(SAMPLES_FILE);
  let (id, recs) = read_samples(create_reader(&path)?).with_context(|| format!("cannot read {}", path.display()))?;
  let id = id.ok_or_else(|| anyhow!("{} has no rows", path.display()))?;
  Ok((id, group_by_t(&recs)))
}

fn update_post_manifest(out: &Path, manifest: Option<Manifest>, file: &str) -> anyhow::Result<()> {
  if let Some(mut m) = manifest {
    record_outputs(&mut m, out, &[file.to_string()])?;
    write_manifest(out, &m)?;
  }
  Ok(())
}

fn tails(out: &Path, config: Option<&Path>, r_points: usize) -> CliResult<()> {
  let (cfg, manifest) = post_config(out, config)?;
  let (run_id, samples) = load_samples(out)?;
  if r_points < 2 {
    return Err(anyhow!("need at least 2 thresholds").into());
  }
  let f = |t: f64| cfg.rate_at(t).expect("rate validated with the config");
  let r_grid = default_r_grid(&samples, f, r_points);
  let curves = tail_curves(&samples, f, &r_grid)?;
  write_tails(create_file(&out.join("tails.csv"))?, &run_id, &curves)?;
  update_post_manifest(out, manifest, "tails.csv")?;
  let sup = curves.iter().flat_map(|c| c.probs.first().copied()).fold(0.0, f64::max);
  println!("{} tail curves over {} thresholds; sup prob at smallest r = {sup}", curves.len(), r_grid.len());
  Ok(())
}

fn parse_statistic(s: &str) -> anyhow::Result<Statistic> {
  let (name, arg) = match s.split_once(':') {
    Some((n, a)) => (n, Some(a.parse::<f64>().map_err(|_| anyhow!("bad statistic parameter in {s:?}"))?)),
    None => (s, None),
  };
  Ok(match (name, arg) {
    ("median", None) => Statistic::Median,
    ("mean", None) => Statistic::Mean,
    ("trimmed-mean", a) => Statistic::TrimmedMean { frac: a.unwrap_or(0.1) },
    ("quantile", Some(q)) => Statistic::Quantile { q },
    _ => bail!("unknown statistic {s:?}; expected median, trimmed-mean[:FRAC], quantile:Q or mean"),
  })
}

fn rates(out: &Path, config: Option<&Path>, statistic: Option<&str>, force_mean: bool) -> CliResult<()> {
  let (cfg, manifest) = post_config(out, config)?;
  let (run_id, samples) = load_samples(out)?;
  let stat = match statistic {
    Some(s) => parse_statistic(s)?,
    None => cfg.statistic,
  };
  let fit = rate_fit(&samples, stat, Some(cfg.driver.alpha()), force_mean)?;
  for t in &fit.excluded {
    println!("excluded t = {t}: statistic is zero");
  }
  write_ratefits(create_file(&out.join("ratefit.csv"))?, &run_id, std::slice::from_ref(&fit))?;
  update_post_manifest(out, manifest, "ratefit.csv")?;
  println!("{}: slope {:.6} +- {:.6}, intercept {:.6}", stat.name(), fit.slope, fit.stderr, fit.intercept);
  Ok(())
}

fn bounds_cmd(config: &Path, order: u8, horizon: f64, wasserstein_q: Option<f64>, out: Option<&Path>) -> CliResult<()> {
  let summary: DriverSummary = serde_json::from_str(&read_text(config)?).with_context(|| format!("invalid driver summary {}", config.display()))?;
  let report = match summary.cross {
    CrossTerms::Thinning { .. } => gronwall_bound_thinning(&summary, horizon, order)?,
    CrossTerms::Comonotonic { .. } => gronwall_bound_como(&summary, horizon, order)?,
  };
  println!("coupling {} order {} horizon {}", report.coupling, report.order, report.horizon);
  for term in &report.terms {
    println!("  {:<28} {:e}", term.label, term.value);
  }
  println!("kappa = {:e}", report.kappa);
  println!("eta = {:e}", report.eta);
  println!("bound = {}", report.bound);
  let factor = match wasserstein_q {
    Some(q) => {
      let f = additive_wasserstein_factor(q, summary.lipschitz, horizon)?;
      println!("additive wasserstein factor (q = {q}) = {f}");
      Some(f)
    }
    None => None,
  };
  if let Some(dir) = out {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let body = serde_json::json!({ "report": report, "wasserstein_factor": factor });
    fs::write(dir.join("bounds.json"), serde_json::to_string_pretty(&body).map_err(anyhow::Error::from)? + "\n").context("cannot write bounds.json")?;
  }
  Ok(())
}

fn parse_coupling(s: &str) -> anyhow::Result<CouplingKind> {
  serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| anyhow!("unknown coupling {s:?}; expected thinning or comonotonic"))
}

/// Driver spec from either a bare Levy spec or an experiment config.
fn load_driver(path: &Path) -> anyhow::Result<(AugmentedSpec, Option<ExperimentConfig>)> {
  let text = read_text(path)?;
  let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
  match value.get("schema").and_then(|s| s.as_str()) {
    Some(s) if s == LEVY_SPEC_SCHEMA => Ok((AugmentedSpec::from_json(&text).with_context(|| format!("invalid Levy spec {}", path.display()))?, None)),
    _ => {
      let cfg = load_config(path)?;
      Ok((cfg.driver.clone(), Some(cfg)))
    }
  }
}

fn discrepancy(config: &Path, theta: f64, r: f64, t: Option<Vec<f64>>, coupling: Option<&str>, out: Option<&Path>) -> CliResult<()> {
  let (spec, cfg) = load_driver(config)?;
  let coupling = match (coupling, &cfg) {
    (Some(c), _) => parse_coupling(c)?,
    (None, Some(c)) => c.coupling,
    (None, None) => CouplingKind::Thinning,
  };
  let ts = t.unwrap_or_else(|| (1..=6).map(|k| 10f64.powi(-k)).collect());
  let mut rows = Vec::new();
  println!("t,lhs,envelope,ratio,drift_gap");
  for &ti in &ts {
    let d = discrepancy_integrals(&spec, ti, theta, r, coupling)?;
    println!("{},{:e},{:e},{},{:e}", d.t, d.lhs, d.envelope, d.ratio(), d.drift_gap);
    rows.push(d);
  }
  if let Some(dir) = out {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut w = csv::Writer::from_writer(create_file(&dir.join("discrepancy.csv"))?);
    w.write_record(["t", "lhs", "envelope", "ratio", "drift_gap"]).context("writing discrepancy.csv")?;
    for d in &rows {
      w.write_record([d.t.to_string(), d.lhs.to_string(), d.envelope.to_string(), d.ratio().to_string(), d.drift_gap.to_string()]).context("writing discrepancy.csv")?;
    }
    w.flush().context("writing discrepancy.csv")?;
  }
  Ok(())
}

/// Largest relative deviation from 1 of the DoA tail-limit ratio allowed at
/// the smallest diagnostic t.
const DOA_TOLERANCE: f64 = 0.05;

fn validate(config: &Path) -> CliResult<()> {
  let (spec, cfg) = load_driver(config)?;
  let mut checks: Vec<(String, bool, String)> = Vec::new();
  checks.push(("spec invariants".into(), true, format!("alpha = {}, d = {}", spec.alpha(), spec.dimension())));
  if let Some(c) = &cfg {
    let grid = c.t_grid.points()?;
    checks.push(("experiment config".into(), true, format!("{} t-values, {} replicates, {}", grid.len(), c.replicates, c.coupling)));
  }
  let regime = spec.regime()?;
  checks.push(("regime".into(), true, format!("{regime:?}")));
  for coupling in [CouplingKind::Thinning, CouplingKind::Comonotonic] {
    let b = balancing_holds(&spec, coupling)?;
    let name = format!("balancing ({coupling})");
    let needed = spec.alpha() > 1.0;
    checks.push((name, b || !needed, if b { "holds".into() } else if needed { "fails: alpha > 1 rates use the unbalanced form".into() } else { "not needed for alpha < 1".into() }));
  }
  let driver = lcl_core::levy_model::LevyDriver::from_augmented(&spec)?;
  let grid = [1e-2, 1e-4, 1e-6, 1e-8];
  for class in driver.classes() {
    let rows = doa_tail_limit_check(&spec, &class.representative, &grid)?;
    let last = rows.last().expect("grid is non-empty");
    let ok = (last.ratio() - 1.0).abs() <= DOA_TOLERANCE;
    let trace: Vec<String> = rows.iter().map(|r| format!("t={:e}: {:.6}", r.t, r.ratio())).collect();
    checks.push((format!("DoA tail limit v={:?}", class.representative), ok, trace.join(", ")));
  }
  if !spec.is_pure_stable() {
    let p = bounds::comonotonic_p(&spec)?;
    checks.push(("comonotonic exponent".into(), true, format!("p_C = {p}")));
  }
  let mut failed = 0;
  for (name, ok, detail) in &checks {
    println!("{} {name}: {detail}", if *ok { "PASS" } else { "FAIL" });
    failed += !ok as usize;
  }
  if failed > 0 {
    return Err(anyhow!("{failed} check(s) failed").into());
  }
  println!("all {} checks passed", checks.len());
  Ok(())
}
