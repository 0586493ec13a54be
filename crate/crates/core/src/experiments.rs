//! Monte Carlo harness: coupled pairs `(𝒳_t, 𝒵)` across a grid of small
//! times, tail curves of the rescaled sup-distance, rate regression and
//! coupling-based Wasserstein upper estimates.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::RateSpec;
use crate::couplings::{epoch_cap, sample_comonotonic, sample_independent, sample_thinning, CoupledJumpStream, CouplingKind, Dominating, EpsPolicy};
use crate::error::{Error, Result};
use crate::levy_model::{AugmentedSpec, LevyDriver};
use crate::rng::StreamKey;
use crate::sde_engine::{pair_sup_distance, CoefficientField, FieldSpec, NoiseMode};
use crate::stats;

pub const CONFIG_SCHEMA: &str = "lcl.v1";
pub const MIN_REPLICATES: usize = 100;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
/// Fraction of aborted replicates at one `t` above which a run is flagged.
pub const ABORT_FLAG_RATE: f64 = 0.05;
pub const DEFAULT_R_POINTS: usize = 64;

pub const SAMPLES_HEADER: [&str; 5] = ["run_id", "t", "replicate", "distance", "aborted"];
pub const TAILS_HEADER: [&str; 6] = ["run_id", "t", "r", "prob", "n", "aborted"];
pub const RATEFIT_HEADER: [&str; 5] = ["run_id", "statistic", "slope", "stderr", "intercept"];

// Stream-key lanes below this offset are t-indices; bootstrap sub-seeds use
// lanes above it so they never collide with a replicate stream.
const BOOTSTRAP_LANE: u64 = 1 << 40;

/// Small-time grid, always materialised in descending order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TGrid {
  LogSpaced { lo: f64, hi: f64, n: usize },
  Values { values: Vec<f64> },
  /// `exp(1 − e^{k/20})` for `k = 0..=50`.
  Paper,
}

impl TGrid {
  /// Eight log-spaced points in `[1e-4, 1e-1]`.
  pub fn desk() -> Self {
    TGrid::LogSpaced { lo: 1e-4, hi: 1e-1, n: 8 }
  }

  pub fn points(&self) -> Result<Vec<f64>> {
    let mut pts = match self {
      TGrid::LogSpaced { lo, hi, n } => {
        if !(*lo > 0.0 && lo < hi && *hi <= 1.0) || *n < 2 {
          return Err(Error::InvalidSpec(format!("log-spaced grid needs 0 < lo < hi <= 1 and n >= 2, got [{lo}, {hi}], n={n}")));
        }
        let (a, b) = (hi.ln(), lo.ln());
        (0..*n).map(|i| (a + (b - a) * i as f64 / (*n - 1) as f64).exp()).collect()
      }
      TGrid::Values { values } => values.clone(),
      TGrid::Paper => (0..=50).map(|k| (1.0 - (k as f64 / 20.0).exp()).exp()).collect::<Vec<_>>(),
    };
    if let TGrid::LogSpaced { hi, .. } = self {
      // exp(ln 1) may round just above 1.
      pts[0] = *hi;
    }
    if pts.is_empty() || pts.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
      return Err(Error::InvalidSpec("t grid must be non-empty and inside (0, 1]".into()));
    }
    if pts.windows(2).any(|w| !(w[0] > w[1])) {
      return Err(Error::InvalidSpec("t grid must be strictly descending".into()));
    }
    Ok(pts)
  }
}

/// Dominating measure for the thinning coupling of `(X_t, Z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DominatingSpec {
  Sum,
  /// `factor·ν_Z`; `None` estimates the smallest factor on a radial grid.
  Attractor {
    #[serde(default)]
    factor: Option<f64>,
  },
}

/// Per-t summary statistic used by [`rate_fit`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Statistic {
  #[default]
  Median,
  TrimmedMean {
    #[serde(default = "default_trim")]
    frac: f64,
  },
  Quantile { q: f64 },
  Mean,
}

impl Default for DominatingSpec {
  fn default() -> Self {
    DominatingSpec::Attractor { factor: None }
  }
}

fn default_trim() -> f64 {
  0.1
}

impl Statistic {
  pub fn name(&self) -> String {
    match self {
      Statistic::Median => "median".into(),
      Statistic::TrimmedMean { frac } => format!("trimmed_mean_{frac}"),
      Statistic::Quantile { q } => format!("quantile_{q}"),
      Statistic::Mean => "mean".into(),
    }
  }

  pub fn eval(&self, data: &[f64]) -> f64 {
    match self {
      Statistic::Median => stats::median(data),
      Statistic::TrimmedMean { frac } => stats::trimmed_mean(data, *frac),
      Statistic::Quantile { q } => stats::quantile(data, *q),
      Statistic::Mean => stats::mean(data),
    }
  }

  fn validate(&self) -> Result<()> {
    match self {
      Statistic::TrimmedMean { frac } if !(*frac >= 0.0 && *frac < 0.5) => Err(Error::InvalidSpec(format!("trim fraction must lie in [0, 0.5), got {frac}"))),
      Statistic::Quantile { q } if !(*q > 0.0 && *q < 1.0) => Err(Error::InvalidSpec(format!("quantile level must lie in (0, 1), got {q}"))),
      _ => Ok(()),
    }
  }
}

fn default_config_schema() -> String {
  CONFIG_SCHEMA.into()
}

/// One experiment: `𝒳_t` driven by `X_t(s) = X(st)/g(t)` against `𝒵` driven
/// by the attractor `Z`, both solving `dY = V(Y−)dL` from `x0` on `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
  #[serde(default = "default_config_schema")]
  pub schema: String,
  pub driver: AugmentedSpec,
  pub coupling: CouplingKind,
  pub field: FieldSpec,
  #[serde(default)]
  pub mode: NoiseMode,
  #[serde(default)]
  pub lipschitz: Option<f64>,
  pub x0: Vec<f64>,
  pub horizon: f64,
  pub t_grid: TGrid,
  pub replicates: usize,
  pub eps: EpsPolicy,
  pub h: f64,
  #[serde(default)]
  pub seed: Option<u64>,
  #[serde(default)]
  pub dominating: DominatingSpec,
  /// Rate `f(t)` used to rescale distances in tail curves.
  #[serde(default)]
  pub rate: Option<RateSpec>,
  #[serde(default)]
  pub statistic: Statistic,
}

impl ExperimentConfig {
  pub fn from_json(text: &str) -> Result<Self> {
    let cfg: ExperimentConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
  }

  pub fn validate(&self) -> Result<()> {
    if self.schema != CONFIG_SCHEMA {
      return Err(Error::InvalidSpec(format!("unknown config schema {:?}, expected {CONFIG_SCHEMA:?}", self.schema)));
    }
    self.driver.validate()?;
    self.t_grid.points()?;
    if self.replicates < MIN_REPLICATES {
      return Err(Error::InvalidSpec(format!("at least {MIN_REPLICATES} replicates per t are required, got {}", self.replicates)));
    }
    if !(self.horizon > 0.0 && self.horizon.is_finite()) || !(self.h > 0.0) {
      return Err(Error::InvalidSpec(format!("horizon and step must be positive, got T={}, h={}", self.horizon, self.h)));
    }
    let field = self.field()?;
    if field.driver_dimension() != self.driver.dimension() {
      return Err(Error::InvalidSpec(format!("field expects a {}-dimensional driver, spec has {}", field.driver_dimension(), self.driver.dimension())));
    }
    if field.m != self.x0.len() {
      return Err(Error::InvalidSpec(format!("x0 has {} coordinates, field state has {}", self.x0.len(), field.m)));
    }
    if let DominatingSpec::Attractor { factor: Some(f) } = self.dominating {
      if !(f >= 1.0 && f.is_finite()) {
        return Err(Error::InvalidSpec(format!("envelope factor must be finite and >= 1, got {f}")));
      }
    }
    if let Some(r) = &self.rate {
      r.validate()?;
    }
    self.statistic.validate()
  }

  pub fn field(&self) -> Result<CoefficientField> {
    CoefficientField::from_spec(&self.field, self.mode, self.lipschitz)
  }

  pub fn seed(&self) -> Result<u64> {
    self.seed.ok_or_else(|| Error::InvalidSpec("a seed is required to run an experiment".into()))
  }

  /// Hash of the canonical JSON form; names every output row.
  pub fn run_id(&self) -> String {
    let text = serde_json::to_string(self).expect("config serialises");
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
  }

  /// Rate function `f(t)` for rescaling; defaults to the DoNA exponent `1/α`
  /// when no rate is configured.
  pub fn rate_at(&self, t: f64) -> Result<f64> {
    match &self.rate {
      Some(r) => r.at(t),
      None => Ok(t.powf(1.0 / self.driver.alpha())),
    }
  }
}

/// Driver pair and truncation resolved at one `t`.
#[derive(Clone, Debug)]
pub struct PreparedPair {
  pub t: f64,
  pub g: f64,
  pub x: LevyDriver,
  pub z: LevyDriver,
  pub eps: f64,
  /// Epoch cap of the comonotonic coupling.
  pub lambda: f64,
  pub dominating: Dominating,
}

/// Builds `X_t` and `Z` at time `t`. Both carry the attractor's `σ`, so the
/// comonotonic coupling needs no common-angular folding.
pub fn prepare_pair(cfg: &ExperimentConfig, t: f64) -> Result<PreparedPair> {
  let (g, _) = cfg.driver.normalizer(t)?;
  let z = LevyDriver::from_augmented(&cfg.driver.attractor())?;
  // A pure stable X_t has exactly the law of Z; reusing Z keeps the pair
  // free of round-off from the rescaled inverse.
  let x = if cfg.driver.is_pure_stable() { z.clone() } else { LevyDriver::from_augmented(&cfg.driver)?.rescaled(t, g)? };
  let eps = cfg.eps.resolve(&x, &z, cfg.horizon)?;
  let lambda = epoch_cap(&x, &z, eps);
  let dominating = match cfg.dominating {
    DominatingSpec::Sum => Dominating::Sum,
    DominatingSpec::Attractor { factor } => {
      let factor = match factor {
        Some(f) => f,
        None => envelope_factor(&x, &z, eps)?,
      };
      Dominating::Envelope { base: z.clone(), factor }
    }
  };
  Ok(PreparedPair { t, g, x, z, eps, lambda, dominating })
}

/// Smallest `c ≥ 1` with `dν_X/dν_Z ≤ c` on a log grid of `[eps, eps·1e12]`,
/// padded by 1e-6 relative. Errors when the ratio grows without bound there.
pub fn envelope_factor(x: &LevyDriver, z: &LevyDriver, eps: f64) -> Result<f64> {
  let mut sup: f64 = 1.0;
  for c in x.classes() {
    for k in 0..=600 {
      let r = eps * 10f64.powf(k as f64 * 0.02);
      let dz = z.point_density(r, &c.representative);
      let dx = x.point_density(r, &c.representative);
      if dx == 0.0 {
        continue;
      }
      if dz == 0.0 {
        return Err(Error::InvalidSpec(format!("X_t has mass at radius {r} where the attractor has none; use the sum dominating measure")));
      }
      sup = sup.max(dx / dz);
    }
  }
  if !sup.is_finite() || sup > 1e6 {
    return Err(Error::InvalidSpec(format!("density ratio against the attractor reaches {sup}; use the sum dominating measure")));
  }
  Ok(sup * (1.0 + 1e-6))
}

/// The coupled jump stream of one replicate.
pub fn replicate_stream(cfg: &ExperimentConfig, pair: &PreparedPair, key: StreamKey) -> Result<CoupledJumpStream> {
  match cfg.coupling {
    CouplingKind::Thinning => sample_thinning(&pair.x, &pair.z, &pair.dominating, pair.eps, cfg.horizon, key),
    CouplingKind::Comonotonic => sample_comonotonic(&pair.x, &pair.z, pair.lambda, cfg.horizon, key),
    CouplingKind::Independent => sample_independent(&pair.x, &pair.z, pair.eps, cfg.horizon, key),
  }
}

/// Key of replicate `replicate` at grid index `t_index`; independent of
/// scheduling so results do not depend on the worker count.
pub fn replicate_key(seed: u64, t_index: usize, replicate: u64) -> StreamKey {
  StreamKey::new(seed, t_index as u64, replicate)
}

/// One simulated cell. Aborted cells (state overflow) carry `distance = ∞`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
  pub t_index: usize,
  pub t: f64,
  pub replicate: u64,
  pub distance: f64,
  pub aborted: bool,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
  /// Worker count; `None` uses the global rayon pool.
  pub threads: Option<usize>,
  /// `(t_index, replicate)` cells already computed.
  pub skip: HashSet<(usize, u64)>,
}

/// Per-t diagnostics of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TDiagnostics {
  pub t: f64,
  pub g: f64,
  pub eps: f64,
  pub computed: usize,
  pub aborted: usize,
  pub abort_rate: f64,
  pub flagged: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
  /// Newly computed cells in `(t_index, replicate)` order.
  pub records: Vec<SampleRecord>,
  pub diagnostics: Vec<TDiagnostics>,
}

impl RunOutput {
  pub fn flagged(&self) -> bool {
    self.diagnostics.iter().any(|d| d.flagged)
  }
}

/// Sup-distance of one replicate; overflow aborts the replicate, any other
/// failure aborts the run.
pub fn run_replicate(cfg: &ExperimentConfig, field: &CoefficientField, pair: &PreparedPair, key: StreamKey) -> Result<Option<f64>> {
  let stream = replicate_stream(cfg, pair, key)?;
  match pair_sup_distance(&stream, field, &cfg.x0, cfg.h) {
    Ok(d) => Ok(Some(d)),
    Err(Error::Overflow { .. }) => Ok(None),
    Err(e) => Err(e),
  }
}

/// Simulates every `(t, replicate)` cell not in `opts.skip`.
pub fn run_coupled_mc(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
  cfg.validate()?;
  let seed = cfg.seed()?;
  let field = cfg.field()?;
  let grid = cfg.t_grid.points()?;
  let body = || -> Result<RunOutput> {
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for (ti, &t) in grid.iter().enumerate() {
      let pair = prepare_pair(cfg, t)?;
      let todo: Vec<u64> = (0..cfg.replicates as u64).filter(|r| !opts.skip.contains(&(ti, *r))).collect();
      let out: Vec<Result<Option<f64>>> = todo.par_iter().map(|&r| run_replicate(cfg, &field, &pair, replicate_key(seed, ti, r))).collect();
      let mut aborted = 0;
      for (&r, res) in todo.iter().zip(out) {
        let d = res?;
        aborted += d.is_none() as usize;
        records.push(SampleRecord { t_index: ti, t, replicate: r, distance: d.unwrap_or(f64::INFINITY), aborted: d.is_none() });
      }
      let rate = if todo.is_empty() { 0.0 } else { aborted as f64 / todo.len() as f64 };
      if rate > ABORT_FLAG_RATE {
        warn!("t = {t}: {aborted} of {} replicates overflowed", todo.len());
      }
      diagnostics.push(TDiagnostics { t, g: pair.g, eps: pair.eps, computed: todo.len(), aborted, abort_rate: rate, flagged: rate > ABORT_FLAG_RATE });
    }
    Ok(RunOutput { records, diagnostics })
  };
  match opts.threads {
    Some(n) => rayon::ThreadPoolBuilder::new()
      .num_threads(n.max(1))
      .build()
      .map_err(|e| Error::InvalidInput(format!("cannot build worker pool: {e}")))?
      .install(body),
    None => body(),
  }
}

/// Distances at one `t` with aborted replicates split off.
#[derive(Clone, Debug, PartialEq)]
pub struct TSamples {
  pub t: f64,
  pub distances: Vec<f64>,
  pub aborted: usize,
}

/// Groups records by `t` in descending order of `t`.
pub fn group_by_t(records: &[SampleRecord]) -> Vec<TSamples> {
  let mut by: BTreeMap<u64, TSamples> = BTreeMap::new();
  for r in records {
    let e = by.entry(r.t.to_bits()).or_insert_with(|| TSamples { t: r.t, distances: Vec::new(), aborted: 0 });
    if r.aborted {
      e.aborted += 1;
    } else {
      e.distances.push(r.distance);
    }
  }
  // Positive f64 bit patterns order like the values.
  by.into_values().rev().collect()
}

pub fn write_samples<W: Write>(out: W, run_id: &str, records: &[SampleRecord]) -> Result<()> {
  let mut w = csv::Writer::from_writer(out);
  w.write_record(SAMPLES_HEADER)?;
  for r in records {
    w.write_record([run_id, &r.t.to_string(), &r.replicate.to_string(), &r.distance.to_string(), if r.aborted { "1" } else { "0" }])?;
  }
  w.flush()?;
  Ok(())
}

/// Reads `samples.csv`. `t_index` is assigned by descending `t`.
pub fn read_samples<R: Read>(input: R) -> Result<(Option<String>, Vec<SampleRecord>)> {
  let mut rd = csv::Reader::from_reader(input);
  let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
  if header != SAMPLES_HEADER {
    return Err(Error::InvalidInput(format!("samples header {header:?} does not match {SAMPLES_HEADER:?}")));
  }
  let mut run_id = None;
  let mut records = Vec::new();
  for row in rd.records() {
    let row = row?;
    let parse = |i: usize| -> Result<f64> { row[i].parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad number {:?} in samples column {}", &row[i], SAMPLES_HEADER[i]))) };
    let aborted = match &row[4] {
      "0" => false,
      "1" => true,
      other => return Err(Error::InvalidInput(format!("aborted flag must be 0 or 1, got {other:?}"))),
    };
    let replicate = row[2].parse::<u64>().map_err(|_| Error::InvalidInput(format!("bad replicate index {:?}", &row[2])))?;
    match &run_id {
      None => run_id = Some(row[0].to_string()),
      Some(id) if id != &row[0] => return Err(Error::InvalidInput("samples file mixes run ids".into())),
      _ => {}
    }
    records.push(SampleRecord { t_index: 0, t: parse(1)?, replicate, distance: parse(3)?, aborted });
  }
  let mut ts: Vec<f64> = records.iter().map(|r| r.t).collect();
  ts.sort_by(|a, b| b.total_cmp(a));
  ts.dedup();
  for r in &mut records {
    r.t_index = ts.iter().position(|t| *t == r.t).expect("t collected above");
  }
  Ok((run_id, records))
}

/// Merges old and new records and sorts them by `(t_index, replicate)`.
pub fn merge_records(mut old: Vec<SampleRecord>, new: Vec<SampleRecord>) -> Vec<SampleRecord> {
  old.extend(new);
  old.sort_by(|a, b| b.t.total_cmp(&a.t).then(a.replicate.cmp(&b.replicate)));
  old.dedup_by(|a, b| a.t == b.t && a.replicate == b.replicate);
  old
}

/// Empirical survival function of `f(t)^{-1}·distance` at one `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
  pub t: f64,
  pub r_grid: Vec<f64>,
  pub probs: Vec<f64>,
  /// Non-aborted replicates.
  pub n: usize,
  /// Aborted replicates, right-censored at `+∞`.
  pub aborted: usize,
}

/// `n` log-spaced thresholds spanning the pooled 1% to 99.9% quantiles of
/// the positive rescaled distances.
pub fn default_r_grid<F: Fn(f64) -> f64>(samples: &[TSamples], f: F, n: usize) -> Vec<f64> {
  let mut pooled: Vec<f64> = samples.iter().flat_map(|s| s.distances.iter().map(|d| d / f(s.t)).collect::<Vec<_>>()).filter(|v| *v > 0.0 && v.is_finite()).collect();
  let (lo, hi) = if pooled.is_empty() {
    (1e-3, 1.0)
  } else {
    pooled.sort_by(f64::total_cmp);
    let lo = stats::quantile_sorted(&pooled, 0.01);
    let hi = stats::quantile_sorted(&pooled, 0.999);
    if hi > lo {
      (lo, hi)
    } else {
      (lo * 0.5, lo * 2.0)
    }
  };
  let (a, b) = (lo.ln(), hi.ln());
  (0..n).map(|i| (a + (b - a) * i as f64 / (n.max(2) - 1) as f64).exp()).collect()
}

pub fn tail_curves<F: Fn(f64) -> f64>(samples: &[TSamples], f: F, r_grid: &[f64]) -> Result<Vec<TailCurve>> {
  if r_grid.windows(2).any(|w| !(w[0] < w[1])) {
    return Err(Error::InvalidInput("r grid must be strictly increasing".into()));
  }
  samples
    .iter()
    .map(|s| {
      if s.distances.is_empty() {
        return Err(Error::InvalidInput(format!("no completed replicates at t = {}", s.t)));
      }
      let scale = f(s.t);
      if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Domain(format!("rate function gives {scale} at t = {}", s.t)));
      }
      let mut scaled: Vec<f64> = s.distances.iter().map(|d| d / scale).collect();
      scaled.sort_by(f64::total_cmp);
      let n = scaled.len();
      let probs = r_grid
        .iter()
        .map(|r| {
          let at_most = scaled.partition_point(|v| v <= r);
          (n - at_most) as f64 / n as f64
        })
        .collect();
      Ok(TailCurve { t: s.t, r_grid: r_grid.to_vec(), probs, n, aborted: s.aborted })
    })
    .collect()
}

pub fn write_tails<W: Write>(out: W, run_id: &str, curves: &[TailCurve]) -> Result<()> {
  let mut w = csv::Writer::from_writer(out);
  w.write_record(TAILS_HEADER)?;
  for c in curves {
    for (r, p) in c.r_grid.iter().zip(&c.probs) {
      w.write_record([run_id, &c.t.to_string(), &r.to_string(), &p.to_string(), &c.n.to_string(), &c.aborted.to_string()])?;
    }
  }
  w.flush()?;
  Ok(())
}

/// Least-squares fit of `ln statistic(t)` on `ln t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
  pub statistic: Statistic,
  pub slope: f64,
  pub intercept: f64,
  pub stderr: f64,
  /// `(t, statistic)` pairs entering the fit.
  pub points: Vec<(f64, f64)>,
  /// Grid points dropped because the statistic was zero.
  pub excluded: Vec<f64>,
}

impl RateFit {
  /// Re-runs the regression from the stored per-t values.
  pub fn refit(&self) -> Result<stats::LinearFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = self.points.iter().map(|(t, v)| (t.ln(), v.ln())).unzip();
    stats::ols(&x, &y)
  }
}

/// Regresses a robust statistic of the distance on `t`. The mean is refused
/// for `alpha < 1` unless `force_mean`: the sup-distance may have no mean.
pub fn rate_fit(samples: &[TSamples], statistic: Statistic, alpha: Option<f64>, force_mean: bool) -> Result<RateFit> {
  statistic.validate()?;
  if statistic == Statistic::Mean && alpha.is_some_and(|a| a < 1.0) && !force_mean {
    return Err(Error::Unsupported("the mean statistic is refused for alpha < 1; pass force to override".into()));
  }
  let mut points = Vec::new();
  let mut excluded = Vec::new();
  for s in samples {
    if s.distances.is_empty() {
      excluded.push(s.t);
      continue;
    }
    let v = statistic.eval(&s.distances);
    if v > 0.0 && v.is_finite() {
      points.push((s.t, v));
    } else {
      warn!("statistic {} is {v} at t = {}; point excluded from the fit", statistic.name(), s.t);
      excluded.push(s.t);
    }
  }
  if points.len() < 4 {
    return Err(Error::InvalidInput(format!("rate fit needs at least 4 usable t points, got {}", points.len())));
  }
  let mut fit = RateFit { statistic, slope: 0.0, intercept: 0.0, stderr: 0.0, points, excluded };
  let lf = fit.refit()?;
  fit.slope = lf.slope;
  fit.intercept = lf.intercept;
  fit.stderr = lf.slope_stderr;
  Ok(fit)
}

pub fn write_ratefits<W: Write>(out: W, run_id: &str, fits: &[RateFit]) -> Result<()> {
  let mut w = csv::Writer::from_writer(out);
  w.write_record(RATEFIT_HEADER)?;
  for f in fits {
    w.write_record([run_id, &f.statistic.name(), &f.slope.to_string(), &f.stderr.to_string(), &f.intercept.to_string()])?;
  }
  w.flush()?;
  Ok(())
}

/// Coupling estimate `E[d^q]` of the `q`-Wasserstein distance (`q ≤ 1`),
/// which upper-bounds the infimum over couplings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WassersteinEstimate {
  pub q: f64,
  pub estimate: f64,
  pub ci: (f64, f64),
  pub level: f64,
  pub n: usize,
}

/// `truncate` uses the metric `|x − y| ∧ 1`. `alpha` is the driver index;
/// `q > 1` is refused when it is at most 1.
pub fn wasserstein_upper(distances: &[f64], q: f64, alpha: Option<f64>, truncate: bool, level: f64, seed: u64) -> Result<WassersteinEstimate> {
  if !(q > 0.0) {
    return Err(Error::Domain(format!("Wasserstein order must be positive, got {q}")));
  }
  if q > 1.0 && alpha.map_or(true, |a| a <= 1.0) {
    return Err(Error::Unsupported(format!("order q = {q} > 1 needs a driver with finite q-th moment (alpha > 1)")));
  }
  if distances.is_empty() || distances.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
    return Err(Error::InvalidInput("distances must be non-empty, finite and non-negative".into()));
  }
  let powered: Vec<f64> = distances.iter().map(|d| if truncate { d.min(1.0) } else { *d }.powf(q)).collect();
  let estimate = stats::mean(&powered);
  let ci = stats::bootstrap_ci(&powered, stats::mean, BOOTSTRAP_RESAMPLES, level, StreamKey::new(seed, BOOTSTRAP_LANE, 0));
  Ok(WassersteinEstimate { q, estimate, ci, level, n: powered.len() })
}

#[cfg(test)]
mod tests {
  use super::*;
  use crate::couplings::EpsPolicy;
  use crate::levy_model::StableSpec;

  fn config(coupling: CouplingKind, lambda: f64) -> ExperimentConfig {
    let base = StableSpec::unit_symmetric_1d(0.7).unwrap();
    let driver = if lambda == 0.0 { AugmentedSpec::pure_stable(base).unwrap() } else { AugmentedSpec::tempered(base, lambda).unwrap() };
    ExperimentConfig {
      schema: CONFIG_SCHEMA.into(),
      driver,
      coupling,
      field: FieldSpec::RotationByNorm { columns: 1 },
      mode: NoiseMode::Multiplicative,
      lipschitz: None,
      x0: vec![0.0, 0.0],
      horizon: 1.0,
      t_grid: TGrid::LogSpaced { lo: 1e-3, hi: 1e-1, n: 4 },
      replicates: 100,
      eps: EpsPolicy::Intensity { events: 200.0 },
      h: 0.05,
      seed: Some(7),
      dominating: DominatingSpec::default(),
      rate: None,
      statistic: Statistic::Median,
    }
  }

  #[test]
  fn full_grid_has_51_descending_points_from_one() {
    let p = TGrid::Paper.points().unwrap();
    assert_eq!(p.len(), 51);
    assert_eq!(p[0], 1.0);
    assert!((p[50] - (1.0 - 2.5f64.exp()).exp()).abs() < 1e-18);
  }

  #[test]
  fn desk_grid_ends_are_exact() {
    let p = TGrid::desk().points().unwrap();
    assert_eq!(p.len(), 8);
    assert_eq!(p[0], 1e-1);
    assert!((p[7] / 1e-4 - 1.0).abs() < 1e-12);
  }

  #[test]
  fn ascending_grid_is_rejected() {
    assert!(TGrid::Values { values: vec![0.1, 0.2] }.points().is_err());
    assert!(TGrid::Values { values: vec![0.0] }.points().is_err());
  }

  #[test]
  fn too_few_replicates_are_rejected() {
    let mut c = config(CouplingKind::Comonotonic, 1.0);
    c.replicates = 99;
    assert!(c.validate().is_err());
  }

  #[test]
  fn config_json_round_trip() {
    let c = config(CouplingKind::Thinning, 1.0);
    let text = serde_json::to_string_pretty(&c).unwrap();
    assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    assert_eq!(c.run_id().len(), 16);
  }

  #[test]
  fn identical_pair_gives_zero_distances() {
    for coupling in [CouplingKind::Thinning, CouplingKind::Comonotonic] {
      let mut c = config(coupling, 0.0);
      c.t_grid = TGrid::Values { values: vec![0.1, 0.01] };
      let out = run_coupled_mc(&c, &RunOptions::default()).unwrap();
      assert_eq!(out.records.len(), 200);
      assert!(out.records.iter().all(|r| r.distance == 0.0 && !r.aborted), "{coupling}");
    }
  }

  #[test]
  fn tempered_envelope_factor_is_one() {
    let c = config(CouplingKind::Thinning, 1.0);
    let p = prepare_pair(&c, 0.01).unwrap();
    match p.dominating {
      Dominating::Envelope { factor, .. } => assert!((factor - 1.0).abs() < 1e-5),
      _ => panic!("expected an envelope"),
    }
  }

  #[test]
  fn resume_skips_cells_and_merge_matches_full_run() {
    let mut c = config(CouplingKind::Comonotonic, 1.0);
    c.t_grid = TGrid::Values { values: vec![0.1, 0.01] };
    let full = run_coupled_mc(&c, &RunOptions::default()).unwrap().records;
    let skip: HashSet<(usize, u64)> = full.iter().filter(|r| r.replicate % 3 == 0).map(|r| (r.t_index, r.replicate)).collect();
    let kept: Vec<SampleRecord> = full.iter().filter(|r| r.replicate % 3 == 0).cloned().collect();
    let rest = run_coupled_mc(&c, &RunOptions { threads: Some(3), skip: skip.clone() }).unwrap();
    assert_eq!(rest.records.len(), full.len() - skip.len());
    assert_eq!(merge_records(kept, rest.records), full);
  }

  #[test]
  fn samples_csv_round_trip() {
    let recs = vec![
      SampleRecord { t_index: 0, t: 0.1, replicate: 0, distance: 0.25, aborted: false },
      SampleRecord { t_index: 1, t: 0.01, replicate: 0, distance: f64::INFINITY, aborted: true },
    ];
    let mut buf = Vec::new();
    write_samples(&mut buf, "abc", &recs).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("run_id,t,replicate,distance,aborted\n"));
    let (id, back) = read_samples(&buf[..]).unwrap();
    assert_eq!(id.as_deref(), Some("abc"));
    assert_eq!(back, recs);
  }

  #[test]
  fn tails_of_zero_samples_vanish() {
    let s = vec![TSamples { t: 0.1, distances: vec![0.0; 50], aborted: 0 }];
    let curves = tail_curves(&s, |t| t, &[1e-3, 1.0]).unwrap();
    assert_eq!(curves[0].probs, vec![0.0, 0.0]);
  }

  #[test]
  fn tail_at_zero_plus_is_nonzero_fraction() {
    let s = vec![TSamples { t: 0.5, distances: vec![0.0, 0.0, 1.0, 2.0], aborted: 1 }];
    let c = tail_curves(&s, |_| 1.0, &[1e-300, 1.5]).unwrap();
    assert_eq!(c[0].probs, vec![0.5, 0.25]);
    assert_eq!((c[0].n, c[0].aborted), (4, 1));
  }

  #[test]
  fn noiseless_power_law_slope() {
    let samples: Vec<TSamples> = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5].iter().map(|&t| TSamples { t, distances: vec![3.0 * t.powf(1.37); 101], aborted: 0 }).collect();
    for st in [Statistic::Median, Statistic::TrimmedMean { frac: 0.1 }, Statistic::Quantile { q: 0.9 }] {
      let f = rate_fit(&samples, st, Some(0.7), false).unwrap();
      assert!((f.slope - 1.37).abs() < 1e-10);
      assert!((f.intercept - 3f64.ln()).abs() < 1e-9);
    }
  }

  #[test]
  fn zero_statistic_points_are_excluded() {
    let mut samples: Vec<TSamples> = [1e-1, 1e-2, 1e-3, 1e-4].iter().map(|&t| TSamples { t, distances: vec![t; 10], aborted: 0 }).collect();
    samples.push(TSamples { t: 1e-5, distances: vec![0.0; 10], aborted: 0 });
    let f = rate_fit(&samples, Statistic::Median, None, false).unwrap();
    assert_eq!(f.excluded, vec![1e-5]);
    assert!((f.slope - 1.0).abs() < 1e-12);
  }

  #[test]
  fn mean_is_refused_below_one_unless_forced() {
    let samples: Vec<TSamples> = [1e-1, 1e-2, 1e-3, 1e-4].iter().map(|&t| TSamples { t, distances: vec![t; 10], aborted: 0 }).collect();
    assert!(rate_fit(&samples, Statistic::Mean, Some(0.7), false).is_err());
    assert!(rate_fit(&samples, Statistic::Mean, Some(0.7), true).is_ok());
    assert!(rate_fit(&samples, Statistic::Mean, Some(1.5), false).is_ok());
  }

  #[test]
  fn fit_needs_four_points() {
    let samples: Vec<TSamples> = [1e-1, 1e-2, 1e-3].iter().map(|&t| TSamples { t, distances: vec![t; 10], aborted: 0 }).collect();
    assert!(rate_fit(&samples, Statistic::Median, None, false).is_err());
  }

  #[test]
  fn wasserstein_of_identical_pair_is_zero() {
    let w = wasserstein_upper(&[0.0; 200], 1.0, Some(0.7), false, 0.99, 1).unwrap();
    assert_eq!((w.estimate, w.ci), (0.0, (0.0, 0.0)));
  }

  #[test]
  fn truncated_metric_estimate_is_at_most_one() {
    let d: Vec<f64> = (0..500).map(|i| (i as f64).powi(3)).collect();
    let w = wasserstein_upper(&d, 0.5, Some(0.7), true, 0.99, 3).unwrap();
    assert!(w.estimate <= 1.0 && w.ci.1 <= 1.0);
  }

  #[test]
  fn high_order_refused_for_infinite_mean_drivers() {
    assert!(wasserstein_upper(&[1.0; 10], 1.5, Some(0.7), false, 0.99, 1).is_err());
    assert!(wasserstein_upper(&[1.0; 10], 1.5, Some(1.5), false, 0.99, 1).is_ok());
  }
}
