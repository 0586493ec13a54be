//! Coupled jump streams for two Lévy drivers: thinning of a dominating
//! Poisson random measure, the comonotonic (shared-epoch) coupling, and an
//! independent baseline.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy_model::{truncation_error, AngularMeasure, Atom, Dir, LevyDriver};
use crate::rng::{open01, StreamKey};

/// Slack allowed on Radon–Nikodym densities before they count as `> 1`.
const DENSITY_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
  Thinning,
  Comonotonic,
  Independent,
}

impl std::fmt::Display for CouplingKind {
  fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
    f.write_str(match self {
      CouplingKind::Thinning => "thinning",
      CouplingKind::Comonotonic => "comonotonic",
      CouplingKind::Independent => "independent",
    })
  }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamMeta {
  pub coupling: CouplingKind,
  pub key: StreamKey,
  /// Epoch cap, comonotonic only.
  pub lambda: Option<f64>,
}

/// Time-sorted coupled jumps of two drivers on `(0, T]`.
///
/// Storage is flat: event `i` owns `jumps1[i*d..(i+1)*d]`. A driver that does
/// not jump at an event has a zero vector there.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledJumpStream {
  pub dimension: usize,
  pub horizon: f64,
  pub times: Vec<f64>,
  pub jumps1: Vec<f64>,
  pub jumps2: Vec<f64>,
  pub shared: Vec<bool>,
  /// Poisson epochs `Γ` of each event (comonotonic only, else empty).
  pub epochs: Vec<f64>,
  /// Truncation levels actually applied to each driver.
  pub eps: (f64, f64),
  pub comp1: Vec<f64>,
  pub comp2: Vec<f64>,
  pub meta: StreamMeta,
}

/// Borrowed view of one event.
#[derive(Clone, Copy, Debug)]
pub struct JumpEvent<'a> {
  pub time: f64,
  pub jump1: &'a [f64],
  pub jump2: &'a [f64],
  pub shared: bool,
}

impl CoupledJumpStream {
  pub fn len(&self) -> usize {
    self.times.len()
  }

  pub fn is_empty(&self) -> bool {
    self.times.is_empty()
  }

  pub fn event(&self, i: usize) -> JumpEvent<'_> {
    let d = self.dimension;
    JumpEvent { time: self.times[i], jump1: &self.jumps1[i * d..(i + 1) * d], jump2: &self.jumps2[i * d..(i + 1) * d], shared: self.shared[i] }
  }

  pub fn events(&self) -> impl Iterator<Item = JumpEvent<'_>> {
    (0..self.len()).map(|i| self.event(i))
  }

  /// Driver values `Y_i(T)` including compensator drift.
  pub fn endpoint(&self, which: usize) -> Vec<f64> {
    let (jumps, comp) = if which == 1 { (&self.jumps1, &self.comp1) } else { (&self.jumps2, &self.comp2) };
    let d = self.dimension;
    let mut y: Vec<f64> = comp.iter().map(|c| c * self.horizon).collect();
    for chunk in jumps.chunks_exact(d) {
      for (yi, j) in y.iter_mut().zip(chunk) {
        *yi += j;
      }
    }
    y
  }

  /// Number of non-zero jumps of driver `which` with norm at least `s`.
  pub fn count_at_least(&self, which: usize, s: f64) -> usize {
    let jumps = if which == 1 { &self.jumps1 } else { &self.jumps2 };
    jumps.chunks_exact(self.dimension).filter(|j| norm(j) >= s && norm(j) > 0.0).count()
  }

  /// Appends events as CSV rows `replicate,time,shared,jump1_*,jump2_*`.
  pub fn write_csv<W: Write>(&self, out: &mut csv::Writer<W>, replicate: u64) -> Result<()> {
    for e in self.events() {
      let mut row = vec![replicate.to_string(), format!("{:e}", e.time), (e.shared as u8).to_string()];
      row.extend(e.jump1.iter().chain(e.jump2).map(|x| format!("{x:e}")));
      out.write_record(&row)?;
    }
    Ok(())
  }

  /// Header matching [`CoupledJumpStream::write_csv`].
  pub fn csv_header(dimension: usize) -> Vec<String> {
    let mut h = vec!["replicate".to_string(), "time".into(), "shared".into()];
    for i in 1..=2 {
      h.extend((0..dimension).map(|k| format!("jump{i}_{k}")));
    }
    h
  }

  /// Sorts events by time; ties keep generation order.
  fn sort(&mut self) {
    let n = self.len();
    let d = self.dimension;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| self.times[a].total_cmp(&self.times[b]));
    if order.iter().enumerate().all(|(i, &j)| i == j) {
      return;
    }
    let gather = |src: &[f64], width: usize| -> Vec<f64> { order.iter().flat_map(|&i| src[i * width..(i + 1) * width].iter().copied()).collect() };
    self.times = gather(&self.times, 1);
    self.jumps1 = gather(&self.jumps1, d);
    self.jumps2 = gather(&self.jumps2, d);
    if !self.epochs.is_empty() {
      self.epochs = gather(&self.epochs, 1);
    }
    self.shared = order.iter().map(|&i| self.shared[i]).collect();
  }

  fn push(&mut self, time: f64, j1: &[f64], j2: &[f64], shared: bool) {
    self.times.push(time);
    self.jumps1.extend_from_slice(j1);
    self.jumps2.extend_from_slice(j2);
    self.shared.push(shared);
  }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
  v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn poisson_count<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> Result<usize> {
  if mean == 0.0 {
    return Ok(0);
  }
  if !(mean.is_finite() && mean > 0.0) {
    return Err(Error::numeric("Poisson intensity is not finite", vec![("mean", mean)]));
  }
  let p = Poisson::new(mean).map_err(|e| Error::numeric(format!("Poisson law: {e}"), vec![("mean", mean)]))?;
  Ok(p.sample(rng) as usize)
}

fn check_pair(d1: &LevyDriver, d2: &LevyDriver, horizon: f64) -> Result<()> {
  if d1.dimension() != d2.dimension() {
    return Err(Error::InvalidSpec(format!("drivers have dimensions {} and {}", d1.dimension(), d2.dimension())));
  }
  if !(horizon > 0.0 && horizon.is_finite()) {
    return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
  }
  match (&d1.sigma, &d2.sigma) {
    (AngularMeasure::Uniform { .. }, AngularMeasure::Atoms { .. }) | (AngularMeasure::Atoms { .. }, AngularMeasure::Uniform { .. }) => {
      Err(Error::Unsupported("coupling an atomic angular measure with a uniform one".into()))
    }
    _ => Ok(()),
  }
}

/// Draws a jump of `driver` restricted to `{|w| ≥ eps}` into `out`.
fn draw_jump<R: Rng + ?Sized>(driver: &LevyDriver, rng: &mut R, eps: f64, out: &mut [f64]) -> Result<f64> {
  let atom = driver.sample_direction(rng, eps, out);
  let dir = Dir { atom, v: out };
  let top = driver.radial.tail(eps, dir);
  let x = driver.radial.inverse(top * open01(rng), dir)?.max(eps);
  out.iter_mut().for_each(|o| *o *= x);
  Ok(x)
}

/// The dominating measure of a thinning coupling.
#[derive(Clone, Debug)]
pub enum Dominating {
  /// `ν = ν₁ + ν₂`, so `f₁ + f₂ = 1`.
  Sum,
  /// `ν = factor·ν_base`; the caller asserts `ν_i ≤ ν`.
  Envelope { base: LevyDriver, factor: f64 },
}

/// Thinning coupling: a Poisson random measure with intensity `dt ⊗ ν`
/// restricted to `{|w| ≥ eps}`, marked by `ϑ ~ U(0,1)`; driver `i` keeps
/// the atom iff `ϑ ≤ f_i(w) = dν_i/dν(w)`.
pub fn sample_thinning(d1: &LevyDriver, d2: &LevyDriver, dominating: &Dominating, eps: f64, horizon: f64, key: StreamKey) -> Result<CoupledJumpStream> {
  if !(eps > 0.0) {
    return Err(Error::Domain(format!("truncation level must be positive, got {eps}")));
  }
  check_pair(d1, d2, horizon)?;
  let d = d1.dimension();
  let (m1, m2) = (d1.mass_above(eps), d2.mass_above(eps));
  let total = match dominating {
    Dominating::Sum => m1 + m2,
    Dominating::Envelope { base, factor } => {
      if base.dimension() != d || !(*factor > 0.0) {
        return Err(Error::InvalidSpec("envelope needs a positive factor and matching dimension".into()));
      }
      factor * base.mass_above(eps)
    }
  };
  let mut stream = empty_stream(d, horizon, (eps, eps), d1.compensator(eps)?, d2.compensator(eps)?, CouplingKind::Thinning, key, None);
  let mut rng = key.rng();
  let n = poisson_count(&mut rng, horizon * total)?;
  let mut w = vec![0.0; d];
  let zero = vec![0.0; d];
  for _ in 0..n {
    let time = horizon * open01(&mut rng);
    let x = match dominating {
      Dominating::Sum => draw_jump(if rng.random::<f64>() * total < m1 { d1 } else { d2 }, &mut rng, eps, &mut w)?,
      Dominating::Envelope { base, .. } => draw_jump(base, &mut rng, eps, &mut w)?,
    };
    let v: Vec<f64> = w.iter().map(|c| c / x).collect();
    let base_density = match dominating {
      Dominating::Sum => d1.point_density(x, &v) + d2.point_density(x, &v),
      Dominating::Envelope { base, factor } => factor * base.point_density(x, &v),
    };
    let mark: f64 = rng.random();
    let f1 = density_ratio(d1.point_density(x, &v), base_density, &w)?;
    let f2 = density_ratio(d2.point_density(x, &v), base_density, &w)?;
    let (in1, in2) = (mark <= f1 && f1 > 0.0, mark <= f2 && f2 > 0.0);
    if !(in1 || in2) {
      continue;
    }
    stream.push(time, if in1 { &w } else { &zero }, if in2 { &w } else { &zero }, in1 && in2);
  }
  stream.sort();
  Ok(stream)
}

fn density_ratio(num: f64, den: f64, w: &[f64]) -> Result<f64> {
  if num == 0.0 {
    return Ok(0.0);
  }
  let f = num / den;
  if !(f <= 1.0 + DENSITY_SLACK) {
    return Err(Error::InvalidSpec(format!("thinning density {f} > 1 at w = {w:?}; the dominating measure does not dominate")));
  }
  Ok(f.min(1.0))
}

#[allow(clippy::too_many_arguments)]
fn empty_stream(d: usize, horizon: f64, eps: (f64, f64), comp1: Vec<f64>, comp2: Vec<f64>, coupling: CouplingKind, key: StreamKey, lambda: Option<f64>) -> CoupledJumpStream {
  CoupledJumpStream {
    dimension: d,
    horizon,
    times: Vec::new(),
    jumps1: Vec::new(),
    jumps2: Vec::new(),
    shared: Vec::new(),
    epochs: Vec::new(),
    eps,
    comp1,
    comp2,
    meta: StreamMeta { coupling, key, lambda },
  }
}

/// Two independent streams, each truncated at `eps`, merged in time.
pub fn sample_independent(d1: &LevyDriver, d2: &LevyDriver, eps: f64, horizon: f64, key: StreamKey) -> Result<CoupledJumpStream> {
  if !(eps > 0.0) {
    return Err(Error::Domain(format!("truncation level must be positive, got {eps}")));
  }
  check_pair(d1, d2, horizon)?;
  let d = d1.dimension();
  let mut stream = empty_stream(d, horizon, (eps, eps), d1.compensator(eps)?, d2.compensator(eps)?, CouplingKind::Independent, key, None);
  let mut w = vec![0.0; d];
  let zero = vec![0.0; d];
  for (which, driver) in [(1u64, d1), (2, d2)] {
    let mut rng = key.child(which).rng();
    let n = poisson_count(&mut rng, horizon * driver.mass_above(eps))?;
    for _ in 0..n {
      let time = horizon * open01(&mut rng);
      draw_jump(driver, &mut rng, eps, &mut w)?;
      if which == 1 {
        stream.push(time, &w, &zero, false);
      } else {
        stream.push(time, &zero, &w, false);
      }
    }
  }
  stream.sort();
  Ok(stream)
}

/// Rewrites two drivers over a common angular measure `σ = (σ₁+σ₂)/2`,
/// folding the densities `dσ_i/dσ ∈ [0,2]` into the radial parts.
pub fn common_angular(d1: &LevyDriver, d2: &LevyDriver) -> Result<(LevyDriver, LevyDriver)> {
  check_pair(d1, d2, 1.0)?;
  if d1.sigma == d2.sigma {
    return Ok((d1.clone(), d2.clone()));
  }
  let (a1, a2) = match (d1.sigma.atoms(), d2.sigma.atoms()) {
    (Some(a1), Some(a2)) => (a1, a2),
    // Two uniform measures of equal dimension are equal.
    _ => return Ok((d1.clone(), d2.clone())),
  };
  let mut atoms: Vec<Atom> = a1.iter().map(|a| Atom { direction: a.direction.clone(), weight: 0.5 * a.weight }).collect();
  let mut index1: Vec<usize> = (0..a1.len()).collect();
  let mut index2 = vec![0; a1.len()];
  let mut w1: Vec<f64> = vec![0.0; a1.len()];
  let mut w2: Vec<f64> = vec![0.0; a1.len()];
  for (j, a) in a2.iter().enumerate() {
    match d1.sigma.atom_index(&a.direction) {
      Some(i) => {
        atoms[i].weight += 0.5 * a.weight;
        index2[i] = j;
        w2[i] = a.weight;
      }
      None => {
        atoms.push(Atom { direction: a.direction.clone(), weight: 0.5 * a.weight });
        index1.push(0);
        index2.push(j);
        w1.push(0.0);
        w2.push(a.weight);
      }
    }
  }
  for (i, a) in a1.iter().enumerate() {
    w1[i] = a.weight;
  }
  let w1: Vec<f64> = w1.iter().zip(&atoms).map(|(w, a)| w / a.weight).collect();
  let w2: Vec<f64> = w2.iter().zip(&atoms).map(|(w, a)| w / a.weight).collect();
  let sigma = AngularMeasure::Atoms { atoms };
  Ok((d1.folded(sigma.clone(), w1, index1)?, d2.folded(sigma, w2, index2)?))
}

/// Comonotonic coupling: shared marks `(U, Γ, V)` of a Poisson random
/// measure on `(0,T] × (0,Λ] × S^{d−1}` with intensity `dt ⊗ dΓ ⊗ σ`, and
/// jumps `ρ_i^←(Γ, V)·V`. The drivers must share `σ`; see [`common_angular`].
pub fn sample_comonotonic(d1: &LevyDriver, d2: &LevyDriver, lambda: f64, horizon: f64, key: StreamKey) -> Result<CoupledJumpStream> {
  if !(lambda > 0.0 && lambda.is_finite()) {
    return Err(Error::Domain(format!("epoch cap must be positive and finite, got {lambda}")));
  }
  check_pair(d1, d2, horizon)?;
  if d1.sigma != d2.sigma {
    return Err(Error::InvalidSpec("comonotonic coupling needs a shared angular measure".into()));
  }
  let d = d1.dimension();
  let eps = (effective_eps(d1, lambda)?, effective_eps(d2, lambda)?);
  let mut stream =
    empty_stream(d, horizon, eps, d1.compensator_at_epoch(lambda)?, d2.compensator_at_epoch(lambda)?, CouplingKind::Comonotonic, key, Some(lambda));
  let mut rng = key.rng();
  let n = poisson_count(&mut rng, horizon * lambda)?;
  let mut v = vec![0.0; d];
  let (mut j1, mut j2) = (vec![0.0; d], vec![0.0; d]);
  for _ in 0..n {
    let time = horizon * open01(&mut rng);
    let gamma = lambda * open01(&mut rng);
    let atom = d1.sigma.sample(&mut rng, &mut v);
    let dir = Dir { atom, v: &v };
    let x1 = d1.radial.inverse(gamma, dir)?;
    let x2 = d2.radial.inverse(gamma, dir)?;
    if x1 == 0.0 && x2 == 0.0 {
      continue;
    }
    for k in 0..d {
      j1[k] = x1 * v[k];
      j2[k] = x2 * v[k];
    }
    stream.push(time, &j1, &j2, false);
    stream.epochs.push(gamma);
  }
  stream.sort();
  Ok(stream)
}

/// Smallest radius the comonotonic stream can produce at epoch cap `lambda`.
fn effective_eps(driver: &LevyDriver, lambda: f64) -> Result<f64> {
  let mut eps = f64::INFINITY;
  for c in driver.classes() {
    if c.weight > 0.0 {
      eps = eps.min(driver.radial.inverse(lambda, c.dir())?);
    }
  }
  Ok(eps)
}

/// `Λ = max_v ρ([eps, ∞), v)` over both drivers, so that every jump of size
/// at least `eps` is represented.
pub fn epoch_cap(d1: &LevyDriver, d2: &LevyDriver, eps: f64) -> f64 {
  d1.max_tail(eps).max(d2.max_tail(eps))
}

/// How the truncation level is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpsPolicy {
  Fixed { eps: f64 },
  /// Largest `eps` with `∫_{|w|<eps}|w|ν_i(dw) ≤ target` for both drivers.
  L1 { target: f64, #[serde(default)] max_events: Option<f64> },
  /// Largest `eps` with `∫_{|w|<eps}|w|²ν_i(dw) ≤ target` for both drivers.
  L2 { target: f64, #[serde(default)] max_events: Option<f64> },
  /// `eps` such that the busier driver has `events` expected jumps per path.
  Intensity { events: f64 },
}

impl EpsPolicy {
  /// Resolves the truncation level for a driver pair on `[0, horizon]`.
  /// `max_events` raises `eps` until the expected number of retained jumps
  /// per path and driver is at most that cap.
  pub fn resolve(&self, d1: &LevyDriver, d2: &LevyDriver, horizon: f64) -> Result<f64> {
    let rate = |eps: f64| horizon * d1.mass_above(eps).max(d2.mass_above(eps));
    let by_rate = |events: f64| -> Result<f64> {
      if !(events > 0.0) {
        return Err(Error::Domain(format!("expected event count must be positive, got {events}")));
      }
      if rate(1e-300) <= events {
        return Ok(1e-300);
      }
      level_search(|e| rate(e) <= events, true)
    };
    match self {
      EpsPolicy::Fixed { eps } => {
        if !(*eps > 0.0) {
          return Err(Error::Domain(format!("truncation level must be positive, got {eps}")));
        }
        Ok(*eps)
      }
      EpsPolicy::Intensity { events } => by_rate(*events),
      EpsPolicy::L1 { target, max_events } | EpsPolicy::L2 { target, max_events } => {
        let first = matches!(self, EpsPolicy::L1 { .. });
        let err = |e: f64| -> f64 {
          let mut worst: f64 = 0.0;
          for d in [d1, d2] {
            match truncation_error(d, e) {
              Ok((l1, l2)) => worst = worst.max(if first { l1 } else { l2 }),
              Err(_) => return f64::INFINITY,
            }
          }
          worst
        };
        if !(*target > 0.0) {
          return Err(Error::Domain(format!("truncation target must be positive, got {target}")));
        }
        let eps = if err(1.0) <= *target { 1.0 } else { level_search(|e| err(e) <= *target, false)? };
        match max_events {
          Some(m) => Ok(eps.max(by_rate(*m)?)),
          None => Ok(eps),
        }
      }
    }
  }
}

/// Boundary of a predicate monotone in `eps`, bisected in `ln eps`. With
/// `ok_above` the predicate holds for large `eps` and the smallest such level
/// is returned; otherwise it holds for small `eps` and the largest is.
fn level_search<P: Fn(f64) -> bool>(ok: P, ok_above: bool) -> Result<f64> {
  let (mut lo, mut hi) = (-690.0f64, 0.0f64);
  if ok_above {
    while !ok(hi.exp()) {
      hi += 10.0;
      if hi > 700.0 {
        return Err(Error::numeric("no truncation level meets the event cap", vec![]));
      }
    }
  } else if !ok(lo.exp()) {
    return Err(Error::numeric("no truncation level meets the target", vec![("ln_eps", lo)]));
  }
  for _ in 0..200 {
    if hi - lo < 1e-12 {
      break;
    }
    let mid = 0.5 * (lo + hi);
    if ok(mid.exp()) == ok_above {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  Ok(if ok_above { hi.exp() } else { lo.exp() })
}

#[cfg(test)]
mod tests {
  use super::*;
  use crate::levy_model::{AugmentedSpec, ExpTiltedUniform, StableSpec};
  use crate::stats;

  fn tempered(lambda: f64) -> LevyDriver {
    let s = StableSpec::new(0.7, 1.0, AngularMeasure::symmetric_1d()).unwrap();
    LevyDriver::from_augmented(&AugmentedSpec::tempered(s, lambda).unwrap()).unwrap()
  }

  fn stable15() -> LevyDriver {
    let s = StableSpec::new(1.5, 1.0, AngularMeasure::Atoms { atoms: vec![Atom { direction: vec![1.0], weight: 1.0 }] }).unwrap();
    LevyDriver::from_augmented(&AugmentedSpec::pure_stable(s).unwrap()).unwrap()
  }

  #[test]
  fn identical_drivers_share_everything() {
    let d = tempered(1.0);
    let key = StreamKey::new(3, 0, 0);
    let s = sample_thinning(&d, &d, &Dominating::Sum, 0.01, 1.0, key).unwrap();
    assert!(!s.is_empty());
    assert!(s.shared.iter().all(|x| *x));
    assert_eq!(s.jumps1, s.jumps2);
    let c = sample_comonotonic(&d, &d, 200.0, 1.0, key).unwrap();
    assert_eq!(c.jumps1, c.jumps2);
    assert!(c.shared.iter().all(|x| !*x));
  }

  #[test]
  fn streams_are_sorted_and_deterministic() {
    let (a, b) = (tempered(1.0), tempered(0.0));
    let key = StreamKey::new(11, 2, 5);
    for s in [
      sample_thinning(&a, &b, &Dominating::Sum, 0.01, 2.0, key).unwrap(),
      sample_comonotonic(&a, &b, 300.0, 2.0, key).unwrap(),
      sample_independent(&a, &b, 0.01, 2.0, key).unwrap(),
    ] {
      assert!(s.times.windows(2).all(|w| w[0] <= w[1]));
      assert!(s.times.iter().all(|t| *t > 0.0 && *t <= 2.0));
      let again = match s.meta.coupling {
        CouplingKind::Thinning => sample_thinning(&a, &b, &Dominating::Sum, 0.01, 2.0, key).unwrap(),
        CouplingKind::Comonotonic => sample_comonotonic(&a, &b, 300.0, 2.0, key).unwrap(),
        CouplingKind::Independent => sample_independent(&a, &b, 0.01, 2.0, key).unwrap(),
      };
      assert_eq!(s, again);
    }
  }

  #[test]
  fn comonotone_magnitudes_are_ordered_by_epoch() {
    let (a, b) = (tempered(1.0), tempered(0.0));
    let s = sample_comonotonic(&a, &b, 500.0, 1.0, StreamKey::new(5, 0, 0)).unwrap();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&i, &j| s.epochs[i].total_cmp(&s.epochs[j]));
    for w in idx.windows(2) {
      let (e0, e1) = (s.event(w[0]), s.event(w[1]));
      assert!(norm(e0.jump1) >= norm(e1.jump1));
      assert!(norm(e0.jump2) >= norm(e1.jump2));
    }
    // tempered jumps never exceed their stable twins at the same epoch
    assert!(s.events().all(|e| norm(e.jump1) <= norm(e.jump2)));
  }

  #[test]
  fn one_sided_thinning_leaves_other_stream_empty() {
    let cp = |k| LevyDriver::compound_poisson(AngularMeasure::symmetric_1d(), ExpTiltedUniform { k, lo: 0.5, hi: 1.0, tilt: 0.0 }).unwrap();
    let (a, b) = (cp(10.0), cp(0.0));
    let mut counts = Vec::new();
    for r in 0..10_000 {
      let s = sample_thinning(&a, &b, &Dominating::Sum, 0.1, 1.0, StreamKey::new(9, 0, r)).unwrap();
      assert!(s.jumps2.iter().all(|x| *x == 0.0));
      counts.push(s.len() as f64);
    }
    // mass is 10 * 0.5 = 5
    let ks = stats::ks_one_sample(&counts, |k| stats::poisson_cdf(k.floor() as u64, 5.0), |k| if k < 1.0 { 0.0 } else { stats::poisson_cdf((k - 1.0) as u64, 5.0) });
    assert!(ks < 0.02, "ks = {ks}");
  }

  #[test]
  fn thinning_acceptance_matches_density() {
    // ν_X ≤ ν_Z for tempering, so ν_Z dominates and f_X(x) = e^{−x}.
    let (x, z) = (tempered(1.0), tempered(0.0));
    let dom = Dominating::Envelope { base: z.clone(), factor: 1.0 };
    let bins = [(0.05, 0.1), (0.3, 0.5), (1.0, 2.0)];
    let mut hits = [0usize; 3];
    let mut tot = [0usize; 3];
    let mut expect = [0.0; 3];
    for r in 0..400 {
      let s = sample_thinning(&x, &z, &dom, 0.05, 1.0, StreamKey::new(1, 0, r)).unwrap();
      for e in s.events() {
        let m = norm(e.jump2);
        for (b, (lo, hi)) in bins.iter().enumerate() {
          if m >= *lo && m < *hi {
            tot[b] += 1;
            expect[b] += (-m).exp();
            if e.shared {
              hits[b] += 1;
            }
          }
        }
        assert!(norm(e.jump1) == 0.0 || e.shared);
      }
    }
    for b in 0..3 {
      let n = tot[b] as f64;
      let p = expect[b] / n;
      let sd = (p * (1.0 - p) / n).sqrt();
      assert!(((hits[b] as f64 / n) - p).abs() < 3.0 * sd + 1e-12, "bin {b}: {} vs {p}", hits[b] as f64 / n);
    }
  }

  #[test]
  fn envelope_violation_is_reported() {
    let (x, z) = (tempered(1.0), tempered(0.0));
    let dom = Dominating::Envelope { base: x.clone(), factor: 1.0 };
    let err = sample_thinning(&x, &z, &dom, 0.05, 1.0, StreamKey::new(1, 0, 0)).unwrap_err();
    assert!(matches!(err, Error::InvalidSpec(_)));
  }

  #[test]
  fn common_angular_folds_atoms() {
    let one = |dir: f64| {
      let s = StableSpec::new(0.7, 1.0, AngularMeasure::Atoms { atoms: vec![Atom { direction: vec![dir], weight: 1.0 }] }).unwrap();
      LevyDriver::from_augmented(&AugmentedSpec::pure_stable(s).unwrap()).unwrap()
    };
    let sym = tempered(0.0);
    let (a, b) = common_angular(&one(1.0), &sym).unwrap();
    assert_eq!(a.sigma, b.sigma);
    for x in [0.01, 1.0, 7.0] {
      assert!((a.mass_above(x) - one(1.0).mass_above(x)).abs() < 1e-12 * a.mass_above(x));
      assert!((b.mass_above(x) - sym.mass_above(x)).abs() < 1e-12 * b.mass_above(x));
    }
    let s = sample_comonotonic(&a, &b, 100.0, 1.0, StreamKey::new(2, 0, 0)).unwrap();
    // driver 1 only jumps upwards
    assert!(s.jumps1.iter().all(|x| *x >= 0.0));
  }

  #[test]
  fn epoch_compensator_matches_radius_compensator() {
    let d = stable15();
    let eps = 0.04;
    let lambda = epoch_cap(&d, &d, eps);
    let a = d.compensator(eps).unwrap();
    let b = d.compensator_at_epoch(lambda).unwrap();
    assert!((a[0] - b[0]).abs() < 1e-9 * a[0].abs());
  }

  #[test]
  fn eps_policies() {
    let (a, b) = (tempered(1.0), tempered(0.0));
    let eps = EpsPolicy::L1 { target: 1e-3, max_events: None }.resolve(&a, &b, 1.0).unwrap();
    let (l1, _) = truncation_error(&b, eps).unwrap();
    assert!(l1 <= 1e-3 && l1 > 0.999e-3, "l1 = {l1}");
    let eps = EpsPolicy::Intensity { events: 500.0 }.resolve(&a, &b, 2.0).unwrap();
    assert!((2.0 * b.mass_above(eps) / 500.0 - 1.0).abs() < 1e-6);
    let capped = EpsPolicy::L2 { target: 1e-12, max_events: Some(100.0) }.resolve(&a, &b, 1.0).unwrap();
    assert!(b.mass_above(capped) <= 100.0 * (1.0 + 1e-9));
  }
}
