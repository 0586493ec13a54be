//! Radial Lévy measures `ρ(dx, v)` on `(0, ∞)`, their tails
//! `ρ([x,∞), v)` and right-continuous tail inverses.

use std::sync::Arc;

use super::angular::{Dependence, Dir};
use super::spec::{AugmentedSpec, Augmenting, Directional};
use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};
use crate::special::upper_gamma;

/// A family of radial measures indexed by direction.
pub trait RadialLaw: Send + Sync + std::fmt::Debug {
  /// `ρ([x, ∞), v)` for `x > 0`.
  fn tail(&self, x: f64, dir: Dir<'_>) -> f64;
  /// Lebesgue density of `ρ(·, v)` at `x > 0`.
  fn density(&self, x: f64, dir: Dir<'_>) -> f64;
  /// `ρ^←(u, v) = inf{x > 0 : ρ([x,∞), v) < u}`; zero when `u` exceeds the mass.
  fn inverse(&self, u: f64, dir: Dir<'_>) -> Result<f64>;
  fn dependence(&self) -> Dependence;
  /// Stability index of the small-jump behaviour, `None` for finite activity.
  fn stable_index(&self) -> Option<f64>;
  /// Points where the density may fail to be smooth.
  fn breakpoints(&self, _dir: Dir<'_>) -> Vec<f64> {
    vec![1.0]
  }
  /// `∫_a^b x^k ρ(dx, v)`, with `a` possibly 0 and `b` possibly `∞`.
  fn partial_moment(&self, k: f64, a: f64, b: f64, dir: Dir<'_>) -> Result<f64> {
    moment_by_quadrature(|x| self.density(x, dir), &self.breakpoints(dir), k, a, b)
  }
}

/// Quadrature of `∫_a^b x^k q(x) dx`, split at `breaks`.
pub fn moment_by_quadrature<F: Fn(f64) -> f64>(q: F, breaks: &[f64], k: f64, a: f64, b: f64) -> Result<f64> {
  if !(b > a) {
    return Ok(0.0);
  }
  let tol = Tolerance::default();
  let f = |x: f64| x.powf(k) * q(x);
  let mut cuts: Vec<f64> = breaks.iter().cloned().filter(|c| *c > a && *c < b && c.is_finite()).collect();
  cuts.sort_by(f64::total_cmp);
  cuts.dedup();
  let mut pts = vec![a];
  pts.extend(cuts);
  pts.push(b);
  let mut total = 0.0;
  for w in pts.windows(2) {
    let (lo, hi) = (w[0], w[1]);
    total += if lo == 0.0 && hi.is_infinite() {
      quadrature::integrate_half_line(&f, tol)?
    } else if lo == 0.0 {
      quadrature::integrate_from_zero(&f, hi, tol)?
    } else if hi.is_infinite() {
      quadrature::integrate_to_inf(&f, lo, tol)?
    } else {
      quadrature::integrate_log(&f, lo, hi, tol)?
    };
  }
  Ok(total)
}

/// Solves `tail(x) = u` for a non-increasing tail, in the variable `ln x`.
///
/// `hint` seeds the bracket search; `bracket`, when given, must straddle the
/// root. Safeguarded Newton steps use `density`, falling back to bisection.
pub fn invert_tail<T, D>(tail: T, density: D, u: f64, hint: f64, bracket: Option<(f64, f64)>) -> Result<f64>
where
  T: Fn(f64) -> f64,
  D: Fn(f64) -> f64,
{
  if !(u > 0.0) {
    return Err(Error::Domain(format!("tail inverse needs a positive level, got {u}")));
  }
  let ln_u = u.ln();
  // F(y) = ln tail(e^y) − ln u, non-increasing; −∞ beyond the support.
  let f = |y: f64| tail(y.exp()).ln() - ln_u;
  let (mut lo, mut hi) = match bracket {
    Some((a, b)) => (a.ln(), b.ln()),
    None => {
      let y0 = hint.ln();
      let f0 = f(y0);
      let mut step = 1.0;
      let (mut a, mut b) = (y0, y0);
      let mut guard = 0;
      if f0 > 0.0 {
        loop {
          b = y0 + step;
          if !(f(b) > 0.0) {
            break;
          }
          a = b;
          step *= 2.0;
          guard += 1;
          if guard > 200 || b > 700.0 {
            return Err(Error::numeric("tail inverse could not bracket from below", vec![("u", u), ("hint", hint)]));
          }
        }
      } else {
        loop {
          a = y0 - step;
          if f(a) > 0.0 {
            break;
          }
          b = a;
          step *= 2.0;
          guard += 1;
          if guard > 200 || a < -700.0 {
            return Err(Error::numeric("tail inverse could not bracket from above", vec![("u", u), ("hint", hint)]));
          }
        }
      }
      (a, b)
    }
  };
  let mut y = 0.5 * (lo + hi);
  for _ in 0..200 {
    let fy = f(y);
    if fy == 0.0 {
      return Ok(y.exp());
    }
    if fy > 0.0 {
      lo = y;
    } else {
      hi = y;
    }
    let x = y.exp();
    let t = tail(x);
    let slope = -x * density(x) / t;
    let mut next = if fy.is_finite() && slope < 0.0 && slope.is_finite() { y - fy / slope } else { f64::NAN };
    if !(next > lo && next < hi) {
      next = 0.5 * (lo + hi);
    }
    let step = (next - y).abs();
    y = next;
    if step <= 1e-13 * y.abs().max(1.0) || hi - lo <= 1e-14 * y.abs().max(1.0) {
      return Ok(y.exp());
    }
  }
  Err(Error::numeric("tail inverse did not converge in 200 iterations", vec![("u", u), ("lo", lo.exp()), ("hi", hi.exp())]))
}

/// Pure stable radial part `c x^{−α−1} dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct StableRadial {
  pub alpha: f64,
  pub c: f64,
}

impl RadialLaw for StableRadial {
  fn tail(&self, x: f64, _dir: Dir<'_>) -> f64 {
    self.c / self.alpha * x.powf(-self.alpha)
  }
  fn density(&self, x: f64, _dir: Dir<'_>) -> f64 {
    self.c * x.powf(-self.alpha - 1.0)
  }
  fn inverse(&self, u: f64, _dir: Dir<'_>) -> Result<f64> {
    if !(u > 0.0) {
      return Err(Error::Domain(format!("radial inverse needs a positive level, got {u}")));
    }
    Ok((self.c / (self.alpha * u)).powf(1.0 / self.alpha))
  }
  fn dependence(&self) -> Dependence {
    Dependence::Isotropic
  }
  fn stable_index(&self) -> Option<f64> {
    Some(self.alpha)
  }
  fn partial_moment(&self, k: f64, a: f64, b: f64, _dir: Dir<'_>) -> Result<f64> {
    if !(b > a) {
      return Ok(0.0);
    }
    let e = k - self.alpha;
    if (e > 0.0 && b.is_infinite()) || (e < 0.0 && a == 0.0) || e == 0.0 {
      return Ok(f64::INFINITY);
    }
    let pw = |x: f64| if x.is_infinite() { 0.0 } else { x.powf(e) };
    Ok(self.c * (pw(b) - pw(a)) / e)
  }
}

/// Exponentially tempered radial part `c e^{−λ(v)x} x^{−α−1} dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperedRadial {
  pub alpha: f64,
  pub c: f64,
  pub lambda: Directional,
}

impl TemperedRadial {
  // ∫_a^∞ x^k c e^{−λx} x^{−α−1} dx = c λ^{α−k} Γ(k−α, λa)
  fn upper_moment(&self, k: f64, a: f64, lambda: f64) -> f64 {
    let s = k - self.alpha;
    let scale = self.c * lambda.powf(-s);
    if a == 0.0 {
      if s <= 0.0 {
        return f64::INFINITY;
      }
      return scale * statrs::function::gamma::gamma(s);
    }
    scale * upper_gamma(s, lambda * a)
  }
}

impl RadialLaw for TemperedRadial {
  fn tail(&self, x: f64, dir: Dir<'_>) -> f64 {
    let lambda = self.lambda.at(dir);
    if lambda == 0.0 {
      return self.c / self.alpha * x.powf(-self.alpha);
    }
    self.c * lambda.powf(self.alpha) * upper_gamma(-self.alpha, lambda * x)
  }
  fn density(&self, x: f64, dir: Dir<'_>) -> f64 {
    self.c * (-self.lambda.at(dir) * x).exp() * x.powf(-self.alpha - 1.0)
  }
  fn inverse(&self, u: f64, dir: Dir<'_>) -> Result<f64> {
    if !(u > 0.0) {
      return Err(Error::Domain(format!("radial inverse needs a positive level, got {u}")));
    }
    let stable = (self.c / (self.alpha * u)).powf(1.0 / self.alpha);
    if self.lambda.at(dir) == 0.0 {
      return Ok(stable);
    }
    // The tempered tail lies below the stable one, so the root is ≤ `stable`.
    let hi = stable * (1.0 + 1e-12);
    if self.tail(hi, dir) >= u {
      return Ok(stable);
    }
    invert_tail(|x| self.tail(x, dir), |x| self.density(x, dir), u, stable, None)
  }
  fn dependence(&self) -> Dependence {
    self.lambda.dependence()
  }
  fn stable_index(&self) -> Option<f64> {
    Some(self.alpha)
  }
  fn partial_moment(&self, k: f64, a: f64, b: f64, dir: Dir<'_>) -> Result<f64> {
    let lambda = self.lambda.at(dir);
    if lambda == 0.0 {
      return StableRadial { alpha: self.alpha, c: self.c }.partial_moment(k, a, b, dir);
    }
    if !(b > a) {
      return Ok(0.0);
    }
    let top = if b.is_infinite() { 0.0 } else { self.upper_moment(k, b, lambda) };
    Ok(self.upper_moment(k, a, lambda) - top)
  }
}

/// Truncated stable radial part `c 1_{x ≤ cut(v)} x^{−α−1} dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedRadial {
  pub alpha: f64,
  pub c: f64,
  pub cutoff: Directional,
}

impl RadialLaw for TruncatedRadial {
  fn tail(&self, x: f64, dir: Dir<'_>) -> f64 {
    let cut = self.cutoff.at(dir);
    if x >= cut {
      return 0.0;
    }
    self.c / self.alpha * (x.powf(-self.alpha) - cut.powf(-self.alpha))
  }
  fn density(&self, x: f64, dir: Dir<'_>) -> f64 {
    if x > self.cutoff.at(dir) {
      0.0
    } else {
      self.c * x.powf(-self.alpha - 1.0)
    }
  }
  fn inverse(&self, u: f64, dir: Dir<'_>) -> Result<f64> {
    if !(u > 0.0) {
      return Err(Error::Domain(format!("radial inverse needs a positive level, got {u}")));
    }
    let cut = self.cutoff.at(dir);
    Ok((self.alpha * u / self.c + cut.powf(-self.alpha)).powf(-1.0 / self.alpha))
  }
  fn dependence(&self) -> Dependence {
    self.cutoff.dependence()
  }
  fn stable_index(&self) -> Option<f64> {
    Some(self.alpha)
  }
  fn breakpoints(&self, dir: Dir<'_>) -> Vec<f64> {
    vec![1.0, self.cutoff.at(dir)]
  }
  fn partial_moment(&self, k: f64, a: f64, b: f64, dir: Dir<'_>) -> Result<f64> {
    let b = b.min(self.cutoff.at(dir));
    StableRadial { alpha: self.alpha, c: self.c }.partial_moment(k, a, b, dir)
  }
}

const TABLE_LO: f64 = 1e-12;
const TABLE_HI: f64 = 1e8;
const TABLE_NODES: usize = 512;

// Cumulative tail values at log-spaced nodes, including x = 1 exactly.
#[derive(Debug, Clone)]
struct TailTable {
  nodes: Vec<f64>,
  tails: Vec<f64>,
}

/// Quadrature-backed radial part `Q(x, v) x^{−α−1} dx`, with the tail
/// tabulated at construction so that evaluations need one short panel.
#[derive(Clone)]
pub struct TabulatedRadial {
  pub alpha: f64,
  q: Arc<dyn Fn(f64, Dir<'_>) -> f64 + Send + Sync>,
  dependence: Dependence,
  tables: Vec<TailTable>,
}

impl std::fmt::Debug for TabulatedRadial {
  fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
    f.debug_struct("TabulatedRadial").field("alpha", &self.alpha).field("tables", &self.tables.len()).finish()
  }
}

impl TabulatedRadial {
  /// `atoms` gives one representative direction per table (one for isotropic `Q`).
  pub fn new(alpha: f64, q: Arc<dyn Fn(f64, Dir<'_>) -> f64 + Send + Sync>, dependence: Dependence, atoms: &[Vec<f64>]) -> Result<Self> {
    let mut nodes: Vec<f64> = (0..TABLE_NODES)
      .map(|i| (TABLE_LO.ln() + (TABLE_HI.ln() - TABLE_LO.ln()) * i as f64 / (TABLE_NODES - 1) as f64).exp())
      .collect();
    let nearest = nodes.iter().enumerate().min_by(|a, b| (a.1.ln().abs()).total_cmp(&b.1.ln().abs())).map(|p| p.0).unwrap();
    nodes[nearest] = 1.0;
    let mut tables = Vec::with_capacity(atoms.len());
    for (i, v) in atoms.iter().enumerate() {
      let dir = Dir { atom: i, v };
      let dens = |x: f64| q(x, dir) * x.powf(-alpha - 1.0);
      let mut tails = vec![0.0; nodes.len()];
      let last = nodes.len() - 1;
      tails[last] = quadrature::integrate_to_inf(dens, nodes[last], Tolerance::default())?;
      for k in (0..last).rev() {
        tails[k] = tails[k + 1] + quadrature::integrate_log(dens, nodes[k], nodes[k + 1], Tolerance::default())?;
      }
      tables.push(TailTable { nodes: nodes.clone(), tails });
    }
    Ok(TabulatedRadial { alpha, q, dependence, tables })
  }

  fn table(&self, dir: Dir<'_>) -> &TailTable {
    &self.tables[if self.tables.len() == 1 { 0 } else { dir.atom }]
  }

  fn segment(nodes: &[f64], x: f64) -> usize {
    nodes.partition_point(|n| *n <= x).saturating_sub(1).min(nodes.len() - 2)
  }
}

impl RadialLaw for TabulatedRadial {
  fn tail(&self, x: f64, dir: Dir<'_>) -> f64 {
    let tab = self.table(dir);
    let dens = |y: f64| self.density(y, dir);
    let tol = Tolerance::default();
    let last = tab.nodes.len() - 1;
    let r = if x >= tab.nodes[last] {
      quadrature::integrate_to_inf(dens, x, tol)
    } else if x < tab.nodes[0] {
      quadrature::integrate_log(dens, x, tab.nodes[0], tol).map(|v| v + tab.tails[0])
    } else {
      let k = Self::segment(&tab.nodes, x);
      quadrature::integrate_log(dens, x, tab.nodes[k + 1], tol).map(|v| v + tab.tails[k + 1])
    };
    r.unwrap_or(f64::NAN)
  }
  fn density(&self, x: f64, dir: Dir<'_>) -> f64 {
    (self.q)(x, dir) * x.powf(-self.alpha - 1.0)
  }
  fn inverse(&self, u: f64, dir: Dir<'_>) -> Result<f64> {
    if !(u > 0.0) {
      return Err(Error::Domain(format!("radial inverse needs a positive level, got {u}")));
    }
    let tab = self.table(dir);
    let last = tab.nodes.len() - 1;
    let t = |x: f64| self.tail(x, dir);
    let d = |x: f64| self.density(x, dir);
    if u > tab.tails[0] {
      return invert_tail(t, d, u, tab.nodes[0], None);
    }
    if u <= tab.tails[last] {
      if u == tab.tails[last] {
        return Ok(tab.nodes[last]);
      }
      return invert_tail(t, d, u, tab.nodes[last], None);
    }
    // tails are decreasing: find k with tails[k] >= u > tails[k+1].
    let k = tab.tails.partition_point(|v| *v >= u) - 1;
    if tab.tails[k] == u {
      return Ok(tab.nodes[k]);
    }
    invert_tail(t, d, u, tab.nodes[k], Some((tab.nodes[k], tab.nodes[k + 1])))
  }
  fn dependence(&self) -> Dependence {
    self.dependence.clone()
  }
  fn stable_index(&self) -> Option<f64> {
    Some(self.alpha)
  }
}

/// Finite-activity radial part `k e^{−λ(x−lo)} dx` on `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpTiltedUniform {
  pub k: f64,
  pub lo: f64,
  pub hi: f64,
  pub tilt: f64,
}

impl ExpTiltedUniform {
  pub fn mass(&self) -> f64 {
    self.raw_tail(self.lo)
  }
  fn raw_tail(&self, x: f64) -> f64 {
    if self.tilt == 0.0 {
      self.k * (self.hi - x)
    } else {
      self.k / self.tilt * ((-self.tilt * (x - self.lo)).exp() - (-self.tilt * (self.hi - self.lo)).exp())
    }
  }
}

impl RadialLaw for ExpTiltedUniform {
  fn tail(&self, x: f64, _dir: Dir<'_>) -> f64 {
    if x >= self.hi {
      0.0
    } else if x <= self.lo {
      self.mass()
    } else {
      self.raw_tail(x)
    }
  }
  fn density(&self, x: f64, _dir: Dir<'_>) -> f64 {
    if x < self.lo || x > self.hi {
      0.0
    } else {
      self.k * (-self.tilt * (x - self.lo)).exp()
    }
  }
  fn inverse(&self, u: f64, _dir: Dir<'_>) -> Result<f64> {
    if !(u > 0.0) {
      return Err(Error::Domain(format!("radial inverse needs a positive level, got {u}")));
    }
    if u > self.mass() {
      return Ok(0.0);
    }
    if self.tilt == 0.0 {
      return Ok(self.hi - u / self.k);
    }
    let e = u * self.tilt / self.k + (-self.tilt * (self.hi - self.lo)).exp();
    Ok((self.lo - e.ln() / self.tilt).clamp(self.lo, self.hi))
  }
  fn dependence(&self) -> Dependence {
    Dependence::Isotropic
  }
  fn stable_index(&self) -> Option<f64> {
    None
  }
  fn breakpoints(&self, _dir: Dir<'_>) -> Vec<f64> {
    vec![self.lo, self.hi]
  }
  fn partial_moment(&self, k: f64, a: f64, b: f64, dir: Dir<'_>) -> Result<f64> {
    let (a, b) = (a.max(self.lo), b.min(self.hi));
    if !(b > a) {
      return Ok(0.0);
    }
    quadrature::integrate(|x| x.powf(k) * self.density(x, dir), a, b, Tolerance::default())
  }
}

/// `ρ_{X_t}`: the radial part of `X(t·)/g`, i.e. `t·ρ(g·, v)`.
#[derive(Clone, Debug)]
pub struct ScaledRadial {
  pub base: Arc<dyn RadialLaw>,
  pub t: f64,
  pub g: f64,
}

impl RadialLaw for ScaledRadial {
  fn tail(&self, x: f64, dir: Dir<'_>) -> f64 {
    self.t * self.base.tail(self.g * x, dir)
  }
  fn density(&self, x: f64, dir: Dir<'_>) -> f64 {
    self.t * self.g * self.base.density(self.g * x, dir)
  }
  fn inverse(&self, u: f64, dir: Dir<'_>) -> Result<f64> {
    Ok(self.base.inverse(u / self.t, dir)? / self.g)
  }
  fn dependence(&self) -> Dependence {
    self.base.dependence()
  }
  fn stable_index(&self) -> Option<f64> {
    self.base.stable_index()
  }
  fn breakpoints(&self, dir: Dir<'_>) -> Vec<f64> {
    let mut b: Vec<f64> = self.base.breakpoints(dir).into_iter().map(|x| x / self.g).collect();
    b.push(1.0);
    b
  }
  fn partial_moment(&self, k: f64, a: f64, b: f64, dir: Dir<'_>) -> Result<f64> {
    // ∫_a^b x^k t g q(gx) dx = t g^{−k} ∫_{ga}^{gb} y^k q(y) dy
    Ok(self.t * self.g.powf(-k) * self.base.partial_moment(k, self.g * a, self.g * b, dir)?)
  }
}

/// `w(v)·ρ(·, v)`: folds an angular density into the radial part. `index`
/// maps atoms of the new angular measure to atoms of the base law's one.
#[derive(Clone, Debug)]
pub struct FoldedRadial {
  pub base: Arc<dyn RadialLaw>,
  pub weights: Vec<f64>,
  pub index: Vec<usize>,
}

impl FoldedRadial {
  fn base_dir<'a>(&self, dir: Dir<'a>) -> Dir<'a> {
    Dir { atom: self.index[dir.atom], v: dir.v }
  }
}

impl RadialLaw for FoldedRadial {
  fn tail(&self, x: f64, dir: Dir<'_>) -> f64 {
    let w = self.weights[dir.atom];
    if w == 0.0 {
      return 0.0;
    }
    w * self.base.tail(x, self.base_dir(dir))
  }
  fn density(&self, x: f64, dir: Dir<'_>) -> f64 {
    let w = self.weights[dir.atom];
    if w == 0.0 {
      return 0.0;
    }
    w * self.base.density(x, self.base_dir(dir))
  }
  fn inverse(&self, u: f64, dir: Dir<'_>) -> Result<f64> {
    let w = self.weights[dir.atom];
    if w == 0.0 {
      return Ok(0.0);
    }
    self.base.inverse(u / w, self.base_dir(dir))
  }
  fn dependence(&self) -> Dependence {
    Dependence::PerAtom
  }
  fn stable_index(&self) -> Option<f64> {
    self.base.stable_index()
  }
  fn breakpoints(&self, dir: Dir<'_>) -> Vec<f64> {
    self.base.breakpoints(self.base_dir(dir))
  }
  fn partial_moment(&self, k: f64, a: f64, b: f64, dir: Dir<'_>) -> Result<f64> {
    let w = self.weights[dir.atom];
    if w == 0.0 {
      return Ok(0.0);
    }
    Ok(w * self.base.partial_moment(k, a, b, self.base_dir(dir))?)
  }
}

/// The radial law of an augmented spec.
pub fn radial_law(spec: &AugmentedSpec) -> Result<Arc<dyn RadialLaw>> {
  let alpha = spec.alpha();
  let c = spec.base.c_alpha;
  Ok(match &spec.augmenting {
    Augmenting::Stable => Arc::new(StableRadial { alpha, c }),
    Augmenting::Tempered { lambda } => Arc::new(TemperedRadial { alpha, c, lambda: lambda.clone() }),
    Augmenting::Truncated { cutoff } => Arc::new(TruncatedRadial { alpha, c, cutoff: cutoff.clone() }),
    Augmenting::Modulated { bundle } => {
      let b = bundle.clone();
      let q: Arc<dyn Fn(f64, Dir<'_>) -> f64 + Send + Sync> = Arc::new(move |x, _| c * b.h(x));
      Arc::new(TabulatedRadial::new(alpha, q, Dependence::Isotropic, &[vec![1.0; spec.dimension()]])?)
    }
    Augmenting::Custom(custom) => {
      let reps: Vec<Vec<f64>> = match spec.base.sigma.atoms() {
        Some(atoms) if !custom.isotropic => atoms.iter().map(|a| a.direction.clone()).collect(),
        _ => vec![vec![1.0; spec.dimension()]],
      };
      let dep = if custom.isotropic { Dependence::Isotropic } else { Dependence::PerAtom };
      Arc::new(TabulatedRadial::new(alpha, custom.q.clone(), dep, &reps)?)
    }
  })
}
