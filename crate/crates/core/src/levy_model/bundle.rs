use std::f64::consts::E;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Catalog tag of a slowly varying bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BundleSpec {
  /// `H ≡ 1`.
  Constant,
  /// `H(x) = ℓ_n(1/x)` on `(0,1)`.
  IteratedLog { n: u32 },
  /// `H(x) = 1/ℓ_n(1/x)` on `(0,1)`.
  InverseIteratedLog { n: u32 },
}

impl BundleSpec {
  /// Direct evaluation of the catalog `H`.
  pub fn h(&self, x: f64) -> f64 {
    match *self {
      BundleSpec::Constant => 1.0,
      _ if x >= 1.0 => 1.0,
      BundleSpec::IteratedLog { n } => iterated_log(n, 1.0 / x),
      BundleSpec::InverseIteratedLog { n } => 1.0 / iterated_log(n, 1.0 / x),
    }
  }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A slowly varying function `H` pinned to 1 on `[1, ∞)`, with controlling
/// functions `H₁`, `H₂` and the rate function `G₂` of its normalizer.
#[derive(Clone)]
pub struct SlowVariationBundle {
  pub tag: String,
  h: ScalarFn,
  h1: ScalarFn,
  h2: ScalarFn,
  g2: ScalarFn,
  monotone: Option<bool>,
}

impl std::fmt::Debug for SlowVariationBundle {
  fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
    f.debug_struct("SlowVariationBundle").field("tag", &self.tag).finish()
  }
}

/// `ℓ_1(t) = log(e+t)`, `ℓ_{n+1}(t) = log(e+ℓ_n(t))`.
pub fn iterated_log(n: u32, t: f64) -> f64 {
  let mut v = (E + t).ln();
  for _ in 1..n {
    v = (E + v).ln();
  }
  v
}

fn product_rate(n: u32, t: f64) -> f64 {
  let t = t.min(1.0);
  (1..=n).map(|k| 1.0 / (E + iterated_log(k, 1.0 / t))).product()
}

impl SlowVariationBundle {
  /// Catalog entry validated against its construction invariants.
  pub fn from_spec(spec: &BundleSpec) -> Result<Self> {
    let b = Self::catalog(spec)?;
    b.validate()?;
    Ok(b)
  }

  /// Catalog entry without the grid validation.
  pub fn catalog(spec: &BundleSpec) -> Result<Self> {
    Ok(match *spec {
      BundleSpec::Constant => SlowVariationBundle {
        tag: "constant".into(),
        h: Arc::new(|_| 1.0),
        h1: Arc::new(|_| 1.0),
        h2: Arc::new(|_| 0.0),
        g2: Arc::new(|_| 0.0),
        monotone: Some(true),
      },
      BundleSpec::IteratedLog { n } | BundleSpec::InverseIteratedLog { n } => {
        if n == 0 {
          return Err(Error::InvalidSpec("iterated-log bundle needs n >= 1".into()));
        }
        let inverse = matches!(spec, BundleSpec::InverseIteratedLog { .. });
        let scale = (1.0 + E).powi(n as i32);
        SlowVariationBundle {
          tag: if inverse { format!("inverse-iterated-log-{n}") } else { format!("iterated-log-{n}") },
          h: {
            let spec = spec.clone();
            Arc::new(move |x| spec.h(x))
          },
          h1: Arc::new(move |x: f64| scale * (1.0 + x.ln().abs()).powi(2)),
          h2: Arc::new(move |t| product_rate(n, t)),
          g2: Arc::new(move |t| product_rate(n, t)),
          monotone: Some(!inverse),
        }
      }
    })
  }

  /// A user-supplied bundle; validated like the catalog entries.
  pub fn custom(
    tag: impl Into<String>,
    h: impl Fn(f64) -> f64 + Send + Sync + 'static,
    h1: impl Fn(f64) -> f64 + Send + Sync + 'static,
    h2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    g2: impl Fn(f64) -> f64 + Send + Sync + 'static,
  ) -> Result<Self> {
    let b = SlowVariationBundle { tag: tag.into(), h: Arc::new(h), h1: Arc::new(h1), h2: Arc::new(h2), g2: Arc::new(g2), monotone: None };
    b.validate()?;
    Ok(b)
  }

  pub fn h(&self, x: f64) -> f64 {
    (self.h)(x)
  }
  pub fn h1(&self, x: f64) -> f64 {
    (self.h1)(x)
  }
  pub fn h2(&self, t: f64) -> f64 {
    (self.h2)(t)
  }
  pub fn g2(&self, t: f64) -> f64 {
    (self.g2)(t)
  }

  pub fn is_constant(&self) -> bool {
    self.tag == "constant"
  }

  /// Largest violation of `|H(xt)/H(t) − 1| ≤ H₁(x)H₂(t)` on the 40×40
  /// validation grid; non-positive when the inequality holds.
  pub fn csv_violation(&self) -> f64 {
    let grid = |lo: f64, hi: f64, i: usize| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / 39.0).exp();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..40 {
      let x = grid(1e-6, 1e2, i);
      for j in 0..40 {
        let t = grid(1e-6, 1.0, j);
        let lhs = (self.h(x * t) / self.h(t) - 1.0).abs();
        worst = worst.max(lhs - self.h1(x) * self.h2(t));
      }
    }
    worst
  }

  pub fn validate(&self) -> Result<()> {
    let v = self.csv_violation();
    if v > 1e-9 {
      return Err(Error::InvalidSpec(format!("bundle {} violates the controlled-slow-variation bound by {v:e}", self.tag)));
    }
    for k in 0..60 {
      let x = 10f64.powf(-12.0 + 0.2 * k as f64);
      if !(self.h(x) > 0.0) || !self.h(x).is_finite() {
        return Err(Error::InvalidSpec(format!("bundle {} has non-positive H({x:e})", self.tag)));
      }
    }
    if let Some(decreasing) = self.monotone {
      let mut prev = self.h(1e-12);
      for k in 1..60 {
        let cur = self.h(10f64.powf(-12.0 + 0.2 * k as f64));
        if (decreasing && cur > prev) || (!decreasing && cur < prev) {
          return Err(Error::InvalidSpec(format!("bundle {} is not monotone as tagged", self.tag)));
        }
        prev = cur;
      }
    }
    Ok(())
  }

  /// Normalizer `g(t) = t^{1/α} G(t)` solving `s H(s)^{−1/α} = t^{1/α}`;
  /// returns `(g(t), G(t))`.
  pub fn normalizing_g(&self, alpha: f64, t: f64) -> Result<(f64, f64)> {
    if !(t > 0.0) {
      return Err(Error::Domain(format!("normalizing_g needs t > 0, got {t}")));
    }
    let target = t.powf(1.0 / alpha);
    if t >= 1.0 || self.is_constant() {
      return Ok((target, 1.0));
    }
    // φ(y) = y − ln H(e^y)/α − ln t/α, increasing in y = ln s.
    let ln_t = t.ln();
    let phi = |y: f64| y - self.h(y.exp()).ln() / alpha - ln_t / alpha;
    let hi = 0.0;
    let mut lo = ln_t / alpha;
    let mut guard = 0;
    while phi(lo) >= 0.0 {
      lo -= 2.0 + lo.abs();
      guard += 1;
      if guard > 60 || lo < -700.0 {
        return Err(Error::numeric("normalizing_g could not bracket the root", vec![("t", t)]));
      }
    }
    let mut prev = phi(lo);
    for k in 1..=64 {
      let y = lo + (hi - lo) * k as f64 / 64.0;
      let cur = phi(y);
      if cur <= prev {
        return Err(Error::InvalidSpec(format!("s·H(s)^(-1/alpha) is not increasing near s = {:e}", y.exp())));
      }
      prev = cur;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
      let mid = 0.5 * (a + b);
      if b - a <= 1e-13 || mid == a || mid == b {
        break;
      }
      if phi(mid) < 0.0 {
        a = mid;
      } else {
        b = mid;
      }
    }
    let g = (0.5 * (a + b)).exp();
    let big_g = g / target;
    let check = big_g.powf(alpha) / self.h(g);
    if (check - 1.0).abs() > 1e-8 {
      return Err(Error::numeric("normalizer identity G^alpha = H(g) failed", vec![("t", t), ("ratio", check)]));
    }
    Ok((g, big_g))
  }
}

#[cfg(test)]
mod tests {
  use super::*;

  #[test]
  fn catalog_entries_validate() {
    for n in 1..=3 {
      SlowVariationBundle::from_spec(&BundleSpec::IteratedLog { n }).unwrap();
      SlowVariationBundle::from_spec(&BundleSpec::InverseIteratedLog { n }).unwrap();
    }
  }

  #[test]
  fn constant_bundle_gives_power_normalizer() {
    let b = SlowVariationBundle::from_spec(&BundleSpec::Constant).unwrap();
    let (g, big_g) = b.normalizing_g(0.7, 0.01).unwrap();
    assert_eq!(g, 0.01f64.powf(1.0 / 0.7));
    assert_eq!(big_g, 1.0);
  }

  #[test]
  fn large_t_is_pinned() {
    let b = SlowVariationBundle::from_spec(&BundleSpec::IteratedLog { n: 1 }).unwrap();
    assert_eq!(b.normalizing_g(0.5, 2.0).unwrap().0, 4.0);
  }

  #[test]
  fn log_bundle_normalizer_solves_forward_equation() {
    let b = SlowVariationBundle::from_spec(&BundleSpec::IteratedLog { n: 1 }).unwrap();
    let (s, _) = b.normalizing_g(0.5, 0.01).unwrap();
    // s·H(s)^{−1/α} = t^{1/α} = 1e-4
    let forward = s * (E + 1.0 / s).ln().powf(-2.0);
    assert!((forward / 1e-4 - 1.0).abs() < 1e-10, "forward = {forward}");
  }

  #[test]
  fn broken_bundle_is_rejected() {
    let r = SlowVariationBundle::custom("bad", |x: f64| if x < 1.0 { 2.0 } else { 1.0 }, |_| 0.1, |_| 0.1, |_| 0.1);
    assert!(r.is_err());
  }
}
