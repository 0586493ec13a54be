use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::angular::{AngularMeasure, Dependence, Dir};
use super::bundle::{BundleSpec, SlowVariationBundle};
use crate::error::{Error, Result};

pub const LEVY_SPEC_SCHEMA: &str = "levy_spec.v1";
const ALPHA_BAND: f64 = 1e-9;

/// Validates a stability index against the excluded values 1 and 2.
pub fn check_alpha(alpha: f64) -> Result<()> {
  if !(alpha > 0.0 && alpha < 2.0 - ALPHA_BAND) || (alpha - 1.0).abs() <= ALPHA_BAND {
    return Err(Error::Unsupported(format!("stability index {alpha} outside (0,2) minus {{1}}")));
  }
  Ok(())
}

/// `⌈α⌉`: 1 on `(0,1)`, 2 on `(1,2)`.
pub fn ceil_alpha(alpha: f64) -> f64 {
  if alpha < 1.0 {
    1.0
  } else {
    2.0
  }
}

/// The α-stable attractor: Lévy measure `c_α x^{−α−1} dx σ(dv)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableSpec {
  pub alpha: f64,
  pub c_alpha: f64,
  pub sigma: AngularMeasure,
}

impl StableSpec {
  pub fn new(alpha: f64, c_alpha: f64, sigma: AngularMeasure) -> Result<Self> {
    let s = StableSpec { alpha, c_alpha, sigma };
    s.validate()?;
    Ok(s)
  }

  /// Symmetric one-dimensional law with characteristic function `exp(−|u|^α)`.
  pub fn unit_symmetric_1d(alpha: f64) -> Result<Self> {
    check_alpha(alpha)?;
    StableSpec::new(alpha, unit_scale_intensity(alpha), AngularMeasure::symmetric_1d())
  }

  pub fn validate(&self) -> Result<()> {
    check_alpha(self.alpha)?;
    if !(self.c_alpha > 0.0) || !self.c_alpha.is_finite() {
      return Err(Error::InvalidSpec(format!("c_alpha must be positive, got {}", self.c_alpha)));
    }
    self.sigma.validate()
  }

  pub fn dimension(&self) -> usize {
    self.sigma.dimension()
  }

  pub fn is_balanced(&self) -> bool {
    self.sigma.is_balanced()
  }
}

/// Intensity `c_α` for which the symmetric measure `(c_α/2)|x|^{−α−1}dx`
/// yields the characteristic exponent `|u|^α`.
pub fn unit_scale_intensity(alpha: f64) -> f64 {
  let g = statrs::function::gamma::gamma(1.0 - alpha);
  alpha / (g * (std::f64::consts::FRAC_PI_2 * alpha).cos())
}

/// `ρ_Z^←(u) = (c_α/α)^{1/α} u^{−1/α}`.
pub fn stable_radial_inverse(spec: &StableSpec, u: f64) -> Result<f64> {
  if !(u > 0.0) {
    return Err(Error::Domain(format!("radial inverse needs a positive level, got {u}")));
  }
  Ok((spec.c_alpha / (spec.alpha * u)).powf(1.0 / spec.alpha))
}

/// A direction-dependent scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Directional {
  Constant(f64),
  PerAtom(Vec<f64>),
  HalfSpace { normal: Vec<f64>, inside: f64, outside: f64 },
}

impl Directional {
  pub fn at(&self, dir: Dir<'_>) -> f64 {
    match self {
      Directional::Constant(c) => *c,
      Directional::PerAtom(values) => values[dir.atom],
      Directional::HalfSpace { normal, inside, outside } => {
        let dot: f64 = normal.iter().zip(dir.v).map(|(a, b)| a * b).sum();
        if dot >= 0.0 {
          *inside
        } else {
          *outside
        }
      }
    }
  }

  pub fn sup(&self) -> f64 {
    match self {
      Directional::Constant(c) => *c,
      Directional::PerAtom(v) => v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
      Directional::HalfSpace { inside, outside, .. } => inside.max(*outside),
    }
  }

  pub fn inf(&self) -> f64 {
    match self {
      Directional::Constant(c) => *c,
      Directional::PerAtom(v) => v.iter().cloned().fold(f64::INFINITY, f64::min),
      Directional::HalfSpace { inside, outside, .. } => inside.min(*outside),
    }
  }

  pub fn dependence(&self) -> Dependence {
    match self {
      Directional::Constant(_) => Dependence::Isotropic,
      Directional::PerAtom(_) => Dependence::PerAtom,
      Directional::HalfSpace { normal, .. } => Dependence::HalfSpace(normal.clone()),
    }
  }

  fn check(&self, sigma: &AngularMeasure, name: &str) -> Result<()> {
    match self {
      Directional::PerAtom(v) => match sigma.atoms() {
        Some(a) if a.len() == v.len() => Ok(()),
        Some(a) => Err(Error::InvalidSpec(format!("{name} has {} values for {} atoms", v.len(), a.len()))),
        None => Err(Error::InvalidSpec(format!("{name} per-atom values need an atomic angular measure"))),
      },
      Directional::HalfSpace { normal, .. } if normal.len() != sigma.dimension() => {
        Err(Error::InvalidSpec(format!("{name} half-space normal has wrong dimension")))
      }
      _ => Ok(()),
    }
  }
}

/// User-supplied augmenting function `Q(x, v)`; not serializable.
#[derive(Clone)]
pub struct CustomQ {
  pub name: String,
  pub q: Arc<dyn Fn(f64, Dir<'_>) -> f64 + Send + Sync>,
  pub isotropic: bool,
}

impl std::fmt::Debug for CustomQ {
  fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
    write!(f, "CustomQ({})", self.name)
  }
}

impl PartialEq for CustomQ {
  fn eq(&self, other: &Self) -> bool {
    Arc::ptr_eq(&self.q, &other.q)
  }
}

/// Catalog of augmenting functions `Q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmenting {
  /// `Q ≡ c_α`.
  Stable,
  /// `Q = c_α e^{−λ(v)x}`.
  Tempered { lambda: Directional },
  /// `Q = c_α 1_{x ≤ c(v)}`.
  Truncated { cutoff: Directional },
  /// `Q = c_α H(x)`.
  Modulated { bundle: BundleSpec },
  #[serde(skip)]
  Custom(CustomQ),
}

/// Envelope `|Q(x,v)/c_α − 1| ≤ K(1 ∧ x^p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dona {
  pub k: f64,
  pub p: f64,
}

/// Result of [`dona_constants`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DonaConstants {
  pub k: f64,
  pub p: f64,
  /// Set when the envelope is a conservative majorant rather than sharp.
  pub conservative: bool,
}

/// Attracted driver: the stable attractor modulated by `Q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSpec {
  #[serde(default = "default_schema")]
  pub schema: String,
  #[serde(flatten)]
  pub base: StableSpec,
  pub augmenting: Augmenting,
  #[serde(default, skip_serializing_if = "Option::is_none")]
  pub dona: Option<Dona>,
  #[serde(default, skip_serializing_if = "Option::is_none")]
  pub delta: Option<f64>,
  /// `E[X(1)]` for α > 1 (zero when absent).
  #[serde(default, skip_serializing_if = "Option::is_none")]
  pub mean: Option<Vec<f64>>,
}

fn default_schema() -> String {
  LEVY_SPEC_SCHEMA.to_string()
}

/// The regime of an augmented driver.
#[derive(Clone, Debug)]
pub enum Regime {
  Dona(DonaConstants),
  Donna(SlowVariationBundle),
}

impl AugmentedSpec {
  pub fn new(base: StableSpec, augmenting: Augmenting) -> Result<Self> {
    let s = AugmentedSpec { schema: default_schema(), base, augmenting, dona: None, delta: None, mean: None };
    s.validate()?;
    Ok(s)
  }

  pub fn pure_stable(base: StableSpec) -> Result<Self> {
    AugmentedSpec::new(base, Augmenting::Stable)
  }

  pub fn tempered(base: StableSpec, lambda: f64) -> Result<Self> {
    AugmentedSpec::new(base, Augmenting::Tempered { lambda: Directional::Constant(lambda) })
  }

  pub fn from_json(text: &str) -> Result<Self> {
    let s: AugmentedSpec = serde_json::from_str(text)?;
    s.validate()?;
    Ok(s)
  }

  pub fn alpha(&self) -> f64 {
    self.base.alpha
  }

  pub fn dimension(&self) -> usize {
    self.base.dimension()
  }

  pub fn attractor(&self) -> AugmentedSpec {
    AugmentedSpec { schema: default_schema(), base: self.base.clone(), augmenting: Augmenting::Stable, dona: None, delta: None, mean: None }
  }

  pub fn is_pure_stable(&self) -> bool {
    match &self.augmenting {
      Augmenting::Stable => true,
      Augmenting::Tempered { lambda } => lambda.sup() == 0.0 && lambda.inf() == 0.0,
      _ => false,
    }
  }

  pub fn mean_vector(&self) -> Vec<f64> {
    self.mean.clone().unwrap_or_else(|| vec![0.0; self.dimension()])
  }

  pub fn validate(&self) -> Result<()> {
    if self.schema != LEVY_SPEC_SCHEMA {
      return Err(Error::InvalidSpec(format!("unknown schema {:?}, expected {LEVY_SPEC_SCHEMA}", self.schema)));
    }
    self.base.validate()?;
    let sigma = &self.base.sigma;
    match &self.augmenting {
      Augmenting::Stable => {}
      Augmenting::Tempered { lambda } => {
        lambda.check(sigma, "lambda")?;
        if !(lambda.inf() >= 0.0) || !lambda.sup().is_finite() {
          return Err(Error::InvalidSpec("tempering rates must be finite and non-negative".into()));
        }
      }
      Augmenting::Truncated { cutoff } => {
        cutoff.check(sigma, "cutoff")?;
        if !(cutoff.inf() > 0.0) {
          return Err(Error::InvalidSpec("truncation cutoffs must be positive".into()));
        }
      }
      Augmenting::Modulated { bundle } => {
        SlowVariationBundle::from_spec(bundle)?;
        if self.dona.is_some() {
          return Err(Error::InvalidSpec("a modulated driver is DoNNA; drop the dona field".into()));
        }
      }
      Augmenting::Custom(c) => {
        if !c.isotropic && sigma.atoms().is_none() {
          return Err(Error::InvalidSpec("direction-dependent custom Q needs an atomic angular measure".into()));
        }
      }
    }
    if let Some(m) = &self.mean {
      if m.len() != self.dimension() {
        return Err(Error::InvalidSpec("mean has wrong dimension".into()));
      }
    }
    if let Some(d) = self.delta {
      if !(d > 0.0) {
        return Err(Error::InvalidSpec("delta must be positive".into()));
      }
    }
    self.check_slow_variation_at_zero()
  }

  // Q(cx,v)/Q(x,v) → 1 as x ↓ 0 for c ∈ {0.5, 2}.
  fn check_slow_variation_at_zero(&self) -> Result<()> {
    let classes = self.base.sigma.classes(&self.dependence())?;
    for class in &classes {
      let dir = class.dir();
      for &c in &[0.5, 2.0] {
        let coarse = (self.q(c * 1e-6, dir) / self.q(1e-6, dir) - 1.0).abs();
        let fine = (self.q(c * 1e-12, dir) / self.q(1e-12, dir) - 1.0).abs();
        if !(fine <= coarse + 1e-12 && fine < 0.1) {
          return Err(Error::InvalidSpec(format!("Q is not slowly varying at zero along atom {}", class.atom)));
        }
      }
    }
    Ok(())
  }

  pub fn dependence(&self) -> Dependence {
    match &self.augmenting {
      Augmenting::Tempered { lambda } => lambda.dependence(),
      Augmenting::Truncated { cutoff } => cutoff.dependence(),
      Augmenting::Custom(c) if !c.isotropic => Dependence::PerAtom,
      _ => Dependence::Isotropic,
    }
  }

  /// Slowly varying modulation `H(x)` (identically 1 in the DoNA catalog).
  pub fn big_h(&self, x: f64) -> f64 {
    match &self.augmenting {
      Augmenting::Modulated { bundle } => bundle.h(x),
      _ => 1.0,
    }
  }

  /// Regular part `h(x, v) = Q(x,v) / (c_α H(x))`.
  pub fn small_h(&self, x: f64, dir: Dir<'_>) -> f64 {
    match &self.augmenting {
      Augmenting::Stable | Augmenting::Modulated { .. } => 1.0,
      Augmenting::Tempered { lambda } => (-lambda.at(dir) * x).exp(),
      Augmenting::Truncated { cutoff } => {
        if x <= cutoff.at(dir) {
          1.0
        } else {
          0.0
        }
      }
      Augmenting::Custom(c) => (c.q)(x, dir) / self.base.c_alpha,
    }
  }

  /// `h(x, v) − 1`, without cancellation where `h` is close to one.
  pub fn small_h_defect(&self, x: f64, dir: Dir<'_>) -> f64 {
    match &self.augmenting {
      Augmenting::Stable | Augmenting::Modulated { .. } => 0.0,
      Augmenting::Tempered { lambda } => (-lambda.at(dir) * x).exp_m1(),
      Augmenting::Truncated { cutoff } => {
        if x <= cutoff.at(dir) {
          0.0
        } else {
          -1.0
        }
      }
      Augmenting::Custom(c) => (c.q)(x, dir) / self.base.c_alpha - 1.0,
    }
  }

  /// Augmenting function `Q(x, v)`.
  pub fn q(&self, x: f64, dir: Dir<'_>) -> f64 {
    match &self.augmenting {
      Augmenting::Custom(c) => (c.q)(x, dir),
      Augmenting::Modulated { .. } => self.base.c_alpha * self.big_h(x),
      _ => self.base.c_alpha * self.small_h(x, dir),
    }
  }

  pub fn regime(&self) -> Result<Regime> {
    match &self.augmenting {
      Augmenting::Modulated { bundle } => Ok(Regime::Donna(SlowVariationBundle::catalog(bundle)?)),
      _ => Ok(Regime::Dona(dona_constants(self)?)),
    }
  }

  /// The bundle `H` of the driver (the constant bundle in the DoNA regime).
  pub fn bundle(&self) -> Result<SlowVariationBundle> {
    match &self.augmenting {
      Augmenting::Modulated { bundle } => SlowVariationBundle::catalog(bundle),
      _ => SlowVariationBundle::catalog(&BundleSpec::Constant),
    }
  }

  /// `(g(t), G(t))` for this driver.
  pub fn normalizer(&self, t: f64) -> Result<(f64, f64)> {
    self.bundle()?.normalizing_g(self.alpha(), t)
  }
}

/// `(K, p)` of the DoNA envelope for catalog entries.
pub fn dona_constants(spec: &AugmentedSpec) -> Result<DonaConstants> {
  if let Some(d) = spec.dona {
    return Ok(DonaConstants { k: d.k, p: d.p, conservative: false });
  }
  match &spec.augmenting {
    Augmenting::Stable => Ok(DonaConstants { k: 0.0, p: f64::INFINITY, conservative: false }),
    Augmenting::Tempered { lambda } if lambda.sup() == 0.0 => Ok(DonaConstants { k: 0.0, p: f64::INFINITY, conservative: false }),
    Augmenting::Tempered { lambda } => Ok(DonaConstants { k: lambda.sup(), p: 1.0, conservative: false }),
    Augmenting::Truncated { .. } => Ok(DonaConstants { k: 1.0, p: 1.0, conservative: true }),
    Augmenting::Modulated { .. } => Err(Error::Unsupported("a modulated driver is DoNNA and has no (K, p) envelope".into())),
    Augmenting::Custom(c) => Err(Error::Unsupported(format!("custom Q {:?} needs user-supplied dona fields (k, p)", c.name))),
  }
}

#[cfg(test)]
mod tests {
  use super::*;

  fn base(alpha: f64) -> StableSpec {
    StableSpec::new(alpha, 1.0, AngularMeasure::symmetric_1d()).unwrap()
  }

  #[test]
  fn alpha_band() {
    assert!(check_alpha(1.0 + 5e-10).is_err());
    assert!(check_alpha(2.0 - 5e-10).is_err());
    assert!(check_alpha(0.0).is_err());
    assert!(check_alpha(1.0 + 2e-9).is_ok());
  }

  #[test]
  fn trivial_inverses() {
    let s = StableSpec::new(0.5, 0.5, AngularMeasure::symmetric_1d()).unwrap();
    assert!((stable_radial_inverse(&s, 4.0).unwrap() - 0.0625).abs() < 1e-16);
    let s = StableSpec::new(1.5, 1.5, AngularMeasure::symmetric_1d()).unwrap();
    assert_eq!(stable_radial_inverse(&s, 1.0).unwrap(), 1.0);
    assert!(stable_radial_inverse(&s, 0.0).is_err());
  }

  #[test]
  fn dona_catalog() {
    let t = AugmentedSpec::tempered(base(0.7), 1.0).unwrap();
    let d = dona_constants(&t).unwrap();
    assert_eq!((d.k, d.p), (1.0, 1.0));
    let s = AugmentedSpec::pure_stable(base(0.7)).unwrap();
    assert_eq!(dona_constants(&s).unwrap().k, 0.0);
    assert!(dona_constants(&s).unwrap().p.is_infinite());
    let uni = StableSpec::new(0.7, 1.0, AngularMeasure::uniform(2)).unwrap();
    let half = AugmentedSpec::new(uni, Augmenting::Tempered { lambda: Directional::HalfSpace { normal: vec![1.0, 0.0], inside: 2.0, outside: 0.5 } }).unwrap();
    assert_eq!(dona_constants(&half).unwrap().k, 2.0);
    let tr = AugmentedSpec::new(base(0.7), Augmenting::Truncated { cutoff: Directional::Constant(1.0) }).unwrap();
    assert!(dona_constants(&tr).unwrap().conservative);
  }

  #[test]
  fn custom_q_without_envelope_is_unsupported() {
    let c = CustomQ { name: "bump".into(), q: Arc::new(|x, _| 1.0 + x.min(1.0)), isotropic: true };
    let s = AugmentedSpec::new(base(0.7), Augmenting::Custom(c)).unwrap();
    assert!(matches!(dona_constants(&s), Err(Error::Unsupported(_))));
  }

  #[test]
  fn non_slowly_varying_q_is_rejected() {
    let c = CustomQ { name: "power".into(), q: Arc::new(|x, _| x.powf(0.3)), isotropic: true };
    assert!(AugmentedSpec::new(base(0.7), Augmenting::Custom(c)).is_err());
  }

  #[test]
  fn json_round_trip() {
    let t = AugmentedSpec::tempered(base(0.7), 1.0).unwrap();
    let text = serde_json::to_string(&t).unwrap();
    assert_eq!(AugmentedSpec::from_json(&text).unwrap(), t);
  }

  #[test]
  fn unit_scale_intensity_at_half() {
    // α = 1/2: Γ(1/2) cos(π/4) = √(π/2)
    let c = unit_scale_intensity(0.5);
    assert!((c - 0.5 / (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-14);
  }
}
