//! Closed-form Grönwall bounds for coupled SDE pairs, the Wasserstein
//! factor of the additive-noise Lipschitz principle, the regime-resolved
//! rate functions `f(t)`, and quadrature of the tempered discrepancy
//! integrals between an attracted driver and its stable limit.

use serde::{Deserialize, Serialize};

use crate::couplings::{common_angular, CouplingKind};
use crate::error::{Error, Result};
use crate::levy_model::{ceil_alpha, check_alpha, AugmentedSpec, BundleSpec, DirectionClass, LevyDriver, RadialLaw, SlowVariationBundle};
use crate::quadrature::{self, Tolerance};
use crate::sde_engine::{CoefficientField, NoiseMode};

fn default_c0() -> f64 {
  4.0
}

/// `∫|w| ν_i(dw)` and `∫|w|² ν_i(dw)`; `None` stands for `+∞`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
  pub first: Option<f64>,
  pub second: Option<f64>,
}

/// Coupling-specific distance between the two Lévy measures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "coupling", rename_all = "snake_case")]
pub enum CrossTerms {
  /// `ν(Δf; p) = ∫|w|^p |ν₁ − ν₂|(dw)`.
  Thinning { first: Option<f64>, second: Option<f64> },
  /// `μ(|Δρ^←|^p) = ∫σ(dv)∫₀^∞ |ρ₁^←(u,v) − ρ₂^←(u,v)|^p du`.
  Comonotonic { first: Option<f64>, second: Option<f64> },
}

/// Everything the Grönwall bounds read about a coupled pair of SDEs
/// `𝒴_i = x_i + ∫ V(𝒴_i−) dY_i`. Norms of matrices are Frobenius norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverSummary {
  pub x1: Vec<f64>,
  pub x2: Vec<f64>,
  /// `|V(x₂)|`.
  pub v_x2: f64,
  pub lipschitz: f64,
  /// Mean drifts `a_i = E[Y_i(1)]`, when finite.
  #[serde(default)]
  pub a1: Option<Vec<f64>>,
  #[serde(default)]
  pub a2: Option<Vec<f64>>,
  /// Natural drifts `b_i` of finite-variation drivers.
  #[serde(default)]
  pub b1: Option<Vec<f64>>,
  #[serde(default)]
  pub b2: Option<Vec<f64>>,
  #[serde(default)]
  pub sigma1: f64,
  #[serde(default)]
  pub sigma2: f64,
  #[serde(default)]
  pub delta_sigma: f64,
  pub nu1: Moments,
  pub nu2: Moments,
  pub cross: CrossTerms,
  #[serde(default = "default_c0")]
  pub c0: f64,
  /// Replaces `C_p(𝒱₂; T)` by a fixed value when set.
  #[serde(default, skip_serializing_if = "Option::is_none")]
  pub c_v2: Option<f64>,
  /// Use `K²` where the Lipschitz bound of `|V(𝒴₂)|²` needs it inside
  /// `C₂(Y₂)` and `C₂(𝒱₂)`; off reproduces the formulas literally.
  #[serde(default)]
  pub k_squared: bool,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
  a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn len(a: &[f64]) -> f64 {
  a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn finite(x: Result<f64>) -> Option<f64> {
  x.ok().filter(|v| v.is_finite())
}

/// Classes on which both radial laws are constant, with the two drivers
/// rewritten over a shared angular measure.
fn joint_classes(d1: &LevyDriver, d2: &LevyDriver) -> Result<(LevyDriver, LevyDriver, Vec<DirectionClass>)> {
  let (a, b) = common_angular(d1, d2)?;
  let classes = if a.sigma.atoms().is_some() || a.classes().len() >= b.classes().len() { a.classes().to_vec() } else { b.classes().to_vec() };
  if a.sigma.atoms().is_none() && a.classes().len() > 1 && b.classes().len() > 1 && a.classes() != b.classes() {
    return Err(Error::Unsupported("two half-space laws with different normals".into()));
  }
  Ok((a, b, classes))
}

fn radial_breaks(laws: &[&dyn RadialLaw], class: &DirectionClass) -> Vec<f64> {
  let mut b: Vec<f64> = laws.iter().flat_map(|l| l.breakpoints(class.dir())).filter(|x| x.is_finite() && *x > 0.0).collect();
  b.push(1.0);
  b.sort_by(f64::total_cmp);
  b.dedup();
  b
}

/// `∫₀^∞ f` split at `breaks`, with log-scale panels at both ends.
fn half_line(f: impl Fn(f64) -> f64, breaks: &[f64]) -> Result<f64> {
  half_line_tol(f, breaks, Tolerance::default())
}

fn half_line_tol(f: impl Fn(f64) -> f64, breaks: &[f64], tol: Tolerance) -> Result<f64> {
  let mut total = quadrature::integrate_from_zero(&f, breaks[0], tol)?;
  for w in breaks.windows(2) {
    total += quadrature::integrate_log(&f, w[0], w[1], tol)?;
  }
  Ok(total + quadrature::integrate_to_inf(&f, breaks[breaks.len() - 1], tol)?)
}

/// `ν(Δf; p) = ∫|w|^p |ν₁ − ν₂|(dw)`, independent of the dominating measure.
pub fn thinning_cross_term(d1: &LevyDriver, d2: &LevyDriver, p: f64) -> Result<f64> {
  let (a, b, classes) = joint_classes(d1, d2)?;
  let mut total = 0.0;
  for c in &classes {
    let breaks = radial_breaks(&[a.radial.as_ref(), b.radial.as_ref()], c);
    let f = |x: f64| x.powf(p) * (a.radial.density(x, c.dir()) - b.radial.density(x, c.dir())).abs();
    total += c.weight * half_line(f, &breaks)?;
  }
  Ok(total)
}

// ρ^← with the finite-activity convention that levels above the mass map to 0.
fn inverse_or_zero(law: &dyn RadialLaw, u: f64, c: &DirectionClass) -> f64 {
  law.inverse(u, c.dir()).unwrap_or(f64::NAN)
}

/// `μ(|Δρ^←|^p)` of the comonotonic coupling.
pub fn comonotonic_cross_term(d1: &LevyDriver, d2: &LevyDriver, p: f64) -> Result<f64> {
  let (a, b, classes) = joint_classes(d1, d2)?;
  let mut total = 0.0;
  for c in &classes {
    let mut breaks = vec![1.0];
    for law in [&a.radial, &b.radial] {
      let m = law.tail(1e-300, c.dir());
      if m.is_finite() && m > 0.0 {
        breaks.push(m);
      }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let f = |u: f64| (inverse_or_zero(a.radial.as_ref(), u, c) - inverse_or_zero(b.radial.as_ref(), u, c)).abs().powf(p);
    let v = half_line(f, &breaks)?;
    if v.is_nan() {
      return Err(Error::numeric("radial inverse failed inside the comonotonic cross term", vec![("p", p)]));
    }
    total += c.weight * v;
  }
  Ok(total)
}

/// Builds the summary of a coupled pair from the drivers, the coefficient
/// field and the starting points. Moments that diverge are left as `None`.
pub fn summarize(d1: &LevyDriver, d2: &LevyDriver, coupling: CouplingKind, field: &CoefficientField, x1: &[f64], x2: &[f64]) -> Result<DriverSummary> {
  if field.mode != NoiseMode::Multiplicative {
    return Err(Error::Unsupported("Grönwall bounds are stated for dX = V(X−) dY".into()));
  }
  if x1.len() != field.m || x2.len() != field.m {
    return Err(Error::InvalidInput("starting points do not match the field dimension".into()));
  }
  let mut vx = vec![0.0; field.m * field.k];
  field.eval(x2, &mut vx);
  let moments = |d: &LevyDriver| Moments { first: finite(d.abs_moment(1.0, 0.0, f64::INFINITY)), second: finite(d.abs_moment(2.0, 0.0, f64::INFINITY)) };
  let cross = match coupling {
    CouplingKind::Thinning => CrossTerms::Thinning { first: finite(thinning_cross_term(d1, d2, 1.0)), second: finite(thinning_cross_term(d1, d2, 2.0)) },
    CouplingKind::Comonotonic => {
      CrossTerms::Comonotonic { first: finite(comonotonic_cross_term(d1, d2, 1.0)), second: finite(comonotonic_cross_term(d1, d2, 2.0)) }
    }
    CouplingKind::Independent => return Err(Error::Unsupported("no Grönwall bound for the independent coupling".into())),
  };
  Ok(DriverSummary {
    x1: x1.to_vec(),
    x2: x2.to_vec(),
    v_x2: len(&vx),
    lipschitz: field.lipschitz,
    a1: d1.mean().ok(),
    a2: d2.mean().ok(),
    b1: d1.natural_drift(),
    b2: d2.natural_drift(),
    sigma1: 0.0,
    sigma2: 0.0,
    delta_sigma: 0.0,
    nu1: moments(d1),
    nu2: moments(d2),
    cross,
    c0: default_c0(),
    c_v2: None,
    k_squared: false,
  })
}

/// One labelled additive term of `κ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
  pub label: String,
  pub value: f64,
}

/// `κ e^η` with its breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
  pub coupling: CouplingKind,
  pub order: u8,
  pub horizon: f64,
  pub kappa: f64,
  pub eta: f64,
  pub bound: f64,
  pub terms: Vec<Term>,
  pub constants: Vec<Term>,
}

fn term(label: &str, value: f64) -> Term {
  Term { label: label.to_string(), value }
}

fn need(x: Option<f64>, name: &str) -> Result<f64> {
  match x {
    Some(v) if v.is_finite() && v >= 0.0 => Ok(v),
    Some(v) => Err(Error::InvalidInput(format!("{name} must be finite and non-negative, got {v}"))),
    None => Err(Error::InvalidInput(format!("the bound needs {name} < ∞"))),
  }
}

fn need_vec<'a>(x: &'a Option<Vec<f64>>, name: &str) -> Result<&'a [f64]> {
  x.as_deref().ok_or_else(|| Error::InvalidInput(format!("the bound needs the {name}")))
}

fn check_horizon(t: f64, s: &DriverSummary) -> Result<()> {
  if !(t >= 0.0 && t.is_finite()) {
    return Err(Error::Domain(format!("horizon must be finite and non-negative, got {t}")));
  }
  if !(s.lipschitz >= 0.0 && s.c0 > 0.0 && s.v_x2 >= 0.0) {
    return Err(Error::InvalidInput("Lipschitz constant, |V(x2)| and C0 must be non-negative".into()));
  }
  if s.x1.len() != s.x2.len() {
    return Err(Error::InvalidInput("x1 and x2 differ in dimension".into()));
  }
  Ok(())
}

/// `(C₂(Y₂;T), C₂(𝒱₂;T))`.
fn second_order_constants(s: &DriverSummary, t: f64) -> Result<(f64, f64)> {
  let a2 = len(need_vec(&s.a2, "mean a2")?);
  let nu2 = need(s.nu2.second, "nu_2(1;2)")?;
  let k = s.lipschitz;
  let kk = if s.k_squared { k * k } else { 1.0 };
  let s2 = s.sigma2 * s.sigma2;
  let inner = a2 * a2 * t + 2.0 * s.c0 * (s2 + nu2);
  let expo = 6.0 * a2 * a2 * kk * t * t + 6.0 * s.c0 * k * k * (2.0 * s2 + nu2) * t;
  let cy = 6.0 * t * s.v_x2 * s.v_x2 * inner * expo.exp();
  let k_lin = if s.k_squared { k * k } else { k };
  Ok((cy, 2.0 * (s.v_x2 * s.v_x2 + k_lin * cy)))
}

/// `(C₁(Y₂;T), C₁(𝒱₂;T))`.
fn first_order_constants(s: &DriverSummary, t: f64) -> Result<(f64, f64)> {
  if s.sigma2 != 0.0 {
    return Err(Error::InvalidInput("the order-1 bound needs Sigma_2 = 0".into()));
  }
  let b2 = len(need_vec(&s.b2, "natural drift b2")?);
  let nu2 = need(s.nu2.first, "nu_2(1;1)")?;
  let rate = b2 + nu2;
  let cy = t * s.v_x2 * rate * (s.lipschitz * rate * t).exp();
  Ok((cy, s.v_x2 + s.lipschitz * cy))
}

fn eta2(s: &DriverSummary, t: f64) -> Result<f64> {
  let a1 = len(need_vec(&s.a1, "mean a1")?);
  let nu1 = need(s.nu1.second, "nu_1(1;2)")?;
  let k2 = s.lipschitz * s.lipschitz;
  Ok(6.0 * a1 * a1 * k2 * t * t + 6.0 * s.c0 * k2 * (2.0 * s.sigma1 * s.sigma1 + nu1) * t)
}

fn eta1(s: &DriverSummary, t: f64) -> Result<f64> {
  if s.sigma1 != 0.0 {
    return Err(Error::InvalidInput("the order-1 bound needs Sigma_1 = 0".into()));
  }
  let b1 = len(need_vec(&s.b1, "natural drift b1")?);
  let nu1 = need(s.nu1.first, "nu_1(1;1)")?;
  Ok(s.lipschitz * (b1 + nu1) * t)
}

fn report(coupling: CouplingKind, order: u8, t: f64, eta: f64, terms: Vec<Term>, constants: Vec<Term>) -> BoundReport {
  let kappa: f64 = terms.iter().map(|x| x.value).sum();
  BoundReport { coupling, order, horizon: t, kappa, eta, bound: kappa * eta.exp(), terms, constants }
}

fn check_order(order: u8) -> Result<()> {
  if order == 1 || order == 2 {
    Ok(())
  } else {
    Err(Error::Domain(format!("order must be 1 or 2, got {order}")))
  }
}

/// Bound on `E‖Δ𝒴‖^order_{[0,T]}` under the thinning coupling.
pub fn gronwall_bound_thinning(s: &DriverSummary, t: f64, order: u8) -> Result<BoundReport> {
  check_horizon(t, s)?;
  check_order(order)?;
  let (first, second) = match s.cross {
    CrossTerms::Thinning { first, second } => (first, second),
    CrossTerms::Comonotonic { .. } => return Err(Error::InvalidInput("summary carries comonotonic cross terms".into())),
  };
  let dx = dist(&s.x1, &s.x2);
  if order == 2 {
    let (cy, computed) = second_order_constants(s, t)?;
    let cv = s.c_v2.unwrap_or(computed);
    let eta = eta2(s, t)?;
    let da = dist(need_vec(&s.a1, "mean a1")?, need_vec(&s.a2, "mean a2")?);
    let df = need(second, "nu(df;2)")?;
    let terms = vec![
      term("6|dx|^2", 6.0 * dx * dx),
      term("6T^2 C2(V2) |da|^2", 6.0 * t * cv * da * da * t),
      term("12 C0 T C2(V2) |dSigma|^2", 12.0 * s.c0 * t * cv * s.delta_sigma * s.delta_sigma),
      term("12 C0 T C2(V2) nu(df;2)", 12.0 * s.c0 * t * cv * df),
    ];
    Ok(report(CouplingKind::Thinning, 2, t, eta, terms, vec![term("C2(Y2)", cy), term("C2(V2)", cv), term("C0", s.c0), term("K", s.lipschitz)]))
  } else {
    let (cy, computed) = first_order_constants(s, t)?;
    let cv = s.c_v2.unwrap_or(computed);
    let eta = eta1(s, t)?;
    let db = dist(need_vec(&s.b1, "natural drift b1")?, need_vec(&s.b2, "natural drift b2")?);
    let df = need(first, "nu(df;1)")?;
    let terms = vec![term("|dx|", dx), term("T C1(V2) |db|", t * cv * db), term("T C1(V2) nu(df;1)", t * cv * df)];
    Ok(report(CouplingKind::Thinning, 1, t, eta, terms, vec![term("C1(Y2)", cy), term("C1(V2)", cv), term("K", s.lipschitz)]))
  }
}

/// Bound on `E‖Δ𝒴‖^order_{[0,T]}` under the comonotonic coupling.
pub fn gronwall_bound_como(s: &DriverSummary, t: f64, order: u8) -> Result<BoundReport> {
  check_horizon(t, s)?;
  check_order(order)?;
  let (first, second) = match s.cross {
    CrossTerms::Comonotonic { first, second } => (first, second),
    CrossTerms::Thinning { .. } => return Err(Error::InvalidInput("summary carries thinning cross terms".into())),
  };
  let dx = dist(&s.x1, &s.x2);
  if order == 2 {
    let (cy, computed) = second_order_constants(s, t)?;
    let cv = s.c_v2.unwrap_or(computed);
    let eta = eta2(s, t)?;
    let da = dist(need_vec(&s.a1, "mean a1")?, need_vec(&s.a2, "mean a2")?);
    let dr = need(second, "mu(|d rho|^2)")?;
    let terms = vec![
      term("6|dx|^2", 6.0 * dx * dx),
      term("6T^2 C2(V2) |da|^2", 6.0 * t * cv * t * da * da),
      term("12 C0 T C2(V2) |dSigma|^2", 12.0 * s.c0 * t * cv * s.delta_sigma * s.delta_sigma),
      term("6 C0 T C2(V2) mu(|d rho|^2)", 6.0 * s.c0 * t * cv * dr),
    ];
    Ok(report(CouplingKind::Comonotonic, 2, t, eta, terms, vec![term("C2(Y2)", cy), term("C2(V2)", cv), term("C0", s.c0), term("K", s.lipschitz)]))
  } else {
    if s.sigma1 != 0.0 || s.sigma2 != 0.0 {
      return Err(Error::InvalidInput("the order-1 bound needs Sigma_1 = Sigma_2 = 0".into()));
    }
    let (cy, computed) = first_order_constants(s, t)?;
    let cv = s.c_v2.unwrap_or(computed);
    let eta = eta1(s, t)?;
    let db = dist(need_vec(&s.b1, "natural drift b1")?, need_vec(&s.b2, "natural drift b2")?);
    let dr = need(first, "mu(|d rho|)")?;
    let terms = vec![term("|dx|", dx), term("T C1(V2) |db|", t * cv * db), term("C0 T C1(V2) mu(|d rho|)", s.c0 * t * cv * dr)];
    Ok(report(CouplingKind::Comonotonic, 1, t, eta, terms, vec![term("C1(Y2)", cy), term("C1(V2)", cv), term("C0", s.c0), term("K", s.lipschitz)]))
  }
}

/// Multiplier `M` in `W_q(𝒳, 𝒵) ≤ M (|Δy| + W_q(X, Z))` for the additive
/// equation with a `K`-Lipschitz drift on `[0, T]`.
pub fn additive_wasserstein_factor(q: f64, k: f64, t: f64) -> Result<f64> {
  if q > 1.0 {
    return Err(Error::Unsupported(format!("q = {q} > 1")));
  }
  if !(q > 0.0) || !(k > 0.0) || !(t > 0.0) || !k.is_finite() || !t.is_finite() {
    return Err(Error::Domain(format!("need q in (0,1] and K, T > 0, got q={q}, K={k}, T={t}")));
  }
  if q == 1.0 {
    return Ok((k * t).exp());
  }
  let n = (t * k * 2f64.powf(1.0 / q)).ceil();
  Ok(n * (n + 1.0) * 2f64.powf(n - 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateRegime {
  Dona,
  Donna,
}

/// Which statement of the rate to evaluate where the two disagree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateForm {
  /// Minimum-exponent form.
  #[default]
  Theorem,
  /// Sum form with the drift term kept separately.
  Table,
}

/// Regime-resolved rate function `f(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
  pub regime: RateRegime,
  pub coupling: CouplingKind,
  pub alpha: f64,
  #[serde(default)]
  pub p: f64,
  #[serde(default, skip_serializing_if = "Option::is_none")]
  pub delta: Option<f64>,
  #[serde(default)]
  pub balanced: bool,
  #[serde(default, skip_serializing_if = "Option::is_none")]
  pub bundle: Option<BundleSpec>,
  #[serde(default)]
  pub form: RateForm,
}

const KNEE_TOL: f64 = 1e-12;

impl RateSpec {
  pub fn validate(&self) -> Result<()> {
    if !(self.alpha > 0.0 && self.alpha < 2.0) || self.alpha == 1.0 {
      return Err(Error::Unsupported(format!("no rate for alpha = {}", self.alpha)));
    }
    if self.coupling == CouplingKind::Independent {
      return Err(Error::Unsupported("no rate for the independent coupling".into()));
    }
    match self.regime {
      RateRegime::Dona if !(self.p > 0.0) => Err(Error::InvalidInput(format!("DoNA rates need p > 0, got {}", self.p))),
      RateRegime::Donna if self.bundle.is_none() => Err(Error::InvalidInput("DoNNA rates need a bundle".into())),
      _ => Ok(()),
    }
  }

  /// Exponent of the power part of `f` (DoNA only).
  pub fn exponent(&self) -> Result<f64> {
    self.validate()?;
    if self.regime != RateRegime::Dona {
      return Err(Error::Unsupported("DoNNA rates are not powers".into()));
    }
    let a = self.alpha;
    let unbalanced = a > 1.0 && !self.balanced;
    let main = match self.coupling {
      CouplingKind::Thinning => self.p / (ceil_alpha(a) * a),
      _ => self.p / a,
    };
    Ok(if unbalanced { main.min(1.0 - 1.0 / a) } else { main })
  }

  pub fn at(&self, t: f64) -> Result<f64> {
    rate_function(self, t)
  }
}

/// `f(t)` for `t ∈ (0, 1]`.
pub fn rate_function(r: &RateSpec, t: f64) -> Result<f64> {
  r.validate()?;
  if !(t > 0.0 && t <= 1.0) {
    return Err(Error::Domain(format!("rate functions live on (0, 1], got t = {t}")));
  }
  let a = r.alpha;
  match r.regime {
    RateRegime::Donna => {
      let bundle = SlowVariationBundle::catalog(r.bundle.as_ref().expect("validated"))?;
      match r.coupling {
        CouplingKind::Thinning => {
          let (g, _) = bundle.normalizing_g(a, t)?;
          Ok(bundle.h2(g).powf(1.0 / ceil_alpha(a)))
        }
        _ => Ok(bundle.g2(t)),
      }
    }
    RateRegime::Dona => {
      let knee = if (r.p - (a - 1.0)).abs() <= KNEE_TOL { 1.0 + t.ln().abs() } else { 1.0 };
      let main = match r.coupling {
        CouplingKind::Thinning => r.p / (ceil_alpha(a) * a),
        _ => r.p / a,
      };
      if a < 1.0 || r.balanced {
        return Ok(t.powf(main));
      }
      let drift = 1.0 - 1.0 / a;
      Ok(match r.form {
        RateForm::Theorem => t.powf(main.min(drift)) * knee,
        RateForm::Table => t.powf(main) + t.powf(drift) * knee,
      })
    }
  }
}

/// Numerical check of the balancing condition of either coupling: zero
/// mean, `∫ v σ(dv) = 0`, and `∫ v ρ([x,∞), v) σ(dv) = 0` (thinning) or
/// `∫ v ρ^←(x, v) σ(dv) = 0` (comonotonic) on a grid of `x`, to `1e-10`.
pub fn balancing_holds(spec: &AugmentedSpec, coupling: CouplingKind) -> Result<bool> {
  let driver = LevyDriver::from_augmented(spec)?;
  if spec.mean_vector().iter().any(|m| m.abs() > 1e-10) || !spec.base.sigma.is_balanced() {
    return Ok(false);
  }
  for k in 0..25 {
    let x = 10f64.powf(-6.0 + 0.5 * k as f64);
    let mut acc = vec![0.0; spec.dimension()];
    let mut scale = 0.0;
    for c in driver.classes() {
      let v = match coupling {
        CouplingKind::Comonotonic => driver.radial.inverse(x, c.dir())?,
        _ => driver.radial.tail(x, c.dir()),
      };
      for (a, m) in acc.iter_mut().zip(&c.mean) {
        *a += m * v;
      }
      scale += c.weight * v.abs();
    }
    if acc.iter().any(|a| a.abs() > 1e-10 * scale.max(1e-300)) {
      return Ok(false);
    }
  }
  Ok(true)
}

// Differences of two numerically inverted tails carry ~1e-14 relative noise
// on top of a signal that shrinks with t.
const INVERSE_TOL: Tolerance = Tolerance { rel: 1e-6, abs: 1e-300, max_intervals: 4000 };

/// Outcome of [`discrepancy_integrals`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
  pub t: f64,
  pub lhs: f64,
  pub envelope: f64,
  pub drift_gap: f64,
}

impl Discrepancy {
  /// `lhs / envelope`, `NaN` when both vanish.
  pub fn ratio(&self) -> f64 {
    self.lhs / self.envelope
  }
}

/// Exponent `p` of `|c_α/α − x^α ρ([x,∞))/H(x)| ≲ 1 ∧ x^p` for catalog
/// drivers: integrating a `1 ∧ x^p` density defect over `[x, ∞)` caps the
/// tail defect exponent at `α`.
pub fn comonotonic_p(spec: &AugmentedSpec) -> Result<f64> {
  if spec.is_pure_stable() {
    return Ok(f64::INFINITY);
  }
  let p = match spec.regime()? {
    crate::levy_model::Regime::Dona(d) => d.p,
    crate::levy_model::Regime::Donna(_) => f64::INFINITY,
  };
  Ok(p.min(spec.alpha()))
}

/// Tempered discrepancy between the rescaled driver `X_t` and its stable
/// attractor `Z`, its envelope, and the gap between the tempered means.
pub fn discrepancy_integrals(spec: &AugmentedSpec, t: f64, theta: f64, r: f64, coupling: CouplingKind) -> Result<Discrepancy> {
  let alpha = spec.alpha();
  check_alpha(alpha)?;
  if !(theta > 0.0) {
    return Err(Error::Domain(format!("theta must be positive, got {theta}")));
  }
  if !(r > alpha) {
    return Err(Error::Domain(format!("the discrepancy integral diverges for r = {r} <= alpha = {alpha}")));
  }
  if !(t > 0.0 && t <= 1.0) {
    return Err(Error::Domain(format!("t must lie in (0, 1], got {t}")));
  }
  let bundle = spec.bundle()?;
  if spec.is_pure_stable() {
    return Ok(Discrepancy { t, lhs: 0.0, envelope: 0.0, drift_gap: 0.0 });
  }
  let x = LevyDriver::from_augmented(spec)?;
  let z = LevyDriver::from_augmented(&spec.attractor())?;
  let (g, _) = bundle.normalizing_g(alpha, t)?;
  let xt = x.rescaled(t, g)?;
  let mean_x = spec.mean_vector();
  let classes = xt.classes().to_vec();
  let mut lhs = 0.0;
  let mut gap = vec![0.0; spec.dimension()];
  // E[X^c(1)] contributes t/g times itself to the α > 1 gap.
  if alpha > 1.0 {
    for (gi, m) in gap.iter_mut().zip(&mean_x) {
      *gi += t / g * m;
    }
  }
  match coupling {
    CouplingKind::Thinning => {
      for c in &classes {
        let dir = c.dir();
        let breaks = radial_breaks(&[xt.radial.as_ref(), z.radial.as_ref()], c);
        // dν_{X_t}/dν_Z (w) = H(g|w|)/H(g) h(g w)
        let h_g = bundle.h(g);
        let diff = |w: f64| {
          let hr = bundle.h(g * w) / h_g;
          z.radial.density(w, dir) * ((hr - 1.0) + hr * spec.small_h_defect(g * w, dir))
        };
        let damp = |w: f64| if w >= 1.0 { (-theta * w).exp() } else { 1.0 };
        lhs += c.weight * half_line(|w| w.powf(r) * damp(w) * diff(w).abs(), &breaks)?;
        if c.mean.iter().all(|m| *m == 0.0) {
          continue;
        }
        let m = if alpha < 1.0 {
          half_line(|w| w * damp(w) * diff(w), &breaks)?
        } else {
          let upper: Vec<f64> = breaks.iter().cloned().filter(|b| *b > 1.0).collect();
          let mut pts = vec![1.0];
          pts.extend(upper);
          let f = |w: f64| w * ((-theta * w).exp() - 1.0) * diff(w);
          let tol = Tolerance::default();
          let mut s = quadrature::integrate_to_inf(f, pts[pts.len() - 1], tol)?;
          for p in pts.windows(2) {
            s += quadrature::integrate_log(f, p[0], p[1], tol)?;
          }
          s
        };
        for (gi, mi) in gap.iter_mut().zip(&c.mean) {
          *gi += mi * m;
        }
      }
    }
    CouplingKind::Comonotonic => {
      for c in &classes {
        let dir = c.dir();
        let weight = |u: f64| if u < 1.0 { (-theta / u).exp() } else { 1.0 };
        let diff = |u: f64| -> f64 {
          match (xt.radial.inverse(u, dir), z.radial.inverse(u, dir)) {
            (Ok(a), Ok(b)) => a - b,
            _ => f64::NAN,
          }
        };
        let mut breaks = vec![t.min(1.0), 1.0];
        breaks.dedup();
        let integrand = |u: f64| {
          let w = weight(u);
          if w == 0.0 {
            0.0
          } else {
            w * diff(u).abs().powf(r)
          }
        };
        let v = half_line_tol(integrand, &breaks, INVERSE_TOL)?;
        if v.is_nan() {
          return Err(Error::numeric("radial inverse failed in the comonotonic discrepancy", vec![("t", t)]));
        }
        lhs += c.weight * v;
        if c.mean.iter().all(|m| *m == 0.0) {
          continue;
        }
        let m = if alpha < 1.0 {
          half_line_tol(|u| if weight(u) == 0.0 { 0.0 } else { weight(u) * diff(u) }, &breaks, INVERSE_TOL)?
        } else {
          let f = |u: f64| (-theta / u).exp_m1() * diff(u);
          let tol = INVERSE_TOL;
          let mut s = quadrature::integrate_from_zero(f, breaks[0], tol)?;
          if breaks.len() > 1 {
            s += quadrature::integrate_log(f, breaks[0], 1.0, tol)?;
          }
          s
        };
        if m.is_nan() {
          return Err(Error::numeric("radial inverse failed in the comonotonic drift gap", vec![("t", t)]));
        }
        for (gi, mi) in gap.iter_mut().zip(&c.mean) {
          *gi += mi * m;
        }
      }
    }
    CouplingKind::Independent => return Err(Error::Unsupported("no discrepancy integral for the independent coupling".into())),
  }
  let pow0 = |base: f64, e: f64| if e.is_infinite() { 0.0 } else { base.powf(e) };
  let envelope = match coupling {
    CouplingKind::Thinning => {
      let p = match spec.regime()? {
        crate::levy_model::Regime::Dona(d) => d.p,
        crate::levy_model::Regime::Donna(_) => f64::INFINITY,
      };
      bundle.h2(g) + pow0(g, p)
    }
    _ => {
      let p = comonotonic_p(spec)?;
      let delta = spec.delta.unwrap_or(f64::INFINITY);
      let g2 = if bundle.is_constant() { 0.0 } else { bundle.g2(t) };
      g2.powf(r) + pow0(g, r * p) + pow0(t, r * delta)
    }
  };
  Ok(Discrepancy { t, lhs, envelope, drift_gap: len(&gap) })
}

#[cfg(test)]
mod tests {
  use super::*;
  use crate::levy_model::{AngularMeasure, Atom, StableSpec};

  fn zero_summary(cross: CrossTerms) -> DriverSummary {
    DriverSummary {
      x1: vec![0.5],
      x2: vec![0.5],
      v_x2: 1.0,
      lipschitz: 1.0,
      a1: Some(vec![0.0]),
      a2: Some(vec![0.0]),
      b1: Some(vec![0.0]),
      b2: Some(vec![0.0]),
      sigma1: 0.0,
      sigma2: 0.0,
      delta_sigma: 0.0,
      nu1: Moments { first: Some(1.0), second: Some(1.0) },
      nu2: Moments { first: Some(1.0), second: Some(1.0) },
      cross,
      c0: 4.0,
      c_v2: None,
      k_squared: false,
    }
  }

  #[test]
  fn identical_drivers_give_zero_bound() {
    let s = zero_summary(CrossTerms::Thinning { first: Some(0.0), second: Some(0.0) });
    for order in [1, 2] {
      assert_eq!(gronwall_bound_thinning(&s, 1.0, order).unwrap().bound, 0.0);
    }
    let s = zero_summary(CrossTerms::Comonotonic { first: Some(0.0), second: Some(0.0) });
    for order in [1, 2] {
      assert_eq!(gronwall_bound_como(&s, 1.0, order).unwrap().bound, 0.0);
    }
  }

  #[test]
  fn first_order_thinning_arithmetic() {
    let mut s = zero_summary(CrossTerms::Thinning { first: Some(0.1), second: Some(0.0) });
    s.c_v2 = Some(2.0);
    let r = gronwall_bound_thinning(&s, 1.0, 1).unwrap();
    assert!((r.kappa - 0.2).abs() < 1e-15);
    assert!((r.eta - 1.0).abs() < 1e-15);
    assert!((r.bound - 0.2 * std::f64::consts::E).abs() < 1e-15);
  }

  #[test]
  fn second_order_comonotonic_arithmetic() {
    let mut s = zero_summary(CrossTerms::Comonotonic { first: None, second: Some(0.04) });
    s.c_v2 = Some(3.0);
    let r = gronwall_bound_como(&s, 1.0, 2).unwrap();
    assert!((r.kappa - 2.88).abs() < 1e-12);
  }

  #[test]
  fn missing_integral_is_named() {
    let s = zero_summary(CrossTerms::Thinning { first: Some(0.1), second: None });
    let msg = gronwall_bound_thinning(&s, 1.0, 2).unwrap_err().to_string();
    assert!(msg.contains("nu(df;2)"), "{msg}");
    let mut s = zero_summary(CrossTerms::Thinning { first: Some(0.1), second: Some(0.1) });
    s.nu2.second = None;
    let msg = gronwall_bound_thinning(&s, 1.0, 2).unwrap_err().to_string();
    assert!(msg.contains("nu_2(1;2)"), "{msg}");
  }

  #[test]
  fn wasserstein_factors() {
    assert!((additive_wasserstein_factor(1.0, 1.0, 1.0).unwrap() - std::f64::consts::E).abs() < 1e-15);
    assert_eq!(additive_wasserstein_factor(0.5, 1.0, 1.0).unwrap(), 160.0);
    // 2^{1/0.9} = 2.16012, so N = 3
    assert!((2f64.powf(1.0 / 0.9) - 2.160_119_477_784_612).abs() < 1e-12);
    assert_eq!(additive_wasserstein_factor(0.9, 2.0, 0.5).unwrap(), 48.0);
    assert!(matches!(additive_wasserstein_factor(1.5, 1.0, 1.0), Err(Error::Unsupported(_))));
  }

  fn dona(coupling: CouplingKind, alpha: f64, p: f64, balanced: bool) -> RateSpec {
    RateSpec { regime: RateRegime::Dona, coupling, alpha, p, delta: None, balanced, bundle: None, form: RateForm::Theorem }
  }

  #[test]
  fn comonotonic_rate_examples() {
    let t = 0.01f64;
    let f = rate_function(&dona(CouplingKind::Comonotonic, 0.7, 1.0, false), t).unwrap();
    assert!((f - t.powf(10.0 / 7.0)).abs() < 1e-15);
    let f = rate_function(&dona(CouplingKind::Comonotonic, 1.5, 0.25, false), t).unwrap();
    assert!((f - t.powf(1.0 / 6.0)).abs() < 1e-15);
    let e1 = (-1f64).exp();
    let f = rate_function(&dona(CouplingKind::Comonotonic, 1.5, 0.5, false), e1).unwrap();
    assert!((f - 2.0 * (-1.0f64 / 3.0).exp()).abs() < 1e-14);
  }

  #[test]
  fn knee_switches_exactly() {
    let t = 0.01f64;
    let at = |p: f64| rate_function(&dona(CouplingKind::Comonotonic, 1.5, p, false), t).unwrap();
    let base = t.powf(1.0 / 3.0);
    assert!((at(0.5) / base - (1.0 + t.ln().abs())).abs() < 1e-12);
    // just off the knee the minimum picks the drift exponent 1/3 without the log
    assert!((at(0.5 + 1e-9) / base - 1.0).abs() < 1e-9);
    assert!((at(0.5 - 1e-9) / t.powf((0.5 - 1e-9) / 1.5) - 1.0).abs() < 1e-12);
  }

  #[test]
  fn thinning_and_table_forms() {
    let t = 1e-3f64;
    let th = dona(CouplingKind::Thinning, 1.5, 0.4, false);
    assert!((rate_function(&th, t).unwrap() - t.powf((0.4f64 / 3.0).min(1.0 / 3.0))).abs() < 1e-15);
    let table = RateSpec { form: RateForm::Table, ..th.clone() };
    assert!((rate_function(&table, t).unwrap() - (t.powf(0.4 / 3.0) + t.powf(1.0 / 3.0))).abs() < 1e-15);
    let bal = dona(CouplingKind::Thinning, 1.5, 0.4, true);
    assert!((rate_function(&bal, t).unwrap() - t.powf(0.4 / 3.0)).abs() < 1e-15);
    assert!(matches!(rate_function(&dona(CouplingKind::Thinning, 1.0, 1.0, false), t), Err(Error::Unsupported(_))));
    assert!(matches!(rate_function(&dona(CouplingKind::Thinning, 2.0, 1.0, false), t), Err(Error::Unsupported(_))));
  }

  #[test]
  fn donna_thinning_rate_uses_normalizer() {
    let r = RateSpec {
      regime: RateRegime::Donna,
      coupling: CouplingKind::Thinning,
      alpha: 0.7,
      p: 0.0,
      delta: None,
      balanced: false,
      bundle: Some(BundleSpec::IteratedLog { n: 1 }),
      form: RateForm::Theorem,
    };
    let t = 1e-4f64;
    // oracle: g solves g (log(e + 1/g))^{-1/α} = t^{1/α} by bisection in ln g
    let phi = |y: f64| y - (std::f64::consts::E + (-y).exp()).ln().ln() / 0.7 - t.ln() / 0.7;
    let (mut lo, mut hi) = (-200.0, 0.0);
    for _ in 0..200 {
      let mid = 0.5 * (lo + hi);
      if phi(mid) < 0.0 {
        lo = mid
      } else {
        hi = mid
      }
    }
    let g = (0.5 * (lo + hi)).exp();
    let h2 = 1.0 / (std::f64::consts::E + (std::f64::consts::E + 1.0 / g).ln());
    assert!((rate_function(&r, t).unwrap() - h2).abs() < 1e-10);
  }

  fn tempered(alpha: f64, lambda: f64) -> AugmentedSpec {
    AugmentedSpec::tempered(StableSpec::unit_symmetric_1d(alpha).unwrap(), lambda).unwrap()
  }

  #[test]
  fn stable_against_itself_has_no_discrepancy() {
    let s = tempered(0.7, 0.0);
    for coupling in [CouplingKind::Thinning, CouplingKind::Comonotonic] {
      for t in [1e-1, 1e-4] {
        let d = discrepancy_integrals(&s, t, 1.0, 1.0, coupling).unwrap();
        assert_eq!(d.lhs, 0.0);
        assert_eq!(d.drift_gap, 0.0);
      }
    }
  }

  #[test]
  fn thinning_discrepancy_ratio_limit() {
    // limit c_α(1/1.3 + Γ(1.3, 1)) at α = 0.7, λ = θ = r = 1, evaluated with mpmath
    let d = discrepancy_integrals(&tempered(0.7, 1.0), 1e-6, 1.0, 1.0, CouplingKind::Thinning).unwrap();
    assert!((d.ratio() - 0.625083342828027).abs() < 1e-6, "{}", d.ratio());
  }

  #[test]
  fn r_at_most_alpha_is_refused() {
    assert!(discrepancy_integrals(&tempered(1.5, 1.0), 0.1, 1.0, 1.0, CouplingKind::Thinning).is_err());
  }

  #[test]
  fn balanced_symmetric_pair_has_no_drift_gap() {
    let sigma = AngularMeasure::Atoms { atoms: vec![Atom { direction: vec![1.0], weight: 0.5 }, Atom { direction: vec![-1.0], weight: 0.5 }] };
    let spec = AugmentedSpec::tempered(StableSpec::new(1.5, 1.0, sigma).unwrap(), 2.0).unwrap();
    for coupling in [CouplingKind::Thinning, CouplingKind::Comonotonic] {
      assert!(balancing_holds(&spec, coupling).unwrap());
      let d = discrepancy_integrals(&spec, 1e-2, 1.0, 2.0, coupling).unwrap();
      assert!(d.drift_gap < 1e-12, "{d:?}");
      assert!(d.lhs > 0.0);
    }
    let one_sided = AugmentedSpec::tempered(StableSpec::new(1.5, 1.0, AngularMeasure::Atoms { atoms: vec![Atom { direction: vec![1.0], weight: 1.0 }] }).unwrap(), 2.0).unwrap();
    assert!(!balancing_holds(&one_sided, CouplingKind::Thinning).unwrap());
    assert!(discrepancy_integrals(&one_sided, 1e-2, 1.0, 2.0, CouplingKind::Thinning).unwrap().drift_gap > 0.0);
  }

  #[test]
  fn thinning_cross_term_matches_closed_form() {
    let x1 = LevyDriver::from_augmented(&tempered(0.7, 1.0)).unwrap();
    let x2 = LevyDriver::from_augmented(&tempered(0.7, 2.0)).unwrap();
    let c = crate::levy_model::unit_scale_intensity(0.7);
    // ∫ x^{−α}(e^{−x} − e^{−2x}) dx = Γ(1−α)(1 − 2^{α−1})
    let exact = c * statrs::function::gamma::gamma(0.3) * (1.0 - 2f64.powf(-0.3));
    let v = thinning_cross_term(&x1, &x2, 1.0).unwrap();
    assert!((v - exact).abs() < 1e-7 * exact, "{v} vs {exact}");
    // the stable attractor has no first moment
    let z = LevyDriver::from_augmented(&tempered(0.7, 0.0)).unwrap();
    assert!(thinning_cross_term(&x1, &z, 1.0).is_err());
  }

  #[test]
  fn comonotonic_first_moment_equals_tail_distance() {
    // μ(|Δρ^←|) = ∫|ρ₁([x,∞)) − ρ₂([x,∞))| dx for monotone pairs
    let a = ExpPair::new();
    let v = comonotonic_cross_term(&a.0, &a.1, 1.0).unwrap();
    let t1 = |x: f64| if x < 1.0 { 5.0 * (1.0 - x.max(0.5)) / 0.5 } else { 0.0 };
    let t2 = |x: f64| if x < 1.0 { 3.0 * (1.0 - x.max(0.5)) / 0.5 } else { 0.0 };
    let exact = quadrature::integrate(|x| (t1(x) - t2(x)).abs(), 0.0, 1.0, Tolerance::default()).unwrap();
    // each direction carries weight one half and both directions agree
    assert!((v - exact).abs() < 1e-8, "{v} vs {exact}");
  }

  struct ExpPair(LevyDriver, LevyDriver);
  impl ExpPair {
    fn new() -> Self {
      use crate::levy_model::ExpTiltedUniform;
      let u = |k: f64| LevyDriver::compound_poisson(AngularMeasure::symmetric_1d(), ExpTiltedUniform { k, lo: 0.5, hi: 1.0, tilt: 0.0 }).unwrap();
      ExpPair(u(10.0), u(6.0))
    }
  }

  #[test]
  fn summary_round_trips_through_json() {
    let s = zero_summary(CrossTerms::Comonotonic { first: Some(0.3), second: None });
    let text = serde_json::to_string(&s).unwrap();
    let back: DriverSummary = serde_json::from_str(&text).unwrap();
    assert_eq!(s, back);
  }
}
