use std::sync::Arc;

use rand::Rng;

use super::angular::{AngularMeasure, Dependence, Dir, DirectionClass};
use super::radial::{radial_law, ExpTiltedUniform, FoldedRadial, RadialLaw, ScaledRadial};
use super::spec::AugmentedSpec;
use crate::error::{Error, Result};

/// How the drift of a driver is pinned down.
#[derive(Clone, Debug, PartialEq)]
pub enum DriftConvention {
  /// Pure sum of jumps (finite variation, α < 1 or finite activity).
  ZeroNaturalDrift,
  /// `E[Y(1)] = a`; small jumps are compensated (α > 1).
  Mean(Vec<f64>),
}

/// A pure-jump Lévy driver `ν(dw) = ∫ σ(dv) ρ(dx, v)` with a drift convention.
#[derive(Clone, Debug)]
pub struct LevyDriver {
  pub sigma: AngularMeasure,
  pub radial: Arc<dyn RadialLaw>,
  pub drift: DriftConvention,
  classes: Vec<DirectionClass>,
}

impl LevyDriver {
  pub fn new(sigma: AngularMeasure, radial: Arc<dyn RadialLaw>, drift: DriftConvention) -> Result<Self> {
    sigma.validate()?;
    let classes = sigma.classes(&radial.dependence())?;
    if let DriftConvention::Mean(a) = &drift {
      if a.len() != sigma.dimension() {
        return Err(Error::InvalidSpec("driver mean has wrong dimension".into()));
      }
    }
    Ok(LevyDriver { sigma, radial, drift, classes })
  }

  pub fn from_augmented(spec: &AugmentedSpec) -> Result<Self> {
    spec.validate()?;
    let drift = if spec.alpha() < 1.0 { DriftConvention::ZeroNaturalDrift } else { DriftConvention::Mean(spec.mean_vector()) };
    LevyDriver::new(spec.base.sigma.clone(), radial_law(spec)?, drift)
  }

  /// Compound-Poisson driver with radial part `k e^{−tilt(x−lo)}` on `[lo, hi]`.
  pub fn compound_poisson(sigma: AngularMeasure, radial: ExpTiltedUniform) -> Result<Self> {
    LevyDriver::new(sigma, Arc::new(radial), DriftConvention::ZeroNaturalDrift)
  }

  /// The driver of `X_t(s) = X(st)/g`.
  pub fn rescaled(&self, t: f64, g: f64) -> Result<Self> {
    if !(t > 0.0 && g > 0.0) {
      return Err(Error::Domain(format!("rescaling needs t, g > 0, got t={t}, g={g}")));
    }
    let drift = match &self.drift {
      DriftConvention::ZeroNaturalDrift => DriftConvention::ZeroNaturalDrift,
      DriftConvention::Mean(a) => DriftConvention::Mean(a.iter().map(|x| x * t / g).collect()),
    };
    LevyDriver::new(self.sigma.clone(), Arc::new(ScaledRadial { base: self.radial.clone(), t, g }), drift)
  }

  /// The same Lévy measure written over another atomic angular measure:
  /// atom `j` of `sigma` carries radial weight `weights[j]` and reads the
  /// base law at atom `index[j]`.
  pub fn folded(&self, sigma: AngularMeasure, weights: Vec<f64>, index: Vec<usize>) -> Result<Self> {
    let n = sigma.atoms().map_or(0, |a| a.len());
    if weights.len() != n || index.len() != n {
      return Err(Error::InvalidSpec("folding needs one weight and one index per atom".into()));
    }
    LevyDriver::new(sigma, Arc::new(FoldedRadial { base: self.radial.clone(), weights, index }), self.drift.clone())
  }

  pub fn dimension(&self) -> usize {
    self.sigma.dimension()
  }

  pub fn classes(&self) -> &[DirectionClass] {
    &self.classes
  }

  pub fn stable_index(&self) -> Option<f64> {
    self.radial.stable_index()
  }

  /// `ν({|w| ≥ eps})`.
  pub fn mass_above(&self, eps: f64) -> f64 {
    self.classes.iter().map(|c| c.weight * self.radial.tail(eps, c.dir())).sum()
  }

  /// `max_v ρ([eps, ∞), v)` over the direction classes.
  pub fn max_tail(&self, eps: f64) -> f64 {
    self.classes.iter().map(|c| self.radial.tail(eps, c.dir())).fold(0.0, f64::max)
  }

  /// `∫_{a ≤ |w| < b} |w|^k ν(dw)`.
  pub fn abs_moment(&self, k: f64, a: f64, b: f64) -> Result<f64> {
    let mut total = 0.0;
    for c in &self.classes {
      total += c.weight * self.radial.partial_moment(k, a, b, c.dir())?;
    }
    Ok(total)
  }

  /// `∫_{a ≤ |w| < b} w ν(dw)`.
  pub fn vector_moment(&self, a: f64, b: f64) -> Result<Vec<f64>> {
    let mut m = vec![0.0; self.dimension()];
    for c in &self.classes {
      if c.mean.iter().all(|x| *x == 0.0) {
        continue;
      }
      let r = self.radial.partial_moment(1.0, a, b, c.dir())?;
      for (mi, ci) in m.iter_mut().zip(&c.mean) {
        *mi += ci * r;
      }
    }
    Ok(m)
  }

  /// Drift per unit time of the truncated stream at level `eps`.
  pub fn compensator(&self, eps: f64) -> Result<Vec<f64>> {
    match &self.drift {
      DriftConvention::ZeroNaturalDrift => Ok(vec![0.0; self.dimension()]),
      DriftConvention::Mean(a) => {
        let big = self.vector_moment(eps, f64::INFINITY)?;
        Ok(a.iter().zip(&big).map(|(ai, bi)| ai - bi).collect())
      }
    }
  }

  /// Drift per unit time when only jumps with `ρ([|w|,∞), v) ≤ lambda` are
  /// kept, i.e. the epoch-truncated stream of the comonotonic coupling.
  pub fn compensator_at_epoch(&self, lambda: f64) -> Result<Vec<f64>> {
    match &self.drift {
      DriftConvention::ZeroNaturalDrift => Ok(vec![0.0; self.dimension()]),
      DriftConvention::Mean(a) => {
        let mut out = a.clone();
        for c in &self.classes {
          if c.mean.iter().all(|x| *x == 0.0) {
            continue;
          }
          let r = self.radial.inverse(lambda, c.dir())?;
          let m = self.radial.partial_moment(1.0, r, f64::INFINITY, c.dir())?;
          for (o, ci) in out.iter_mut().zip(&c.mean) {
            *o -= ci * m;
          }
        }
        Ok(out)
      }
    }
  }

  /// Density of `ν` at `x·v` against `σ_ref ⊗ dx`, where `σ_ref` is counting
  /// measure on atoms or the uniform law on the sphere.
  pub fn point_density(&self, x: f64, v: &[f64]) -> f64 {
    match &self.sigma {
      AngularMeasure::Uniform { .. } => self.radial.density(x, Dir { atom: 0, v }),
      AngularMeasure::Atoms { atoms } => match self.sigma.atom_index(v) {
        Some(i) => atoms[i].weight * self.radial.density(x, Dir { atom: i, v }),
        None => 0.0,
      },
    }
  }

  /// Natural drift `b` (finite-variation drivers) or `None` when α > 1.
  pub fn natural_drift(&self) -> Option<Vec<f64>> {
    match &self.drift {
      DriftConvention::ZeroNaturalDrift => Some(vec![0.0; self.dimension()]),
      DriftConvention::Mean(_) => None,
    }
  }

  /// Mean `a = E[Y(1)]`, when finite.
  pub fn mean(&self) -> Result<Vec<f64>> {
    match &self.drift {
      DriftConvention::Mean(a) => Ok(a.clone()),
      DriftConvention::ZeroNaturalDrift => {
        let finite = self.abs_moment(1.0, 0.0, f64::INFINITY)?;
        if !finite.is_finite() {
          return Err(Error::InvalidInput("driver has no finite mean".into()));
        }
        self.vector_moment(0.0, f64::INFINITY)
      }
    }
  }

  /// Draws a direction of `ν` restricted to `{|w| ≥ eps}`; returns the atom.
  pub fn sample_direction<R: Rng + ?Sized>(&self, rng: &mut R, eps: f64, out: &mut [f64]) -> usize {
    match (&self.sigma, self.radial.dependence()) {
      (AngularMeasure::Uniform { .. }, Dependence::Isotropic) => self.sigma.sample(rng, out),
      (AngularMeasure::Uniform { .. }, _) => {
        let cap = self.max_tail(eps);
        loop {
          let atom = self.sigma.sample(rng, out);
          let w = self.radial.tail(eps, Dir { atom, v: out });
          if rng.random::<f64>() * cap < w {
            return atom;
          }
        }
      }
      (AngularMeasure::Atoms { atoms }, _) => {
        let total = self.mass_above(eps);
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = atoms.len() - 1;
        for (i, c) in self.classes.iter().enumerate() {
          acc += c.weight * self.radial.tail(eps, c.dir());
          if u < acc {
            pick = i;
            break;
          }
        }
        out.copy_from_slice(&atoms[pick].direction);
        pick
      }
    }
  }
}

/// `(l1, l2) = (∫_{|w|<eps} |w| ν(dw), ∫_{|w|<eps} |w|² ν(dw))`; `l1 = +∞`
/// for infinite-activity drivers with α > 1.
pub fn truncation_error(driver: &LevyDriver, eps: f64) -> Result<(f64, f64)> {
  if !(eps > 0.0) {
    return Err(Error::Domain(format!("truncation level must be positive, got {eps}")));
  }
  let l1 = match driver.stable_index() {
    Some(a) if a > 1.0 => f64::INFINITY,
    _ => driver.abs_moment(1.0, 0.0, eps)?,
  };
  Ok((l1, driver.abs_moment(2.0, 0.0, eps)?))
}

#[cfg(test)]
mod tests {
  use super::*;
  use crate::levy_model::spec::StableSpec;

  fn stable(alpha: f64, c: f64) -> LevyDriver {
    let s = StableSpec::new(alpha, c, AngularMeasure::symmetric_1d()).unwrap();
    LevyDriver::from_augmented(&AugmentedSpec::pure_stable(s).unwrap()).unwrap()
  }

  #[test]
  fn closed_form_truncation_errors() {
    let (l1, _) = truncation_error(&stable(0.5, 0.5), 0.01).unwrap();
    assert!((l1 - 0.1).abs() < 1e-14);
    let d = stable(0.7, 1.0);
    let (_, a) = truncation_error(&d, 0.02).unwrap();
    let (_, b) = truncation_error(&d, 0.01).unwrap();
    assert!((b / a - 2f64.powf(-1.3)).abs() < 1e-12);
    assert!(truncation_error(&stable(1.5, 1.0), 0.1).unwrap().0.is_infinite());
  }

  #[test]
  fn balanced_compensator_vanishes() {
    let d = stable(1.5, 1.0);
    assert!(d.compensator(0.01).unwrap().iter().all(|x| x.abs() < 1e-15));
  }

  #[test]
  fn one_sided_compensator_removes_large_jump_mean() {
    let s = StableSpec::new(1.5, 1.0, AngularMeasure::Atoms { atoms: vec![super::super::angular::Atom { direction: vec![1.0], weight: 1.0 }] }).unwrap();
    let d = LevyDriver::from_augmented(&AugmentedSpec::pure_stable(s).unwrap()).unwrap();
    // −∫_eps^∞ x x^{−2.5} dx = −eps^{−0.5}/0.5
    let comp = d.compensator(0.04).unwrap();
    assert!((comp[0] + 10.0).abs() < 1e-12);
  }

  #[test]
  fn rescaled_mass_scales() {
    let d = stable(0.7, 1.0);
    let t: f64 = 0.01;
    let g = t.powf(1.0 / 0.7);
    let r = d.rescaled(t, g).unwrap();
    assert!((r.mass_above(0.3) / d.mass_above(0.3) - 1.0).abs() < 1e-12);
  }
}
