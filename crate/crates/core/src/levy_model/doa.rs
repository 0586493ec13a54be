use super::angular::{AngularMeasure, Dir};
use super::driver::LevyDriver;
use super::spec::AugmentedSpec;
use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};

/// One row of the tail-limit diagnostic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoaRow {
  pub t: f64,
  /// `t·ν_X(𝓛_v(g(t)))`.
  pub scaled: f64,
  /// `ν_Z(𝓛_v(1))`.
  pub target: f64,
}

impl DoaRow {
  pub fn ratio(&self) -> f64 {
    self.scaled / self.target
  }
}

/// `ν(𝓛_v(r))` with `𝓛_v(r) = {w : <v,w> ≥ r}`.
pub fn halfspace_mass(driver: &LevyDriver, v: &[f64], r: f64) -> Result<f64> {
  let radial = &driver.radial;
  match &driver.sigma {
    AngularMeasure::Atoms { atoms } => Ok(
      atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
          let c: f64 = a.direction.iter().zip(v).map(|(x, y)| x * y).sum();
          if c > 0.0 {
            a.weight * radial.tail(r / c, Dir { atom: i, v: &a.direction })
          } else {
            0.0
          }
        })
        .sum(),
    ),
    AngularMeasure::Uniform { dimension: 1 } => {
      let plus = [1.0];
      let sign = v[0].signum();
      Ok(0.5 * radial.tail(r / v[0].abs(), Dir { atom: 0, v: &[sign * plus[0]] }))
    }
    AngularMeasure::Uniform { dimension: 2 } => {
      let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
      let base = v[1].atan2(v[0]);
      let f = |phi: f64| {
        let u = [(base + phi).cos(), (base + phi).sin()];
        let c = phi.cos() * norm;
        if c <= 0.0 {
          0.0
        } else {
          radial.tail(r / c, Dir { atom: 0, v: &u })
        }
      };
      let half = std::f64::consts::FRAC_PI_2;
      Ok(quadrature::integrate(f, -half, half, Tolerance::default())? / std::f64::consts::TAU)
    }
    AngularMeasure::Uniform { dimension } => {
      if radial.dependence() != super::angular::Dependence::Isotropic {
        return Err(Error::Unsupported("half-space masses for anisotropic laws need d <= 2".into()));
      }
      let d = *dimension as f64;
      use statrs::function::gamma::ln_gamma;
      let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
      let e1: Vec<f64> = v.iter().map(|x| x / norm).collect();
      let k = (ln_gamma(d / 2.0) - ln_gamma((d - 1.0) / 2.0)).exp() / std::f64::consts::PI.sqrt();
      let f = |c: f64| k * (1.0 - c * c).powf((d - 3.0) / 2.0) * radial.tail(r / (c * norm), Dir { atom: 0, v: &e1 });
      quadrature::integrate(f, 0.0, 1.0, Tolerance::default())
    }
  }
}

/// Compares `t·ν_X(𝓛_v(g(t)))` with its stable limit `ν_Z(𝓛_v(1))`.
pub fn doa_tail_limit_check(spec: &AugmentedSpec, v: &[f64], t_grid: &[f64]) -> Result<Vec<DoaRow>> {
  if v.len() != spec.dimension() {
    return Err(Error::Domain("direction has wrong dimension".into()));
  }
  let x = LevyDriver::from_augmented(spec)?;
  let z = LevyDriver::from_augmented(&spec.attractor())?;
  let target = halfspace_mass(&z, v, 1.0)?;
  t_grid
    .iter()
    .map(|&t| {
      if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("t must lie in (0,1], got {t}")));
      }
      let (g, _) = spec.normalizer(t)?;
      Ok(DoaRow { t, scaled: t * halfspace_mass(&x, v, g)?, target })
    })
    .collect()
}
