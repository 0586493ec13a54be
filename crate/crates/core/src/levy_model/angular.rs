use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sphere_direction;

/// A point mass of an atomic angular measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
  pub direction: Vec<f64>,
  pub weight: f64,
}

/// Probability measure `σ` on the unit sphere of `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AngularMeasure {
  Atoms { atoms: Vec<Atom> },
  Uniform { dimension: usize },
}

/// A direction handed to radial laws: the atom index (0 for uniform `σ`)
/// and the unit vector itself.
#[derive(Clone, Copy, Debug)]
pub struct Dir<'a> {
  pub atom: usize,
  pub v: &'a [f64],
}

/// How a radial law varies with direction.
#[derive(Clone, Debug, PartialEq)]
pub enum Dependence {
  Isotropic,
  /// Two values, switching on the sign of `<normal, v>`.
  HalfSpace(Vec<f64>),
  /// One value per atom of an atomic `σ`.
  PerAtom,
}

/// A set of directions on which a radial law is constant, with its
/// `σ`-mass and its `σ`-mean direction `∫_class v σ(dv)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionClass {
  pub atom: usize,
  pub representative: Vec<f64>,
  pub weight: f64,
  pub mean: Vec<f64>,
}

impl DirectionClass {
  pub fn dir(&self) -> Dir<'_> {
    Dir { atom: self.atom, v: &self.representative }
  }
}

const UNIT_TOL: f64 = 1e-12;

impl AngularMeasure {
  /// Symmetric measure on `{−1, +1}` with mass one half each.
  pub fn symmetric_1d() -> Self {
    AngularMeasure::Atoms {
      atoms: vec![Atom { direction: vec![1.0], weight: 0.5 }, Atom { direction: vec![-1.0], weight: 0.5 }],
    }
  }

  pub fn uniform(dimension: usize) -> Self {
    AngularMeasure::Uniform { dimension }
  }

  pub fn dimension(&self) -> usize {
    match self {
      AngularMeasure::Atoms { atoms } => atoms.first().map_or(0, |a| a.direction.len()),
      AngularMeasure::Uniform { dimension } => *dimension,
    }
  }

  pub fn validate(&self) -> Result<()> {
    match self {
      AngularMeasure::Uniform { dimension } => {
        if *dimension == 0 {
          return Err(Error::InvalidSpec("uniform angular measure needs dimension >= 1".into()));
        }
      }
      AngularMeasure::Atoms { atoms } => {
        if atoms.is_empty() {
          return Err(Error::InvalidSpec("atomic angular measure has no atoms".into()));
        }
        let d = atoms[0].direction.len();
        if d == 0 {
          return Err(Error::InvalidSpec("atom direction is empty".into()));
        }
        let mut total = 0.0;
        for (i, a) in atoms.iter().enumerate() {
          if a.direction.len() != d {
            return Err(Error::InvalidSpec(format!("atom {i} has dimension {} instead of {d}", a.direction.len())));
          }
          if !(a.weight > 0.0) {
            return Err(Error::InvalidSpec(format!("atom {i} has non-positive weight {}", a.weight)));
          }
          let norm = a.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
          if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidSpec(format!("atom {i} direction has norm {norm}")));
          }
          total += a.weight;
        }
        if (total - 1.0).abs() > UNIT_TOL {
          return Err(Error::InvalidSpec(format!("atom weights sum to {total}")));
        }
      }
    }
    Ok(())
  }

  /// `∫ v σ(dv)`.
  pub fn first_moment(&self) -> Vec<f64> {
    match self {
      AngularMeasure::Uniform { dimension } => vec![0.0; *dimension],
      AngularMeasure::Atoms { atoms } => {
        let mut m = vec![0.0; self.dimension()];
        for a in atoms {
          for (mi, vi) in m.iter_mut().zip(&a.direction) {
            *mi += a.weight * vi;
          }
        }
        m
      }
    }
  }

  /// Derived balancing flag: `∫ v σ(dv) = 0` within `1e-10`.
  pub fn is_balanced(&self) -> bool {
    self.first_moment().iter().all(|m| m.abs() <= 1e-10)
  }

  pub fn atoms(&self) -> Option<&[Atom]> {
    match self {
      AngularMeasure::Atoms { atoms } => Some(atoms),
      AngularMeasure::Uniform { .. } => None,
    }
  }

  /// Index of the atom at direction `v`, if any.
  pub fn atom_index(&self, v: &[f64]) -> Option<usize> {
    self.atoms()?.iter().position(|a| a.direction.iter().zip(v).all(|(x, y)| (x - y).abs() <= UNIT_TOL))
  }

  /// Partition of the sphere into classes on which a law with the given
  /// dependence is constant.
  pub fn classes(&self, dependence: &Dependence) -> Result<Vec<DirectionClass>> {
    match self {
      AngularMeasure::Atoms { atoms } => Ok(
        atoms
          .iter()
          .enumerate()
          .map(|(i, a)| DirectionClass { atom: i, representative: a.direction.clone(), weight: a.weight, mean: a.direction.iter().map(|x| x * a.weight).collect() })
          .collect(),
      ),
      AngularMeasure::Uniform { dimension } => {
        let d = *dimension;
        match dependence {
          Dependence::Isotropic => {
            let mut e1 = vec![0.0; d];
            e1[0] = 1.0;
            Ok(vec![DirectionClass { atom: 0, representative: e1, weight: 1.0, mean: vec![0.0; d] }])
          }
          Dependence::HalfSpace(normal) => {
            let norm = normal.iter().map(|x| x * x).sum::<f64>().sqrt();
            let n: Vec<f64> = normal.iter().map(|x| x / norm).collect();
            // E[<U,n>; <U,n> > 0] for U uniform on the sphere of R^d.
            let half_abs = mean_abs_coordinate(d) / 2.0;
            let inside = DirectionClass { atom: 0, representative: n.clone(), weight: 0.5, mean: n.iter().map(|x| x * half_abs).collect() };
            let neg: Vec<f64> = n.iter().map(|x| -x).collect();
            let outside = DirectionClass { atom: 0, mean: neg.iter().map(|x| x * half_abs).collect(), representative: neg, weight: 0.5 };
            Ok(vec![inside, outside])
          }
          Dependence::PerAtom => Err(Error::InvalidSpec("per-atom values need an atomic angular measure".into())),
        }
      }
    }
  }

  /// Draws a direction into `out`, returning its atom index.
  pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> usize {
    match self {
      AngularMeasure::Uniform { .. } => {
        sphere_direction(rng, out);
        0
      }
      AngularMeasure::Atoms { atoms } => {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = atoms.len() - 1;
        for (i, a) in atoms.iter().enumerate() {
          acc += a.weight;
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

/// `E|U_1|` for `U` uniform on the unit sphere of `R^d`.
pub fn mean_abs_coordinate(d: usize) -> f64 {
  use statrs::function::gamma::ln_gamma;
  if d == 1 {
    return 1.0;
  }
  let df = d as f64;
  (ln_gamma(df / 2.0) - ln_gamma((df + 1.0) / 2.0)).exp() / std::f64::consts::PI.sqrt()
}

#[cfg(test)]
mod tests {
  use super::*;

  #[test]
  fn symmetric_measure_is_balanced_and_valid() {
    let s = AngularMeasure::symmetric_1d();
    s.validate().unwrap();
    assert!(s.is_balanced());
  }

  #[test]
  fn rejects_bad_weights_and_norms() {
    let bad = AngularMeasure::Atoms { atoms: vec![Atom { direction: vec![1.0], weight: 0.7 }] };
    assert!(bad.validate().is_err());
    let bad = AngularMeasure::Atoms { atoms: vec![Atom { direction: vec![1.0, 1.0], weight: 1.0 }] };
    assert!(bad.validate().is_err());
  }

  #[test]
  fn one_sided_measure_is_unbalanced() {
    let s = AngularMeasure::Atoms { atoms: vec![Atom { direction: vec![1.0], weight: 1.0 }] };
    assert!(!s.is_balanced());
  }

  #[test]
  fn mean_abs_coordinate_low_dimensions() {
    assert!((mean_abs_coordinate(2) - 2.0 / std::f64::consts::PI).abs() < 1e-14);
    assert!((mean_abs_coordinate(3) - 0.5).abs() < 1e-14);
  }
}
