//! Stable attractors, augmented drivers, slowly varying bundles, radial
//! tails and their inverses, and the normalizing function `g`.

mod angular;
mod bundle;
mod doa;
mod driver;
mod radial;
mod spec;

pub use angular::{mean_abs_coordinate, AngularMeasure, Atom, Dependence, Dir, DirectionClass};
pub use bundle::{iterated_log, BundleSpec, SlowVariationBundle};
pub use doa::{doa_tail_limit_check, halfspace_mass, DoaRow};
pub use driver::{truncation_error, DriftConvention, LevyDriver};
pub use radial::{
  invert_tail, moment_by_quadrature, radial_law, ExpTiltedUniform, FoldedRadial, RadialLaw, ScaledRadial, StableRadial, TabulatedRadial,
  TemperedRadial, TruncatedRadial,
};
pub use spec::{
  ceil_alpha, check_alpha, dona_constants, stable_radial_inverse, unit_scale_intensity, AugmentedSpec, Augmenting, CustomQ, Directional, Dona,
  DonaConstants, Regime, StableSpec, LEVY_SPEC_SCHEMA,
};

/// `(g(t), G(t))` for a bundle and index; see [`SlowVariationBundle::normalizing_g`].
pub fn normalizing_g(bundle: &SlowVariationBundle, alpha: f64, t: f64) -> crate::error::Result<(f64, f64)> {
  bundle.normalizing_g(alpha, t)
}

/// Right-continuous inverse of a radial tail along `dir`.
pub fn radial_tail_inverse(law: &dyn RadialLaw, u: f64, dir: Dir<'_>) -> crate::error::Result<f64> {
  law.inverse(u, dir)
}
