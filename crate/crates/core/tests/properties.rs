//! Structural invariants as properties.

use proptest::prelude::*;

use lcl_core::bounds::{gronwall_bound_thinning, summarize};
use lcl_core::couplings::{sample_comonotonic, sample_thinning, CouplingKind, Dominating};
use lcl_core::experiments::{tail_curves, TSamples};
use lcl_core::levy_model::{AngularMeasure, AugmentedSpec, ExpTiltedUniform, LevyDriver, StableSpec};
use lcl_core::rng::StreamKey;
use lcl_core::sde_engine::{pair_sup_distance, CoefficientField, FieldSpec, NoiseMode};
use lcl_core::stats;

fn tempered(alpha: f64, lambda: f64) -> LevyDriver {
  LevyDriver::from_augmented(&AugmentedSpec::tempered(StableSpec::unit_symmetric_1d(alpha).unwrap(), lambda).unwrap()).unwrap()
}

fn alpha() -> impl Strategy<Value = f64> {
  prop_oneof![0.2..0.95f64, 1.05..1.9f64]
}

proptest! {
  #![proptest_config(ProptestConfig::with_cases(64))]

  #[test]
  fn tail_inverse_round_trips(a in alpha(), lambda in 0.0..3.0f64, log_u in -6.0..8.0f64) {
    let d = tempered(a, lambda);
    let dir = d.classes()[0].dir();
    let u = 10f64.powf(log_u);
    let x = d.radial.inverse(u, dir).unwrap();
    prop_assert!(x > 0.0);
    prop_assert!((d.radial.tail(x, dir) / u - 1.0).abs() < 1e-8);
  }

  #[test]
  fn tails_are_non_increasing(a in alpha(), lambda in 0.0..3.0f64, x in 1e-4..50.0f64, step in 1.0..10.0f64) {
    let d = tempered(a, lambda);
    let dir = d.classes()[0].dir();
    prop_assert!(d.radial.tail(x * step, dir) <= d.radial.tail(x, dir));
  }

  #[test]
  fn stable_tail_is_self_similar(a in alpha(), log_t in -8.0..0.0f64, x in 1e-3..1e3f64) {
    let z = tempered(a, 0.0);
    let t = 10f64.powf(log_t);
    let zt = z.rescaled(t, t.powf(1.0 / a)).unwrap();
    let dir = z.classes()[0].dir();
    prop_assert!((zt.radial.tail(x, dir) / z.radial.tail(x, dir) - 1.0).abs() < 1e-10);
  }

  #[test]
  fn comonotonic_self_coupling_is_exact(seed in any::<u64>(), lambda in 0.1..3.0f64) {
    let d = tempered(0.7, lambda);
    let s = sample_comonotonic(&d, &d, 200.0, 1.0, StreamKey::new(seed, 0, 0)).unwrap();
    let field = CoefficientField::from_spec(&FieldSpec::RotationByNorm { columns: 1 }, NoiseMode::Multiplicative, None).unwrap();
    prop_assert_eq!(pair_sup_distance(&s, &field, &[0.3, -0.2], 0.05).unwrap(), 0.0);
  }

  #[test]
  fn tempered_jumps_thin_the_stable_ones(seed in any::<u64>(), lambda in 0.1..3.0f64, s in 0.05..5.0f64) {
    let (x, z) = (tempered(0.7, lambda), tempered(0.7, 0.0));
    let dom = Dominating::Envelope { base: z.clone(), factor: 1.0 };
    let stream = sample_thinning(&x, &z, &dom, 0.05, 5.0, StreamKey::new(seed, 1, 0)).unwrap();
    prop_assert!(stream.count_at_least(1, s) <= stream.count_at_least(2, s));
  }

  #[test]
  fn gronwall_bound_grows_with_the_horizon(k1 in 1.0..10.0f64, k2 in 1.0..10.0f64, t in 0.1..1.0f64, order in 1u8..=2) {
    let u = |k: f64| LevyDriver::compound_poisson(AngularMeasure::symmetric_1d(), ExpTiltedUniform { k, lo: 0.5, hi: 1.0, tilt: 0.0 }).unwrap();
    let field = CoefficientField::from_spec(&FieldSpec::RotationByNorm { columns: 1 }, NoiseMode::Multiplicative, None).unwrap();
    let s = summarize(&u(k1), &u(k2), CouplingKind::Thinning, &field, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
    let short = gronwall_bound_thinning(&s, t, order).unwrap();
    let long = gronwall_bound_thinning(&s, 2.0 * t, order).unwrap();
    let parts: f64 = short.terms.iter().map(|x| x.value).sum();
    prop_assert!((parts - short.kappa).abs() <= 1e-12 * short.kappa.abs().max(1.0));
    prop_assert!(long.bound >= short.bound);
  }

  #[test]
  fn tail_curves_are_non_increasing(d in prop::collection::vec(0.0..100.0f64, 1..200), aborted in 0usize..5) {
    let samples = vec![TSamples { t: 0.1, distances: d, aborted }];
    let grid: Vec<f64> = (0..40).map(|i| 1e-3 * 1.4f64.powi(i)).collect();
    let curves = tail_curves(&samples, |t| t, &grid).unwrap();
    prop_assert!(curves[0].probs.windows(2).all(|w| w[1] <= w[0]));
    prop_assert!(curves[0].probs.iter().all(|p| (0.0..=1.0).contains(p)));
  }

  #[test]
  fn quantiles_are_monotone(d in prop::collection::vec(-1e3..1e3f64, 1..100), q1 in 0.0..1.0f64, q2 in 0.0..1.0f64) {
    let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
    prop_assert!(stats::quantile(&d, lo) <= stats::quantile(&d, hi));
  }
}
