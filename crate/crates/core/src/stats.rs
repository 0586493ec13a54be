//! Order statistics, regression and resampling helpers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Linear-interpolation quantile (type 7) of unsorted data.
pub fn quantile(data: &[f64], q: f64) -> f64 {
  let mut v = data.to_vec();
  v.sort_by(f64::total_cmp);
  quantile_sorted(&v, q)
}

/// Type-7 quantile of data already sorted ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
  assert!(!sorted.is_empty(), "quantile of empty sample");
  let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
  let lo = pos.floor() as usize;
  let hi = pos.ceil() as usize;
  let w = pos - lo as f64;
  if w == 0.0 {
    sorted[lo]
  } else {
    sorted[lo] * (1.0 - w) + sorted[hi] * w
  }
}

pub fn median(data: &[f64]) -> f64 {
  quantile(data, 0.5)
}

/// Mean after discarding `frac` of the sample from each end.
pub fn trimmed_mean(data: &[f64], frac: f64) -> f64 {
  let mut v = data.to_vec();
  v.sort_by(f64::total_cmp);
  let k = (frac * v.len() as f64).floor() as usize;
  let kept = &v[k..v.len() - k];
  kept.iter().sum::<f64>() / kept.len() as f64
}

pub fn mean(data: &[f64]) -> f64 {
  data.iter().sum::<f64>() / data.len() as f64
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
  let mut a = a.to_vec();
  let mut b = b.to_vec();
  a.sort_by(f64::total_cmp);
  b.sort_by(f64::total_cmp);
  let (na, nb) = (a.len() as f64, b.len() as f64);
  let (mut i, mut j) = (0, 0);
  let mut d: f64 = 0.0;
  while i < a.len() && j < b.len() {
    let x = a[i].min(b[j]);
    while i < a.len() && a[i] <= x {
      i += 1;
    }
    while j < b.len() && b[j] <= x {
      j += 1;
    }
    d = d.max((i as f64 / na - j as f64 / nb).abs());
  }
  d
}

/// One-sample KS statistic against a continuous or discrete CDF, evaluated at
/// the sample points and just below them.
pub fn ks_one_sample<F: Fn(f64) -> f64>(data: &[f64], cdf: F, left_limit: impl Fn(f64) -> f64) -> f64 {
  let mut v = data.to_vec();
  v.sort_by(f64::total_cmp);
  let n = v.len() as f64;
  let mut d: f64 = 0.0;
  let mut i = 0;
  while i < v.len() {
    let x = v[i];
    let below = i as f64 / n;
    while i < v.len() && v[i] == x {
      i += 1;
    }
    let at = i as f64 / n;
    d = d.max((at - cdf(x)).abs()).max((below - left_limit(x)).abs());
  }
  d
}

/// Ordinary least squares fit `y = intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
  pub slope: f64,
  pub intercept: f64,
  pub slope_stderr: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<LinearFit> {
  if x.len() != y.len() || x.len() < 2 {
    return Err(Error::InvalidInput(format!("ols needs two equal-length series of length >= 2, got {} and {}", x.len(), y.len())));
  }
  let n = x.len() as f64;
  let mx = mean(x);
  let my = mean(y);
  let sxx: f64 = x.iter().map(|xi| (xi - mx) * (xi - mx)).sum();
  let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
  if sxx == 0.0 {
    return Err(Error::InvalidInput("ols regressor is constant".into()));
  }
  let slope = sxy / sxx;
  let intercept = my - slope * mx;
  let slope_stderr = if x.len() > 2 {
    let rss: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - intercept - slope * xi).powi(2)).sum();
    (rss / (n - 2.0) / sxx).sqrt()
  } else {
    f64::NAN
  };
  Ok(LinearFit { slope, intercept, slope_stderr })
}

/// Percentile bootstrap interval of a statistic at two-sided `level`.
pub fn bootstrap_ci<S: Fn(&[f64]) -> f64>(data: &[f64], stat: S, resamples: usize, level: f64, key: StreamKey) -> (f64, f64) {
  let mut rng = key.rng();
  let n = data.len();
  let mut buf = vec![0.0; n];
  let mut stats: Vec<f64> = (0..resamples)
    .map(|_| {
      for b in buf.iter_mut() {
        *b = data[rng.random_range(0..n)];
      }
      stat(&buf)
    })
    .collect();
  stats.sort_by(f64::total_cmp);
  let alpha = 0.5 * (1.0 - level);
  (quantile_sorted(&stats, alpha), quantile_sorted(&stats, 1.0 - alpha))
}

/// `P(N ≤ k)` for `N ~ Poisson(mu)`.
pub fn poisson_cdf(k: u64, mu: f64) -> f64 {
  let mut term = (-mu).exp();
  let mut sum = term;
  for i in 1..=k {
    term *= mu / i as f64;
    sum += term;
  }
  sum.min(1.0)
}

#[cfg(test)]
mod tests {
  use super::*;

  #[test]
  fn quantiles_interpolate() {
    let d = [4.0, 1.0, 3.0, 2.0];
    assert_eq!(quantile(&d, 0.0), 1.0);
    assert_eq!(quantile(&d, 1.0), 4.0);
    assert_eq!(median(&d), 2.5);
  }

  #[test]
  fn ks_of_identical_and_disjoint_samples() {
    let a = [1.0, 2.0, 3.0];
    assert_eq!(ks_two_sample(&a, &a), 0.0);
    assert_eq!(ks_two_sample(&a, &[10.0, 11.0]), 1.0);
  }

  #[test]
  fn ols_recovers_a_line() {
    let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
    let fit = ols(&x, &y).unwrap();
    assert!((fit.slope + 0.5).abs() < 1e-14);
    assert!((fit.intercept - 2.0).abs() < 1e-13);
  }

  #[test]
  fn poisson_cdf_small_cases() {
    assert!((poisson_cdf(0, 2.0) - (-2.0f64).exp()).abs() < 1e-15);
    assert!((poisson_cdf(1, 2.0) - 3.0 * (-2.0f64).exp()).abs() < 1e-15);
  }
}
