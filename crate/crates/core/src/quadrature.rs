//! Adaptive Gauss–Kronrod quadrature and the log-scale panel schemes used for
//! radial integrals of Lévy densities.
//!
//! Integrals over `(0, b]` and `[a, ∞)` are evaluated in the variable
//! `s = ln x`, one unit-width panel at a time, until the panels become
//! negligible against the running total. Power-law integrands become
//! exponentials in `s`, so the panel sums decay geometrically.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
  0.991_455_371_120_812_6,
  0.949_107_912_342_758_5,
  0.864_864_423_359_769_1,
  0.741_531_185_599_394_4,
  0.586_087_235_467_691_1,
  0.405_845_151_377_397_2,
  0.207_784_955_007_898_5,
  0.0,
];
const WGK: [f64; 8] = [
  0.022_935_322_010_529_22,
  0.063_092_092_629_978_55,
  0.104_790_010_322_250_2,
  0.140_653_259_715_525_9,
  0.169_004_726_639_267_9,
  0.190_350_578_064_785_4,
  0.204_432_940_075_298_9,
  0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
  0.129_484_966_168_869_7,
  0.279_705_391_489_276_7,
  0.381_830_050_505_118_9,
  0.417_959_183_673_469_4,
];

/// Tolerances shared by every routine in this module.
#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
  pub rel: f64,
  pub abs: f64,
  pub max_intervals: usize,
}

impl Default for Tolerance {
  fn default() -> Self {
    Tolerance { rel: 1e-9, abs: 1e-300, max_intervals: 4000 }
  }
}

struct Panel {
  a: f64,
  b: f64,
  value: f64,
  err: f64,
}

impl PartialEq for Panel {
  fn eq(&self, other: &Self) -> bool {
    self.err == other.err
  }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
  fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
    Some(self.cmp(other))
  }
}
impl Ord for Panel {
  fn cmp(&self, other: &Self) -> std::cmp::Ordering {
    self.err.total_cmp(&other.err)
  }
}

/// One Gauss–Kronrod 7/15 rule on `[a, b]`, returning (value, error estimate).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
  let c = 0.5 * (a + b);
  let hl = 0.5 * (b - a);
  let fc = f(c);
  let mut kron = fc * WGK[7];
  let mut gauss = fc * WG[3];
  let mut abs_k = kron.abs();
  let mut fv = [0.0; 15];
  fv[7] = fc;
  for j in 0..7 {
    let dx = hl * XGK[j];
    let f1 = f(c - dx);
    let f2 = f(c + dx);
    fv[j] = f1;
    fv[14 - j] = f2;
    kron += WGK[j] * (f1 + f2);
    abs_k += WGK[j] * (f1.abs() + f2.abs());
    if j % 2 == 1 {
      gauss += WG[j / 2] * (f1 + f2);
    }
  }
  let mean = kron * 0.5;
  let mut asc = WGK[7] * (fc - mean).abs();
  for j in 0..7 {
    asc += WGK[j] * ((fv[j] - mean).abs() + (fv[14 - j] - mean).abs());
  }
  let value = kron * hl;
  let asc = asc * hl.abs();
  let abs_k = abs_k * hl.abs();
  let mut err = ((kron - gauss) * hl).abs();
  if asc != 0.0 && err != 0.0 {
    err = asc * (200.0 * err / asc).powf(1.5).min(1.0);
  }
  let roundoff = 50.0 * f64::EPSILON * abs_k;
  if roundoff > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
    err = err.max(roundoff);
  }
  (value, err)
}

/// Globally adaptive integration of `f` over the finite interval `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64> {
  if a == b {
    return Ok(0.0);
  }
  if !(a.is_finite() && b.is_finite()) {
    return Err(Error::Domain(format!("finite interval required, got [{a}, {b}]")));
  }
  let (value, err) = gk15(&mut f, a, b);
  let mut heap = BinaryHeap::new();
  heap.push(Panel { a, b, value, err });
  let mut total = value;
  let mut total_err = err;
  while total_err > tol.abs.max(tol.rel * total.abs()) {
    if heap.len() >= tol.max_intervals {
      return Err(Error::numeric(
        "adaptive quadrature hit its interval limit",
        vec![("a", a), ("b", b), ("value", total), ("error", total_err)],
      ));
    }
    let worst = heap.pop().expect("heap is never empty");
    let mid = 0.5 * (worst.a + worst.b);
    if mid <= worst.a || mid >= worst.b {
      // Interval at machine resolution: accept its contribution as is.
      heap.push(Panel { err: 0.0, ..worst });
      total_err = heap.iter().map(|p| p.err).sum();
      if heap.iter().all(|p| p.err == 0.0) {
        break;
      }
      continue;
    }
    let (v1, e1) = gk15(&mut f, worst.a, mid);
    let (v2, e2) = gk15(&mut f, mid, worst.b);
    total += v1 + v2 - worst.value;
    total_err += e1 + e2 - worst.err;
    heap.push(Panel { a: worst.a, b: mid, value: v1, err: e1 });
    heap.push(Panel { a: mid, b: worst.b, value: v2, err: e2 });
  }
  // Re-sum to shed the drift accumulated by the incremental updates.
  let total: f64 = heap.iter().map(|p| p.value).sum();
  if !total.is_finite() {
    return Err(Error::numeric("non-finite quadrature value", vec![("a", a), ("b", b)]));
  }
  Ok(total)
}

/// `∫_a^b f(x) dx` for `0 < a < b < ∞`, integrated in `s = ln x`.
pub fn integrate_log<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64> {
  if !(a > 0.0 && b >= a) {
    return Err(Error::Domain(format!("log-scale integral needs 0 < a <= b, got [{a}, {b}]")));
  }
  integrate(
    |s| {
      let x = s.exp();
      f(x) * x
    },
    a.ln(),
    b.ln(),
    tol,
  )
}

// Sums unit panels in `s` starting at `s0`, walking in direction `dir`.
fn panel_walk<F: FnMut(f64) -> f64>(mut f: F, s0: f64, dir: f64, tol: Tolerance) -> Result<f64> {
  let mut total = 0.0;
  let mut prev = f64::NAN;
  let mut quiet = 0;
  let mut s = s0;
  for _ in 0..1500 {
    let next = s + dir;
    if next.abs() > 740.0 {
      let (lo, hi) = if dir > 0.0 { (s, 740.0) } else { (-740.0, s) };
      if hi > lo {
        total += integrate(&mut f, lo, hi, tol)?;
      }
      // Panels still carrying mass at the edge of the range signal divergence.
      if prev.is_finite() && prev.abs() > 1e-6 * total.abs() {
        return Err(Error::numeric("semi-infinite integral appears divergent", vec![("start", s0.exp()), ("partial", total)]));
      }
      return Ok(total);
    }
    let (lo, hi) = if dir > 0.0 { (s, next) } else { (next, s) };
    // Far panels only need accuracy relative to the running total.
    let local = Tolerance { abs: tol.abs.max(1e-2 * tol.rel * total.abs()), ..tol };
    let p = integrate(&mut f, lo, hi, local)?;
    total += p;
    let ratio = if prev.is_finite() && prev != 0.0 { (p / prev).abs() } else { 1.0 };
    let remainder = if ratio < 1.0 { p.abs() * ratio / (1.0 - ratio) } else { f64::INFINITY };
    if p == 0.0 || remainder <= tol.rel * total.abs() || p.abs() <= tol.abs {
      quiet += 1;
      if quiet >= 3 {
        return Ok(total);
      }
    } else {
      quiet = 0;
    }
    prev = p;
    s = next;
  }
  Err(Error::numeric(
    "semi-infinite quadrature did not settle",
    vec![("start", s0.exp()), ("partial", total)],
  ))
}

/// `∫_0^b f(x) dx` for `b > 0`; `f` may be singular (integrably) at zero.
pub fn integrate_from_zero<F: FnMut(f64) -> f64>(mut f: F, b: f64, tol: Tolerance) -> Result<f64> {
  if !(b > 0.0) {
    return Err(Error::Domain(format!("upper limit must be positive, got {b}")));
  }
  panel_walk(
    |s| {
      let x = s.exp();
      f(x) * x
    },
    b.ln(),
    -1.0,
    tol,
  )
}

/// `∫_a^∞ f(x) dx` for `a > 0`.
pub fn integrate_to_inf<F: FnMut(f64) -> f64>(mut f: F, a: f64, tol: Tolerance) -> Result<f64> {
  if !(a > 0.0) {
    return Err(Error::Domain(format!("lower limit must be positive, got {a}")));
  }
  panel_walk(
    |s| {
      let x = s.exp();
      f(x) * x
    },
    a.ln(),
    1.0,
    tol,
  )
}

/// `∫_0^∞ f(x) dx`, split at `x = 1` where cutoff indicators switch.
pub fn integrate_half_line<F: FnMut(f64) -> f64>(mut f: F, tol: Tolerance) -> Result<f64> {
  Ok(integrate_from_zero(&mut f, 1.0, tol)? + integrate_to_inf(&mut f, 1.0, tol)?)
}

/// Bisection for a root of a monotone function on `[lo, hi]` with `f(lo)` and
/// `f(hi)` of opposite sign. Stops at relative width `rel_tol`.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, rel_tol: f64) -> Result<f64> {
  let flo = f(lo);
  let fhi = f(hi);
  if flo == 0.0 {
    return Ok(lo);
  }
  if fhi == 0.0 {
    return Ok(hi);
  }
  if flo.signum() == fhi.signum() {
    return Err(Error::numeric("bisection bracket does not straddle a root", vec![("lo", lo), ("hi", hi)]));
  }
  let lo_sign = flo.signum();
  for _ in 0..200 {
    let mid = 0.5 * (lo + hi);
    if (hi - lo).abs() <= rel_tol * mid.abs() || mid == lo || mid == hi {
      return Ok(mid);
    }
    let fm = f(mid);
    if fm == 0.0 {
      return Ok(mid);
    }
    if fm.signum() == lo_sign {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  Err(Error::numeric("bisection exceeded 200 iterations", vec![("lo", lo), ("hi", hi)]))
}

#[cfg(test)]
mod tests {
  use super::*;

  #[test]
  fn polynomial_is_exact() {
    let v = integrate(|x| x * x * x - 2.0 * x, -1.0, 3.0, Tolerance::default()).unwrap();
    assert!((v - 12.0).abs() < 1e-12);
  }

  #[test]
  fn singular_power_at_zero() {
    // ∫_0^1 x^{-0.7} dx = 1/0.3
    let v = integrate_from_zero(|x| x.powf(-0.7), 1.0, Tolerance::default()).unwrap();
    assert!((v - 1.0 / 0.3).abs() < 1e-8 * (1.0 / 0.3));
  }

  #[test]
  fn power_tail_to_infinity() {
    // ∫_2^∞ x^{-1.7} dx = 2^{-0.7}/0.7
    let exact = 2f64.powf(-0.7) / 0.7;
    let v = integrate_to_inf(|x| x.powf(-1.7), 2.0, Tolerance::default()).unwrap();
    assert!((v - exact).abs() < 1e-8 * exact);
  }

  #[test]
  fn bisection_finds_sqrt2() {
    let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
    assert!((r - 2f64.sqrt()).abs() < 1e-13);
  }
}
