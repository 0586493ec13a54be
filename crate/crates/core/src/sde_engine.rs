//! Jump-adapted Euler integration of `X(s) = x + ∫ V(X(r−)) dY(r)` and of
//! the additive-noise equation `X(s) = x + ∫ V(X(r)) dr + Y(s)` for a pair
//! of drivers given as a [`CoupledJumpStream`].

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::couplings::{norm, CoupledJumpStream};
use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// States beyond this norm abort the replicate.
pub const OVERFLOW_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
  /// `dX = V(X−) dY`, `V: R^m → R^{m×d}`.
  #[default]
  Multiplicative,
  /// `dX = V(X) dt + dY`, `V: R^m → R^m`, `m = d`.
  Additive,
}

/// Serializable catalog of coefficient fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
  /// Constant `m×k` matrix, given by rows.
  Constant { matrix: Vec<Vec<f64>> },
  /// `m = 2`: the planar rotation by angle `|x|`, or its first column when
  /// `columns = 1`.
  RotationByNorm { columns: usize },
  /// `V(x) = A x + b` as an `m×1` column.
  Linear { a: Vec<Vec<f64>>, #[serde(default)] b: Option<Vec<f64>> },
  Zero { m: usize, columns: usize },
}

type FieldFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A Lipschitz coefficient `V: R^m → R^{m×k}` with `k = d` (multiplicative)
/// or `k = 1` (additive). Matrices are row-major; the Lipschitz constant is
/// with respect to the Frobenius norm.
#[derive(Clone)]
pub struct CoefficientField {
  pub name: String,
  pub m: usize,
  pub k: usize,
  pub lipschitz: f64,
  pub mode: NoiseMode,
  /// `V ≡ 0`; lets the integrator skip drift substeps.
  pub vanishing: bool,
  eval: Arc<FieldFn>,
}

impl std::fmt::Debug for CoefficientField {
  fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
    f.debug_struct("CoefficientField").field("name", &self.name).field("m", &self.m).field("k", &self.k).field("lipschitz", &self.lipschitz).field("mode", &self.mode).finish()
  }
}

fn frobenius(rows: &[Vec<f64>]) -> f64 {
  rows.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

impl CoefficientField {
  /// Builds a catalog field. `lipschitz` overrides the analytic constant.
  pub fn from_spec(spec: &FieldSpec, mode: NoiseMode, lipschitz: Option<f64>) -> Result<Self> {
    let (name, m, k, analytic, vanishing, eval): (&str, usize, usize, f64, bool, Arc<FieldFn>) = match spec {
      FieldSpec::Constant { matrix } => {
        let m = matrix.len();
        let k = matrix.first().map_or(0, |r| r.len());
        if m == 0 || k == 0 || matrix.iter().any(|r| r.len() != k) {
          return Err(Error::InvalidSpec("constant field needs a non-empty rectangular matrix".into()));
        }
        let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
        let zero = flat.iter().all(|x| *x == 0.0);
        ("constant", m, k, 0.0, zero, Arc::new(move |_: &[f64], out: &mut [f64]| out.copy_from_slice(&flat)))
      }
      FieldSpec::RotationByNorm { columns } => match columns {
        2 => (
          "rotation_by_norm",
          2,
          2,
          std::f64::consts::SQRT_2,
          false,
          Arc::new(|x: &[f64], out: &mut [f64]| {
            let (s, c) = norm(x).sin_cos();
            out.copy_from_slice(&[c, -s, s, c]);
          }),
        ),
        1 => (
          "rotation_by_norm",
          2,
          1,
          1.0,
          false,
          Arc::new(|x: &[f64], out: &mut [f64]| {
            let (s, c) = norm(x).sin_cos();
            out.copy_from_slice(&[c, s]);
          }),
        ),
        _ => return Err(Error::InvalidSpec(format!("rotation field has 1 or 2 columns, not {columns}"))),
      },
      FieldSpec::Linear { a, b } => {
        let m = a.len();
        if m == 0 || a.iter().any(|r| r.len() != m) {
          return Err(Error::InvalidSpec("linear field needs a square matrix".into()));
        }
        let b = b.clone().unwrap_or_else(|| vec![0.0; m]);
        if b.len() != m {
          return Err(Error::InvalidSpec("linear field offset has wrong length".into()));
        }
        let flat: Vec<f64> = a.iter().flatten().copied().collect();
        let zero = flat.iter().chain(&b).all(|x| *x == 0.0);
        let eval = move |x: &[f64], out: &mut [f64]| {
          for i in 0..m {
            out[i] = b[i] + (0..m).map(|j| flat[i * m + j] * x[j]).sum::<f64>();
          }
        };
        ("linear", m, 1, frobenius(a), zero, Arc::new(eval))
      }
      FieldSpec::Zero { m, columns } => {
        if *m == 0 || *columns == 0 {
          return Err(Error::InvalidSpec("zero field needs positive dimensions".into()));
        }
        ("zero", *m, *columns, 0.0, true, Arc::new(|_: &[f64], out: &mut [f64]| out.iter_mut().for_each(|o| *o = 0.0)))
      }
    };
    if mode == NoiseMode::Additive && k != 1 {
      return Err(Error::InvalidSpec(format!("additive mode needs a vector field, {name} has {k} columns")));
    }
    let field = CoefficientField { name: name.into(), m, k, lipschitz: lipschitz.unwrap_or(analytic), mode, vanishing, eval };
    if lipschitz.is_some() {
      field.check_lipschitz(StreamKey::new(0, 0, 0))?;
    }
    Ok(field)
  }

  /// Registers an arbitrary field; its declared constant is spot-checked.
  pub fn user<F>(name: &str, m: usize, k: usize, lipschitz: f64, mode: NoiseMode, f: F) -> Result<Self>
  where
    F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
  {
    if mode == NoiseMode::Additive && k != 1 {
      return Err(Error::InvalidSpec("additive mode needs a vector field".into()));
    }
    let field = CoefficientField { name: name.into(), m, k, lipschitz, mode, vanishing: false, eval: Arc::new(f) };
    field.check_lipschitz(StreamKey::new(0, 0, 0))?;
    Ok(field)
  }

  /// Driver dimension the field accepts.
  pub fn driver_dimension(&self) -> usize {
    match self.mode {
      NoiseMode::Multiplicative => self.k,
      NoiseMode::Additive => self.m,
    }
  }

  pub fn eval(&self, x: &[f64], out: &mut [f64]) {
    (self.eval)(x, out)
  }

  /// Checks `|V(y) − V(z)| ≤ K|y − z| + 1e-9` on `10⁴` uniform pairs in
  /// `[−10, 10]^m`; returns the largest observed ratio.
  pub fn check_lipschitz(&self, key: StreamKey) -> Result<f64> {
    let mut rng = key.rng();
    let (mut y, mut z) = (vec![0.0; self.m], vec![0.0; self.m]);
    let (mut vy, mut vz) = (vec![0.0; self.m * self.k], vec![0.0; self.m * self.k]);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
      y.iter_mut().chain(z.iter_mut()).for_each(|c| *c = rng.random_range(-10.0..10.0));
      self.eval(&y, &mut vy);
      self.eval(&z, &mut vz);
      let num = vy.iter().zip(&vz).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
      let den = y.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
      if num > self.lipschitz * den + 1e-9 {
        return Err(Error::InvalidSpec(format!("field {} violates Lipschitz constant {} at y={y:?}, z={z:?}", self.name, self.lipschitz)));
      }
      if den > 0.0 {
        worst = worst.max(num / den);
      }
    }
    Ok(worst)
  }
}

/// A discretised solution path. `left` holds `X(τ−)` for each jump time `τ`,
/// at grid position `jump_at`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
  pub m: usize,
  pub times: Vec<f64>,
  pub values: Vec<f64>,
  pub jump_at: Vec<usize>,
  pub left: Vec<f64>,
}

impl SamplePath {
  fn new(m: usize) -> Self {
    SamplePath { m, times: Vec::new(), values: Vec::new(), jump_at: Vec::new(), left: Vec::new() }
  }

  pub fn len(&self) -> usize {
    self.times.len()
  }

  pub fn is_empty(&self) -> bool {
    self.times.is_empty()
  }

  pub fn value(&self, i: usize) -> &[f64] {
    &self.values[i * self.m..(i + 1) * self.m]
  }

  pub fn last(&self) -> &[f64] {
    self.value(self.len() - 1)
  }

  /// Rows `replicate,path,time,x_*`; left limits precede the post-jump value.
  pub fn write_csv<W: Write>(&self, out: &mut csv::Writer<W>, replicate: u64, path: u8) -> Result<()> {
    let mut j = 0;
    for i in 0..self.len() {
      let mut emit = |x: &[f64]| -> Result<()> {
        let mut row = vec![replicate.to_string(), path.to_string(), format!("{:e}", self.times[i])];
        row.extend(x.iter().map(|v| format!("{v:e}")));
        out.write_record(&row)?;
        Ok(())
      };
      if j < self.jump_at.len() && self.jump_at[j] == i {
        emit(&self.left[j * self.m..(j + 1) * self.m])?;
        j += 1;
      }
      emit(self.value(i))?;
    }
    Ok(())
  }

  pub fn csv_header(m: usize) -> Vec<String> {
    let mut h = vec!["replicate".to_string(), "path".into(), "time".into()];
    h.extend((0..m).map(|k| format!("x_{k}")));
    h
  }
}

/// What the integrator reports at each grid point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridPoint {
  Start,
  Substep,
  LeftLimit,
  Jump,
}

/// Integrates both SDEs of a coupled pair, calling `observe(time, kind,
/// x1, x2)` at every grid point. Between events the drift ODE takes
/// `ceil(Δ/h)` equal Euler substeps; when both drifts vanish identically the
/// substeps are skipped, which leaves event values unchanged.
pub fn drive_pair<F>(stream: &CoupledJumpStream, field: &CoefficientField, x0: &[f64], h: f64, mut observe: F) -> Result<()>
where
  F: FnMut(f64, GridPoint, &[f64], &[f64]),
{
  let m = field.m;
  if !(h > 0.0) {
    return Err(Error::Domain(format!("drift substep must be positive, got {h}")));
  }
  if x0.len() != m {
    return Err(Error::InvalidInput(format!("initial condition has length {}, field expects {m}", x0.len())));
  }
  if stream.dimension != field.driver_dimension() {
    return Err(Error::InvalidInput(format!("stream dimension {} does not match field driver dimension {}", stream.dimension, field.driver_dimension())));
  }
  let k = field.k;
  let d = stream.dimension;
  let additive = field.mode == NoiseMode::Additive;
  let no_comp = stream.comp1.iter().chain(&stream.comp2).all(|c| *c == 0.0);
  let idle = if additive { no_comp && field.vanishing } else { no_comp || field.vanishing };
  let (mut x1, mut x2) = (x0.to_vec(), x0.to_vec());
  let mut v = vec![0.0; m * k];
  let mut t = 0.0;
  observe(0.0, GridPoint::Start, &x1, &x2);

  // One Euler step of the drift ODE for one path.
  let step = |x: &mut Vec<f64>, comp: &[f64], dt: f64, v: &mut Vec<f64>| {
    field.eval(x, v);
    if additive {
      for i in 0..m {
        x[i] += (v[i] + comp[i]) * dt;
      }
    } else {
      for i in 0..m {
        x[i] += (0..k).map(|j| v[i * k + j] * comp[j]).sum::<f64>() * dt;
      }
    }
  };
  let apply = |x: &mut Vec<f64>, jump: &[f64], v: &mut Vec<f64>| {
    if jump.iter().all(|j| *j == 0.0) {
      return;
    }
    if additive {
      x.iter_mut().zip(jump).for_each(|(a, b)| *a += b);
    } else {
      field.eval(x, v);
      for i in 0..m {
        x[i] += (0..d).map(|j| v[i * k + j] * jump[j]).sum::<f64>();
      }
    }
  };
  let check = |x: &[f64], time: f64| -> Result<()> {
    if x.iter().all(|c| c.is_finite()) && norm(x) <= OVERFLOW_LIMIT {
      Ok(())
    } else {
      Err(Error::Overflow { time })
    }
  };

  let n = stream.len();
  for i in 0..=n {
    let target = if i < n { stream.times[i] } else { stream.horizon };
    let gap = target - t;
    if gap > 0.0 && !idle {
      let steps = (gap / h).ceil().max(1.0) as usize;
      let dt = gap / steps as f64;
      for s in 1..=steps {
        step(&mut x1, &stream.comp1, dt, &mut v);
        step(&mut x2, &stream.comp2, dt, &mut v);
        let now = if s == steps { target } else { t + dt * s as f64 };
        check(&x1, now)?;
        check(&x2, now)?;
        // the final substep lands on the event; report it as its left limit
        if s < steps || i == n {
          observe(now, GridPoint::Substep, &x1, &x2);
        }
      }
    } else if i == n && gap > 0.0 {
      observe(target, GridPoint::Substep, &x1, &x2);
    }
    t = target;
    if i < n {
      let e = stream.event(i);
      observe(t, GridPoint::LeftLimit, &x1, &x2);
      apply(&mut x1, e.jump1, &mut v);
      apply(&mut x2, e.jump2, &mut v);
      check(&x1, t)?;
      check(&x2, t)?;
      observe(t, GridPoint::Jump, &x1, &x2);
    }
  }
  Ok(())
}

/// Both solution paths on the jump-adapted grid.
pub fn integrate_pair(stream: &CoupledJumpStream, field: &CoefficientField, x0: &[f64], h: f64) -> Result<(SamplePath, SamplePath)> {
  if h > stream.horizon / 10.0 {
    return Err(Error::Domain(format!("drift substep {h} exceeds a tenth of the horizon {}", stream.horizon)));
  }
  let (mut p1, mut p2) = (SamplePath::new(field.m), SamplePath::new(field.m));
  drive_pair(stream, field, x0, h, |t, kind, x1, x2| {
    if kind == GridPoint::LeftLimit {
      for (p, x) in [(&mut p1, x1), (&mut p2, x2)] {
        p.jump_at.push(p.times.len());
        p.left.extend_from_slice(x);
      }
    } else {
      for (p, x) in [(&mut p1, x1), (&mut p2, x2)] {
        p.times.push(t);
        p.values.extend_from_slice(x);
      }
    }
  })?;
  Ok((p1, p2))
}

/// `‖X₁ − X₂‖_{[0,T]}` without storing the paths.
pub fn pair_sup_distance(stream: &CoupledJumpStream, field: &CoefficientField, x0: &[f64], h: f64) -> Result<f64> {
  let mut sup: f64 = 0.0;
  drive_pair(stream, field, x0, h, |_, _, x1, x2| {
    let d2: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    sup = sup.max(d2);
  })?;
  Ok(sup.sqrt())
}

/// Supremum distance over grid values and left limits of two paths on the
/// same grid.
pub fn sup_distance(p1: &SamplePath, p2: &SamplePath) -> Result<f64> {
  if p1.times != p2.times || p1.jump_at != p2.jump_at || p1.m != p2.m {
    return Err(Error::InvalidInput("paths live on different grids".into()));
  }
  let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
  let m = p1.m;
  let on_grid = p1.values.chunks_exact(m).zip(p2.values.chunks_exact(m)).map(|(a, b)| dist(a, b));
  let on_left = p1.left.chunks_exact(m).zip(p2.left.chunks_exact(m)).map(|(a, b)| dist(a, b));
  Ok(on_grid.chain(on_left).fold(0.0, f64::max).sqrt())
}

/// The stream of `X_t(s) = X(st)/g` on `[0, T]` from that of `X` on `[0, tT]`.
pub fn rescale_driver_stream(stream: &CoupledJumpStream, t: f64, g: f64) -> Result<CoupledJumpStream> {
  if !(t > 0.0 && g > 0.0) {
    return Err(Error::Domain(format!("rescaling needs t, g > 0, got t={t}, g={g}")));
  }
  let mut out = stream.clone();
  out.horizon = stream.horizon / t;
  out.times.iter_mut().for_each(|s| *s /= t);
  out.jumps1.iter_mut().chain(out.jumps2.iter_mut()).for_each(|j| *j /= g);
  out.comp1.iter_mut().chain(out.comp2.iter_mut()).for_each(|c| *c *= t / g);
  out.eps = (stream.eps.0 / g, stream.eps.1 / g);
  // dt ⊗ dΓ on [0,tT] becomes ds ⊗ d(tΓ) on [0,T]
  out.epochs.iter_mut().for_each(|e| *e *= t);
  out.meta.lambda = stream.meta.lambda.map(|l| l * t);
  Ok(out)
}
