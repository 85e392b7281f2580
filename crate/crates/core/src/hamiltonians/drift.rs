use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drift nonlinearity `F(X, p, r, x, t)`: degenerate elliptic in `X`,
/// nonincreasing in `r`.
///
/// `X` is a row-major symmetric `n × n` matrix.
pub trait DriftOperator: Send + Sync + fmt::Debug {
    fn eval(&self, xm: &[f64], p: &[f64], r: f64, x: &[f64], t: f64) -> f64;

    /// Lipschitz constant `Λ` of `F` in `X` (operator norm), used for the
    /// parabolic step restriction.
    fn ellipticity_bound(&self) -> f64;

    /// `true` when `F` does not depend on `X` at all.
    fn is_first_order(&self) -> bool {
        self.ellipticity_bound() == 0.0
    }

    /// `true` when `F` ignores `r`.
    fn is_r_independent(&self) -> bool {
        false
    }

    /// Optional modulus `ω` for the structure condition, stored as metadata only.
    fn structure_modulus(&self) -> Option<f64> {
        None
    }

    fn name(&self) -> String;
}

fn trace(xm: &[f64], n: usize) -> f64 {
    (0..n).map(|i| xm[i * n + i]).sum()
}

fn side(xm: &[f64]) -> usize {
    (xm.len() as f64).sqrt().round() as usize
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDrift;

impl DriftOperator for ZeroDrift {
    fn eval(&self, _xm: &[f64], _p: &[f64], _r: f64, _x: &[f64], _t: f64) -> f64 {
        0.0
    }
    fn ellipticity_bound(&self) -> f64 {
        0.0
    }
    fn is_r_independent(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        "0".into()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantDrift(pub f64);

impl DriftOperator for ConstantDrift {
    fn eval(&self, _xm: &[f64], _p: &[f64], _r: f64, _x: &[f64], _t: f64) -> f64 {
        self.0
    }
    fn ellipticity_bound(&self) -> f64 {
        0.0
    }
    fn is_r_independent(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        format!("{}", self.0)
    }
}

/// `F = ν tr X`.
#[derive(Debug, Clone, Copy)]
pub struct Heat {
    pub nu: f64,
}

impl DriftOperator for Heat {
    fn eval(&self, xm: &[f64], _p: &[f64], _r: f64, _x: &[f64], _t: f64) -> f64 {
        self.nu * trace(xm, side(xm))
    }
    fn ellipticity_bound(&self) -> f64 {
        self.nu
    }
    fn is_r_independent(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        format!("{}*tr(X)", self.nu)
    }
}

/// `F = ν tr X − λ r` with `λ ≥ 0`.
#[derive(Debug, Clone, Copy)]
pub struct DampedHeat {
    pub nu: f64,
    pub lambda: f64,
}

impl DriftOperator for DampedHeat {
    fn eval(&self, xm: &[f64], _p: &[f64], r: f64, _x: &[f64], _t: f64) -> f64 {
        self.nu * trace(xm, side(xm)) - self.lambda * r
    }
    fn ellipticity_bound(&self) -> f64 {
        self.nu
    }
    fn is_r_independent(&self) -> bool {
        self.lambda == 0.0
    }
    fn name(&self) -> String {
        format!("{}*tr(X) - {}*r", self.nu, self.lambda)
    }
}

type DriftFn = dyn Fn(&[f64], &[f64], f64, &[f64], f64) -> f64 + Send + Sync;

/// Drift given by a closure together with its declared ellipticity bound.
#[derive(Clone)]
pub struct FnDrift {
    f: Arc<DriftFn>,
    lambda: f64,
    label: String,
}

impl FnDrift {
    pub fn new<G>(label: impl Into<String>, lambda: f64, f: G) -> Self
    where
        G: Fn(&[f64], &[f64], f64, &[f64], f64) -> f64 + Send + Sync + 'static,
    {
        Self { f: Arc::new(f), lambda, label: label.into() }
    }
}

impl fmt::Debug for FnDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDrift").field("label", &self.label).field("lambda", &self.lambda).finish()
    }
}

impl DriftOperator for FnDrift {
    fn eval(&self, xm: &[f64], p: &[f64], r: f64, x: &[f64], t: f64) -> f64 {
        (self.f)(xm, p, r, x, t)
    }
    fn ellipticity_bound(&self) -> f64 {
        self.lambda
    }
    fn name(&self) -> String {
        self.label.clone()
    }
}

/// Outcome of a sampled structural check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub passed: bool,
    /// Largest violation seen (0 when none).
    pub worst_violation: f64,
    pub samples: usize,
}

fn random_sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = rng.random_range(-scale..=scale);
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
    }
    m
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-scale..=scale)).collect();
    let mut e = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            e[i * n + j] = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum();
        }
    }
    e
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
}

/// Checks `F(X + E, ·) ≥ F(X, ·)` for random positive semidefinite `E`.
pub fn check_degenerate_ellipticity(f: &dyn DriftOperator, n: usize, samples: usize, seed: u64) -> DriftReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let xm = random_sym(&mut rng, n, 2.0);
        let e = random_psd(&mut rng, n, 1.0);
        let p = random_vec(&mut rng, n, 2.0);
        let x = random_vec(&mut rng, n, 2.0);
        let r = rng.random_range(-2.0..=2.0);
        let t = rng.random_range(0.0..=1.0);
        let shifted: Vec<f64> = xm.iter().zip(&e).map(|(a, b)| a + b).collect();
        let drop = f.eval(&xm, &p, r, &x, t) - f.eval(&shifted, &p, r, &x, t);
        worst = worst.max(drop);
    }
    DriftReport { passed: worst <= 1e-12, worst_violation: worst, samples }
}

/// Checks that `F` is nonincreasing in `r`.
pub fn check_monotone_in_r(f: &dyn DriftOperator, n: usize, samples: usize, seed: u64) -> DriftReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let xm = random_sym(&mut rng, n, 2.0);
        let p = random_vec(&mut rng, n, 2.0);
        let x = random_vec(&mut rng, n, 2.0);
        let r = rng.random_range(-2.0..=2.0);
        let dr = rng.random_range(0.0..=1.0);
        let t = rng.random_range(0.0..=1.0);
        let rise = f.eval(&xm, &p, r + dr, &x, t) - f.eval(&xm, &p, r, &x, t);
        worst = worst.max(rise);
    }
    DriftReport { passed: worst <= 1e-12, worst_violation: worst, samples }
}

/// Sampled infimum and supremum of `F` over `|X| + |p| + |r| ≤ radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftBounds {
    pub inf: f64,
    pub sup: f64,
    pub radius: f64,
    pub samples: usize,
}

/// Samples `F` on the ball `|X|_F + |p| + |r| ≤ radius` at the given spatial
/// points and times. The structured extremes `±radius·I/√n`, `±radius·e_k`
/// and `r = ±radius` are always included.
pub fn drift_bounds_on_ball(
    f: &dyn DriftOperator,
    n: usize,
    radius: f64,
    xs: &[Vec<f64>],
    ts: &[f64],
    samples: usize,
    seed: u64,
) -> Result<DriftBounds> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero_m = vec![0.0; n * n];
    let zero_p = vec![0.0; n];
    let mut args: Vec<(Vec<f64>, Vec<f64>, f64)> = vec![(zero_m.clone(), zero_p.clone(), 0.0)];
    let scaled_id = |s: f64| {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = s * radius / (n as f64).sqrt();
        }
        m
    };
    for s in [-1.0, 1.0] {
        args.push((scaled_id(s), zero_p.clone(), 0.0));
        args.push((zero_m.clone(), zero_p.clone(), s * radius));
        for k in 0..n {
            let mut p = zero_p.clone();
            p[k] = s * radius;
            args.push((zero_m.clone(), p, 0.0));
            let mut m = zero_m.clone();
            m[k * n + k] = s * radius;
            args.push((m, zero_p.clone(), 0.0));
        }
    }
    for _ in 0..samples {
        let mut xm = random_sym(&mut rng, n, 1.0);
        let mut p = random_vec(&mut rng, n, 1.0);
        let mut r: f64 = rng.random_range(-1.0..=1.0);
        let total = crate::linalg::norm(&xm) + crate::linalg::norm(&p) + r.abs();
        let target = radius * rng.random_range(0.0..=1.0_f64);
        if total > 0.0 {
            let s = target / total;
            xm.iter_mut().for_each(|v| *v *= s);
            p.iter_mut().for_each(|v| *v *= s);
            r *= s;
        }
        args.push((xm, p, r));
    }
    let origin = [vec![0.0; n]];
    let xs = if xs.is_empty() { &origin[..] } else { xs };
    let ts = if ts.is_empty() { &[0.0][..] } else { ts };
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (xm, p, r) in &args {
        for x in xs {
            for &t in ts {
                let v = f.eval(xm, p, *r, x, t);
                if !v.is_finite() {
                    return Err(Error::UnboundedDrift { radius });
                }
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    Ok(DriftBounds { inf: lo, sup: hi, radius, samples: args.len() * xs.len() * ts.len() })
}

/// Named drift families for configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DriftFamily {
    Zero,
    Constant { c: f64 },
    Heat { nu: f64 },
    DampedHeat { nu: f64, lambda: f64 },
}

impl DriftFamily {
    pub fn build(&self) -> Result<Arc<dyn DriftOperator>> {
        Ok(match *self {
            DriftFamily::Zero => Arc::new(ZeroDrift),
            DriftFamily::Constant { c } => Arc::new(ConstantDrift(c)),
            DriftFamily::Heat { nu } => {
                if !(nu >= 0.0) {
                    return Err(Error::InvalidInput(format!("heat coefficient must be nonnegative, got {nu}")));
                }
                Arc::new(Heat { nu })
            }
            DriftFamily::DampedHeat { nu, lambda } => {
                if !(nu >= 0.0) || !(lambda >= 0.0) {
                    return Err(Error::InvalidInput("damped_heat needs nu >= 0 and lambda >= 0".into()));
                }
                Arc::new(DampedHeat { nu, lambda })
            }
        })
    }
}
