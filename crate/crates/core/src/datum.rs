//! Initial data with analytic first and second derivatives.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hamiltonians::{ExprField, ScalarField};

/// `c + ⟨b, x - x0⟩ + ½⟨A(x - x0), x - x0⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
    pub center: Vec<f64>,
}

impl Quadratic {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: f64, center: Vec<f64>) -> Result<Self> {
        let n = center.len();
        if b.len() != n || a.len() != n * n {
            return Err(Error::InvalidInput(format!("quadratic datum needs an {n}×{n} matrix and {n}-vector")));
        }
        Ok(Self { a, b, c, center })
    }

    /// `½ a |x|²`.
    pub fn isotropic(n: usize, a: f64) -> Self {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = a;
        }
        Self { a: m, b: vec![0.0; n], c: 0.0, center: vec![0.0; n] }
    }

    /// `⟨p, x⟩ + c`.
    pub fn linear(p: Vec<f64>, c: f64) -> Self {
        let n = p.len();
        Self { a: vec![0.0; n * n], b: p, c, center: vec![0.0; n] }
    }

    fn offset(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).map(|(a, b)| a - b).collect()
    }
}

impl ScalarField for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let d = self.offset(x);
        let mut v = self.c;
        for i in 0..n {
            v += self.b[i] * d[i];
            for j in 0..n {
                v += 0.5 * self.a[i * n + j] * d[i] * d[j];
            }
        }
        v
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let d = self.offset(x);
        (0..n).map(|i| self.b[i] + (0..n).map(|j| 0.5 * (self.a[i * n + j] + self.a[j * n + i]) * d[j]).sum::<f64>()).collect()
    }
    fn hess(&self, _x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = 0.5 * (self.a[i * n + j] + self.a[j * n + i]);
            }
        }
        h
    }
    fn is_constant(&self) -> bool {
        self.a.iter().chain(&self.b).all(|v| *v == 0.0)
    }
}

/// `amplitude · exp(-|x - center|² / (2 width²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub amplitude: f64,
    pub width: f64,
    pub center: Vec<f64>,
}

impl ScalarField for Gaussian {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        self.amplitude * (-r2 / (2.0 * self.width * self.width)).exp()
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let v = self.value(x);
        let s2 = self.width * self.width;
        x.iter().zip(&self.center).map(|(a, b)| -v * (a - b) / s2).collect()
    }
    fn hess(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let v = self.value(x);
        let s2 = self.width * self.width;
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                h[i * n + j] = v * (d[i] * d[j] / (s2 * s2) - delta / s2);
            }
        }
        h
    }
}

/// Datum sampled on a grid: values, gradients and Hessians interpolated
/// multilinearly (clamped outside the box).
#[derive(Debug, Clone)]
pub struct GridDatum {
    pub grid: Grid,
    pub values: Vec<f64>,
    /// `n` interleaved components per node.
    pub grads: Vec<f64>,
    /// `n²` interleaved components per node.
    pub hessians: Vec<f64>,
}

impl GridDatum {
    /// Derivatives by centered differencing (one-sided at the box faces).
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        let n = grid.dim();
        let mut grads = vec![0.0; grid.len() * n];
        for i in 0..grid.len() {
            for k in 0..n {
                grads[i * n + k] = grid.diff(&values, 1, 0, i, k);
            }
        }
        let mut hessians = vec![0.0; grid.len() * n * n];
        for i in 0..grid.len() {
            for a in 0..n {
                for b in 0..n {
                    hessians[i * n * n + a * n + b] = grid.diff(&grads, n, a, i, b);
                }
            }
        }
        for i in 0..grid.len() {
            let h = &mut hessians[i * n * n..(i + 1) * n * n];
            for a in 0..n {
                for b in 0..a {
                    let m = 0.5 * (h[a * n + b] + h[b * n + a]);
                    h[a * n + b] = m;
                    h[b * n + a] = m;
                }
            }
        }
        Ok(Self { grid, values, grads, hessians })
    }
}

impl ScalarField for GridDatum {
    fn dim(&self) -> usize {
        self.grid.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.grid.interpolate_into(&self.grads, self.dim(), x, &mut out);
        out
    }
    fn hess(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        self.grid.interpolate_into(&self.hessians, n * n, x, &mut out);
        out
    }
}

/// `f + k` for a constant `k`.
#[derive(Debug, Clone)]
pub struct Shifted {
    pub inner: Arc<dyn ScalarField>,
    pub shift: f64,
}

impl ScalarField for Shifted {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x) + self.shift
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.inner.grad(x)
    }
    fn hess(&self, x: &[f64]) -> Vec<f64> {
        self.inner.hess(x)
    }
    fn is_constant(&self) -> bool {
        self.inner.is_constant()
    }
}

/// `f + ½ ε |x - center|²`, the usual way to make a touching test function strict.
#[derive(Debug, Clone)]
pub struct Penalized {
    pub inner: Arc<dyn ScalarField>,
    pub center: Vec<f64>,
    pub eps: f64,
}

impl ScalarField for Penalized {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        self.inner.value(x) + 0.5 * self.eps * r2
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.inner.grad(x);
        for (k, gk) in g.iter_mut().enumerate() {
            *gk += self.eps * (x[k] - self.center[k]);
        }
        g
    }
    fn hess(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut h = self.inner.hess(x);
        for i in 0..n {
            h[i * n + i] += self.eps;
        }
        h
    }
}

/// Configuration form of a datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatumSpec {
    /// Expression in `x1..xn`.
    Expression { expr: String },
    /// `c + ⟨b, x - center⟩ + ½ a |x - center|²`.
    Quadratic {
        a: f64,
        #[serde(default)]
        b: Option<Vec<f64>>,
        #[serde(default)]
        c: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// `⟨p, x⟩ + c`.
    Linear {
        p: Vec<f64>,
        #[serde(default)]
        c: f64,
    },
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
}

fn sized(v: &Option<Vec<f64>>, n: usize, what: &str) -> Result<Vec<f64>> {
    match v {
        None => Ok(vec![0.0; n]),
        Some(v) if v.len() == n => Ok(v.clone()),
        Some(v) => Err(Error::InvalidInput(format!("{what} has length {}, expected {n}", v.len()))),
    }
}

impl DatumSpec {
    pub fn build(&self, n: usize) -> Result<Arc<dyn ScalarField>> {
        Ok(match self {
            DatumSpec::Expression { expr } => Arc::new(ExprField::parse(expr, n)?),
            DatumSpec::Quadratic { a, b, c, center } => {
                let mut q = Quadratic::isotropic(n, *a);
                q.b = sized(b, n, "b")?;
                q.c = *c;
                q.center = sized(center, n, "center")?;
                Arc::new(q)
            }
            DatumSpec::Linear { p, c } => {
                if p.len() != n {
                    return Err(Error::InvalidInput(format!("p has length {}, expected {n}", p.len())));
                }
                Arc::new(Quadratic::linear(p.clone(), *c))
            }
            DatumSpec::Gaussian { amplitude, width, center } => {
                if !(*width > 0.0) {
                    return Err(Error::InvalidInput("gaussian width must be positive".into()));
                }
                Arc::new(Gaussian { amplitude: *amplitude, width: *width, center: sized(center, n, "center")? })
            }
        })
    }
}
