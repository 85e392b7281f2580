use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExprField, Hamiltonian, ScalarField};
use crate::error::{Error, Result};
use crate::expr::{indexed_names, Expr};
use crate::linalg::{dot, identity, mat_vec, sym_eigenvalues};

/// `H(p) = ½|p|²`.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticMomentum {
    n: usize,
}

impl QuadraticMomentum {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl Hamiltonian for QuadraticMomentum {
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, p: &[f64], _x: &[f64]) -> f64 {
        0.5 * dot(p, p)
    }
    fn grad_p(&self, p: &[f64], _x: &[f64]) -> Vec<f64> {
        p.to_vec()
    }
    fn grad_x(&self, _p: &[f64], _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.n]
    }
    fn hess_pp(&self, _p: &[f64], _x: &[f64]) -> Vec<f64> {
        identity(self.n)
    }
    fn hess_px(&self, _p: &[f64], _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.n * self.n]
    }
    fn hess_xx(&self, _p: &[f64], _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.n * self.n]
    }
    fn is_x_independent(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        "0.5*|p|^2".into()
    }
}

/// `H(p) = ⟨c, p⟩` (pure transport).
#[derive(Debug, Clone)]
pub struct LinearMomentum {
    c: Vec<f64>,
}

impl LinearMomentum {
    pub fn new(c: Vec<f64>) -> Self {
        Self { c }
    }
}

impl Hamiltonian for LinearMomentum {
    fn dim(&self) -> usize {
        self.c.len()
    }
    fn value(&self, p: &[f64], _x: &[f64]) -> f64 {
        dot(&self.c, p)
    }
    fn grad_p(&self, _p: &[f64], _x: &[f64]) -> Vec<f64> {
        self.c.clone()
    }
    fn grad_x(&self, _p: &[f64], _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.c.len()]
    }
    fn hess_pp(&self, _p: &[f64], _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.c.len().pow(2)]
    }
    fn hess_px(&self, _p: &[f64], _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.c.len().pow(2)]
    }
    fn hess_xx(&self, _p: &[f64], _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.c.len().pow(2)]
    }
    fn is_x_independent(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        format!("<{:?}, p>", self.c)
    }
}

/// `H(p, x) = ½|p|² − f(x)`.
#[derive(Debug, Clone)]
pub struct SeparatedPotential {
    f: Arc<dyn ScalarField>,
    n: usize,
}

impl SeparatedPotential {
    pub fn new(f: Arc<dyn ScalarField>) -> Self {
        let n = f.dim();
        Self { f, n }
    }
}

impl Hamiltonian for SeparatedPotential {
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, p: &[f64], x: &[f64]) -> f64 {
        0.5 * dot(p, p) - self.f.value(x)
    }
    fn grad_p(&self, p: &[f64], _x: &[f64]) -> Vec<f64> {
        p.to_vec()
    }
    fn grad_x(&self, _p: &[f64], x: &[f64]) -> Vec<f64> {
        self.f.grad(x).into_iter().map(|v| -v).collect()
    }
    fn hess_pp(&self, _p: &[f64], _x: &[f64]) -> Vec<f64> {
        identity(self.n)
    }
    fn hess_px(&self, _p: &[f64], _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.n * self.n]
    }
    fn hess_xx(&self, _p: &[f64], x: &[f64]) -> Vec<f64> {
        self.f.hess(x).into_iter().map(|v| -v).collect()
    }
    fn is_x_independent(&self) -> bool {
        self.f.is_constant()
    }
    fn name(&self) -> String {
        "0.5*|p|^2 - f(x)".into()
    }
}

/// `H(p, x) = a(x) (|p|² + 1)^{1/2}`.
#[derive(Debug, Clone)]
pub struct LinearGrowth {
    a: Arc<dyn ScalarField>,
    n: usize,
}

impl LinearGrowth {
    pub fn new(a: Arc<dyn ScalarField>) -> Self {
        let n = a.dim();
        Self { a, n }
    }
}

impl Hamiltonian for LinearGrowth {
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, p: &[f64], x: &[f64]) -> f64 {
        self.a.value(x) * (dot(p, p) + 1.0).sqrt()
    }
    fn grad_p(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let s = (dot(p, p) + 1.0).sqrt();
        let a = self.a.value(x);
        p.iter().map(|v| a * v / s).collect()
    }
    fn grad_x(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let s = (dot(p, p) + 1.0).sqrt();
        self.a.grad(x).into_iter().map(|v| v * s).collect()
    }
    fn hess_pp(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let s = (dot(p, p) + 1.0).sqrt();
        let a = self.a.value(x);
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                h[i * n + j] = a * (delta / s - p[i] * p[j] / (s * s * s));
            }
        }
        h
    }
    fn hess_px(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let s = (dot(p, p) + 1.0).sqrt();
        let da = self.a.grad(x);
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                h[i * n + k] = p[i] / s * da[k];
            }
        }
        h
    }
    fn hess_xx(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let s = (dot(p, p) + 1.0).sqrt();
        self.a.hess(x).into_iter().map(|v| v * s).collect()
    }
    fn is_x_independent(&self) -> bool {
        self.a.is_constant()
    }
    fn name(&self) -> String {
        "a(x)*sqrt(|p|^2 + 1)".into()
    }
}

/// `H(p, x) = ⟨g(x) p, p⟩^{q/2}` with `q ≥ 2` and `g` uniformly positive definite.
#[derive(Debug, Clone)]
pub struct HomogeneousConvex {
    g: Vec<Arc<dyn ScalarField>>,
    q: f64,
    n: usize,
}

impl HomogeneousConvex {
    /// `g` is the row-major list of `n²` entries. `bound` is the constant
    /// `C` in `C⁻¹ I ≤ g ≤ C I`, checked at sampled points of `[-radius, radius]^n`.
    pub fn new(g: Vec<Arc<dyn ScalarField>>, q: f64, bound: f64, radius: f64) -> Result<Self> {
        if !(q >= 2.0) {
            return Err(Error::InvalidInput(format!("homogeneous_convex requires q >= 2, got {q}")));
        }
        let n = (g.len() as f64).sqrt().round() as usize;
        if n == 0 || n * n != g.len() {
            return Err(Error::InvalidInput("g must have n² entries".into()));
        }
        let this = Self { g, q, n };
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e37);
        let mut pts = vec![vec![0.0; n]];
        for _ in 0..64 {
            pts.push((0..n).map(|_| rng.random_range(-radius..=radius)).collect());
        }
        for x in &pts {
            let gx = this.matrix(x);
            for i in 0..n {
                for j in 0..i {
                    if (gx[i * n + j] - gx[j * n + i]).abs() > 1e-12 {
                        return Err(Error::InvalidInput(format!("g is not symmetric at {x:?}")));
                    }
                }
            }
            let ev = sym_eigenvalues(&gx, n);
            if ev[0] < 1.0 / bound || ev[n - 1] > bound {
                return Err(Error::InvalidInput(format!(
                    "g has eigenvalues [{}, {}] outside [1/{bound}, {bound}] at {x:?}",
                    ev[0],
                    ev[n - 1]
                )));
            }
        }
        Ok(this)
    }

    fn matrix(&self, x: &[f64]) -> Vec<f64> {
        self.g.iter().map(|e| e.value(x)).collect()
    }

    /// Returns `(Q, g p, [pᵀ ∂_k g p]_k, ∂_k g p as n×n with row k)`.
    fn pieces(&self, p: &[f64], x: &[f64]) -> (f64, Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let n = self.n;
        let gx = self.matrix(x);
        let gp = mat_vec(&gx, p);
        let q = dot(&gp, p);
        let grads: Vec<Vec<f64>> = self.g.iter().map(|e| e.grad(x)).collect();
        let mut dk_gp = vec![vec![0.0; n]; n];
        let mut quad = vec![0.0; n];
        for k in 0..n {
            for i in 0..n {
                dk_gp[k][i] = (0..n).map(|j| grads[i * n + j][k] * p[j]).sum();
            }
            quad[k] = dot(&dk_gp[k], p);
        }
        (q, gp, quad, dk_gp)
    }

    /// `Q^e` with the convention `0^0 = 1` and `0^e = 0` for `e > 0`.
    fn qpow(q: f64, e: f64) -> f64 {
        if e == 0.0 {
            1.0
        } else if q <= 0.0 {
            0.0
        } else {
            q.powf(e)
        }
    }
}

impl Hamiltonian for HomogeneousConvex {
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, p: &[f64], x: &[f64]) -> f64 {
        let gp = mat_vec(&self.matrix(x), p);
        Self::qpow(dot(&gp, p), self.q / 2.0)
    }
    fn grad_p(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let gp = mat_vec(&self.matrix(x), p);
        let c = self.q * Self::qpow(dot(&gp, p), self.q / 2.0 - 1.0);
        gp.iter().map(|v| c * v).collect()
    }
    fn grad_x(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let (q, _, quad, _) = self.pieces(p, x);
        let c = 0.5 * self.q * Self::qpow(q, self.q / 2.0 - 1.0);
        quad.iter().map(|v| c * v).collect()
    }
    fn hess_pp(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let gx = self.matrix(x);
        let gp = mat_vec(&gx, p);
        let q = dot(&gp, p);
        let c1 = self.q * Self::qpow(q, self.q / 2.0 - 1.0);
        let c2 = if self.q == 2.0 { 0.0 } else { self.q * (self.q - 2.0) * Self::qpow(q, self.q / 2.0 - 2.0) };
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = c1 * gx[i * n + j] + c2 * gp[i] * gp[j];
            }
        }
        h
    }
    fn hess_px(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let (q, gp, quad, dk_gp) = self.pieces(p, x);
        let c1 = self.q * Self::qpow(q, self.q / 2.0 - 1.0);
        let c2 = if self.q == 2.0 { 0.0 } else { self.q * (self.q / 2.0 - 1.0) * Self::qpow(q, self.q / 2.0 - 2.0) };
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                h[i * n + k] = c2 * quad[k] * gp[i] + c1 * dk_gp[k][i];
            }
        }
        h
    }
    fn hess_xx(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let (q, _, quad, _) = self.pieces(p, x);
        let hess: Vec<Vec<f64>> = self.g.iter().map(|e| e.hess(x)).collect();
        let c1 = 0.5 * self.q * Self::qpow(q, self.q / 2.0 - 1.0);
        let c2 = if self.q == 2.0 {
            0.0
        } else {
            0.5 * self.q * (0.5 * self.q - 1.0) * Self::qpow(q, self.q / 2.0 - 2.0)
        };
        let mut h = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                let mut second = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        second += p[i] * hess[i * n + j][k * n + l] * p[j];
                    }
                }
                h[k * n + l] = c2 * quad[k] * quad[l] + c1 * second;
            }
        }
        h
    }
    fn is_x_independent(&self) -> bool {
        self.g.iter().all(|e| e.is_constant())
    }
    fn name(&self) -> String {
        format!("<g(x)p, p>^({}/2)", self.q)
    }
}

/// Arbitrary smooth `H(p, x)` given as an expression in `p1..pn, x1..xn`.
#[derive(Debug, Clone)]
pub struct ExprHamiltonian {
    n: usize,
    h: Expr,
    dp: Vec<Expr>,
    dx: Vec<Expr>,
    dpp: Vec<Expr>,
    dpx: Vec<Expr>,
    dxx: Vec<Expr>,
    src: String,
    x_free: bool,
}

impl ExprHamiltonian {
    pub fn parse(src: &str, n: usize) -> Result<Self> {
        let mut names = indexed_names("p", n);
        names.extend(indexed_names("x", n));
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let h = Expr::parse(src, &refs)?;
        let dp: Vec<Expr> = (0..n).map(|k| h.diff(k)).collect();
        let dx: Vec<Expr> = (0..n).map(|k| h.diff(n + k)).collect();
        let mut dpp = Vec::with_capacity(n * n);
        let mut dpx = Vec::with_capacity(n * n);
        let mut dxx = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                dpp.push(dp[i].diff(j));
                dpx.push(dp[i].diff(n + j));
                dxx.push(dx[i].diff(n + j));
            }
        }
        let x_free = (0..n).all(|k| h.is_free_of(n + k));
        Ok(Self { n, h, dp, dx, dpp, dpx, dxx, src: src.to_string(), x_free })
    }

    fn vars(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.n);
        v.extend_from_slice(&p[..self.n]);
        v.extend_from_slice(&x[..self.n]);
        v
    }
}

impl Hamiltonian for ExprHamiltonian {
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, p: &[f64], x: &[f64]) -> f64 {
        self.h.eval(&self.vars(p, x))
    }
    fn grad_p(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let v = self.vars(p, x);
        self.dp.iter().map(|e| e.eval(&v)).collect()
    }
    fn grad_x(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let v = self.vars(p, x);
        self.dx.iter().map(|e| e.eval(&v)).collect()
    }
    fn hess_pp(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let v = self.vars(p, x);
        self.dpp.iter().map(|e| e.eval(&v)).collect()
    }
    fn hess_px(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let v = self.vars(p, x);
        self.dpx.iter().map(|e| e.eval(&v)).collect()
    }
    fn hess_xx(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let v = self.vars(p, x);
        self.dxx.iter().map(|e| e.eval(&v)).collect()
    }
    fn is_x_independent(&self) -> bool {
        self.x_free
    }
    fn name(&self) -> String {
        self.src.clone()
    }
}

/// Named Hamiltonian families with expression-valued parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Smooth `H(p)`; the expression may only use `p1..pn`.
    XIndependent { h: String },
    /// `½|p|² − f(x)`.
    SeparatedPotential { f: String },
    /// `a(x) (|p|² + 1)^{1/2}`.
    LinearGrowth { a: String },
    /// `⟨g(x)p, p⟩^{q/2}`; `g` is given row by row.
    HomogeneousConvex {
        g: Vec<Vec<String>>,
        q: f64,
        #[serde(default = "default_bound")]
        bound: f64,
    },
    /// Any smooth `H(p, x)`.
    Expression { h: String },
}

fn default_bound() -> f64 {
    100.0
}

fn field(src: &str, n: usize) -> Result<Arc<dyn ScalarField>> {
    Ok(Arc::new(ExprField::parse(src, n)?))
}

/// Builds one component of a given family in spatial dimension `n`.
pub fn builtin(n: usize, family: &Family) -> Result<Arc<dyn Hamiltonian>> {
    if n == 0 {
        return Err(Error::InvalidInput("spatial dimension must be at least 1".into()));
    }
    Ok(match family {
        Family::XIndependent { h } => {
            let e = ExprHamiltonian::parse(h, n)?;
            if !e.is_x_independent() {
                return Err(Error::InvalidInput(format!("x_independent Hamiltonian `{h}` depends on x")));
            }
            Arc::new(e)
        }
        Family::SeparatedPotential { f } => Arc::new(SeparatedPotential { f: field(f, n)?, n }),
        Family::LinearGrowth { a } => Arc::new(LinearGrowth { a: field(a, n)?, n }),
        Family::HomogeneousConvex { g, q, bound } => {
            if g.len() != n || g.iter().any(|row| row.len() != n) {
                return Err(Error::InvalidInput(format!("g must be {n}×{n}")));
            }
            let entries = g.iter().flatten().map(|s| field(s, n)).collect::<Result<Vec<_>>>()?;
            Arc::new(HomogeneousConvex::new(entries, *q, *bound, super::DEFAULT_SAMPLE_RADIUS)?)
        }
        Family::Expression { h } => Arc::new(ExprHamiltonian::parse(h, n)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::{derivative_consistency, HamiltonianSystem};

    #[test]
    fn linear_growth_at_zero_momentum() {
        let h = builtin(2, &Family::LinearGrowth { a: "1".into() }).unwrap();
        assert_eq!(h.value(&[0.0, 0.0], &[0.3, -0.2]), 1.0);
        assert_eq!(h.grad_p(&[0.0, 0.0], &[0.3, -0.2]), vec![0.0, 0.0]);
    }

    #[test]
    fn separated_potential_with_zero_potential() {
        let h = builtin(2, &Family::SeparatedPotential { f: "0".into() }).unwrap();
        assert_eq!(h.value(&[3.0, 4.0], &[1.0, 1.0]), 12.5);
        assert!(h.is_x_independent());
    }

    #[test]
    fn homogeneous_convex_identity_metric() {
        let g = vec![vec!["1".to_string(), "0".to_string()], vec!["0".to_string(), "1".to_string()]];
        let h = builtin(2, &Family::HomogeneousConvex { g, q: 2.0, bound: 10.0 }).unwrap();
        assert_eq!(h.value(&[1.0, 1.0], &[0.0, 0.0]), 2.0);
        assert_eq!(h.grad_p(&[1.0, 1.0], &[0.0, 0.0]), vec![2.0, 2.0]);
    }

    #[test]
    fn homogeneous_convex_rejects_small_exponent_and_bad_metric() {
        let g = vec![vec!["1".to_string()]];
        assert!(builtin(1, &Family::HomogeneousConvex { g: g.clone(), q: 1.5, bound: 10.0 }).is_err());
        let bad = vec![vec!["x1".to_string()]];
        assert!(builtin(1, &Family::HomogeneousConvex { g: bad, q: 2.0, bound: 10.0 }).is_err());
    }

    #[test]
    fn x_independent_family_rejects_spatial_dependence() {
        assert!(builtin(1, &Family::XIndependent { h: "p1^2 + x1".into() }).is_err());
    }

    #[test]
    fn homogeneity_in_momentum() {
        let g = vec![
            vec!["2 + sin(x1)".to_string(), "0.3".to_string()],
            vec!["0.3".to_string(), "1.5 + 0.5*cos(x2)".to_string()],
        ];
        let q = 3.0;
        let h = builtin(2, &Family::HomogeneousConvex { g, q, bound: 10.0 }).unwrap();
        let (p, x) = ([0.4, -1.1], [0.2, 0.9]);
        for lambda in [0.5, 2.0, 3.7] {
            let scaled = [lambda * p[0], lambda * p[1]];
            let ratio = h.value(&scaled, &x) / h.value(&p, &x);
            assert!((ratio - lambda.powf(q)).abs() < 1e-12 * lambda.powf(q));
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let g = vec![
            vec!["2 + sin(x1)".to_string(), "0.3*cos(x2)".to_string()],
            vec!["0.3*cos(x2)".to_string(), "1.5 + 0.5*cos(x1*x2)".to_string()],
        ];
        let families = vec![
            Family::XIndependent { h: "sqrt(1 + p1^2 + p2^2) + exp(0.1*p1)".into() },
            Family::SeparatedPotential { f: "sin(x1)*cos(x2)".into() },
            Family::LinearGrowth { a: "1 + 0.5*sin(x1 + x2)".into() },
            Family::HomogeneousConvex { g: g.clone(), q: 2.0, bound: 10.0 },
            Family::HomogeneousConvex { g, q: 3.0, bound: 10.0 },
            Family::Expression { h: "0.5*p1^2 + p2*sin(x1) - x2^2".into() },
        ];
        for fam in families {
            let sys = HamiltonianSystem::single(builtin(2, &fam).unwrap());
            let r = derivative_consistency(&sys, 100, 1.5, 42);
            assert!(r.max_relative_error < 1e-5, "{fam:?}: {}", r.max_relative_error);
        }
    }
}
