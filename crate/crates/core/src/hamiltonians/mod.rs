//! Hamiltonians `H = (H^1, …, H^m)`, the drift nonlinearity `F`, and the
//! Poisson-bracket commutation test.

mod builtin;
mod drift;

pub use builtin::{
    builtin, ExprHamiltonian, Family, HomogeneousConvex, LinearGrowth, LinearMomentum, QuadraticMomentum,
    SeparatedPotential,
};
pub use drift::{
    check_degenerate_ellipticity, check_monotone_in_r, drift_bounds_on_ball, DampedHeat, DriftBounds, DriftOperator,
    DriftFamily, DriftReport, FnDrift, Heat, ConstantDrift, ZeroDrift,
};

use std::fmt::Debug;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{indexed_names, Expr};

/// One scalar Hamiltonian `H(p, x)` with analytic derivatives through order two.
///
/// Matrices are row-major `n × n`; `hess_px[i * n + k] = ∂²H / ∂p_i ∂x_k`.
pub trait Hamiltonian: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn value(&self, p: &[f64], x: &[f64]) -> f64;
    fn grad_p(&self, p: &[f64], x: &[f64]) -> Vec<f64>;
    fn grad_x(&self, p: &[f64], x: &[f64]) -> Vec<f64>;
    fn hess_pp(&self, p: &[f64], x: &[f64]) -> Vec<f64>;
    fn hess_px(&self, p: &[f64], x: &[f64]) -> Vec<f64>;
    fn hess_xx(&self, p: &[f64], x: &[f64]) -> Vec<f64>;
    fn is_x_independent(&self) -> bool {
        false
    }
    fn name(&self) -> String;
}

/// A scalar field `f(x)` with gradient and Hessian.
pub trait ScalarField: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
    fn hess(&self, x: &[f64]) -> Vec<f64>;
    fn is_constant(&self) -> bool {
        false
    }
}

/// Scalar field given by an expression in `x1..xn`, differentiated symbolically.
#[derive(Debug, Clone)]
pub struct ExprField {
    n: usize,
    f: Expr,
    grad: Vec<Expr>,
    hess: Vec<Expr>,
    src: String,
}

impl ExprField {
    pub fn parse(src: &str, n: usize) -> Result<Self> {
        let names = indexed_names("x", n);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let f = Expr::parse(src, &refs)?;
        let grad: Vec<Expr> = (0..n).map(|k| f.diff(k)).collect();
        let hess = (0..n).flat_map(|i| (0..n).map(|j| grad[i].diff(j)).collect::<Vec<_>>()).collect();
        Ok(Self { n, f, grad, hess, src: src.to_string() })
    }

    pub fn source(&self) -> &str {
        &self.src
    }
}

impl ScalarField for ExprField {
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.f.eval(x)
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.grad.iter().map(|e| e.eval(x)).collect()
    }
    fn hess(&self, x: &[f64]) -> Vec<f64> {
        self.hess.iter().map(|e| e.eval(x)).collect()
    }
    fn is_constant(&self) -> bool {
        (0..self.n).all(|k| self.f.is_free_of(k))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantField {
    pub value: f64,
    pub n: usize,
}

impl ScalarField for ConstantField {
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, _x: &[f64]) -> f64 {
        self.value
    }
    fn grad(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.n]
    }
    fn hess(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.n * self.n]
    }
    fn is_constant(&self) -> bool {
        true
    }
}

/// Declared (not proven) regularity of the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegularityClass {
    /// `C²_b` on momentum balls; sufficient for `m = 1` or commuting flows.
    C2bOnBalls,
    /// `C⁴_b`, required for general `m > 1`.
    C4b,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommutationReport {
    pub commuting: bool,
    pub max_defect: f64,
    pub samples: usize,
}

/// Tolerance on `|{H^i, H^j}|` below which flows are treated as commuting.
pub const COMMUTATION_TOL: f64 = 1e-8;

/// Radius of the `(p, x)` box used for default sampled checks.
pub const DEFAULT_SAMPLE_RADIUS: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct HamiltonianSystem {
    components: Vec<Arc<dyn Hamiltonian>>,
    n: usize,
    commutation: OnceLock<CommutationReport>,
}

impl HamiltonianSystem {
    pub fn new(components: Vec<Arc<dyn Hamiltonian>>) -> Result<Self> {
        let n = components
            .first()
            .ok_or_else(|| Error::InvalidInput("a Hamiltonian system needs at least one component".into()))?
            .dim();
        if components.iter().any(|h| h.dim() != n) {
            return Err(Error::InvalidInput("components disagree on the spatial dimension".into()));
        }
        Ok(Self { components, n, commutation: OnceLock::new() })
    }

    pub fn single(h: Arc<dyn Hamiltonian>) -> Self {
        Self::new(vec![h]).expect("one component")
    }

    /// Number of components `m`.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Spatial dimension `n`.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn component(&self, i: usize) -> &dyn Hamiltonian {
        self.components[i].as_ref()
    }

    pub fn components(&self) -> &[Arc<dyn Hamiltonian>] {
        &self.components
    }

    pub fn is_x_independent(&self) -> bool {
        self.components.iter().all(|h| h.is_x_independent())
    }

    pub fn regularity(&self) -> RegularityClass {
        if self.len() == 1 || self.commutation_report().commuting {
            RegularityClass::C2bOnBalls
        } else {
            RegularityClass::C4b
        }
    }

    /// Cached result of [`commutation_check`] with default sampling.
    pub fn commutation_report(&self) -> &CommutationReport {
        self.commutation.get_or_init(|| commutation_check(self, 256, 0x5eed))
    }
}

/// `{H^i, H^j} = Σ_k (∂H^i/∂x_k ∂H^j/∂p_k − ∂H^i/∂p_k ∂H^j/∂x_k)`.
pub fn poisson_bracket(system: &HamiltonianSystem, i: usize, j: usize, p: &[f64], x: &[f64]) -> Result<f64> {
    let m = system.len();
    for idx in [i, j] {
        if idx >= m {
            return Err(Error::IndexOutOfRange { index: idx, len: m });
        }
    }
    let (hi, hj) = (system.component(i), system.component(j));
    let (xi, pj) = (hi.grad_x(p, x), hj.grad_p(p, x));
    let (pi, xj) = (hi.grad_p(p, x), hj.grad_x(p, x));
    Ok((0..system.dim()).map(|k| xi[k] * pj[k] - pi[k] * xj[k]).sum())
}

/// Deterministic sample points in `[-radius, radius]^{2n}`.
pub fn sample_points(n: usize, count: usize, radius: f64, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let p = (0..n).map(|_| rng.random_range(-radius..=radius)).collect();
            let x = (0..n).map(|_| rng.random_range(-radius..=radius)).collect();
            (p, x)
        })
        .collect()
}

/// Sup of `|{H^i, H^j}|` over sampled `(p, x)` and all pairs.
pub fn commutation_check(system: &HamiltonianSystem, samples: usize, seed: u64) -> CommutationReport {
    let m = system.len();
    if m < 2 {
        return CommutationReport { commuting: true, max_defect: 0.0, samples: 0 };
    }
    let pts = sample_points(system.dim(), samples, DEFAULT_SAMPLE_RADIUS, seed);
    let mut worst = 0.0_f64;
    for (p, x) in &pts {
        for i in 0..m {
            for j in (i + 1)..m {
                let b = poisson_bracket(system, i, j, p, x).expect("indices in range");
                worst = worst.max(b.abs());
            }
        }
    }
    CommutationReport { commuting: worst <= COMMUTATION_TOL, max_defect: worst, samples }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub max_relative_error: f64,
    pub samples: usize,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Compares analytic first and second derivatives of every component with
/// central differences at `samples` random points of radius `radius`.
pub fn derivative_consistency(system: &HamiltonianSystem, samples: usize, radius: f64, seed: u64) -> DerivativeReport {
    let n = system.dim();
    let eps = 1e-5;
    let mut worst = 0.0_f64;
    for (p, x) in sample_points(n, samples, radius, seed) {
        for h in system.components() {
            let (gp, gx) = (h.grad_p(&p, &x), h.grad_x(&p, &x));
            let (hpp, hpx, hxx) = (h.hess_pp(&p, &x), h.hess_px(&p, &x), h.hess_xx(&p, &x));
            for k in 0..n {
                let (mut pp, mut pm) = (p.clone(), p.clone());
                pp[k] += eps;
                pm[k] -= eps;
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[k] += eps;
                xm[k] -= eps;
                let fd_p = (h.value(&pp, &x) - h.value(&pm, &x)) / (2.0 * eps);
                let fd_x = (h.value(&p, &xp) - h.value(&p, &xm)) / (2.0 * eps);
                worst = worst.max(rel_err(gp[k], fd_p)).max(rel_err(gx[k], fd_x));
                let (gpp, gpm) = (h.grad_p(&pp, &x), h.grad_p(&pm, &x));
                let (gpx_p, gpx_m) = (h.grad_p(&p, &xp), h.grad_p(&p, &xm));
                let (gxx_p, gxx_m) = (h.grad_x(&p, &xp), h.grad_x(&p, &xm));
                for i in 0..n {
                    let fd_pp = (gpp[i] - gpm[i]) / (2.0 * eps);
                    let fd_px = (gpx_p[i] - gpx_m[i]) / (2.0 * eps);
                    let fd_xx = (gxx_p[i] - gxx_m[i]) / (2.0 * eps);
                    worst = worst
                        .max(rel_err(hpp[i * n + k], fd_pp))
                        .max(rel_err(hpx[i * n + k], fd_px))
                        .max(rel_err(hxx[i * n + k], fd_xx));
                }
            }
        }
    }
    DerivativeReport { max_relative_error: worst, samples }
}

/// Sup of `|D_p H^i(p, x)|` summed over components, sampled on `|p| ≤ radius`.
pub fn momentum_speed_bound(system: &HamiltonianSystem, p_radius: f64, xs: &[Vec<f64>]) -> f64 {
    let n = system.dim();
    let pts = momentum_ball_samples(n, p_radius, 16);
    let mut best = 0.0_f64;
    for x in xs {
        for p in &pts {
            for h in system.components() {
                best = best.max(crate::linalg::norm(&h.grad_p(p, x)));
            }
        }
    }
    best
}

/// Structured samples of the closed ball `|p| ≤ radius` including its boundary.
pub fn momentum_ball_samples(n: usize, radius: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let k = per_axis.max(2);
    match n {
        1 => (0..=2 * k).map(|i| vec![radius * (i as f64 / k as f64 - 1.0)]).collect(),
        2 => {
            let mut out = vec![vec![0.0, 0.0]];
            for ri in 1..=k {
                let r = radius * ri as f64 / k as f64;
                let na = 8 * ri;
                for a in 0..na {
                    let th = 2.0 * std::f64::consts::PI * a as f64 / na as f64;
                    out.push(vec![r * th.cos(), r * th.sin()]);
                }
            }
            out
        }
        _ => {
            let mut out = vec![vec![0.0; n]];
            for axis in 0..n {
                for s in [-1.0, 1.0] {
                    for ri in 1..=k {
                        let mut p = vec![0.0; n];
                        p[axis] = s * radius * ri as f64 / k as f64;
                        out.push(p);
                    }
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            for _ in 0..64 * n {
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let len = crate::linalg::norm(&v);
                if len > 1e-12 {
                    let scale = radius * rng.random_range(0.0..=1.0_f64).powf(1.0 / n as f64) / len;
                    out.push(v.iter().map(|c| c * scale).collect());
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(hs: Vec<Arc<dyn Hamiltonian>>) -> HamiltonianSystem {
        HamiltonianSystem::new(hs).unwrap()
    }

    #[test]
    fn bracket_of_position_and_momentum() {
        let s = sys(vec![
            Arc::new(ExprHamiltonian::parse("p1", 1).unwrap()),
            Arc::new(ExprHamiltonian::parse("x1", 1).unwrap()),
        ]);
        for (p, x) in sample_points(1, 10, 3.0, 1) {
            assert_eq!(poisson_bracket(&s, 0, 1, &p, &x).unwrap(), -1.0);
        }
        assert!(matches!(poisson_bracket(&s, 0, 2, &[0.0], &[0.0]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn separated_potentials_bracket() {
        let f1 = Arc::new(ExprField::parse("sin(x1) + x2^2", 2).unwrap());
        let f2 = Arc::new(ExprField::parse("x1*x2", 2).unwrap());
        let s = sys(vec![
            Arc::new(SeparatedPotential::new(f1.clone())),
            Arc::new(SeparatedPotential::new(f2.clone())),
        ]);
        for (p, x) in sample_points(2, 20, 2.0, 9) {
            let (d1, d2) = (f1.grad(&x), f2.grad(&x));
            let expect = (d2[0] - d1[0]) * p[0] + (d2[1] - d1[1]) * p[1];
            let got = poisson_bracket(&s, 0, 1, &p, &x).unwrap();
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn commutation_of_x_independent_pair() {
        let s = sys(vec![
            Arc::new(QuadraticMomentum::new(2)),
            Arc::new(ExprHamiltonian::parse("p1*p2 + exp(p2)", 2).unwrap()),
        ]);
        let r = commutation_check(&s, 64, 3);
        assert!(r.commuting);
        assert_eq!(r.max_defect, 0.0);
    }

    #[test]
    fn non_commuting_pair_reports_sup_momentum() {
        let s = sys(vec![
            Arc::new(QuadraticMomentum::new(1)),
            Arc::new(ExprHamiltonian::parse("0.5*p1^2 - x1", 1).unwrap()),
        ]);
        let r = commutation_check(&s, 128, 11);
        assert!(!r.commuting);
        let sup_p = sample_points(1, 128, DEFAULT_SAMPLE_RADIUS, 11)
            .iter()
            .map(|(p, _)| p[0].abs())
            .fold(0.0, f64::max);
        assert!((r.max_defect - sup_p).abs() < 1e-14);
    }

    #[test]
    fn single_component_commutes_by_convention() {
        let s = HamiltonianSystem::single(Arc::new(QuadraticMomentum::new(1)));
        let r = commutation_check(&s, 10, 0);
        assert!(r.commuting);
        assert_eq!(r.samples, 0);
        assert_eq!(s.regularity(), RegularityClass::C2bOnBalls);
    }
}
