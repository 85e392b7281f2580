//! Characteristics of `du = H(Du, x) ∘ dW`:
//!
//! ```text
//! dX = -D_pH(P, X) dW,   dP = D_xH(P, X) dW,   dZ = (H - P·D_pH)(P, X) dW
//! ```
//!
//! together with the Jacobians `(D_x X, D_x P)` of the flow started from
//! `P(t0) = Dφ(x)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonians::{momentum_ball_samples, Hamiltonian, HamiltonianSystem};
use crate::linalg::{det, identity, mat_mul, max_abs, norm, transpose};
use crate::rough_path::{GeometricRoughPath, TwoLevelIncrements};

/// `|x|` or `|p|` beyond this is reported as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// Default pseudo-time step for the time-change and commuting modes.
pub const DEFAULT_PSEUDO_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharState {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    /// Accumulated `∫(H - P·D_pH) dW`, plus whatever value the state started with.
    pub z: f64,
    /// `D_x X`, row-major.
    pub jx: Vec<f64>,
    /// `D_x P`, row-major.
    pub jp: Vec<f64>,
}

impl CharState {
    /// Start of a characteristic at `x` with momentum `p = Dφ(x)` and
    /// `D_x P = D²φ(x)` (zero when `hess` is `None`).
    pub fn initial(x: Vec<f64>, p: Vec<f64>, hess: Option<Vec<f64>>) -> Self {
        let n = x.len();
        Self { jx: identity(n), jp: hess.unwrap_or_else(|| vec![0.0; n * n]), x, p, z: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn det_jx(&self) -> f64 {
        det(&self.jx, self.dim())
    }

    fn pack(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(Layout::new(self.dim()).len());
        y.extend_from_slice(&self.x);
        y.extend_from_slice(&self.p);
        y.push(self.z);
        y.extend_from_slice(&self.jx);
        y.extend_from_slice(&self.jp);
        y
    }

    fn unpack(y: &[f64], n: usize) -> Self {
        let l = Layout::new(n);
        Self {
            x: y[l.x()].to_vec(),
            p: y[l.p()].to_vec(),
            z: y[l.z],
            jx: y[l.jx()].to_vec(),
            jp: y[l.jp()].to_vec(),
        }
    }

    /// Max-norm distance on `(x, p, z)`.
    pub fn distance(&self, other: &CharState) -> f64 {
        let dx = self.x.iter().zip(&other.x).map(|(a, b)| (a - b).abs());
        let dp = self.p.iter().zip(&other.p).map(|(a, b)| (a - b).abs());
        dx.chain(dp).fold((self.z - other.z).abs(), f64::max)
    }
}

/// Offsets of the packed state `[x, p, z, jx, jp]`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    z: usize,
}

impl Layout {
    fn new(n: usize) -> Self {
        Self { n, z: 2 * n }
    }
    fn len(&self) -> usize {
        2 * self.n + 1 + 2 * self.n * self.n
    }
    fn x(&self) -> std::ops::Range<usize> {
        0..self.n
    }
    fn p(&self) -> std::ops::Range<usize> {
        self.n..2 * self.n
    }
    fn jx(&self) -> std::ops::Range<usize> {
        let s = self.z + 1;
        s..s + self.n * self.n
    }
    fn jp(&self) -> std::ops::Range<usize> {
        let s = self.z + 1 + self.n * self.n;
        s..s + self.n * self.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    /// `m = 1`: integrate the autonomous system in pseudo-time `W_t - W_{t0}`.
    TimeChange,
    /// Compose the per-component autonomous flows; needs vanishing Poisson brackets.
    Commuting,
    /// Second-order (Davie) step per interval using `(ΔW, 𝕎)`.
    RoughStep,
}

impl FlowMode {
    /// The cheapest mode valid for `system`.
    pub fn auto(system: &HamiltonianSystem) -> Self {
        if system.len() == 1 {
            FlowMode::TimeChange
        } else if system.commutation_report().commuting {
            FlowMode::Commuting
        } else {
            FlowMode::RoughStep
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FlowMode::TimeChange => "time_change",
            FlowMode::Commuting => "commuting",
            FlowMode::RoughStep => "rough_step",
        }
    }

    fn validate(self, system: &HamiltonianSystem, path: &GeometricRoughPath) -> Result<()> {
        if path.dim() != system.len() {
            return Err(Error::ModeMismatch {
                mode: self.label(),
                reason: format!("path has {} components but H has {}", path.dim(), system.len()),
            });
        }
        match self {
            FlowMode::TimeChange if system.len() != 1 => Err(Error::ModeMismatch {
                mode: self.label(),
                reason: format!("requires m = 1, got m = {}", system.len()),
            }),
            FlowMode::Commuting if !system.commutation_report().commuting => Err(Error::ModeMismatch {
                mode: self.label(),
                reason: format!(
                    "Poisson brackets do not vanish (max defect {:e})",
                    system.commutation_report().max_defect
                ),
            }),
            _ => Ok(()),
        }
    }
}

/// Right-hand side `(-(H_pp Jp + H_px Jx), H_xp Jp + H_xx Jx)` of the Jacobian system.
fn jacobian_rhs(h: &dyn Hamiltonian, x: &[f64], p: &[f64], jx: &[f64], jp: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let hpp = h.hess_pp(p, x);
    let hpx = h.hess_px(p, x);
    let hxx = h.hess_xx(p, x);
    let a = mat_mul(&hpp, jp, n);
    let b = mat_mul(&hpx, jx, n);
    let djx = a.iter().zip(&b).map(|(u, v)| -(u + v)).collect();
    let c = mat_mul(&transpose(&hpx, n), jp, n);
    let d = mat_mul(&hxx, jx, n);
    let djp = c.iter().zip(&d).map(|(u, v)| u + v).collect();
    (djx, djp)
}

/// Hamiltonian vector field of one component on the packed state.
fn field(h: &dyn Hamiltonian, y: &[f64], l: Layout) -> Vec<f64> {
    let (x, p) = (&y[l.x()], &y[l.p()]);
    let gp = h.grad_p(p, x);
    let gx = h.grad_x(p, x);
    let mut out = Vec::with_capacity(l.len());
    out.extend(gp.iter().map(|v| -v));
    out.extend_from_slice(&gx);
    out.push(h.value(p, x) - crate::linalg::dot(p, &gp));
    let (djx, djp) = jacobian_rhs(h, x, p, &y[l.jx()], &y[l.jp()]);
    out.extend(djx);
    out.extend(djp);
    out
}

/// `DV_i · V_j` on the packed state. The `(x, p, z)` block is analytic; the
/// Jacobian block needs third derivatives of `H` and uses a directional
/// central difference of the coefficient matrices instead.
fn field_derivative(hi: &dyn Hamiltonian, y: &[f64], vj: &[f64], l: Layout) -> Vec<f64> {
    let n = l.n;
    let (x, p) = (&y[l.x()], &y[l.p()]);
    let (a, b) = (&vj[l.x()], &vj[l.p()]);
    let hpp = hi.hess_pp(p, x);
    let hpx = hi.hess_px(p, x);
    let hxx = hi.hess_xx(p, x);
    let gx = hi.grad_x(p, x);
    let mut out = vec![0.0; l.len()];
    for i in 0..n {
        let mut dx = 0.0;
        let mut dp = 0.0;
        for k in 0..n {
            dx -= hpp[i * n + k] * b[k] + hpx[i * n + k] * a[k];
            dp += hpx[k * n + i] * b[k] + hxx[i * n + k] * a[k];
        }
        out[i] = dx;
        out[n + i] = dp;
    }
    let mut dz = 0.0;
    for k in 0..n {
        let dgx = gx[k] - (0..n).map(|i| p[i] * hpx[i * n + k]).sum::<f64>();
        let dgp = -(0..n).map(|i| hpp[k * n + i] * p[i]).sum::<f64>();
        dz += dgx * a[k] + dgp * b[k];
    }
    out[l.z] = dz;

    let (jx, jp) = (&y[l.jx()], &y[l.jp()]);
    let scale = 1.0 + norm(x).max(norm(p));
    let dir = norm(a).max(norm(b));
    let mut coeff = vec![0.0; 2 * n * n];
    if dir > 0.0 {
        let eps = 1e-5 * scale / dir;
        let shift = |s: f64| -> (Vec<f64>, Vec<f64>) {
            let xs: Vec<f64> = (0..n).map(|k| x[k] + s * a[k]).collect();
            let ps: Vec<f64> = (0..n).map(|k| p[k] + s * b[k]).collect();
            jacobian_rhs(hi, &xs, &ps, jx, jp)
        };
        let (px, pp) = shift(eps);
        let (mx, mp) = shift(-eps);
        for k in 0..n * n {
            coeff[k] = (px[k] - mx[k]) / (2.0 * eps);
            coeff[n * n + k] = (pp[k] - mp[k]) / (2.0 * eps);
        }
    }
    let (ajx, ajp) = jacobian_rhs(hi, x, p, &vj[l.jx()], &vj[l.jp()]);
    for k in 0..n * n {
        out[l.jx().start + k] = coeff[k] + ajx[k];
        out[l.jp().start + k] = coeff[n * n + k] + ajp[k];
    }
    out
}

fn check_divergence(y: &[f64], l: Layout, time: f64) -> Result<()> {
    let big = |r: std::ops::Range<usize>| {
        let v = &y[r];
        v.iter().any(|c| !c.is_finite()) || norm(v) > DIVERGENCE_LIMIT
    };
    if big(l.x()) || big(l.p()) || !y[l.z].is_finite() {
        return Err(Error::Diverged { time, limit: DIVERGENCE_LIMIT });
    }
    Ok(())
}

/// Autonomous flow of component `h` for pseudo-time `tau` with classical RK4.
fn rk4(h: &dyn Hamiltonian, y: &mut Vec<f64>, tau: f64, step: f64, l: Layout, time: f64) -> Result<()> {
    if tau == 0.0 {
        return Ok(());
    }
    let steps = (tau.abs() / step).ceil().max(1.0) as usize;
    let dt = tau / steps as f64;
    let len = y.len();
    let mut tmp = vec![0.0; len];
    for _ in 0..steps {
        let k1 = field(h, y, l);
        for i in 0..len {
            tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        let k2 = field(h, &tmp, l);
        for i in 0..len {
            tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        let k3 = field(h, &tmp, l);
        for i in 0..len {
            tmp[i] = y[i] + dt * k3[i];
        }
        let k4 = field(h, &tmp, l);
        for i in 0..len {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_divergence(y, l, time)?;
    }
    Ok(())
}

/// One Davie step `Y + Σ V_i ΔW^i + Σ (DV_i·V_j) 𝕎^{ji}`.
fn davie_step(system: &HamiltonianSystem, y: &mut Vec<f64>, dw: &[f64], area: &[f64], l: Layout) {
    let m = system.len();
    let fields: Vec<Vec<f64>> = system.components().iter().map(|h| field(&**h, y, l)).collect();
    let mut next = y.clone();
    for i in 0..m {
        for (k, v) in fields[i].iter().enumerate() {
            next[k] += v * dw[i];
        }
        for j in 0..m {
            let a = area[j * m + i];
            if a == 0.0 {
                continue;
            }
            let d = field_derivative(&*system.components()[i], y, &fields[j], l);
            for (k, v) in d.iter().enumerate() {
                next[k] += v * a;
            }
        }
    }
    *y = next;
}

/// Points of `[t0, t]` (or `[t, t0]`) at which the rough step restarts: the
/// endpoints, interior sample times, and subdivisions no longer than `step`.
fn partition(path: &GeometricRoughPath, t0: f64, t: f64, step: f64) -> Vec<f64> {
    let (lo, hi) = if t0 <= t { (t0, t) } else { (t, t0) };
    let mut knots = vec![lo];
    knots.extend(path.times().iter().copied().filter(|&s| s > lo && s < hi));
    knots.push(hi);
    let mut pts = vec![lo];
    for w in knots.windows(2) {
        let pieces = ((w[1] - w[0]) / step).ceil().max(1.0) as usize;
        for k in 1..pieces {
            pts.push(w[0] + (w[1] - w[0]) * k as f64 / pieces as f64);
        }
        pts.push(w[1]);
    }
    if t < t0 {
        pts.reverse();
    }
    pts
}

/// Flows `init` from `t0` to `t` (either direction) along `path`.
///
/// `step` is a pseudo-time step for [`FlowMode::TimeChange`] and
/// [`FlowMode::Commuting`], and a maximal real-time sub-step for
/// [`FlowMode::RoughStep`].
pub fn flow(
    system: &HamiltonianSystem,
    path: &GeometricRoughPath,
    init: &CharState,
    t0: f64,
    t: f64,
    mode: FlowMode,
    step: f64,
) -> Result<CharState> {
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!("flow step must be positive, got {step}")));
    }
    mode.validate(system, path)?;
    let n = system.dim();
    if init.dim() != n {
        return Err(Error::InvalidInput(format!("initial state has dimension {}, H has {n}", init.dim())));
    }
    let l = Layout::new(n);
    let mut y = init.pack();
    if t == t0 {
        return Ok(init.clone());
    }
    match mode {
        FlowMode::TimeChange | FlowMode::Commuting => {
            let inc = path.increment(t0, t)?;
            for (i, h) in system.components().iter().enumerate() {
                rk4(&**h, &mut y, inc.dw[i], step, l, t)?;
            }
        }
        FlowMode::RoughStep => {
            let pts = partition(path, t0, t, step);
            for w in pts.windows(2) {
                let inc = path.increment(w[0], w[1])?;
                davie_step(system, &mut y, &inc.dw, &inc.area, l);
                check_divergence(&y, l, w[1])?;
            }
        }
    }
    Ok(CharState::unpack(&y, n))
}

/// States at each of `times` (in order), flowing incrementally from `t0`.
pub fn trajectory(
    system: &HamiltonianSystem,
    path: &GeometricRoughPath,
    init: &CharState,
    t0: f64,
    times: &[f64],
    mode: FlowMode,
    step: f64,
) -> Result<Vec<CharState>> {
    let mut out = Vec::with_capacity(times.len());
    let (mut state, mut at) = (init.clone(), t0);
    for &t in times {
        state = flow(system, path, &state, at, t, mode, step)?;
        at = t;
        out.push(state.clone());
    }
    Ok(out)
}

/// Flows a batch of initial states in parallel.
pub fn flow_many(
    system: &HamiltonianSystem,
    path: &GeometricRoughPath,
    inits: &[CharState],
    t0: f64,
    t: f64,
    mode: FlowMode,
    step: f64,
) -> Result<Vec<CharState>> {
    inits.par_iter().map(|s| flow(system, path, s, t0, t, mode, step)).collect()
}

/// Max-norm gap on `(x, p, z)` between the time-change and rough-step flows.
pub fn mode_equivalence_defect(
    system: &HamiltonianSystem,
    path: &GeometricRoughPath,
    init: &CharState,
    t0: f64,
    t: f64,
    pseudo_step: f64,
    rough_step: f64,
) -> Result<f64> {
    if system.len() != 1 {
        return Err(Error::ModeMismatch {
            mode: "time_change",
            reason: format!("mode equivalence needs m = 1, got m = {}", system.len()),
        });
    }
    let a = flow(system, path, init, t0, t, FlowMode::TimeChange, pseudo_step)?;
    let b = flow(system, path, init, t0, t, FlowMode::RoughStep, rough_step)?;
    Ok(a.distance(&b))
}

/// Sampled `ρ_R(σ) = sup_{|p|≤R} sup_{|t-t0|≤σ} sup_x |X(x,p,t) - x|`.
///
/// `xs` are the spatial samples (collapsed to one point for x-independent
/// `H`), momenta come from a structured sampling of the closed ball. Times
/// range over the sample times in the window plus its endpoints.
pub fn deviation_modulus(
    system: &HamiltonianSystem,
    path: &GeometricRoughPath,
    radius: f64,
    t0: f64,
    sigma: f64,
    xs: &[Vec<f64>],
    per_axis: usize,
    step: f64,
) -> Result<f64> {
    if !(radius > 0.0) || !(sigma >= 0.0) {
        return Err(Error::InvalidInput("deviation_modulus needs R > 0 and sigma >= 0".into()));
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let n = system.dim();
    let origin = vec![vec![0.0; n]];
    let xs: &[Vec<f64>] = if system.is_x_independent() || xs.is_empty() { &origin } else { xs };
    let lo = (t0 - sigma).max(path.start());
    let hi = (t0 + sigma).min(path.end());
    let mut forward: Vec<f64> = path.times().iter().copied().filter(|&s| s > t0 && s < hi).collect();
    forward.push(hi);
    let mut backward: Vec<f64> = path.times().iter().copied().filter(|&s| s < t0 && s > lo).rev().collect();
    backward.push(lo);
    let ps = momentum_ball_samples(n, radius, per_axis);
    let mode = FlowMode::auto(system);
    let pairs: Vec<(&Vec<f64>, &Vec<f64>)> = xs.iter().flat_map(|x| ps.iter().map(move |p| (x, p))).collect();
    let worst = pairs
        .par_iter()
        .map(|(x, p)| -> Result<f64> {
            let init = CharState::initial((*x).clone(), (*p).clone(), None);
            let mut best = 0.0_f64;
            if mode == FlowMode::TimeChange {
                // X depends on t only through τ = W_t - W_{t0}; sweep the τ range.
                let w0 = path.value_at(t0)?[0];
                let (mut tmin, mut tmax) = (0.0_f64, 0.0_f64);
                for &s in forward.iter().chain(&backward) {
                    let tau = path.value_at(s)?[0] - w0;
                    tmin = tmin.min(tau);
                    tmax = tmax.max(tau);
                }
                let h = &*system.components()[0];
                let l = Layout::new(n);
                for end in [tmax, tmin] {
                    let mut y = init.pack();
                    let steps = (end.abs() / step).ceil().max(1.0) as usize;
                    for _ in 0..steps {
                        rk4(h, &mut y, end / steps as f64, step, l, t0)?;
                        let d: Vec<f64> = (0..n).map(|k| y[k] - x[k]).collect();
                        best = best.max(norm(&d));
                    }
                }
            } else {
                for times in [&forward, &backward] {
                    for s in trajectory(system, path, &init, t0, times, mode, step)? {
                        let d: Vec<f64> = (0..n).map(|k| s.x[k] - x[k]).collect();
                        best = best.max(norm(&d));
                    }
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(worst.into_iter().fold(0.0, f64::max))
}

/// Relative gap between `jx` and central differences of flowed positions.
pub fn jacobian_fd_defect(
    system: &HamiltonianSystem,
    path: &GeometricRoughPath,
    init: &CharState,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    hess: impl Fn(&[f64]) -> Vec<f64>,
    t0: f64,
    t: f64,
    mode: FlowMode,
    step: f64,
) -> Result<f64> {
    let n = init.dim();
    let base = flow(system, path, init, t0, t, mode, step)?;
    let eps = 1e-5;
    let mut fd = vec![0.0; n * n];
    for k in 0..n {
        let mut xs = [init.x.clone(), init.x.clone()];
        xs[0][k] += eps;
        xs[1][k] -= eps;
        let ends: Vec<CharState> = xs
            .iter()
            .map(|x| flow(system, path, &CharState::initial(x.clone(), grad(x), Some(hess(x))), t0, t, mode, step))
            .collect::<Result<_>>()?;
        for i in 0..n {
            fd[i * n + k] = (ends[0].x[i] - ends[1].x[i]) / (2.0 * eps);
        }
    }
    let diff: Vec<f64> = fd.iter().zip(&base.jx).map(|(a, b)| a - b).collect();
    Ok(max_abs(&diff) / max_abs(&base.jx).max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::{ExprHamiltonian, QuadraticMomentum};
    use std::sync::Arc;

    fn single(src: &str, n: usize) -> HamiltonianSystem {
        HamiltonianSystem::single(Arc::new(ExprHamiltonian::parse(src, n).unwrap()))
    }

    fn wiggly(samples: usize) -> GeometricRoughPath {
        let times: Vec<f64> = (0..=samples).map(|k| k as f64 / samples as f64).collect();
        let vals: Vec<Vec<f64>> = times.iter().map(|&t| vec![0.8 * (7.0 * t).sin() - 0.3 * t]).collect();
        GeometricRoughPath::piecewise_linear_lift(&times, &vals).unwrap()
    }

    #[test]
    fn free_particle_closed_form() {
        let sys = HamiltonianSystem::single(Arc::new(QuadraticMomentum::new(2)));
        let path = wiggly(200);
        let init = CharState::initial(vec![0.3, -0.1], vec![1.2, -0.7], None);
        for mode in [FlowMode::TimeChange, FlowMode::RoughStep] {
            let s = flow(&sys, &path, &init, 0.1, 0.8, mode, 1e-2).unwrap();
            let tau = path.value_at(0.8).unwrap()[0] - path.value_at(0.1).unwrap()[0];
            assert!((s.x[0] - (0.3 - 1.2 * tau)).abs() < 1e-12);
            assert!((s.x[1] - (-0.1 + 0.7 * tau)).abs() < 1e-12);
            assert_eq!(s.p, init.p);
            assert!((s.z + 0.5 * (1.44 + 0.49) * tau).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_potential_closed_form() {
        let sys = single("0.5*p1^2 - x1", 1);
        let path = wiggly(300);
        let init = CharState::initial(vec![0.4], vec![-0.9], None);
        let tau = path.value_at(0.9).unwrap()[0] - path.value_at(0.2).unwrap()[0];
        for mode in [FlowMode::TimeChange, FlowMode::RoughStep] {
            let s = flow(&sys, &path, &init, 0.2, 0.9, mode, 1e-3).unwrap();
            assert!((s.p[0] - (-0.9 - tau)).abs() < 1e-10, "{mode:?}");
            assert!((s.x[0] - (0.4 + 0.9 * tau + 0.5 * tau * tau)).abs() < 1e-10, "{mode:?}");
        }
    }

    #[test]
    fn anchor_is_identity() {
        let sys = single("0.5*p1^2 + sin(x1)", 1);
        let path = wiggly(50);
        let init = CharState::initial(vec![0.4], vec![-0.9], Some(vec![2.0]));
        let s = flow(&sys, &path, &init, 0.5, 0.5, FlowMode::RoughStep, 1e-2).unwrap();
        assert_eq!(s, init);
        assert_eq!(s.jx, vec![1.0]);
    }

    #[test]
    fn backward_flow_inverts_forward() {
        let sys = single("0.5*p1^2 + 0.3*sin(x1)*p1", 1);
        let path = wiggly(400);
        let init = CharState::initial(vec![0.4], vec![-0.9], Some(vec![0.5]));
        for mode in [FlowMode::TimeChange, FlowMode::RoughStep] {
            let fwd = flow(&sys, &path, &init, 0.1, 0.7, mode, 1e-3).unwrap();
            let back = flow(&sys, &path, &fwd, 0.7, 0.1, mode, 1e-3).unwrap();
            assert!(back.distance(&init) < 1e-5, "{mode:?} {}", back.distance(&init));
        }
    }

    #[test]
    fn time_change_conserves_energy() {
        let sys = single("0.5*p1^2 + 0.5*p2^2 + cos(x1) * sin(x2)", 2);
        let h = sys.component(0);
        let init = CharState::initial(vec![0.2, 0.5], vec![0.7, -0.4], None);
        let times = vec![0.0, 1.0];
        let path = GeometricRoughPath::piecewise_linear_lift(&times, &[vec![0.0], vec![1.0]]).unwrap();
        let s = flow(&sys, &path, &init, 0.0, 1.0, FlowMode::TimeChange, 1e-2).unwrap();
        let drift = (h.value(&s.p, &s.x) - h.value(&init.p, &init.x)).abs();
        assert!(drift < 1e-8, "{drift}");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let sys = single("0.5*p1^2 + 0.25*p2^2 - sin(x1)*cos(x2) + 0.1*p1*x2", 2);
        let path = wiggly(400);
        let grad = |x: &[f64]| vec![x[0].cos(), 0.5 * x[1]];
        let hess = |x: &[f64]| vec![-x[0].sin(), 0.0, 0.0, 0.5];
        let x = vec![0.3, -0.2];
        let init = CharState::initial(x.clone(), grad(&x), Some(hess(&x)));
        for mode in [FlowMode::TimeChange, FlowMode::RoughStep] {
            let d = jacobian_fd_defect(&sys, &path, &init, grad, hess, 0.0, 0.6, mode, 1e-3).unwrap();
            assert!(d < 1e-4, "{mode:?}: {d}");
        }
    }

    #[test]
    fn mode_mismatch_is_reported() {
        let sys = HamiltonianSystem::new(vec![
            Arc::new(ExprHamiltonian::parse("0.5*p1^2", 1).unwrap()),
            Arc::new(ExprHamiltonian::parse("0.5*p1^2 - x1", 1).unwrap()),
        ])
        .unwrap();
        let times = vec![0.0, 1.0];
        let path =
            GeometricRoughPath::piecewise_linear_lift(&times, &[vec![0.0, 0.0], vec![0.5, 0.2]]).unwrap();
        let init = CharState::initial(vec![0.0], vec![1.0], None);
        for mode in [FlowMode::TimeChange, FlowMode::Commuting] {
            assert!(matches!(flow(&sys, &path, &init, 0.0, 1.0, mode, 0.1), Err(Error::ModeMismatch { .. })));
        }
        assert!(flow(&sys, &path, &init, 0.0, 1.0, FlowMode::RoughStep, 0.1).is_ok());
    }

    #[test]
    fn divergence_is_reported() {
        let sys = single("p1*x1^2", 1);
        let times = vec![0.0, 1.0];
        let path = GeometricRoughPath::piecewise_linear_lift(&times, &[vec![0.0], vec![-30.0]]).unwrap();
        let init = CharState::initial(vec![1.0], vec![1.0], None);
        let err = flow(&sys, &path, &init, 0.0, 1.0, FlowMode::TimeChange, 1e-2).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn deviation_modulus_free_particle() {
        let sys = HamiltonianSystem::single(Arc::new(QuadraticMomentum::new(1)));
        let times = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        let vals = vec![vec![0.0], vec![0.1], vec![0.3], vec![-0.1], vec![0.2]];
        let path = GeometricRoughPath::piecewise_linear_lift(&times, &vals).unwrap();
        let rho = deviation_modulus(&sys, &path, 2.0, 0.0, 0.5, &[], 8, 1e-3).unwrap();
        assert!((rho - 0.6).abs() < 1e-12, "{rho}");
        assert_eq!(deviation_modulus(&sys, &path, 2.0, 0.3, 0.0, &[], 8, 1e-3).unwrap(), 0.0);
        let wider = deviation_modulus(&sys, &path, 2.0, 0.0, 1.0, &[], 8, 1e-3).unwrap();
        assert!(wider >= rho);
    }
}
