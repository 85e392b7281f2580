//! Discrete checks of the Perron machinery: test-function probes, envelopes
//! of sub-solutions, the bump construction and comparison of candidates.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characteristics::deviation_modulus;
use crate::datum::{GridDatum, Penalized, Quadratic};
use crate::error::{Error, Result};
use crate::grid::{FieldHistory, Grid};
use crate::hamiltonians::{DriftOperator, HamiltonianSystem, ScalarField};
use crate::linalg::norm;
use crate::local_solver::{LocalOptions, LocalSolver, Snapshot};
use crate::rough_path::GeometricRoughPath;

/// Everything needed to evaluate `S` and `F`.
#[derive(Debug, Clone)]
pub struct Model<'a> {
    pub drift: &'a dyn DriftOperator,
    pub system: &'a HamiltonianSystem,
    pub path: &'a GeometricRoughPath,
    pub local: LocalOptions,
}

impl Model<'_> {
    fn solver(&self) -> LocalSolver<'_> {
        LocalSolver::new(self.system, self.path, self.local.clone())
    }
}

/// `ψ(t) = a (t - t0) + b (t - t0)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePart {
    pub a: f64,
    pub b: f64,
}

impl TimePart {
    pub fn value(&self, dt: f64) -> f64 {
        self.a * dt + self.b * dt * dt
    }
    pub fn derivative(&self, dt: f64) -> f64 {
        self.a + 2.0 * self.b * dt
    }
}

/// Test function `S(t, t0)φ + ψ` on `B_r(x0) × (t0 - h, t0]`.
#[derive(Debug, Clone)]
pub struct TestFunctionProbe {
    pub x0: Vec<f64>,
    pub t0: f64,
    pub phi: Arc<dyn ScalarField>,
    pub psi: TimePart,
    pub r: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Local maximum of `u - Sφ - ψ`; requires `ψ' ≤ F`.
    Sub,
    /// Local minimum; requires `ψ' ≥ F`.
    Super,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub x: Vec<f64>,
    pub t: f64,
    /// Whether the extremum sits strictly inside the window; only interior
    /// extrema are tested.
    pub interior: bool,
    pub psi_dot: f64,
    pub f_value: f64,
    /// `max(0, ψ' - F)` for sub-solutions, `max(0, F - ψ')` for super.
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub side: Side,
    pub tolerance: f64,
    pub outcomes: Vec<ProbeOutcome>,
    pub interior: usize,
    pub max_violation: f64,
    /// Indices of probes whose violation exceeds the tolerance.
    pub violations: Vec<usize>,
}

impl ProbeReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Nodes of `grid` within the box `x0 ± radius`, as a grid of their own plus
/// the map back to `grid` indices.
pub fn window_grid(grid: &Grid, x0: &[f64], radius: f64) -> Result<(Grid, Vec<usize>)> {
    let n = grid.dim();
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for k in 0..n {
        let h = grid.spacing(k);
        let last = grid.counts()[k] as isize - 1;
        let a = (((x0[k] - radius - grid.lower()[k]) / h).floor() as isize).clamp(0, last);
        let b = (((x0[k] + radius - grid.lower()[k]) / h).ceil() as isize).clamp(0, last);
        if b <= a {
            return Err(Error::InvalidInput(format!("window around {x0:?} misses the grid")));
        }
        lo.push(a as usize);
        hi.push(b as usize);
    }
    let sub = Grid::new(
        (0..n).map(|k| grid.coordinate(k, lo[k])).collect(),
        (0..n).map(|k| grid.coordinate(k, hi[k])).collect(),
        (0..n).map(|k| hi[k] - lo[k] + 1).collect(),
    )?;
    let map = (0..sub.len())
        .map(|i| {
            let m: Vec<usize> = sub.unravel(i).iter().zip(&lo).map(|(a, b)| a + b).collect();
            grid.ravel(&m)
        })
        .collect();
    Ok((sub, map))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

fn time_index(u: &FieldHistory, t: f64) -> Result<usize> {
    u.times
        .iter()
        .position(|s| (s - t).abs() <= 1e-12)
        .ok_or_else(|| Error::InvalidInput(format!("probe time {t} is not on the time mesh")))
}

fn run_probe(u: &FieldHistory, probe: &TestFunctionProbe, model: &Model, side: Side) -> Result<ProbeOutcome> {
    let grid = &u.grid;
    let k0 = time_index(u, probe.t0)?;
    let (sub, map) = window_grid(grid, &probe.x0, probe.r)?;
    let solver = model.solver();
    let hz = solver.horizon(&*probe.phi, probe.t0, &sub)?;
    if hz.h + 1e-12 < probe.h.min(probe.t0 - u.times[0]) {
        return Err(Error::Precondition(format!(
            "probe window h = {} exceeds the S horizon {} at t0 = {}",
            probe.h, hz.h, probe.t0
        )));
    }
    let ks: Vec<usize> = (0..=k0).filter(|&k| u.times[k] >= probe.t0 - probe.h - 1e-12).collect();
    let sign = if side == Side::Sub { 1.0 } else { -1.0 };
    let mut best: Option<(f64, usize, usize, Snapshot)> = None;
    for &k in &ks {
        let t = u.times[k];
        let snap = solver.apply(&*probe.phi, probe.t0, t, &sub)?;
        let mut local: Option<(f64, usize)> = None;
        for (j, &gi) in map.iter().enumerate() {
            if distance(&grid.node(gi), &probe.x0) > probe.r {
                continue;
            }
            let v = sign * (u.frames[k][gi] - snap.phi[j] - probe.psi.value(t - probe.t0));
            if local.map_or(true, |(b, _)| v > b) {
                local = Some((v, j));
            }
        }
        if let Some((v, j)) = local {
            if best.as_ref().map_or(true, |(b, ..)| v > *b) {
                best = Some((v, j, k, snap));
            }
        }
    }
    let (_, j, k, snap) = best.ok_or_else(|| Error::InvalidInput("probe window holds no nodes".into()))?;
    let gi = map[j];
    let x = grid.node(gi);
    let t = u.times[k];
    let h_max = (0..grid.dim()).map(|a| grid.spacing(a)).fold(0.0, f64::max);
    let interior = distance(&x, &probe.x0) < probe.r - h_max
        && !grid.is_boundary(gi)
        && (k != ks[0] || ks.len() == 1 && k == k0 && k == 0);
    let n = grid.dim();
    let psi_dot = probe.psi.derivative(t - probe.t0);
    let f_value = model.drift.eval(
        &snap.d2phi[j * n * n..(j + 1) * n * n],
        &snap.dphi[j * n..(j + 1) * n],
        u.frames[k][gi],
        &x,
        t,
    );
    let violation = if !interior {
        0.0
    } else {
        match side {
            Side::Sub => (psi_dot - f_value).max(0.0),
            Side::Super => (f_value - psi_dot).max(0.0),
        }
    };
    Ok(ProbeOutcome { x, t, interior, psi_dot, f_value, violation })
}

/// Runs every probe against `u`: locates the grid extremum of
/// `u - S(t,t0)φ - ψ` over the window and, when it is interior, evaluates the
/// test-function inequality there.
pub fn check_solution(
    u: &FieldHistory,
    probes: &[TestFunctionProbe],
    model: &Model,
    side: Side,
    tolerance: f64,
) -> Result<ProbeReport> {
    let outcomes = probes.par_iter().map(|p| run_probe(u, p, model, side)).collect::<Result<Vec<_>>>()?;
    let violations = (0..outcomes.len()).filter(|&i| outcomes[i].violation > tolerance).collect();
    Ok(ProbeReport {
        side,
        tolerance,
        interior: outcomes.iter().filter(|o| o.interior).count(),
        max_violation: outcomes.iter().map(|o| o.violation).fold(0.0, f64::max),
        outcomes,
        violations,
    })
}

pub fn check_subsolution(
    u: &FieldHistory,
    probes: &[TestFunctionProbe],
    model: &Model,
    tolerance: f64,
) -> Result<ProbeReport> {
    check_solution(u, probes, model, Side::Sub, tolerance)
}

/// Probe touching `u` from above at `(node, times[k])`: `φ` is the frame at
/// `t0` plus `½ε|x - x0|²`, and `ψ` takes the backward slope of `u - Sφ` at
/// the anchor, bent by `b (t - t0)²`.
pub fn touching_probe(
    u: &FieldHistory,
    node: usize,
    k: usize,
    eps: f64,
    b: f64,
    r: f64,
    h: f64,
    model: &Model,
) -> Result<TestFunctionProbe> {
    if k == 0 || k >= u.len() {
        return Err(Error::InvalidInput(format!("touching probe needs 0 < k < {}, got {k}", u.len())));
    }
    let inner = GridDatum::from_values(u.grid.clone(), u.frames[k].clone())?;
    let phi: Arc<dyn ScalarField> = Arc::new(Penalized { inner: Arc::new(inner), center: u.grid.node(node), eps });
    slope_probe(u, node, k, phi, b, r, h, model)
}

/// Probe with a given spatial part `φ` anchored at `(node, times[k])`; `ψ`
/// takes the backward slope of `u - Sφ` at the anchor, bent by `b (t - t0)²`.
pub fn slope_probe(
    u: &FieldHistory,
    node: usize,
    k: usize,
    phi: Arc<dyn ScalarField>,
    b: f64,
    r: f64,
    h: f64,
    model: &Model,
) -> Result<TestFunctionProbe> {
    if k == 0 || k >= u.len() {
        return Err(Error::InvalidInput(format!("probe needs 0 < k < {}, got {k}", u.len())));
    }
    let grid = &u.grid;
    let x0 = grid.node(node);
    let (t0, tp) = (u.times[k], u.times[k - 1]);
    let (sub, map) = window_grid(grid, &x0, grid.dx())?;
    let j = map.iter().position(|&g| g == node).expect("anchor lies in its own window");
    let back = model.solver().apply(&*phi, t0, tp, &sub)?;
    let a = ((u.frames[k][node] - u.frames[k - 1][node]) - (phi.value(&x0) - back.phi[j])) / (t0 - tp);
    Ok(TestFunctionProbe { x0, t0, phi, psi: TimePart { a, b }, r, h })
}

/// Pointwise maximum of a family of fields on a shared mesh.
pub fn envelope(subs: &[FieldHistory]) -> Result<FieldHistory> {
    let (first, rest) = subs.split_first().ok_or_else(|| Error::InvalidInput("empty family".into()))?;
    let mut out = first.clone();
    for s in rest {
        if !out.same_mesh(s) {
            return Err(Error::MeshMismatch("envelope members live on different meshes".into()));
        }
        out = out.map2(s, f64::max)?;
    }
    Ok(out)
}

/// The envelope together with a probe report on it.
pub fn envelope_with_report(
    subs: &[FieldHistory],
    probes: &[TestFunctionProbe],
    model: &Model,
    tolerance: f64,
) -> Result<(FieldHistory, ProbeReport)> {
    let env = envelope(subs)?;
    let report = check_subsolution(&env, probes, model, tolerance)?;
    Ok((env, report))
}

/// Parameters of the bump construction around a failing super-solution test.
///
/// The test function is `η(x) = ⟨p, x - x0⟩ + ½⟨X(x - x0), x - x0⟩` in space
/// and `a (t - t0)` in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    pub gamma: f64,
    pub r: f64,
    pub s: f64,
    pub p: Vec<f64>,
    /// Row-major `n × n`.
    pub x: Vec<f64>,
    pub a: f64,
    /// Momentum bound `R` for the path restriction `ρ_R(s) ≤ r/8`.
    pub momentum_bound: f64,
}

impl BumpSpec {
    pub fn delta(&self) -> f64 {
        self.gamma * (self.r * self.r / 16.0).min(self.s / 8.0)
    }
    pub fn time_slack(&self) -> f64 {
        self.gamma * self.s / 8.0
    }
    pub fn space_slack(&self) -> f64 {
        self.gamma * self.r * self.r / 16.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpOptions {
    /// Required strict failure `ψ'(t0) - F < -margin`.
    pub margin: f64,
    pub tolerance: f64,
    pub samples: usize,
}

impl Default for BumpOptions {
    fn default() -> Self {
        Self { margin: 1e-2, tolerance: 1e-3, samples: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub x: Vec<f64>,
    pub t: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpCertificate {
    pub gamma: f64,
    pub r: f64,
    pub s: f64,
    pub kappa: f64,
    pub delta: f64,
    pub time_slack: f64,
    pub space_slack: f64,
    pub rho: f64,
    pub omega_space: f64,
    pub omega_time: f64,
    /// `ψ'(t0) - F(X, p, w(x0,t0), x0, t0)`.
    pub failure: f64,
    /// (i) `min (w_κ - w)`.
    pub min_lift: f64,
    /// (ii) `sup (w_κ - w)` near the anchor.
    pub max_lift: f64,
    /// (iii) largest `|w_κ - w|` outside `N_κ`.
    pub outside_change: f64,
    /// (iv) `min (w - ŵ)` over the temporal and spatial collars.
    pub time_collar_min: f64,
    pub space_collar_min: f64,
    pub clauses: [bool; 4],
    pub counterexample: Option<Counterexample>,
}

impl BumpCertificate {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|&c| c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpOutcome {
    pub w_kappa: FieldHistory,
    pub certificate: BumpCertificate,
}

/// Raises `w` near `(x0, t0)` by `max(ŵ, w)` with
/// `ŵ = w(x0,t0) + δ + S(t,t0)η̂ + a(t - t0) - γ(|t - t0|² + δ²)^{1/2}` and
/// `η̂ = η - γ|x - x0|²`, and certifies the result.
pub fn bump(
    w: &FieldHistory,
    node: usize,
    k0: usize,
    spec: &BumpSpec,
    kappa: f64,
    model: &Model,
    opts: &BumpOptions,
) -> Result<BumpOutcome> {
    let grid = &w.grid;
    let n = grid.dim();
    if !(spec.gamma > 0.0 && spec.gamma < 1.0) || !(spec.r > 0.0) || !(spec.s > 0.0) {
        return Err(Error::InvalidInput(format!("bump needs γ ∈ (0,1), r, s > 0; got {spec:?}")));
    }
    if spec.p.len() != n || spec.x.len() != n * n {
        return Err(Error::InvalidInput(format!("bump spec p/X must have sizes {n} and {}", n * n)));
    }
    if spec.r >= kappa || spec.s >= kappa {
        return Err(Error::InfeasibleBump(format!(
            "κ = {kappa} does not exceed r = {} and s = {}",
            spec.r, spec.s
        )));
    }
    let x0 = grid.node(node);
    let t0 = w.times[k0];
    let rho = deviation_modulus(model.system, model.path, spec.momentum_bound, t0, spec.s, &[x0.clone()], 8, model.local.step)?;
    if rho > spec.r / 8.0 {
        return Err(Error::InfeasibleBump(format!(
            "path restriction fails: ρ_R(s) = {rho:.3e} > r/8 = {:.3e}",
            spec.r / 8.0
        )));
    }
    let w0 = w.frames[k0][node];
    let omega_space = (0..opts.samples)
        .map(|i| {
            let mut x = x0.clone();
            let theta = i as f64 / opts.samples as f64;
            x[i % n] += spec.r * (2.0 * theta - 1.0);
            (model.drift.eval(&spec.x, &spec.p, w0, &x, t0) - model.drift.eval(&spec.x, &spec.p, w0, &x0, t0)).abs()
        })
        .fold(0.0, f64::max);
    let omega_time = (0..=opts.samples)
        .map(|i| {
            let t = t0 + spec.s * (2.0 * i as f64 / opts.samples as f64 - 1.0);
            (model.drift.eval(&spec.x, &spec.p, w0, &x0, t) - model.drift.eval(&spec.x, &spec.p, w0, &x0, t0)).abs()
        })
        .fold(0.0, f64::max);
    if omega_space > spec.gamma / 2.0 || omega_time > spec.gamma / 2.0 {
        return Err(Error::InfeasibleBump(format!(
            "moduli ω₁(r) = {omega_space:.3e}, ω₂(s) = {omega_time:.3e} exceed γ/2"
        )));
    }

    let failure = spec.a - model.drift.eval(&spec.x, &spec.p, w0, &x0, t0);
    if !(failure < -opts.margin) {
        return Err(Error::Precondition(format!(
            "no strict super-solution failure at the anchor: ψ' - F = {failure:.3e} ≥ -{:.1e}",
            opts.margin
        )));
    }
    let eta = Quadratic::new(spec.x.clone(), spec.p.clone(), 0.0, x0.clone())?;
    let mut hat_a = spec.x.clone();
    for i in 0..n {
        hat_a[i * n + i] -= 2.0 * spec.gamma;
    }
    let eta_hat = Quadratic::new(hat_a, spec.p.clone(), 0.0, x0.clone())?;

    let (sub, map) = window_grid(grid, &x0, spec.r)?;
    let ks: Vec<usize> = (0..w.len()).filter(|&k| (w.times[k] - t0).abs() <= spec.s + 1e-12).collect();
    let solver = model.solver();
    let mut lower_gap = f64::INFINITY;
    let mut anchor_gap = f64::NAN;
    let mut w_kappa = w.clone();
    let mut time_collar_min = f64::INFINITY;
    let mut space_collar_min = f64::INFINITY;
    let mut counterexample: Option<Counterexample> = None;
    let delta = spec.delta();
    for &k in &ks {
        let t = w.times[k];
        let dt = t - t0;
        let s_eta = solver.apply(&eta, t0, t, &sub)?;
        let s_hat = solver.apply(&eta_hat, t0, t, &sub)?;
        for (j, &gi) in map.iter().enumerate() {
            let x = grid.node(gi);
            let d = distance(&x, &x0);
            if d > spec.r {
                continue;
            }
            let wv = w.frames[k][gi];
            let gap = wv - w0 - s_eta.phi[j] - spec.a * dt;
            if gi == node && k == k0 {
                anchor_gap = gap;
            }
            lower_gap = lower_gap.min(gap);
            if d > 7.0 * spec.r / 8.0 {
                continue;
            }
            let hat = w0 + delta + s_hat.phi[j] + spec.a * dt - spec.gamma * (dt * dt + delta * delta).sqrt();
            let margin = wv - hat;
            let mut collar = |slack: f64, min: &mut f64| {
                *min = min.min(margin);
                if margin < slack - opts.tolerance && counterexample.as_ref().map_or(true, |c| margin < c.gap) {
                    counterexample = Some(Counterexample { x: x.clone(), t, gap: margin });
                }
            };
            if dt.abs() >= spec.s / 2.0 {
                collar(spec.time_slack(), &mut time_collar_min);
            }
            if d >= spec.r / 2.0 {
                collar(spec.space_slack(), &mut space_collar_min);
            }
            if d < 7.0 * spec.r / 8.0 && dt.abs() < spec.s {
                w_kappa.frames[k][gi] = wv.max(hat);
            }
        }
    }
    if !(anchor_gap <= lower_gap + opts.tolerance) {
        return Err(Error::Precondition(format!(
            "w - η - ψ has no local minimum at the anchor (anchor {anchor_gap:.3e}, window min {lower_gap:.3e})"
        )));
    }

    let mut min_lift = f64::INFINITY;
    let mut max_lift = f64::NEG_INFINITY;
    let mut outside_change = 0.0_f64;
    for k in 0..w.len() {
        let dt = (w.times[k] - t0).abs();
        for gi in 0..grid.len() {
            let lift = w_kappa.frames[k][gi] - w.frames[k][gi];
            min_lift = min_lift.min(lift);
            let d = distance(&grid.node(gi), &x0);
            if d >= kappa || dt >= kappa {
                outside_change = outside_change.max(lift.abs());
            } else if d <= spec.r / 2.0 && dt <= spec.s / 2.0 {
                max_lift = max_lift.max(lift);
            }
        }
    }
    let clauses = [
        min_lift >= 0.0,
        max_lift >= (1.0 - spec.gamma) * delta - opts.tolerance && max_lift > 0.0,
        outside_change == 0.0,
        time_collar_min >= spec.time_slack() - opts.tolerance && space_collar_min >= spec.space_slack() - opts.tolerance,
    ];
    Ok(BumpOutcome {
        w_kappa,
        certificate: BumpCertificate {
            gamma: spec.gamma,
            r: spec.r,
            s: spec.s,
            kappa,
            delta,
            time_slack: spec.time_slack(),
            space_slack: spec.space_slack(),
            rho,
            omega_space,
            omega_time,
            failure,
            min_lift,
            max_lift,
            outside_change,
            time_collar_min,
            space_collar_min,
            clauses,
            counterexample,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub times: Vec<f64>,
    /// `sup_x (u - v)₊` at each time.
    pub excess: Vec<f64>,
    pub tolerance: f64,
    /// Some later excess exceeds the initial one by more than the tolerance.
    pub exceeds_initial: bool,
    /// Every step is nonincreasing up to the tolerance.
    pub nonincreasing: bool,
}

pub fn compare(u: &FieldHistory, v: &FieldHistory, tolerance: f64) -> Result<ComparisonReport> {
    if !u.same_mesh(v) {
        return Err(Error::MeshMismatch("compared fields live on different meshes".into()));
    }
    let excess = crate::pde_solver::excess_profile(u, v)?;
    let e0 = excess[0];
    Ok(ComparisonReport {
        times: u.times.clone(),
        exceeds_initial: excess.iter().any(|&e| e > e0 + tolerance),
        nonincreasing: excess.windows(2).all(|w| w[1] <= w[0] + tolerance),
        excess,
        tolerance,
    })
}
