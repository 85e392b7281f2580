//! Monotone splitting scheme for `du = F(D²u, Du, u, x, t) dt + H(Du, x) ∘ dW`
//! and the explicit sub/super-solution pair.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldHistory, Grid, GridField};
use crate::hamiltonians::{drift_bounds_on_ball, DriftOperator, HamiltonianSystem, ScalarField};
use crate::local_solver::{LocalOptions, LocalSolver};
use crate::datum::Quadratic;
use crate::rough_path::{GeometricRoughPath, TwoLevelIncrements};

/// Node count above which stencil updates run on the thread pool.
const PARALLEL_THRESHOLD: usize = 4096;

#[derive(Debug, Clone)]
pub struct PdeProblem {
    pub drift: Arc<dyn DriftOperator>,
    pub system: HamiltonianSystem,
    pub path: GeometricRoughPath,
    pub u0: GridField,
    /// Final time; the solve runs on `[path.start(), t_end]`.
    pub t_end: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Times at which the solution is recorded; the start time is always included.
    pub output_times: Vec<f64>,
    /// Target Courant number of the Hamiltonian substep, in `(0, 1]`.
    pub cfl: f64,
    /// Inflation of the sampled gradient range used for the dissipation
    /// coefficients (only for x-dependent `H`, whose gradients can grow).
    pub gradient_safety: f64,
    /// Per-axis lower bound on that gradient range. Solves sharing a floor
    /// that dominates their gradients use the same scheme, so they stay ordered.
    #[serde(default)]
    pub gradient_floor: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { output_times: Vec::new(), cfl: 1.0, gradient_safety: 1.25, gradient_floor: None }
    }
}

/// What the scheme did, for the run manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub dt: f64,
    /// `Δx² / (2nΛ)`, absent for first-order `F`.
    pub dt_required: Option<f64>,
    pub lambda: f64,
    pub steps: usize,
    pub hamiltonian_substeps: usize,
    /// Largest `Σ_i |ΔW^i| Σ_k α_k^i / Δx_k` over substeps.
    pub max_courant: f64,
    pub max_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub history: FieldHistory,
    pub record: SolveRecord,
}

/// Parabolic step restriction `Δx²/(2nΛ)` on `grid`.
pub fn required_dt(drift: &dyn DriftOperator, grid: &Grid) -> Option<f64> {
    let lambda = drift.ellipticity_bound();
    if lambda <= 0.0 {
        return None;
    }
    let h = (0..grid.dim()).map(|k| grid.spacing(k)).fold(f64::INFINITY, f64::min);
    Some(h * h / (2.0 * grid.dim() as f64 * lambda))
}

impl PdeProblem {
    fn validate(&self) -> Result<()> {
        let n = self.u0.grid.dim();
        if self.system.dim() != n {
            return Err(Error::InvalidInput(format!("H acts in dimension {}, grid has {n}", self.system.dim())));
        }
        if self.path.dim() != self.system.len() {
            return Err(Error::InvalidInput(format!(
                "path has {} components, H has {}",
                self.path.dim(),
                self.system.len()
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > self.path.start()) || self.t_end > self.path.end() + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "t_end = {} must lie in ({}, {}]",
                self.t_end,
                self.path.start(),
                self.path.end()
            )));
        }
        if self.u0.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("initial datum has non-finite values".into()));
        }
        Ok(())
    }
}

/// Discrete one-sided gradients at every node with Neumann ghost copies:
/// returns `(p⁻, p⁺)`, `n` interleaved components each.
fn one_sided(grid: &Grid, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = grid.dim();
    let mut minus = vec![0.0; u.len() * n];
    let mut plus = vec![0.0; u.len() * n];
    for k in 0..n {
        let s = grid.stride(k);
        let h = grid.spacing(k);
        let c = grid.counts()[k];
        for idx in 0..u.len() {
            let i = (idx / s) % c;
            if i > 0 {
                minus[idx * n + k] = (u[idx] - u[idx - s]) / h;
            }
            if i + 1 < c {
                plus[idx * n + k] = (u[idx + s] - u[idx]) / h;
            }
        }
    }
    (minus, plus)
}

/// Sampled `α_k^i ≥ sup |∂H^i/∂p_k|` over the box `|q_k| ≤ bound_k`.
fn dissipation(system: &HamiltonianSystem, grid: &Grid, bound: &[f64]) -> Vec<Vec<f64>> {
    let n = grid.dim();
    let per_axis = 9usize;
    let total = per_axis.pow(n as u32);
    let qs: Vec<Vec<f64>> = (0..total)
        .map(|code| {
            let mut c = code;
            (0..n)
                .map(|k| {
                    let j = c % per_axis;
                    c /= per_axis;
                    bound[k] * (2.0 * j as f64 / (per_axis - 1) as f64 - 1.0)
                })
                .collect()
        })
        .collect();
    let xs: Vec<Vec<f64>> = if system.is_x_independent() {
        vec![grid.node(0)]
    } else {
        let stride = (grid.len() / 256).max(1);
        (0..grid.len()).step_by(stride).chain([grid.len() - 1]).map(|i| grid.node(i)).collect()
    };
    system
        .components()
        .iter()
        .map(|h| {
            let mut a = vec![0.0_f64; n];
            for x in &xs {
                for q in &qs {
                    for (k, g) in h.grad_p(q, x).iter().enumerate() {
                        a[k] = a[k].max(g.abs());
                    }
                }
            }
            a
        })
        .collect()
}

struct Stepper<'a> {
    problem: &'a PdeProblem,
    options: &'a SolveOptions,
    grid: Grid,
    nodes: Vec<Vec<f64>>,
    record: SolveRecord,
}

impl<'a> Stepper<'a> {
    fn map_nodes(&self, f: impl Fn(usize) -> f64 + Sync + Send) -> Vec<f64> {
        if self.grid.len() >= PARALLEL_THRESHOLD {
            (0..self.grid.len()).into_par_iter().map(f).collect()
        } else {
            (0..self.grid.len()).map(f).collect()
        }
    }

    /// Lax–Friedrichs update for the path increment `dw`, sub-stepped so
    /// every substep is monotone.
    fn hamiltonian_piece(&mut self, u: &mut Vec<f64>, dw: &[f64], alpha: &[Vec<f64>]) {
        let n = self.grid.dim();
        let m = dw.len();
        let courant: f64 = (0..m)
            .map(|i| dw[i].abs() * (0..n).map(|k| alpha[i][k] / self.grid.spacing(k)).sum::<f64>())
            .sum();
        if courant == 0.0 && dw.iter().all(|w| *w == 0.0) {
            return;
        }
        let pieces = (courant / self.options.cfl).ceil().max(1.0) as usize;
        self.record.max_courant = self.record.max_courant.max(courant / pieces as f64);
        let sub: Vec<f64> = dw.iter().map(|w| w / pieces as f64).collect();
        let system = &self.problem.system;
        for _ in 0..pieces {
            let (pm, pp) = one_sided(&self.grid, u);
            let nodes = &self.nodes;
            let prev: &Vec<f64> = u;
            let next = self.map_nodes(|idx| {
                let lo = &pm[idx * n..(idx + 1) * n];
                let hi = &pp[idx * n..(idx + 1) * n];
                let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
                let mut v = prev[idx];
                for (i, h) in system.components().iter().enumerate() {
                    if sub[i] == 0.0 {
                        continue;
                    }
                    v += sub[i] * h.value(&mid, &nodes[idx]);
                    for k in 0..n {
                        v += 0.5 * sub[i].abs() * alpha[i][k] * (hi[k] - lo[k]);
                    }
                }
                v
            });
            *u = next;
            self.record.hamiltonian_substeps += 1;
        }
    }

    /// Explicit Euler step of `u_t = F(D²u, Du, u, x, t)`.
    fn drift_step(&self, u: &[f64], t: f64, dt: f64) -> Vec<f64> {
        let drift = &*self.problem.drift;
        let grid = &self.grid;
        let n = grid.dim();
        let first_order = drift.is_first_order();
        self.map_nodes(|idx| {
            let multi = grid.unravel(idx);
            let neighbor = |k: usize, dir: isize| -> f64 {
                let i = multi[k] as isize + dir;
                if i < 0 || i >= grid.counts()[k] as isize {
                    u[idx]
                } else {
                    u[(idx as isize + dir * grid.stride(k) as isize) as usize]
                }
            };
            let mut xm = vec![0.0; n * n];
            if !first_order {
                for k in 0..n {
                    let h = grid.spacing(k);
                    xm[k * n + k] = (neighbor(k, 1) - 2.0 * u[idx] + neighbor(k, -1)) / (h * h);
                }
                for k in 0..n {
                    for l in 0..k {
                        let (hk, hl) = (grid.spacing(k), grid.spacing(l));
                        let corner = |dk: isize, dl: isize| -> f64 {
                            let ik = multi[k] as isize + dk;
                            let il = multi[l] as isize + dl;
                            let ik = ik.clamp(0, grid.counts()[k] as isize - 1);
                            let il = il.clamp(0, grid.counts()[l] as isize - 1);
                            let j = idx as isize
                                + (ik - multi[k] as isize) * grid.stride(k) as isize
                                + (il - multi[l] as isize) * grid.stride(l) as isize;
                            u[j as usize]
                        };
                        let v = (corner(1, 1) - corner(1, -1) - corner(-1, 1) + corner(-1, -1)) / (4.0 * hk * hl);
                        xm[k * n + l] = v;
                        xm[l * n + k] = v;
                    }
                }
            }
            let x = &self.nodes[idx];
            let mut p: Vec<f64> = (0..n)
                .map(|k| (neighbor(k, 1) - neighbor(k, -1)) / (2.0 * grid.spacing(k)))
                .collect();
            // Upwind each momentum component along the sign of ∂F/∂p_k.
            for k in 0..n {
                let eps = 1e-6 * (1.0 + p[k].abs());
                let mut a = p.clone();
                let mut b = p.clone();
                a[k] += eps;
                b[k] -= eps;
                let dfdp = drift.eval(&xm, &a, u[idx], x, t) - drift.eval(&xm, &b, u[idx], x, t);
                let h = grid.spacing(k);
                if dfdp > 0.0 {
                    p[k] = (neighbor(k, 1) - u[idx]) / h;
                } else if dfdp < 0.0 {
                    p[k] = (u[idx] - neighbor(k, -1)) / h;
                }
            }
            u[idx] + dt * drift.eval(&xm, &p, u[idx], x, t)
        })
    }

    fn alpha(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let n = self.grid.dim();
        let (pm, pp) = one_sided(&self.grid, u);
        let mut bound = vec![0.0_f64; n];
        for (a, b) in pm.chunks(n).zip(pp.chunks(n)) {
            for k in 0..n {
                bound[k] = bound[k].max(a[k].abs()).max(b[k].abs());
            }
        }
        if !self.problem.system.is_x_independent() {
            bound.iter_mut().for_each(|b| *b = *b * self.options.gradient_safety + 1e-3);
        }
        if let Some(floor) = &self.options.gradient_floor {
            bound.iter_mut().zip(floor).for_each(|(b, f)| *b = b.max(*f));
        }
        dissipation(&self.problem.system, &self.grid, &bound)
    }
}

/// Classical-mode solve on the (piecewise-linear) path of `problem`.
pub fn solve_smooth(problem: &PdeProblem, options: &SolveOptions) -> Result<Solution> {
    problem.validate()?;
    if !(options.cfl > 0.0 && options.cfl <= 1.0) {
        return Err(Error::InvalidInput(format!("cfl must lie in (0, 1], got {}", options.cfl)));
    }
    let grid = problem.u0.grid.clone();
    if let Some(floor) = &options.gradient_floor {
        if floor.len() != grid.dim() || floor.iter().any(|f| !(*f >= 0.0)) {
            return Err(Error::InvalidInput(format!("gradient floor must hold {} nonnegative entries", grid.dim())));
        }
    }
    let dt_required = required_dt(&*problem.drift, &grid);
    if let Some(req) = dt_required {
        if problem.dt > req * (1.0 + 1e-12) {
            return Err(Error::StepRestriction { dt: problem.dt, required: req });
        }
    }
    let t_start = problem.path.start();
    let mut outputs: Vec<f64> = options
        .output_times
        .iter()
        .copied()
        .filter(|&t| t > t_start && t <= problem.t_end + 1e-12)
        .collect();
    outputs.push(problem.t_end);
    outputs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    outputs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);

    let mut st = Stepper {
        problem,
        options,
        nodes: grid.nodes(),
        grid: grid.clone(),
        record: SolveRecord {
            dt: problem.dt,
            dt_required,
            lambda: problem.drift.ellipticity_bound(),
            ..Default::default()
        },
    };
    let mut u = problem.u0.values.clone();
    let mut times = vec![t_start];
    let mut frames = vec![u.clone()];
    let mut t = t_start;
    let mut step = 0usize;
    let path_times = problem.path.times();
    for &target in &outputs {
        while t < target - 1e-12 {
            let t_next = (t + problem.dt).min(target);
            let alpha = st.alpha(&u);
            st.record.max_alpha =
                st.record.max_alpha.max(alpha.iter().flatten().copied().fold(0.0, f64::max));
            let mut knots = vec![t];
            knots.extend(path_times.iter().copied().filter(|&s| s > t + 1e-14 && s < t_next - 1e-14));
            knots.push(t_next);
            for w in knots.windows(2) {
                let inc = problem.path.increment(w[0], w[1])?;
                st.hamiltonian_piece(&mut u, &inc.dw, &alpha);
            }
            if !(problem.drift.is_first_order() && problem.drift.name() == "0") {
                u = st.drift_step(&u, t, t_next - t);
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step });
            }
            t = t_next;
            step += 1;
        }
        t = target;
        times.push(target);
        frames.push(u.clone());
    }
    st.record.steps = step;
    Ok(Solution { history: FieldHistory::new(grid, times, frames)?, record: st.record })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyReport {
    /// Number of path samples at each level, coarsest first.
    pub samples: Vec<usize>,
    /// `d_k = ‖u^{η_k} - u^{η_{k+1}}‖_∞` over all nodes and output times.
    pub differences: Vec<f64>,
    /// `true` when the differences strictly decrease.
    pub decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughSolution {
    pub finest: Solution,
    pub cauchy: CauchyReport,
}

/// Solves on the dyadic coarsenings `stride = 2^levels, …, 2, 1` of the
/// problem's path and reports successive sup-differences. The finest level
/// is the path itself.
pub fn solve_rough(problem: &PdeProblem, options: &SolveOptions, levels: usize) -> Result<RoughSolution> {
    if levels < 2 {
        return Err(Error::InvalidInput(format!("solve_rough needs at least 2 levels, got {levels}")));
    }
    let strides: Vec<usize> = (0..=levels).rev().map(|j| 1usize << j).collect();
    let paths = strides
        .iter()
        .map(|&s| problem.path.subsample(s))
        .collect::<Result<Vec<_>>>()?;
    let solutions = paths
        .into_par_iter()
        .map(|path| solve_smooth(&PdeProblem { path, ..problem.clone() }, options))
        .collect::<Result<Vec<_>>>()?;
    let differences = solutions
        .windows(2)
        .map(|w| w[0].history.max_abs_diff(&w[1].history))
        .collect::<Result<Vec<_>>>()?;
    let decreasing = differences.windows(2).all(|w| w[1] < w[0]);
    let samples = strides.iter().map(|s| (problem.path.len() - 1) / s + 1).collect();
    let finest = solutions.into_iter().last().expect("levels >= 2");
    Ok(RoughSolution { finest, cauchy: CauchyReport { samples, differences, decreasing } })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubSuperOptions {
    pub local: LocalOptions,
    /// Random samples of the ball used for the inf/sup of `F`.
    pub drift_samples: usize,
    pub seed: u64,
    /// Fraction of the detected horizon used for the first block.
    pub horizon_fraction: f64,
}

impl Default for SubSuperOptions {
    fn default() -> Self {
        Self { local: LocalOptions::default(), drift_samples: 4096, seed: 0x5ab5, horizon_fraction: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockConstants {
    pub start: f64,
    pub radius: f64,
    pub c_lower: f64,
    pub c_upper: f64,
    /// `sup (u̲(·, start))₋` and `sup (ū(·, start))₊`.
    pub m_lower: f64,
    pub m_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubSuperPair {
    pub lower: FieldHistory,
    pub upper: FieldHistory,
    /// First block `[0, h]`: `R`, `C` for `u̲` (inf F) and `ū` (sup F).
    pub h: f64,
    pub radius: f64,
    pub c_lower: f64,
    pub c_upper: f64,
    /// Later blocks built from the zero datum.
    pub h0: f64,
    pub blocks: Vec<BlockConstants>,
    pub drift_samples: usize,
}

fn c2_norm_sup(snaps: &[crate::local_solver::Snapshot]) -> f64 {
    let mut r = 0.0_f64;
    for s in snaps {
        let n = s.grid.dim();
        for i in 0..s.grid.len() {
            let g = crate::linalg::norm(&s.dphi[i * n..(i + 1) * n]);
            let h = crate::linalg::norm(&s.d2phi[i * n * n..(i + 1) * n * n]);
            r = r.max(s.phi[i].abs() + g + h);
        }
    }
    r
}

/// Sampled `(inf F, sup F)` over the ball `|X| + |p| + |u| ≤ radius`.
fn drift_range(problem: &PdeProblem, radius: f64, t0: f64, t1: f64, opts: &SubSuperOptions) -> Result<(f64, f64, usize)> {
    let grid = &problem.u0.grid;
    let stride = (grid.len() / 64).max(1);
    let xs: Vec<Vec<f64>> = (0..grid.len()).step_by(stride).map(|i| grid.node(i)).collect();
    let ts = [t0, 0.5 * (t0 + t1), t1];
    let b = drift_bounds_on_ball(&*problem.drift, grid.dim(), radius, &xs, &ts, opts.drift_samples, opts.seed)?;
    Ok((b.inf, b.sup, b.samples))
}

/// Builds `u̲ ≤ ū` with `u̲(·,0) = ū(·,0) = φ` on the time mesh `times`.
///
/// On `[0, h]`: `u̲ = S(t,0)φ + t·inf F` and `ū = S(t,0)φ + t·sup F`, with the
/// inf/sup over the ball of radius `R = sup_t ‖S(t,0)φ‖_{C²}` (enlarged by the
/// drift of `u` itself). After `h`, blocks of length `h₀` restart from the
/// zero datum: `u̲ = S(t,s_k)0 − M_k + (t − s_k)·inf F` with
/// `M_k = sup (u̲(·,s_k))₋`, and symmetrically for `ū`.
pub fn build_sub_super(
    problem: &PdeProblem,
    phi: &dyn ScalarField,
    times: &[f64],
    opts: &SubSuperOptions,
) -> Result<SubSuperPair> {
    problem.validate()?;
    let grid = &problem.u0.grid;
    let n = grid.dim();
    let t_start = problem.path.start();
    if times.first().copied() != Some(t_start) {
        return Err(Error::InvalidInput("the time mesh must start at the path start".into()));
    }
    let solver = LocalSolver::new(&problem.system, &problem.path, opts.local.clone());
    let horizon = solver.horizon(phi, t_start, grid)?;
    if horizon.h <= 0.0 {
        return Err(Error::Precondition(format!(
            "zero horizon for the datum: {}",
            horizon.diagnostic.unwrap_or_default()
        )));
    }
    let h = (opts.horizon_fraction * horizon.h).min(problem.t_end - t_start);
    let first: Vec<f64> = times.iter().copied().filter(|&t| t <= t_start + h + 1e-12).collect();
    let snaps = first.iter().map(|&t| solver.apply(phi, t_start, t, grid)).collect::<Result<Vec<_>>>()?;
    let base = c2_norm_sup(&snaps);
    let (mut lo, mut hi, mut samples) = drift_range(problem, base, t_start, t_start + h, opts)?;
    let mut radius = base;
    for _ in 0..2 {
        radius = base + lo.abs().max(hi.abs()) * h;
        (lo, hi, samples) = drift_range(problem, radius, t_start, t_start + h, opts)?;
    }
    let mut lower_frames = Vec::with_capacity(times.len());
    let mut upper_frames = Vec::with_capacity(times.len());
    for (s, &t) in snaps.iter().zip(&first) {
        lower_frames.push(s.phi.iter().map(|v| v + (t - t_start) * lo).collect::<Vec<f64>>());
        upper_frames.push(s.phi.iter().map(|v| v + (t - t_start) * hi).collect::<Vec<f64>>());
    }

    let zero = Quadratic::isotropic(n, 0.0);
    let mut blocks = Vec::new();
    let mut h0 = f64::INFINITY;
    let mut k = first.len();
    while k < times.len() {
        let start = *times[..k].last().expect("first block is nonempty");
        let hz = solver.horizon(&zero, start, grid)?;
        if hz.h <= 0.0 {
            return Err(Error::Precondition(format!("zero datum has no horizon at t = {start}")));
        }
        let len = opts.horizon_fraction * hz.h;
        h0 = h0.min(len);
        let block_times: Vec<f64> = times[k..].iter().copied().filter(|&t| t <= start + len + 1e-12).collect();
        let block_times = if block_times.is_empty() { vec![times[k]] } else { block_times };
        let zsnaps = block_times.iter().map(|&t| solver.apply(&zero, start, t, grid)).collect::<Result<Vec<_>>>()?;
        let prev_lo = lower_frames.last().expect("nonempty");
        let prev_hi = upper_frames.last().expect("nonempty");
        let m_lower = prev_lo.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
        let m_upper = prev_hi.iter().map(|v| v.max(0.0)).fold(0.0, f64::max);
        let zbase = c2_norm_sup(&zsnaps);
        let end = *block_times.last().expect("nonempty");
        let mut r = zbase + m_lower.max(m_upper);
        let (mut c_lo, mut c_hi, _) = drift_range(problem, r, start, end, opts)?;
        for _ in 0..2 {
            r = zbase + m_lower.max(m_upper) + c_lo.abs().max(c_hi.abs()) * (end - start);
            (c_lo, c_hi, _) = drift_range(problem, r, start, end, opts)?;
        }
        for (s, &t) in zsnaps.iter().zip(&block_times) {
            lower_frames.push(s.phi.iter().map(|v| v - m_lower + (t - start) * c_lo).collect());
            upper_frames.push(s.phi.iter().map(|v| v + m_upper + (t - start) * c_hi).collect());
        }
        blocks.push(BlockConstants { start, radius: r, c_lower: c_lo, c_upper: c_hi, m_lower, m_upper });
        k += block_times.len();
    }
    Ok(SubSuperPair {
        lower: FieldHistory::new(grid.clone(), times.to_vec(), lower_frames)?,
        upper: FieldHistory::new(grid.clone(), times.to_vec(), upper_frames)?,
        h,
        radius,
        c_lower: lo,
        c_upper: hi,
        h0: if h0.is_finite() { h0 } else { 0.0 },
        blocks,
        drift_samples: samples,
    })
}

/// Largest violation of `u̲ − tol ≤ u ≤ ū + tol` (0 when the sandwich holds).
pub fn sandwich_violation(pair: &SubSuperPair, u: &FieldHistory, tol: f64) -> Result<f64> {
    let below = pair.lower.map2(u, |l, v| (l - tol - v).max(0.0))?;
    let above = u.map2(&pair.upper, |v, h| (v - h - tol).max(0.0))?;
    Ok(below.frames.iter().chain(&above.frames).flatten().copied().fold(0.0, f64::max))
}

/// `t ↦ sup_x (u − v)₊` on a shared mesh.
pub fn excess_profile(u: &FieldHistory, v: &FieldHistory) -> Result<Vec<f64>> {
    let d = u.map2(v, |a, b| (a - b).max(0.0))?;
    Ok(d.frames.iter().map(|f| f.iter().copied().fold(0.0, f64::max)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::Gaussian;
    use crate::hamiltonians::{ConstantDrift, ExprHamiltonian, Heat, QuadraticMomentum, ZeroDrift};

    fn linear_path(slope: f64, samples: usize) -> GeometricRoughPath {
        let times: Vec<f64> = (0..=samples).map(|k| k as f64 / samples as f64).collect();
        let vals: Vec<Vec<f64>> = times.iter().map(|&t| vec![slope * t]).collect();
        GeometricRoughPath::piecewise_linear_lift(&times, &vals).unwrap()
    }

    fn zero_h(n: usize) -> HamiltonianSystem {
        HamiltonianSystem::single(Arc::new(ExprHamiltonian::parse("0", n).unwrap()))
    }

    #[test]
    fn constant_drift_is_exact() {
        let grid = Grid::cube(1, -1.0, 1.0, 21).unwrap();
        let u0 = GridField::from_fn(grid.clone(), |x| x[0].sin());
        let problem = PdeProblem {
            drift: Arc::new(ConstantDrift(0.3)),
            system: zero_h(1),
            path: linear_path(1.0, 8),
            u0: u0.clone(),
            t_end: 1.0,
            dt: 0.1,
        };
        let sol = solve_smooth(&problem, &SolveOptions::default()).unwrap();
        let last = sol.history.last();
        for (a, b) in last.values.iter().zip(&u0.values) {
            assert!((a - b - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn step_restriction_is_enforced() {
        let grid = Grid::cube(1, -1.0, 1.0, 41).unwrap();
        let problem = PdeProblem {
            drift: Arc::new(Heat { nu: 1.0 }),
            system: zero_h(1),
            path: linear_path(0.0, 4),
            u0: GridField::from_fn(grid, |x| x[0]),
            t_end: 1.0,
            dt: 0.01,
        };
        match solve_smooth(&problem, &SolveOptions::default()) {
            Err(Error::StepRestriction { required, .. }) => assert!((required - 0.05f64.powi(2) / 2.0).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scheme_is_monotone_and_shift_invariant() {
        let grid = Grid::cube(1, -2.0, 2.0, 81).unwrap();
        let sys = HamiltonianSystem::single(Arc::new(QuadraticMomentum::new(1)));
        let times: Vec<f64> = (0..=32).map(|k| k as f64 / 32.0).collect();
        let vals: Vec<Vec<f64>> = times.iter().map(|&t| vec![(9.0 * t).sin() * 0.4]).collect();
        let path = GeometricRoughPath::piecewise_linear_lift(&times, &vals).unwrap();
        let u0 = GridField::from_fn(grid.clone(), |x| (-x[0].abs()).max(-1.0));
        let v0 = GridField::from_fn(grid.clone(), |x| (-x[0].abs()).max(-1.0) + 0.2 * (-x[0] * x[0]).exp());
        let mk = |u0: GridField| PdeProblem {
            drift: Arc::new(Heat { nu: 0.1 }),
            system: sys.clone(),
            path: path.clone(),
            u0,
            t_end: 1.0,
            dt: 0.0025,
        };
        let opts = SolveOptions { output_times: vec![0.25, 0.5, 0.75], ..Default::default() };
        let u = solve_smooth(&mk(u0.clone()), &opts).unwrap().history;
        let v = solve_smooth(&mk(v0), &opts).unwrap().history;
        for (a, b) in u.frames.iter().flatten().zip(v.frames.iter().flatten()) {
            assert!(a <= b);
        }
        let shifted = GridField::new(grid.clone(), u0.values.iter().map(|x| x + 0.7).collect()).unwrap();
        let w = solve_smooth(&mk(shifted), &opts).unwrap().history;
        for (a, b) in u.frames.iter().flatten().zip(w.frames.iter().flatten()) {
            assert!((b - a - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn sub_super_brackets_heat_solution() {
        let grid = Grid::cube(1, -3.0, 3.0, 61).unwrap();
        let phi = Gaussian { amplitude: 1.0, width: 0.5, center: vec![0.0] };
        let problem = PdeProblem {
            drift: Arc::new(Heat { nu: 0.5 }),
            system: HamiltonianSystem::single(Arc::new(QuadraticMomentum::new(1))),
            path: linear_path(0.5, 16),
            u0: GridField::from_fn(grid.clone(), |x| phi.value(x)),
            t_end: 1.0,
            dt: 0.01,
        };
        let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let pair = build_sub_super(&problem, &phi, &times, &SubSuperOptions::default()).unwrap();
        assert_eq!(pair.lower.frames[0], pair.upper.frames[0]);
        assert!(pair.c_lower <= 0.0 && pair.c_upper >= 0.0);
        let opts = SolveOptions { output_times: times.clone(), ..Default::default() };
        let u = solve_smooth(&problem, &opts).unwrap().history;
        assert_eq!(sandwich_violation(&pair, &u, 1e-2).unwrap(), 0.0);
    }

    #[test]
    fn zero_drift_sub_super_constants_vanish() {
        let grid = Grid::cube(1, -2.0, 2.0, 41).unwrap();
        let phi = Quadratic::isotropic(1, 0.5);
        let problem = PdeProblem {
            drift: Arc::new(ZeroDrift),
            system: HamiltonianSystem::single(Arc::new(QuadraticMomentum::new(1))),
            path: linear_path(1.0, 16),
            u0: GridField::from_fn(grid.clone(), |x| phi.value(x)),
            t_end: 1.0,
            dt: 0.05,
        };
        let times: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let pair = build_sub_super(&problem, &phi, &times, &SubSuperOptions::default()).unwrap();
        assert_eq!((pair.c_lower, pair.c_upper), (0.0, 0.0));
        assert!(!pair.blocks.is_empty());
        for b in &pair.blocks {
            assert_eq!((b.c_lower, b.c_upper), (0.0, 0.0));
        }
    }
}
