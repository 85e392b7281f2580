//! The local smooth solution operator `S(t, t0)φ = Z ∘ X⁻¹` on a grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characteristics::{deviation_modulus, flow, flow_many, CharState, FlowMode};
use crate::datum::GridDatum;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hamiltonians::{HamiltonianSystem, ScalarField};
use crate::linalg::{det, norm, solve};
use crate::rough_path::GeometricRoughPath;

pub const DEFAULT_THETA_INV: f64 = 0.1;
pub const NEWTON_MAX_ITERS: usize = 25;
const PAD_ATTEMPTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalOptions {
    pub theta_inv: f64,
    /// `None` picks [`FlowMode::auto`].
    pub mode: Option<FlowMode>,
    /// Flow step, see [`flow`].
    pub step: f64,
    /// Fixed padding of the source grid in cells; `None` sizes it from the
    /// observed characteristic displacement.
    pub pad_cells: Option<usize>,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self { theta_inv: DEFAULT_THETA_INV, mode: None, step: 1e-2, pad_cells: None }
    }
}

/// `S(t, t0)φ` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t0: f64,
    pub t: f64,
    pub grid: Grid,
    pub phi: Vec<f64>,
    /// `n` interleaved components per node, from `P ∘ X⁻¹`.
    pub dphi: Vec<f64>,
    /// `n²` interleaved components per node, by differencing `dphi`.
    pub d2phi: Vec<f64>,
    /// `det D_x X` at the pre-image of each node.
    pub det_jx: Vec<f64>,
    /// Nodes whose pre-image was found inside the flowed source box.
    pub trusted: Vec<bool>,
    /// Minimum of `det D_x X` over the source nodes.
    pub min_det: f64,
    pub pad_cells: usize,
}

impl Snapshot {
    pub fn all_trusted(&self) -> bool {
        self.trusted.iter().all(|&b| b)
    }

    /// The snapshot as a datum for a further application of `S`.
    pub fn as_datum(&self) -> GridDatum {
        GridDatum {
            grid: self.grid.clone(),
            values: self.phi.clone(),
            grads: self.dphi.clone(),
            hessians: self.d2phi.clone(),
        }
    }

    /// CSV rows `x1..xn, Phi, dPhi1..dPhin, detJx`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let n = self.grid.dim();
        let mut header = (1..=n).map(|k| format!("x{k}")).collect::<Vec<_>>();
        header.push("Phi".into());
        header.extend((1..=n).map(|k| format!("dPhi{k}")));
        header.push("detJx".into());
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.grid.len() {
            let mut cols: Vec<String> = self.grid.node(i).iter().map(|c| format!("{c:.16e}")).collect();
            cols.push(format!("{:.16e}", self.phi[i]));
            cols.extend(self.dphi[i * n..(i + 1) * n].iter().map(|c| format!("{c:.16e}")));
            cols.push(format!("{:.16e}", self.det_jx[i]));
            writeln!(out, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

/// Evaluates `S(t, t0)` for a fixed Hamiltonian system and path.
#[derive(Debug, Clone)]
pub struct LocalSolver<'a> {
    pub system: &'a HamiltonianSystem,
    pub path: &'a GeometricRoughPath,
    pub options: LocalOptions,
}

struct Forward {
    grid: Grid,
    /// Interleaved `X` (n), `P` (n), `Z`, `D_x X` (n²) per source node.
    x: Vec<f64>,
    p: Vec<f64>,
    z: Vec<f64>,
    jx: Vec<f64>,
    min_det: f64,
}

impl<'a> LocalSolver<'a> {
    pub fn new(system: &'a HamiltonianSystem, path: &'a GeometricRoughPath, options: LocalOptions) -> Self {
        Self { system, path, options }
    }

    fn mode(&self) -> FlowMode {
        self.options.mode.unwrap_or_else(|| FlowMode::auto(self.system))
    }

    fn initial_states(datum: &dyn ScalarField, nodes: &[Vec<f64>]) -> Vec<CharState> {
        nodes
            .iter()
            .map(|x| {
                let mut s = CharState::initial(x.clone(), datum.grad(x), Some(datum.hess(x)));
                s.z = datum.value(x);
                s
            })
            .collect()
    }

    fn flow_nodes(&self, datum: &dyn ScalarField, nodes: &[Vec<f64>], t0: f64, t: f64) -> Result<Vec<CharState>> {
        let inits = Self::initial_states(datum, nodes);
        flow_many(self.system, self.path, &inits, t0, t, self.mode(), self.options.step)
    }

    fn forward(&self, grid: &Grid, states: Vec<CharState>) -> Forward {
        let n = grid.dim();
        let mut fw = Forward {
            grid: grid.clone(),
            x: Vec::with_capacity(states.len() * n),
            p: Vec::with_capacity(states.len() * n),
            z: Vec::with_capacity(states.len()),
            jx: Vec::with_capacity(states.len() * n * n),
            min_det: f64::INFINITY,
        };
        for s in states {
            fw.min_det = fw.min_det.min(s.det_jx());
            fw.x.extend_from_slice(&s.x);
            fw.p.extend_from_slice(&s.p);
            fw.z.push(s.z);
            fw.jx.extend_from_slice(&s.jx);
        }
        fw
    }

    /// `S(t, t0)φ` at the nodes of `grid`.
    pub fn apply(&self, datum: &dyn ScalarField, t0: f64, t: f64, grid: &Grid) -> Result<Snapshot> {
        let n = grid.dim();
        if datum.dim() != n || self.system.dim() != n {
            return Err(Error::InvalidInput("datum, grid and Hamiltonian dimensions differ".into()));
        }
        let nodes = grid.nodes();
        if t == t0 {
            let phi = nodes.iter().map(|x| datum.value(x)).collect();
            let dphi = nodes.iter().flat_map(|x| datum.grad(x)).collect();
            let d2phi = nodes.iter().flat_map(|x| datum.hess(x)).collect();
            return Ok(Snapshot {
                t0,
                t,
                grid: grid.clone(),
                phi,
                dphi,
                d2phi,
                det_jx: vec![1.0; grid.len()],
                trusted: vec![true; grid.len()],
                min_det: 1.0,
                pad_cells: 0,
            });
        }
        let query_states = self.flow_nodes(datum, &nodes, t0, t)?;
        let mut cells = match self.options.pad_cells {
            Some(c) => c,
            None => {
                let shift = query_states
                    .iter()
                    .zip(&nodes)
                    .map(|(s, x)| norm(&s.x.iter().zip(x).map(|(a, b)| a - b).collect::<Vec<_>>()))
                    .fold(0.0, f64::max);
                (shift / grid.dx()).ceil() as usize + 2
            }
        };
        let attempts = if self.options.pad_cells.is_some() { 1 } else { PAD_ATTEMPTS };
        let mut last = None;
        for _ in 0..attempts {
            let source = grid.padded(cells);
            let emb = source.embedding(grid).expect("padded grid embeds the original");
            let mut slot: Vec<Option<CharState>> = vec![None; source.len()];
            for (q, s) in emb.iter().zip(&query_states) {
                slot[*q] = Some(s.clone());
            }
            let missing: Vec<usize> = (0..source.len()).filter(|&i| slot[i].is_none()).collect();
            let extra_nodes: Vec<Vec<f64>> = missing.iter().map(|&i| source.node(i)).collect();
            for (i, s) in missing.iter().zip(self.flow_nodes(datum, &extra_nodes, t0, t)?) {
                slot[*i] = Some(s);
            }
            let fw = self.forward(&source, slot.into_iter().map(|s| s.expect("every source node flowed")).collect());
            if fw.min_det < self.options.theta_inv {
                return Err(Error::HorizonExceeded { min_det: fw.min_det, theta_inv: self.options.theta_inv });
            }
            let snap = self.invert(&fw, grid, t0, t, cells)?;
            let done = snap.all_trusted();
            last = Some(snap);
            if done {
                break;
            }
            cells *= 2;
        }
        Ok(last.expect("at least one attempt"))
    }

    fn invert(&self, fw: &Forward, grid: &Grid, t0: f64, t: f64, cells: usize) -> Result<Snapshot> {
        let n = grid.dim();
        let src = &fw.grid;
        let buckets = Buckets::new(grid, &fw.x);
        let results: Vec<(f64, Vec<f64>, f64, bool)> = (0..grid.len())
            .into_par_iter()
            .map(|q| -> Result<(f64, Vec<f64>, f64, bool)> {
                let y = grid.node(q);
                let seed = buckets.nearest(&y, &fw.x, n);
                let (xs, res, converged) = newton(fw, &src.node(seed), &y);
                let scale = 1.0 + norm(&y);
                let inside = (0..n).all(|k| {
                    let h = src.spacing(k);
                    xs[k] > src.lower()[k] + 0.5 * h && xs[k] < src.upper()[k] - 0.5 * h
                });
                // A pre-image pinned to the source boundary means the box is
                // too small, which is reported through `trusted` instead.
                if !converged && inside && res > 1e-6 * scale {
                    return Err(Error::InverseNonConvergence { node: q, residual: res });
                }
                let trusted = inside && res <= 1e-8 * scale;
                let phi = src.interpolate(&fw.z, &xs);
                let mut dphi = vec![0.0; n];
                src.interpolate_into(&fw.p, n, &xs, &mut dphi);
                let mut jx = vec![0.0; n * n];
                src.interpolate_into(&fw.jx, n * n, &xs, &mut jx);
                Ok((phi, dphi, det(&jx, n), trusted))
            })
            .collect::<Result<_>>()?;
        let mut phi = Vec::with_capacity(grid.len());
        let mut dphi = Vec::with_capacity(grid.len() * n);
        let mut det_jx = Vec::with_capacity(grid.len());
        let mut trusted = Vec::with_capacity(grid.len());
        for (v, g, d, ok) in results {
            phi.push(v);
            dphi.extend(g);
            det_jx.push(d);
            trusted.push(ok);
        }
        let mut d2phi = vec![0.0; grid.len() * n * n];
        for q in 0..grid.len() {
            for i in 0..n {
                for j in 0..n {
                    d2phi[q * n * n + i * n + j] = grid.diff(&dphi, n, i, q, j);
                }
            }
            for i in 0..n {
                for j in 0..i {
                    let s = 0.5 * (d2phi[q * n * n + i * n + j] + d2phi[q * n * n + j * n + i]);
                    d2phi[q * n * n + i * n + j] = s;
                    d2phi[q * n * n + j * n + i] = s;
                }
            }
        }
        Ok(Snapshot { t0, t, grid: grid.clone(), phi, dphi, d2phi, det_jx, trusted, min_det: fw.min_det, pad_cells: cells })
    }

    /// Largest `h` with `min_x det D_x X(x, t) ≥ θ_inv` for all `|t - t0| ≤ h`,
    /// sampled at the nodes of `grid`.
    pub fn horizon(&self, datum: &dyn ScalarField, t0: f64, grid: &Grid) -> Result<HorizonReport> {
        let theta = self.options.theta_inv;
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidInput(format!("theta_inv must lie in (0, 1), got {theta}")));
        }
        let inits = Self::initial_states(datum, &grid.nodes());
        let mut sides = Vec::new();
        let mut worst = f64::INFINITY;
        let mut diagnostic = None;
        for forward in [true, false] {
            let end = if forward { self.path.end() } else { self.path.start() };
            if end == t0 {
                continue;
            }
            let mut times: Vec<f64> = self
                .path
                .times()
                .iter()
                .copied()
                .filter(|&s| if forward { s > t0 && s < end } else { s < t0 && s > end })
                .collect();
            if !forward {
                times.reverse();
            }
            times.push(end);
            let (h, min_det) = self.side_horizon(&inits, t0, &times, theta)?;
            worst = worst.min(min_det);
            if h.is_some_and(|h| h < (times[0] - t0).abs()) {
                diagnostic = Some(format!(
                    "det D_x X drops below {theta} within the first time sample on the {} side",
                    if forward { "forward" } else { "backward" }
                ));
            }
            sides.push(h.unwrap_or((end - t0).abs()));
        }
        let mut h = sides.into_iter().fold(f64::INFINITY, f64::min);
        if !h.is_finite() {
            h = 0.0;
        }
        if diagnostic.is_some() {
            h = 0.0;
        }
        Ok(HorizonReport { t0, h, theta_inv: theta, min_det: worst, diagnostic })
    }

    /// Crossing time offset on one side, or `None` if `det` stays above `θ`.
    fn side_horizon(&self, inits: &[CharState], t0: f64, times: &[f64], theta: f64) -> Result<(Option<f64>, f64)> {
        let mode = self.mode();
        let step = self.options.step;
        let min_det = |states: &[CharState]| states.iter().map(|s| s.det_jx()).fold(f64::INFINITY, f64::min);
        let mut states: Vec<CharState> = inits.to_vec();
        let mut at = t0;
        let mut seen = min_det(&states);
        for &t in times {
            let next = flow_many(self.system, self.path, &states, at, t, mode, step)?;
            let d = min_det(&next);
            seen = seen.min(d);
            if d < theta {
                // Bisect inside the interval where the path is linear.
                let (mut lo, mut hi) = (at, t);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let probe = flow_many(self.system, self.path, &states, at, mid, mode, step)?;
                    if min_det(&probe) < theta {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Ok((Some((lo - t0).abs()), seen));
            }
            states = next;
            at = t;
        }
        Ok((None, seen))
    }

    /// The three operator properties of `S` on `grid`.
    pub fn check_properties(
        &self,
        phi1: &dyn ScalarField,
        phi2: &dyn ScalarField,
        t0: f64,
        times: &[f64],
        k: f64,
        grid: &Grid,
    ) -> Result<PropertyReport> {
        let shifted = ShiftBy(phi1, k);
        let mut report = PropertyReport::default();
        for &t in times {
            let s1 = self.apply(phi1, t0, t, grid)?;
            let s1k = self.apply(&shifted, t0, t, grid)?;
            let s2 = self.apply(phi2, t0, t, grid)?;
            let shift = s1.phi.iter().zip(&s1k.phi).map(|(a, b)| (b - a - k).abs()).fold(0.0, f64::max);
            report.shift_defect = report.shift_defect.max(shift);

            // The data difference is taken over the flowed source box, which
            // contains every pre-image of the grid.
            let source = grid.padded(s1.pad_cells.max(s2.pad_cells));
            let data_sup = source.nodes().iter().map(|x| phi1.value(x) - phi2.value(x)).fold(f64::NEG_INFINITY, f64::max);
            let sol_sup = s1.phi.iter().zip(&s2.phi).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
            report.comparison_defect = report.comparison_defect.max((sol_sup - data_sup).max(0.0));
        }
        for (a, &s) in times.iter().enumerate() {
            for &r in &times[a + 1..] {
                let direct = self.apply(phi1, t0, r, grid)?;
                // The intermediate field must cover every pre-image of the
                // second step, whose displacement is only known after trying.
                let mut pad = 2 * direct.pad_cells + 2;
                let composed = loop {
                    let wide = grid.padded(pad);
                    let mid = self.apply(phi1, t0, s, &wide)?;
                    let out = self.apply(&mid.as_datum(), s, r, grid)?;
                    if out.pad_cells <= pad {
                        break out;
                    }
                    pad = 2 * out.pad_cells + 2;
                };
                let d = direct.phi.iter().zip(&composed.phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                report.semigroup_defect = report.semigroup_defect.max(d);
            }
        }
        report.times = times.to_vec();
        Ok(report)
    }

    /// `max(0, sup_{K_ρ}(Sφ₁ - Sφ₂) - sup_K(φ₁ - φ₂))` for an annulus `K`.
    pub fn domain_of_dependence_check(
        &self,
        phi1: &dyn ScalarField,
        phi2: &dyn ScalarField,
        t0: f64,
        t: f64,
        annulus: &Annulus,
        momentum_bound: f64,
        grid: &Grid,
    ) -> Result<DependenceReport> {
        let xs = grid.nodes();
        let rho = deviation_modulus(self.system, self.path, momentum_bound, t0, (t - t0).abs(), &xs, 8, self.options.step)?;
        let s1 = self.apply(phi1, t0, t, grid)?;
        let s2 = self.apply(phi2, t0, t, grid)?;
        let data_sup = xs
            .iter()
            .filter(|x| annulus.contains(x, 0.0))
            .map(|x| phi1.value(x) - phi2.value(x))
            .fold(f64::NEG_INFINITY, f64::max);
        let inner: Vec<usize> = (0..grid.len()).filter(|&i| annulus.contains(&xs[i], rho)).collect();
        let global = s1.phi.iter().zip(&s2.phi).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
        if inner.is_empty() {
            return Ok(DependenceReport { defect: 0.0, rho, shrunk_nodes: 0, global_excess: global, vacuous: true });
        }
        let local = inner.iter().map(|&i| s1.phi[i] - s2.phi[i]).fold(f64::NEG_INFINITY, f64::max);
        Ok(DependenceReport {
            defect: (local - data_sup).max(0.0),
            rho,
            shrunk_nodes: inner.len(),
            global_excess: global,
            vacuous: false,
        })
    }
}

/// `φ + k` without taking ownership of `φ`.
#[derive(Debug)]
struct ShiftBy<'a>(&'a dyn ScalarField, f64);

impl ScalarField for ShiftBy<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.0.value(x) + self.1
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.0.grad(x)
    }
    fn hess(&self, x: &[f64]) -> Vec<f64> {
        self.0.hess(x)
    }
}

/// Closed annulus `inner ≤ |x - center| ≤ outer`; `inner = 0` gives a ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    pub center: Vec<f64>,
    pub inner: f64,
    pub outer: f64,
}

impl Annulus {
    /// Membership in the annulus shrunk by `rho` on both sides.
    pub fn contains(&self, x: &[f64], rho: f64) -> bool {
        let d = norm(&x.iter().zip(&self.center).map(|(a, b)| a - b).collect::<Vec<_>>());
        let lo = if self.inner > 0.0 { self.inner + rho } else { 0.0 };
        d >= lo && d <= self.outer - rho
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub t0: f64,
    pub h: f64,
    pub theta_inv: f64,
    pub min_det: f64,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub times: Vec<f64>,
    pub shift_defect: f64,
    pub comparison_defect: f64,
    pub semigroup_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceReport {
    pub defect: f64,
    pub rho: f64,
    pub shrunk_nodes: usize,
    /// `sup (Sφ₁ - Sφ₂)` over the whole grid.
    pub global_excess: f64,
    pub vacuous: bool,
}

/// Forward images bucketed by the cells of the query grid.
struct Buckets {
    grid: Grid,
    cells: Vec<Vec<usize>>,
}

impl Buckets {
    fn new(grid: &Grid, images: &[f64]) -> Self {
        let n = grid.dim();
        let mut cells = vec![Vec::new(); grid.len()];
        for (k, x) in images.chunks(n).enumerate() {
            cells[Self::bucket(grid, x)].push(k);
        }
        Self { grid: grid.clone(), cells }
    }

    fn bucket(grid: &Grid, x: &[f64]) -> usize {
        let m: Vec<usize> = (0..grid.dim())
            .map(|k| {
                let s = ((x[k] - grid.lower()[k]) / grid.spacing(k)).round();
                s.clamp(0.0, (grid.counts()[k] - 1) as f64) as usize
            })
            .collect();
        grid.ravel(&m)
    }

    /// Source node whose image is nearest to `y`.
    fn nearest(&self, y: &[f64], images: &[f64], n: usize) -> usize {
        let center = self.grid.unravel(Self::bucket(&self.grid, y));
        let max_ring = *self.grid.counts().iter().max().unwrap_or(&1);
        let mut best = (f64::INFINITY, 0usize);
        for ring in 0..=max_ring {
            self.visit_ring(&center, ring, |b| {
                for &k in &self.cells[b] {
                    let d: f64 = (0..n).map(|c| (images[k * n + c] - y[c]).powi(2)).sum::<f64>().sqrt();
                    if d < best.0 {
                        best = (d, k);
                    }
                }
            });
            if best.0.is_finite() && best.0 <= (ring as f64 - 0.5).max(0.0) * self.grid.dx() {
                break;
            }
        }
        best.1
    }

    fn visit_ring(&self, center: &[usize], ring: usize, mut f: impl FnMut(usize)) {
        let n = center.len();
        let r = ring as isize;
        let side = 2 * ring + 1;
        let total = side.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let mut off = Vec::with_capacity(n);
            for _ in 0..n {
                off.push((c % side) as isize - r);
                c /= side;
            }
            if off.iter().all(|o| o.abs() < r) {
                continue;
            }
            let mut m = Vec::with_capacity(n);
            let mut ok = true;
            for k in 0..n {
                let v = center[k] as isize + off[k];
                if v < 0 || v >= self.grid.counts()[k] as isize {
                    ok = false;
                    break;
                }
                m.push(v as usize);
            }
            if ok {
                f(self.grid.ravel(&m));
            }
        }
    }
}

/// Damped Newton on the interpolated forward map with interpolated `D_x X`.
/// Returns `(x*, residual, converged)`.
fn newton(fw: &Forward, seed: &[f64], y: &[f64]) -> (Vec<f64>, f64, bool) {
    let n = y.len();
    let src = &fw.grid;
    let tol = 1e-13 * (1.0 + norm(y));
    let residual = |x: &[f64]| {
        let mut xi = vec![0.0; n];
        src.interpolate_into(&fw.x, n, x, &mut xi);
        let r: Vec<f64> = xi.iter().zip(y).map(|(a, b)| a - b).collect();
        let size = norm(&r);
        (r, size)
    };
    let clamp = |x: &mut Vec<f64>| {
        for k in 0..n {
            x[k] = x[k].clamp(src.lower()[k], src.upper()[k]);
        }
    };
    let mut x = seed.to_vec();
    let (mut r, mut res) = residual(&x);
    for _ in 0..NEWTON_MAX_ITERS {
        if res <= tol {
            return (x, res, true);
        }
        let mut j = vec![0.0; n * n];
        src.interpolate_into(&fw.jx, n * n, &x, &mut j);
        let Some(delta) = solve(&j, &r) else { break };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let mut xn: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a - lambda * d).collect();
            clamp(&mut xn);
            let (rn, resn) = residual(&xn);
            if resn < res {
                x = xn;
                r = rn;
                res = resn;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let ok = res <= 1e-10 * (1.0 + norm(y));
    (x, res, ok)
}

/// Forward flow of a single point, exposed for diagnostics.
pub fn forward_point(
    solver: &LocalSolver<'_>,
    datum: &dyn ScalarField,
    x: &[f64],
    t0: f64,
    t: f64,
) -> Result<CharState> {
    let mut s = CharState::initial(x.to_vec(), datum.grad(x), Some(datum.hess(x)));
    s.z = datum.value(x);
    flow(solver.system, solver.path, &s, t0, t, solver.mode(), solver.options.step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::Quadratic;
    use crate::hamiltonians::QuadraticMomentum;
    use std::sync::Arc;

    fn line_path(slope: f64) -> GeometricRoughPath {
        let times: Vec<f64> = (0..=64).map(|k| k as f64 / 64.0).collect();
        let vals: Vec<Vec<f64>> = times.iter().map(|&t| vec![slope * t]).collect();
        GeometricRoughPath::piecewise_linear_lift(&times, &vals).unwrap()
    }

    #[test]
    fn linear_datum_is_transported() {
        let sys = HamiltonianSystem::single(Arc::new(QuadraticMomentum::new(1)));
        let path = line_path(0.8);
        let solver = LocalSolver::new(&sys, &path, LocalOptions::default());
        let grid = Grid::cube(1, -1.0, 1.0, 33).unwrap();
        let phi = Quadratic::linear(vec![0.7], 0.0);
        let s = solver.apply(&phi, 0.0, 0.5, &grid).unwrap();
        let tau = 0.4;
        for (i, x) in grid.nodes().iter().enumerate() {
            assert!((s.phi[i] - (0.7 * x[0] + 0.5 * 0.49 * tau)).abs() < 1e-12);
            assert!((s.dphi[i] - 0.7).abs() < 1e-12);
        }
        assert!(s.all_trusted());
    }

    #[test]
    fn quadratic_datum_closed_form() {
        let sys = HamiltonianSystem::single(Arc::new(QuadraticMomentum::new(1)));
        let path = line_path(1.0);
        let solver = LocalSolver::new(&sys, &path, LocalOptions::default());
        let grid = Grid::cube(1, -1.0, 1.0, 65).unwrap();
        let a = 0.8;
        let phi = Quadratic::isotropic(1, a);
        let s = solver.apply(&phi, 0.0, 0.5, &grid).unwrap();
        let tau = 0.5;
        let dx = grid.dx();
        for (i, x) in grid.nodes().iter().enumerate() {
            let exact = a * x[0] * x[0] / (2.0 * (1.0 - a * tau));
            assert!((s.phi[i] - exact).abs() < dx * dx, "{} vs {exact}", s.phi[i]);
        }
    }

    #[test]
    fn anchor_reproduces_datum() {
        let sys = HamiltonianSystem::single(Arc::new(QuadraticMomentum::new(2)));
        let path = line_path(1.0);
        let solver = LocalSolver::new(&sys, &path, LocalOptions::default());
        let grid = Grid::cube(2, -1.0, 1.0, 9).unwrap();
        let phi = Quadratic::isotropic(2, 0.3);
        let s = solver.apply(&phi, 0.25, 0.25, &grid).unwrap();
        for (i, x) in grid.nodes().iter().enumerate() {
            assert_eq!(s.phi[i], phi.value(x));
        }
    }

    #[test]
    fn horizon_of_quadratic_datum() {
        let sys = HamiltonianSystem::single(Arc::new(QuadraticMomentum::new(1)));
        let path = line_path(2.0);
        let solver = LocalSolver::new(&sys, &path, LocalOptions::default());
        let grid = Grid::cube(1, -1.0, 1.0, 17).unwrap();
        let a = 1.5;
        let r = solver.horizon(&Quadratic::isotropic(1, a), 0.0, &grid).unwrap();
        // det = 1 - a·2t crosses 0.1 at t = 0.9 / (2a).
        assert!((r.h - 0.9 / (2.0 * a)).abs() < 1e-9, "{r:?}");
        let lin = solver.horizon(&Quadratic::linear(vec![1.0], 0.0), 0.0, &grid).unwrap();
        assert_eq!(lin.h, 1.0);
        assert!(matches!(
            solver.apply(&Quadratic::isotropic(1, a), 0.0, 0.5, &grid),
            Err(Error::HorizonExceeded { .. })
        ));
    }
}
