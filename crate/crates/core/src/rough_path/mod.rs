//! Sampled geometric rough paths `(W, 𝕎)` with Hölder exponent `alpha`.
//!
//! The second level is stored cumulatively as `𝕎_{0,t_k}`; the two-parameter
//! object is recovered through Chen's relation
//!
//! ```text
//! 𝕎_{s,t} = 𝕎_{0,t} - 𝕎_{0,s} - W_s ⊗ (W_t - W_s)
//! ```
//!
//! Between sample times `W` is linear and `𝕎` is the exact iterated integral
//! of that linear interpolant, so lifts built here are geometric up to
//! rounding.

mod brownian;
mod integral;
mod io;

pub use brownian::{brownian_lift, BROWNIAN_ALPHA};
pub use integral::{rough_integral, ControlledIntegrand};
pub use io::{read_csv, write_csv};

use crate::error::{Error, Result};

/// Tolerance applied to Chen/geometric defects of externally supplied lifts.
pub const EXTERNAL_LIFT_TOL: f64 = 1e-10;
/// Tolerance met by lifts constructed in this module.
pub const CONSTRUCTION_TOL: f64 = 1e-12;

/// First and second level increment of a rough path over `[s, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    /// `W_t - W_s`.
    pub dw: Vec<f64>,
    /// `𝕎_{s,t}`, row-major `m × m`.
    pub area: Vec<f64>,
}

/// Anything that can report `(W_t - W_s, 𝕎_{s,t})` on its sampled time set.
///
/// Implemented by [`GeometricRoughPath`] and by [`PairwiseLift`], which stores
/// a second level for every sample pair and therefore need not satisfy Chen.
pub trait TwoLevelIncrements {
    fn dim(&self) -> usize;
    fn increment(&self, s: f64, t: f64) -> Result<Increment>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricRoughPath {
    times: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
    alpha: f64,
    dim: usize,
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidInput("empty sample sequence".into()));
    }
    for (k, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NonMonotoneTimes { index: k + 1 });
        }
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample time".into()));
    }
    Ok(())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl GeometricRoughPath {
    /// Canonical lift of the piecewise-linear interpolant through `samples`.
    ///
    /// `values[k]` is `W(times[k])`; the first value must be zero. The
    /// Hölder exponent defaults to `1/2` and can be changed with
    /// [`with_alpha`](Self::with_alpha).
    pub fn piecewise_linear_lift(times: &[f64], values: &[Vec<f64>]) -> Result<Self> {
        check_times(times)?;
        if values.len() != times.len() {
            return Err(Error::InvalidInput(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        let dim = values[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("path dimension must be at least 1".into()));
        }
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidInput("ragged path values".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite path value".into()));
        }
        let start = max_abs(&values[0]);
        if start != 0.0 {
            return Err(Error::NonzeroStart { norm: start });
        }
        let flat: Vec<f64> = values.iter().flatten().copied().collect();
        Ok(Self::lift_flat(times.to_vec(), flat, dim, 0.5))
    }

    /// Builds the cumulative second level of the linear interpolant.
    /// Caller guarantees shape, monotone times and `W(0) = 0`.
    pub(crate) fn lift_flat(times: Vec<f64>, values: Vec<f64>, dim: usize, alpha: f64) -> Self {
        let n = times.len();
        let mut second = vec![0.0; n * dim * dim];
        for k in 1..n {
            let (prev, cur) = (&values[(k - 1) * dim..k * dim], &values[k * dim..(k + 1) * dim]);
            let base = (k - 1) * dim * dim;
            for i in 0..dim {
                let di = cur[i] - prev[i];
                for j in 0..dim {
                    let dj = cur[j] - prev[j];
                    second[base + dim * dim + i * dim + j] =
                        second[base + i * dim + j] + prev[i] * dj + 0.5 * di * dj;
                }
            }
        }
        Self { times, values, second, alpha, dim }
    }

    /// Assembles a lift from externally supplied cumulative data and
    /// validates it at [`EXTERNAL_LIFT_TOL`].
    pub fn from_parts(
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
        alpha: f64,
    ) -> Result<Self> {
        check_times(&times)?;
        if values.len() != times.len() || second.len() != times.len() {
            return Err(Error::InvalidInput("times, values and second level lengths differ".into()));
        }
        let dim = values[0].len();
        if dim == 0 || values.iter().any(|v| v.len() != dim) || second.iter().any(|v| v.len() != dim * dim) {
            return Err(Error::InvalidInput("inconsistent path dimensions".into()));
        }
        let path = Self {
            times,
            values: values.into_iter().flatten().collect(),
            second: second.into_iter().flatten().collect(),
            alpha,
            dim,
        }
        .validated(EXTERNAL_LIFT_TOL)?;
        Ok(path)
    }

    fn validated(self, tol: f64) -> Result<Self> {
        if !(self.alpha > 1.0 / 3.0 && self.alpha <= 0.5) {
            return Err(Error::InvalidLift(format!("alpha = {} not in (1/3, 1/2]", self.alpha)));
        }
        let start = max_abs(self.value(0));
        if start > tol {
            return Err(Error::NonzeroStart { norm: start });
        }
        if max_abs(self.cumulative_second(0)) > tol {
            return Err(Error::InvalidLift("second level must vanish at the initial time".into()));
        }
        let geo = self.max_cumulative_geometric_defect();
        if geo > tol {
            return Err(Error::InvalidLift(format!("geometric defect {geo:e} exceeds {tol:e}")));
        }
        Ok(self)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 1.0 / 3.0 && alpha <= 0.5) {
            return Err(Error::InvalidInput(format!("alpha = {alpha} not in (1/3, 1/2]")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// `𝕎_{0,t_k}` in row-major order.
    pub fn cumulative_second(&self, k: usize) -> &[f64] {
        let d2 = self.dim * self.dim;
        &self.second[k * d2..(k + 1) * d2]
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let (a, b) = (self.start(), self.end());
        let slack = 1e-12 * (1.0 + b.abs());
        if t.is_nan() || t < a - slack || t > b + slack {
            return Err(Error::TimeOutOfRange { time: t, start: a, end: b });
        }
        Ok(())
    }

    /// Index `k` with `times[k] <= t < times[k+1]` (last interval closed).
    pub fn locate(&self, t: f64) -> usize {
        let n = self.times.len();
        if n < 2 || t <= self.times[0] {
            return 0;
        }
        match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(k) => k.min(n - 2),
            Err(k) => (k - 1).min(n - 2),
        }
    }

    /// Returns `(W_t, 𝕎_{0,t})` with the exact lift of the linear interpolant.
    pub fn state_at(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_time(t)?;
        let m = self.dim;
        let k = self.locate(t);
        let base = self.value(k).to_vec();
        let area0 = self.cumulative_second(k).to_vec();
        if self.times.len() == 1 || t == self.times[k] {
            return Ok((base, area0));
        }
        let (ta, tb) = (self.times[k], self.times[k + 1]);
        let theta = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        let next = self.value(k + 1);
        let delta: Vec<f64> = (0..m).map(|i| theta * (next[i] - base[i])).collect();
        let mut area = area0;
        for i in 0..m {
            for j in 0..m {
                area[i * m + j] += base[i] * delta[j] + 0.5 * delta[i] * delta[j];
            }
        }
        let w = (0..m).map(|i| base[i] + delta[i]).collect();
        Ok((w, area))
    }

    pub fn value_at(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.state_at(t)?.0)
    }

    fn chen_increment(m: usize, ws: &[f64], as_: &[f64], wt: &[f64], at: &[f64]) -> Increment {
        let dw: Vec<f64> = (0..m).map(|i| wt[i] - ws[i]).collect();
        let mut area = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                area[i * m + j] = at[i * m + j] - as_[i * m + j] - ws[i] * dw[j];
            }
        }
        Increment { dw, area }
    }

    /// Increment between sample indices `k <= l`.
    pub fn sample_increment(&self, k: usize, l: usize) -> Increment {
        Self::chen_increment(
            self.dim,
            self.value(k),
            self.cumulative_second(k),
            self.value(l),
            self.cumulative_second(l),
        )
    }

    /// Sup over sampled pairs of `|Sym 𝕎_{st} - ½ ΔW ⊗ ΔW|`. With cumulative
    /// storage this reduces to the same check on `𝕎_{0,t_k}`.
    pub fn max_cumulative_geometric_defect(&self) -> f64 {
        let m = self.dim;
        (0..self.len())
            .map(|k| {
                let w = self.value(k);
                let a = self.cumulative_second(k);
                let mut d = 0.0_f64;
                for i in 0..m {
                    for j in 0..m {
                        let sym = 0.5 * (a[i * m + j] + a[j * m + i]);
                        d = d.max((sym - 0.5 * w[i] * w[j]).abs());
                    }
                }
                d
            })
            .fold(0.0, f64::max)
    }

    /// Returns the two Hölder suprema over sampled pairs:
    /// `sup |ΔW| / |Δt|^α` and `sup |𝕎| / |Δt|^{2α}` (Euclidean/Frobenius).
    pub fn holder_components(&self) -> (f64, f64) {
        let n = self.len();
        let (mut first, mut second) = (0.0_f64, 0.0_f64);
        for k in 0..n {
            for l in (k + 1)..n {
                let dt = self.times[l] - self.times[k];
                let inc = self.sample_increment(k, l);
                first = first.max(euclid(&inc.dw) / dt.powf(self.alpha));
                second = second.max(euclid(&inc.area) / dt.powf(2.0 * self.alpha));
            }
        }
        (first, second)
    }

    /// Rough-path norm `‖𝐖‖_{𝒞^α}` evaluated over all sampled pairs.
    pub fn holder_norm(&self) -> f64 {
        let (a, b) = self.holder_components();
        a + b
    }

    /// Piecewise-linear lift through every `stride`-th sample (the final
    /// sample is always kept).
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidInput("stride must be positive".into()));
        }
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
        if *idx.last().unwrap() != n - 1 {
            idx.push(n - 1);
        }
        let times = idx.iter().map(|&k| self.times[k]).collect();
        let values = idx.iter().flat_map(|&k| self.value(k).to_vec()).collect();
        Ok(Self::lift_flat(times, values, self.dim, self.alpha))
    }

    /// Joins `tail` (a lift on `[τ, T']` whose values are increments from
    /// `τ = self.end()`) onto `self` using Chen's relation.
    pub fn concat(&self, tail: &GeometricRoughPath) -> Result<Self> {
        if tail.dim != self.dim {
            return Err(Error::InvalidInput("dimension mismatch in concat".into()));
        }
        let tau = self.end();
        if (tail.start() - tau).abs() > 1e-12 * (1.0 + tau.abs()) {
            return Err(Error::InvalidInput(format!(
                "tail starts at {} but head ends at {tau}",
                tail.start()
            )));
        }
        let m = self.dim;
        let w_tau = self.value(self.len() - 1).to_vec();
        let a_tau = self.cumulative_second(self.len() - 1).to_vec();
        let mut times = self.times.clone();
        let mut values = self.values.clone();
        let mut second = self.second.clone();
        for k in 1..tail.len() {
            times.push(tail.times[k]);
            let inc = tail.value(k);
            let ta = tail.cumulative_second(k);
            for i in 0..m {
                values.push(w_tau[i] + inc[i]);
            }
            for i in 0..m {
                for j in 0..m {
                    second.push(a_tau[i * m + j] + ta[i * m + j] + w_tau[i] * inc[j]);
                }
            }
        }
        Ok(Self { times, values, second, alpha: self.alpha.min(tail.alpha), dim: m })
    }

    /// Scales `W ↦ λW`, `𝕎 ↦ λ²𝕎`.
    pub fn dilate(&self, lambda: f64) -> Self {
        Self {
            times: self.times.clone(),
            values: self.values.iter().map(|v| v * lambda).collect(),
            second: self.second.iter().map(|v| v * lambda * lambda).collect(),
            alpha: self.alpha,
            dim: self.dim,
        }
    }

    /// Largest Chen and geometric defects over sampled triples/pairs,
    /// visiting every `stride`-th sample.
    pub fn max_defects(&self, stride: usize) -> (f64, f64) {
        let idx: Vec<usize> = (0..self.len()).step_by(stride.max(1)).collect();
        let mut chen = 0.0_f64;
        let mut geo = 0.0_f64;
        for (a, &k) in idx.iter().enumerate() {
            for (b, &l) in idx.iter().enumerate().skip(a) {
                let (s, t) = (self.times[k], self.times[l]);
                geo = geo.max(geometric_defect(self, s, t).unwrap_or(f64::INFINITY));
                for &u in &idx[a..=b] {
                    let um = self.times[u];
                    chen = chen.max(chen_defect(self, s, um, t).unwrap_or(f64::INFINITY));
                }
            }
        }
        (chen, geo)
    }
}

impl TwoLevelIncrements for GeometricRoughPath {
    fn dim(&self) -> usize {
        self.dim
    }

    /// For `s > t` the reversed increment of a geometric path is returned:
    /// `𝕎_{t,s} = ΔW ⊗ ΔW - 𝕎_{s,t}` with `ΔW = W_t - W_s`.
    fn increment(&self, s: f64, t: f64) -> Result<Increment> {
        if s > t {
            let fwd = self.increment(t, s)?;
            let m = self.dim;
            let dw: Vec<f64> = fwd.dw.iter().map(|x| -x).collect();
            let mut area = vec![0.0; m * m];
            for i in 0..m {
                for j in 0..m {
                    area[i * m + j] = fwd.dw[i] * fwd.dw[j] - fwd.area[i * m + j];
                }
            }
            return Ok(Increment { dw, area });
        }
        let (ws, as_) = self.state_at(s)?;
        let (wt, at) = self.state_at(t)?;
        Ok(Self::chen_increment(self.dim, &ws, &as_, &wt, &at))
    }
}

/// A sampled two-parameter object storing `𝕎_{t_k, t_l}` for every pair.
///
/// Used to examine data that may violate Chen's relation, which the
/// cumulative storage of [`GeometricRoughPath`] cannot express.
#[derive(Debug, Clone)]
pub struct PairwiseLift {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    dim: usize,
}

impl PairwiseLift {
    pub fn from_fn<F>(times: Vec<f64>, values: Vec<Vec<f64>>, mut second: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Vec<f64>,
    {
        check_times(&times)?;
        if values.len() != times.len() {
            return Err(Error::InvalidInput("times and values lengths differ".into()));
        }
        let dim = values[0].len();
        let n = times.len();
        let mut table = Vec::with_capacity(n * n);
        for k in 0..n {
            for l in 0..n {
                let a = second(k, l);
                if a.len() != dim * dim {
                    return Err(Error::InvalidInput("second level has wrong size".into()));
                }
                table.push(a);
            }
        }
        Ok(Self { times, values, second: table, dim })
    }

    fn index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&x| x == t)
            .ok_or(Error::TimeOutOfRange { time: t, start: self.times[0], end: *self.times.last().unwrap() })
    }
}

impl TwoLevelIncrements for PairwiseLift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn increment(&self, s: f64, t: f64) -> Result<Increment> {
        let (k, l) = (self.index(s)?, self.index(t)?);
        let n = self.times.len();
        Ok(Increment {
            dw: (0..self.dim).map(|i| self.values[l][i] - self.values[k][i]).collect(),
            area: self.second[k * n + l].clone(),
        })
    }
}

/// `|𝕎_{st} - 𝕎_{su} - 𝕎_{ut} - (W_u - W_s) ⊗ (W_t - W_u)|` in max norm.
pub fn chen_defect<P: TwoLevelIncrements + ?Sized>(path: &P, s: f64, u: f64, t: f64) -> Result<f64> {
    if !(s <= u && u <= t) {
        return Err(Error::InvalidInput(format!("need s <= u <= t, got ({s}, {u}, {t})")));
    }
    let m = path.dim();
    let st = path.increment(s, t)?;
    let su = path.increment(s, u)?;
    let ut = path.increment(u, t)?;
    let mut d = 0.0_f64;
    for i in 0..m {
        for j in 0..m {
            let r = st.area[i * m + j] - su.area[i * m + j] - ut.area[i * m + j] - su.dw[i] * ut.dw[j];
            d = d.max(r.abs());
        }
    }
    Ok(d)
}

/// `|Sym(𝕎_{st}) - ½ (W_t - W_s) ⊗ (W_t - W_s)|` in max norm.
pub fn geometric_defect<P: TwoLevelIncrements + ?Sized>(path: &P, s: f64, t: f64) -> Result<f64> {
    let m = path.dim();
    let inc = path.increment(s, t)?;
    let mut d = 0.0_f64;
    for i in 0..m {
        for j in 0..m {
            let sym = 0.5 * (inc.area[i * m + j] + inc.area[j * m + i]);
            d = d.max((sym - 0.5 * inc.dw[i] * inc.dw[j]).abs());
        }
    }
    Ok(d)
}
