use super::{GeometricRoughPath, TwoLevelIncrements};
use crate::error::{Error, Result};

/// A path-controlled integrand `f` sampled on a partition of `[t0, t1]`.
///
/// `derivatives[k]` is the Gubinelli derivative `f'` at `times[k]`, row-major
/// `m × m` with `f'[i][j] = ∂f_i / ∂W^j`.
#[derive(Debug, Clone, Default)]
pub struct ControlledIntegrand {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub derivatives: Option<Vec<Vec<f64>>>,
}

/// `Σ_i f_i ΔW^i + Σ_{i,j} f'_{ij} 𝕎^{ji}`.
pub(crate) fn compensated_term(f: &[f64], fprime: &[f64], dw: &[f64], area: &[f64]) -> f64 {
    let m = dw.len();
    let mut acc = 0.0;
    for i in 0..m {
        acc += f[i] * dw[i];
        for j in 0..m {
            acc += fprime[i * m + j] * area[j * m + i];
        }
    }
    acc
}

/// Second-order compensated Riemann sum `Σ [f·ΔW + f'·𝕎]` over the
/// integrand's partition.
///
/// The partition must run from `min(t0, t1)` to `max(t0, t1)`. If `t0 > t1`
/// the integral over `[t1, t0]` is returned with its sign flipped.
pub fn rough_integral(
    integrand: &ControlledIntegrand,
    path: &GeometricRoughPath,
    t0: f64,
    t1: f64,
) -> Result<f64> {
    if t0 > t1 {
        return Ok(-rough_integral(integrand, path, t1, t0)?);
    }
    let derivs = integrand
        .derivatives
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("integrand is missing its Gubinelli derivative".into()))?;
    let times = &integrand.times;
    let m = path.dim();
    if times.is_empty() || integrand.values.len() != times.len() || derivs.len() != times.len() {
        return Err(Error::InvalidInput("integrand samples are inconsistent".into()));
    }
    let tol = 1e-12 * (1.0 + t1.abs());
    if (times[0] - t0).abs() > tol || (times[times.len() - 1] - t1).abs() > tol {
        return Err(Error::InvalidInput(format!(
            "integrand partition [{}, {}] does not match [{t0}, {t1}]",
            times[0],
            times[times.len() - 1]
        )));
    }
    let mut acc = 0.0;
    for k in 0..times.len() - 1 {
        if !(times[k + 1] > times[k]) {
            return Err(Error::NonMonotoneTimes { index: k + 1 });
        }
        let (f, fp) = (&integrand.values[k], &derivs[k]);
        if f.len() != m || fp.len() != m * m {
            return Err(Error::InvalidInput(format!("integrand sample {k} has the wrong shape")));
        }
        let inc = path.increment(times[k], times[k + 1])?;
        acc += compensated_term(f, fp, &inc.dw, &inc.area);
    }
    Ok(acc)
}
