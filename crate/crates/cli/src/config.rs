use std::path::{Path, PathBuf};
use std::sync::Arc;

use pathwise::characteristics::FlowMode;
use pathwise::datum::DatumSpec;
use pathwise::expr::Expr;
use pathwise::grid::Grid;
use pathwise::hamiltonians::{builtin, DriftFamily, DriftOperator, Family, HamiltonianSystem, ScalarField};
use pathwise::rough_path::{brownian_lift, read_csv, GeometricRoughPath, BROWNIAN_ALPHA};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dim: usize,
    pub t_end: f64,
    pub hamiltonian: Vec<Family>,
    #[serde(default = "zero_drift")]
    pub drift: DriftFamily,
    pub path: PathSource,
    pub datum: DatumSpec,
}

fn zero_drift() -> DriftFamily {
    DriftFamily::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathSource {
    /// Dyadic Brownian lift with `resolution` steps on `[0, t_end]`.
    Brownian {
        #[serde(default = "one")]
        m: usize,
        resolution: usize,
    },
    /// CSV lift `t,W1..,WW11..`; relative paths resolve against the config file.
    File {
        file: PathBuf,
        #[serde(default)]
        alpha: Option<f64>,
    },
    /// Piecewise-linear lift of formulas in `t`, one per component.
    Analytic { formulas: Vec<String>, samples: usize },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub dx: f64,
    pub dt: f64,
    #[serde(default = "theta_inv")]
    pub theta_inv: f64,
    #[serde(default = "flow_step")]
    pub flow_step: f64,
    #[serde(default)]
    pub mode: Option<FlowMode>,
    #[serde(default = "cfl")]
    pub cfl: f64,
    /// Dyadic refinements for rough mode; 0 solves on the path as given.
    #[serde(default)]
    pub levels: usize,
    /// Scheme error bound used by the sandwich and comparison checks.
    #[serde(default = "tolerance")]
    pub tolerance: f64,
    /// Operator-property defects must stay below `factor · dx²`.
    #[serde(default = "property_factor")]
    pub property_factor: f64,
}

fn theta_inv() -> f64 {
    0.1
}
fn flow_step() -> f64 {
    1e-2
}
fn cfl() -> f64 {
    1.0
}
fn tolerance() -> f64 {
    0.05
}
fn property_factor() -> f64 {
    5.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "probes")]
    pub probes: usize,
    #[serde(default = "drift_samples")]
    pub drift_samples: usize,
    /// Spacing of the time mesh the probes and barriers are evaluated on.
    #[serde(default = "time_step")]
    pub time_step: f64,
    #[serde(default)]
    pub bump: Option<BumpConfig>,
}

fn probes() -> usize {
    6
}
fn drift_samples() -> usize {
    4096
}
fn time_step() -> f64 {
    0.025
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { probes: probes(), drift_samples: drift_samples(), time_step: time_step(), bump: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    pub gamma: f64,
    pub r: f64,
    pub s: f64,
    pub kappa: f64,
    pub anchor: Vec<f64>,
    pub time: f64,
    #[serde(default)]
    pub p: Option<Vec<f64>>,
    /// Isotropic Hessian `X = x·I` of the failing test function.
    pub x: f64,
    #[serde(default)]
    pub a: f64,
    pub momentum_bound: f64,
}

/// Configuration problem, reported with the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("`{key}`: {msg}"))
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be positive, got {v}")))
    }
}

/// Everything a pipeline needs, built once from a validated config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: RunConfig,
    pub system: HamiltonianSystem,
    pub drift: Arc<dyn DriftOperator>,
    pub path: GeometricRoughPath,
    pub datum: Arc<dyn ScalarField>,
    pub grid: Grid,
    /// Start, requested output times and `t_end`, sorted.
    pub times: Vec<f64>,
    /// `times` merged with a uniform mesh of step `verify.time_step`.
    pub verify_times: Vec<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string().trim().to_string()))
    }

    /// Checks every numeric field and builds the model objects. `base` is the
    /// directory relative paths resolve against.
    pub fn setup(&self, base: &Path) -> Result<Setup, ConfigError> {
        let p = &self.problem;
        let nm = &self.numerics;
        if p.dim == 0 {
            return Err(bad("problem.dim", "must be at least 1"));
        }
        positive("problem.t_end", p.t_end)?;
        if p.hamiltonian.is_empty() {
            return Err(bad("problem.hamiltonian", "needs at least one component"));
        }
        if nm.lower.len() != p.dim {
            return Err(bad("numerics.lower", format!("has {} entries, expected {}", nm.lower.len(), p.dim)));
        }
        if nm.upper.len() != p.dim {
            return Err(bad("numerics.upper", format!("has {} entries, expected {}", nm.upper.len(), p.dim)));
        }
        if nm.lower.iter().zip(&nm.upper).any(|(a, b)| !(a < b)) {
            return Err(bad("numerics.upper", "must exceed numerics.lower componentwise"));
        }
        positive("numerics.dx", nm.dx)?;
        positive("numerics.dt", nm.dt)?;
        positive("numerics.flow_step", nm.flow_step)?;
        positive("numerics.tolerance", nm.tolerance)?;
        positive("numerics.property_factor", nm.property_factor)?;
        if !(nm.theta_inv > 0.0 && nm.theta_inv < 1.0) {
            return Err(bad("numerics.theta_inv", format!("must lie in (0, 1), got {}", nm.theta_inv)));
        }
        if !(nm.cfl > 0.0 && nm.cfl <= 1.0) {
            return Err(bad("numerics.cfl", format!("must lie in (0, 1], got {}", nm.cfl)));
        }
        if nm.levels == 1 {
            return Err(bad("numerics.levels", "must be 0 (smooth) or at least 2"));
        }
        if let Some(t) = self.outputs.times.iter().find(|t| !(**t > 0.0 && **t <= p.t_end)) {
            return Err(bad("outputs.times", format!("{t} lies outside (0, t_end]")));
        }
        if self.verify.probes == 0 {
            return Err(bad("verify.probes", "must be at least 1"));
        }
        positive("verify.time_step", self.verify.time_step)?;
        if self.verify.drift_samples == 0 {
            return Err(bad("verify.drift_samples", "must be at least 1"));
        }
        if let Some(b) = &self.verify.bump {
            positive("verify.bump.gamma", b.gamma)?;
            positive("verify.bump.r", b.r)?;
            positive("verify.bump.s", b.s)?;
            positive("verify.bump.kappa", b.kappa)?;
            positive("verify.bump.momentum_bound", b.momentum_bound)?;
            if b.anchor.len() != p.dim {
                return Err(bad("verify.bump.anchor", format!("expected {} entries", p.dim)));
            }
            if b.p.as_ref().is_some_and(|v| v.len() != p.dim) {
                return Err(bad("verify.bump.p", format!("expected {} entries", p.dim)));
            }
        }

        let components = p
            .hamiltonian
            .iter()
            .enumerate()
            .map(|(i, f)| builtin(p.dim, f).map_err(|e| bad(&format!("problem.hamiltonian[{i}]"), e)))
            .collect::<Result<Vec<_>, _>>()?;
        let system = HamiltonianSystem::new(components).map_err(|e| bad("problem.hamiltonian", e))?;
        let drift = p.drift.build().map_err(|e| bad("problem.drift", e))?;
        let datum = p.datum.build(p.dim).map_err(|e| bad("problem.datum", e))?;
        let path = self.path(base)?;
        if path.dim() != system.len() {
            return Err(bad("problem.path", format!("has {} components, H has {}", path.dim(), system.len())));
        }
        if path.end() + 1e-12 < p.t_end {
            return Err(bad("problem.path", format!("ends at {} before t_end = {}", path.end(), p.t_end)));
        }
        let grid = Grid::with_spacing(nm.lower.clone(), nm.upper.clone(), nm.dx).map_err(|e| bad("numerics.dx", e))?;
        let mut times = vec![path.start()];
        times.extend(self.outputs.times.iter().copied());
        times.push(p.t_end);
        times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        let t0 = path.start();
        let steps = ((p.t_end - t0) / self.verify.time_step).ceil() as usize;
        let mut verify_times = times.clone();
        verify_times.extend((1..steps).map(|j| t0 + j as f64 * self.verify.time_step));
        verify_times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        verify_times.dedup_by(|a, b| (*a - *b).abs() <= 1e-9);
        Ok(Setup { config: self.clone(), system, drift, path, datum, grid, times, verify_times })
    }

    fn path(&self, base: &Path) -> Result<GeometricRoughPath, ConfigError> {
        let t_end = self.problem.t_end;
        match &self.problem.path {
            PathSource::Brownian { m, resolution } => {
                if *resolution < 2 {
                    return Err(bad("problem.path.resolution", "must be at least 2"));
                }
                brownian_lift(self.seed, *m, t_end, *resolution).map_err(|e| bad("problem.path", e))
            }
            PathSource::File { file, alpha } => {
                let full = base.join(file);
                let f = std::fs::File::open(&full).map_err(|e| bad("problem.path.file", format!("{}: {e}", full.display())))?;
                read_csv(std::io::BufReader::new(f), alpha.unwrap_or(BROWNIAN_ALPHA)).map_err(|e| bad("problem.path.file", e))
            }
            PathSource::Analytic { formulas, samples } => {
                if *samples < 2 {
                    return Err(bad("problem.path.samples", "must be at least 2"));
                }
                let exprs = formulas
                    .iter()
                    .map(|f| Expr::parse(f, &["t"]).map_err(|e| bad("problem.path.formulas", e)))
                    .collect::<Result<Vec<_>, _>>()?;
                let times: Vec<f64> = (0..=*samples).map(|k| t_end * k as f64 / *samples as f64).collect();
                let origin: Vec<f64> = exprs.iter().map(|e| e.eval(&[0.0])).collect();
                let values: Vec<Vec<f64>> =
                    times.iter().map(|&t| exprs.iter().zip(&origin).map(|(e, o)| e.eval(&[t]) - o).collect()).collect();
                GeometricRoughPath::piecewise_linear_lift(&times, &values).map_err(|e| bad("problem.path", e))
            }
        }
    }
}
