use std::collections::BTreeMap;

use pathwise::characteristics::{trajectory, CharState, FlowMode};
use pathwise::datum::{Gaussian, Quadratic};
use pathwise::grid::{FieldHistory, GridField};
use pathwise::hamiltonians::ScalarField;
use pathwise::local_solver::{LocalOptions, LocalSolver};
use pathwise::pde_solver::{
    build_sub_super, sandwich_violation, solve_rough, solve_smooth, PdeProblem, SolveOptions, SubSuperOptions,
};
use pathwise::perron_verify::{bump, check_subsolution, compare, touching_probe, BumpOptions, BumpSpec, Model};
use pathwise::rough_path::{write_csv, CONSTRUCTION_TOL, EXTERNAL_LIFT_TOL};
use pathwise::Error;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{PathSource, Setup};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Lift,
    Flow,
    Local,
    Solve,
    Verify,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Lift => "lift",
            Stage::Flow => "flow",
            Stage::Local => "local",
            Stage::Solve => "solve",
            Stage::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub stage: &'static str,
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Artifacts and checks accumulated over a run.
#[derive(Debug, Default)]
pub struct Run {
    pub artifacts: BTreeMap<String, Vec<u8>>,
    pub checks: Vec<Check>,
    pub records: BTreeMap<String, Value>,
    solution: Option<FieldHistory>,
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> pathwise::Result<()>) -> pathwise::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

impl Run {
    fn check(&mut self, stage: Stage, name: &str, value: f64, threshold: f64) {
        self.checks.push(Check { stage: stage.name(), name: name.into(), value, threshold, passed: value <= threshold });
    }

    fn flag(&mut self, stage: Stage, name: &str, ok: bool) {
        self.checks.push(Check {
            stage: stage.name(),
            name: name.into(),
            value: if ok { 0.0 } else { 1.0 },
            threshold: 0.0,
            passed: ok,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn execute(&mut self, setup: &Setup, stage: Stage) -> pathwise::Result<()> {
        match stage {
            Stage::Lift => self.lift(setup),
            Stage::Flow => self.flow(setup),
            Stage::Local => self.local(setup),
            Stage::Solve => self.solve(setup).map(|_| ()),
            Stage::Verify => self.verify(setup),
        }
    }

    fn local_options(setup: &Setup) -> LocalOptions {
        let nm = &setup.config.numerics;
        LocalOptions { theta_inv: nm.theta_inv, mode: nm.mode, step: nm.flow_step, pad_cells: None }
    }

    fn problem(setup: &Setup, u0: GridField) -> PdeProblem {
        PdeProblem {
            drift: setup.drift.clone(),
            system: setup.system.clone(),
            path: setup.path.clone(),
            u0,
            t_end: setup.config.problem.t_end,
            dt: setup.config.numerics.dt,
        }
    }

    fn solve_options(setup: &Setup) -> SolveOptions {
        SolveOptions { output_times: setup.times.clone(), cfl: setup.config.numerics.cfl, ..Default::default() }
    }

    fn lift(&mut self, setup: &Setup) -> pathwise::Result<()> {
        let path = &setup.path;
        self.artifacts.insert("path.csv".into(), csv_bytes(|b| write_csv(path, b))?);
        let stride = path.len().div_ceil(128).max(1);
        let (chen, geo) = path.max_defects(stride);
        let (h1, h2) = path.holder_components();
        let tol = match setup.config.problem.path {
            PathSource::File { .. } => EXTERNAL_LIFT_TOL,
            _ => CONSTRUCTION_TOL,
        };
        let report = json!({
            "samples": path.len(),
            "components": path.dim(),
            "alpha": path.alpha(),
            "holder_first": h1,
            "holder_second": h2,
            "holder_norm": path.holder_norm(),
            "defect_stride": stride,
            "chen_defect": chen,
            "geometric_defect": geo,
        });
        self.artifacts.insert("lift.json".into(), json_bytes(&report));
        self.records.insert("lift".into(), report);
        self.check(Stage::Lift, "chen defect", chen, tol);
        self.check(Stage::Lift, "geometric defect", geo, tol);
        Ok(())
    }

    fn flow(&mut self, setup: &Setup) -> pathwise::Result<()> {
        let grid = &setup.grid;
        let n = grid.dim();
        let mode = setup.config.numerics.mode.unwrap_or_else(|| FlowMode::auto(&setup.system));
        let step = setup.config.numerics.flow_step;
        let per_axis = 17usize;
        let nodes: Vec<Vec<f64>> = (0..grid.len())
            .filter(|&i| {
                grid.unravel(i)
                    .iter()
                    .zip(grid.counts())
                    .all(|(&j, &c)| c <= per_axis || j % c.div_ceil(per_axis) == 0)
            })
            .map(|i| grid.node(i))
            .collect();
        let t0 = setup.path.start();
        let mut out = String::from("t");
        for prefix in ["x0_", "X", "P"] {
            for k in 1..=n {
                out.push_str(&format!(",{prefix}{k}"));
            }
        }
        out.push_str(",Z,detJx\n");
        let mut roundtrip = 0.0_f64;
        for x in &nodes {
            let init = CharState::initial(x.clone(), setup.datum.grad(x), Some(setup.datum.hess(x)));
            let traj = trajectory(&setup.system, &setup.path, &init, t0, &setup.times, mode, step)?;
            for (t, s) in setup.times.iter().zip(&traj) {
                let mut row = vec![format!("{t:.16e}")];
                row.extend(x.iter().chain(&s.x).chain(&s.p).map(|v| format!("{v:.16e}")));
                row.push(format!("{:.16e}", s.z));
                row.push(format!("{:.16e}", s.det_jx()));
                out.push_str(&row.join(","));
                out.push('\n');
            }
            let last = traj.last().expect("times nonempty");
            let back = trajectory(&setup.system, &setup.path, last, *setup.times.last().unwrap(), &[t0], mode, step)?;
            let scale = 1.0 + init.x.iter().chain(&init.p).map(|v| v.abs()).fold(init.z.abs(), f64::max);
            roundtrip = roundtrip.max(back[0].distance(&init) / scale);
        }
        self.artifacts.insert("flow.csv".into(), out.into_bytes());
        let report = json!({ "mode": mode.label(), "nodes": nodes.len(), "step": step, "roundtrip_defect": roundtrip });
        self.artifacts.insert("flow.json".into(), json_bytes(&report));
        self.records.insert("flow".into(), report);
        self.check(Stage::Flow, "backward flow inverts forward flow", roundtrip, 1e-6);
        Ok(())
    }

    fn local(&mut self, setup: &Setup) -> pathwise::Result<()> {
        let solver = LocalSolver::new(&setup.system, &setup.path, Self::local_options(setup));
        let t0 = setup.path.start();
        let hz = solver.horizon(&*setup.datum, t0, &setup.grid)?;
        self.artifacts.insert("horizon.json".into(), json_bytes(&hz));
        let h = hz.h.min(setup.config.problem.t_end - t0);
        self.flag(Stage::Local, "positive horizon", h > 0.0);
        if h <= 0.0 {
            return Ok(());
        }
        for (k, &t) in setup.times.iter().enumerate().filter(|(_, &t)| t <= t0 + h) {
            let snap = solver.apply(&*setup.datum, t0, t, &setup.grid)?;
            self.artifacts.insert(format!("local_{k:03}.csv"), csv_bytes(|b| snap.write_csv(b))?);
        }
        let zero = Quadratic::linear(vec![0.0; setup.grid.dim()], 0.0);
        let times: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|j| t0 + 0.99 * h * j / 3.0).collect();
        let props = solver.check_properties(&*setup.datum, &zero, t0, &times, 0.5, &setup.grid)?;
        let dx = setup.grid.dx();
        let tol = setup.config.numerics.property_factor * dx * dx;
        self.artifacts.insert("properties.json".into(), json_bytes(&props));
        self.records.insert("horizon".into(), serde_json::to_value(&hz).expect("serializable"));
        self.check(Stage::Local, "constant-shift defect", props.shift_defect, 1e-10);
        self.check(Stage::Local, "comparison defect", props.comparison_defect, tol);
        self.check(Stage::Local, "semigroup defect", props.semigroup_defect, tol);
        Ok(())
    }

    fn solve(&mut self, setup: &Setup) -> pathwise::Result<FieldHistory> {
        if let Some(u) = &self.solution {
            return Ok(u.clone());
        }
        let u0 = GridField::from_fn(setup.grid.clone(), |x| setup.datum.value(x));
        let problem = Self::problem(setup, u0);
        let opts = Self::solve_options(setup);
        let levels = setup.config.numerics.levels;
        let (solution, cauchy) = if levels >= 2 {
            let r = solve_rough(&problem, &opts, levels)?;
            (r.finest, Some(r.cauchy))
        } else {
            (solve_smooth(&problem, &opts)?, None)
        };
        self.artifacts.insert("solution.csv".into(), csv_bytes(|b| solution.history.write_csv(b))?);
        let report = json!({ "record": solution.record, "cauchy": cauchy });
        self.artifacts.insert("solve.json".into(), json_bytes(&report));
        self.records.insert("solve".into(), report);
        self.solution = Some(solution.history.clone());
        Ok(solution.history)
    }

    fn verify(&mut self, setup: &Setup) -> pathwise::Result<()> {
        let tol = setup.config.numerics.tolerance;
        let grid = &setup.grid;
        let u0 = GridField::from_fn(grid.clone(), |x| setup.datum.value(x));
        let center: Vec<f64> = grid.lower().iter().zip(grid.upper()).map(|(a, b)| 0.5 * (a + b)).collect();
        let extent = grid.lower().iter().zip(grid.upper()).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
        let lump = Gaussian { amplitude: 0.1, width: 0.1 * extent, center };
        let v0 = GridField::from_fn(grid.clone(), |x| setup.datum.value(x) + lump.value(x));
        // Every solve compared below shares one dissipation floor, hence one scheme.
        let floor = gradient_range(&u0).into_iter().zip(gradient_range(&v0)).map(|(a, b)| a.max(b)).collect();
        let mesh = SolveOptions {
            output_times: setup.verify_times.clone(),
            gradient_floor: Some(floor),
            ..Self::solve_options(setup)
        };
        let problem = Self::problem(setup, u0);
        // The barriers and probes use the scheme on the path as given, on a finer time mesh.
        let u = solve_smooth(&problem, &mesh)?.history;
        let sub_opts = SubSuperOptions {
            local: Self::local_options(setup),
            drift_samples: setup.config.verify.drift_samples,
            seed: setup.config.seed,
            ..Default::default()
        };
        let pair = build_sub_super(&problem, &*setup.datum, &u.times, &sub_opts)?;
        let mut constants = serde_json::to_value(&pair).expect("serializable");
        if let Value::Object(m) = &mut constants {
            m.remove("lower");
            m.remove("upper");
        }
        self.artifacts.insert("sub_super.json".into(), json_bytes(&constants));
        self.artifacts.insert("lower.csv".into(), csv_bytes(|b| pair.lower.write_csv(b))?);
        self.artifacts.insert("upper.csv".into(), csv_bytes(|b| pair.upper.write_csv(b))?);
        self.check(Stage::Verify, "sandwich violation", sandwich_violation(&pair, &u, tol)?, 0.0);
        let lu = compare(&pair.lower, &pair.upper, tol)?;
        self.flag(Stage::Verify, "sub/super excess nonincreasing", lu.nonincreasing && lu.excess[0] == 0.0);

        let solve_from = |u0: GridField| -> pathwise::Result<FieldHistory> {
            Ok(solve_smooth(&Self::problem(setup, u0), &mesh)?.history)
        };
        let v = solve_from(v0)?;
        let order = u.map2(&v, |a, b| (a - b).max(0.0))?.frames.iter().flatten().copied().fold(0.0, f64::max);
        self.check(Stage::Verify, "scheme comparison u <= v", order, 1e-12);
        let uv = compare(&v, &u, tol)?;
        self.flag(Stage::Verify, "ordered-pair excess nonincreasing", uv.nonincreasing);
        if setup.drift.is_r_independent() {
            let w0 = GridField::from_fn(grid.clone(), |x| setup.datum.value(x) + 0.5);
            let w = solve_from(w0)?;
            let shift = u.map2(&w, |a, b| (b - a - 0.5).abs())?.frames.iter().flatten().copied().fold(0.0, f64::max);
            self.check(Stage::Verify, "constant-shift defect", shift, 1e-10);
        }

        let model = Model { drift: &*setup.drift, system: &setup.system, path: &setup.path, local: Self::local_options(setup) };
        let probes = self.probes(setup, &pair.lower, &model)?;
        let report = check_subsolution(&pair.lower, &probes, &model, tol)?;
        self.check(Stage::Verify, "sub-solution probe violation", report.max_violation, tol);
        self.artifacts.insert("probes.json".into(), json_bytes(&report));

        if let Some(b) = &setup.config.verify.bump {
            let n = grid.dim();
            let mut xm = vec![0.0; n * n];
            (0..n).for_each(|i| xm[i * n + i] = b.x);
            let spec = BumpSpec {
                gamma: b.gamma,
                r: b.r,
                s: b.s,
                p: b.p.clone().unwrap_or_else(|| vec![0.0; n]),
                x: xm.clone(),
                a: b.a,
                momentum_bound: b.momentum_bound,
            };
            let k0 = u.times.iter().position(|t| (t - b.time).abs() <= 1e-12).ok_or_else(|| {
                Error::InvalidInput(format!("bump time {} is not an output time", b.time))
            })?;
            let node = (0..grid.len())
                .min_by(|&i, &j| dist(&grid.node(i), &b.anchor).total_cmp(&dist(&grid.node(j), &b.anchor)))
                .expect("grid nonempty");
            let eta = Quadratic::new(xm, spec.p.clone(), 0.0, grid.node(node))?;
            let solver = LocalSolver::new(&setup.system, &setup.path, Self::local_options(setup));
            let frames = u
                .times
                .iter()
                .map(|&t| {
                    Ok(solver.apply(&eta, b.time, t, grid)?.phi.into_iter().map(|v| v + b.a * (t - b.time)).collect())
                })
                .collect::<pathwise::Result<Vec<_>>>()?;
            let w = FieldHistory::new(grid.clone(), u.times.clone(), frames)?;
            let out = bump(&w, node, k0, &spec, b.kappa, &model, &BumpOptions { tolerance: 1e-3, ..Default::default() })?;
            self.flag(Stage::Verify, "bump certificate", out.certificate.passed());
            self.artifacts.insert("bump.json".into(), json_bytes(&out.certificate));
        }
        Ok(())
    }

    fn probes(
        &self,
        setup: &Setup,
        lower: &FieldHistory,
        model: &Model,
    ) -> pathwise::Result<Vec<pathwise::perron_verify::TestFunctionProbe>> {
        let grid = &setup.grid;
        let count = setup.config.verify.probes;
        let dx = grid.dx();
        let interior: Vec<usize> = (0..grid.len())
            .filter(|&i| grid.unravel(i).iter().zip(grid.counts()).all(|(&j, &c)| j >= c / 4 && j <= 3 * c / 4))
            .collect();
        (0..count)
            .map(|j| {
                let node = interior[(j * interior.len()) / count + interior.len() / (2 * count)];
                let k = 1 + j % (lower.len() - 1);
                let h = lower.times[k] - lower.times[k - 1];
                touching_probe(lower, node, k, 1.0, 1.0, 4.0 * dx, h, model)
            })
            .collect()
    }
}

/// Largest one-sided difference quotient per axis.
fn gradient_range(u: &GridField) -> Vec<f64> {
    let grid = &u.grid;
    (0..grid.dim())
        .map(|k| {
            let h = grid.spacing(k);
            (0..grid.len())
                .filter(|&i| grid.unravel(i)[k] + 1 < grid.counts()[k])
                .map(|i| ((u.values[i + grid.stride(k)] - u.values[i]) / h).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Fixed-width table of the checks.
pub fn summary(checks: &[Check]) -> String {
    let mut s = format!("{:<8} {:<40} {:>12} {:>12}  {}\n", "stage", "check", "value", "threshold", "result");
    for c in checks {
        s.push_str(&format!(
            "{:<8} {:<40} {:>12.4e} {:>12.4e}  {}\n",
            c.stage,
            c.name,
            c.value,
            c.threshold,
            if c.passed { "PASS" } else { "FAIL" }
        ));
    }
    s
}
