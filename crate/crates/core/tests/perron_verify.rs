use std::sync::Arc;

use pathwise::datum::{Gaussian, Quadratic};
use pathwise::grid::{FieldHistory, Grid, GridField};
use pathwise::hamiltonians::{DriftOperator, HamiltonianSystem, Heat, QuadraticMomentum, ScalarField};
use pathwise::local_solver::LocalOptions;
use pathwise::pde_solver::{
    build_sub_super, excess_profile, solve_smooth, PdeProblem, SolveOptions, SubSuperOptions, SubSuperPair,
};
use pathwise::perron_verify::{check_subsolution, envelope, slope_probe, Model, TestFunctionProbe};
use pathwise::rough_path::{brownian_lift, GeometricRoughPath};
use pathwise::Error;
use proptest::prelude::*;

fn free() -> HamiltonianSystem {
    HamiltonianSystem::single(Arc::new(QuadraticMomentum::new(1)))
}

struct Setup {
    grid: Grid,
    system: HamiltonianSystem,
    path: GeometricRoughPath,
    heat: Heat,
    times: Vec<f64>,
    pair: SubSuperPair,
}

fn setup(nu: f64, seed: u64) -> Setup {
    let grid = Grid::cube(1, -2.0, 2.0, 121).unwrap();
    let system = free();
    let path = brownian_lift(seed, 1, 0.5, 64).unwrap();
    let heat = Heat { nu };
    let times: Vec<f64> = (0..=20).map(|k| k as f64 / 80.0).collect();
    let phi = Gaussian { amplitude: 0.3, width: 0.5, center: vec![0.1] };
    let problem = PdeProblem {
        drift: Arc::new(heat),
        system: system.clone(),
        path: path.clone(),
        u0: GridField::from_fn(grid.clone(), |x| phi.value(x)),
        t_end: 0.25,
        dt: 0.005,
    };
    let pair = build_sub_super(&problem, &phi, &times, &SubSuperOptions::default()).unwrap();
    Setup { grid, system, path, heat, times, pair }
}

// Quadratic test functions touching `u` from above at each anchor, with
// extra curvature so the spatial maximum is strict.
fn probes(s: &Setup, u: &FieldHistory, model: &Model) -> Vec<TestFunctionProbe> {
    let dx = s.grid.dx();
    (0..6)
        .map(|j| {
            let (node, k) = (35 + 10 * j, 3 + 3 * j);
            let f = &u.frames[k];
            let slope = (f[node + 1] - f[node - 1]) / (2.0 * dx);
            let curv = (f[node + 1] - 2.0 * f[node] + f[node - 1]) / (dx * dx);
            let phi = Quadratic::new(vec![curv + 0.5], vec![slope], f[node], s.grid.node(node)).unwrap();
            slope_probe(u, node, k, Arc::new(phi), 1.0, 4.0 * dx, s.times[k] - s.times[k - 1], model).unwrap()
        })
        .collect()
}

#[test]
fn lower_barrier_passes_probes() {
    let s = setup(0.05, 31);
    let model = Model { drift: &s.heat, system: &s.system, path: &s.path, local: LocalOptions::default() };
    let report = check_subsolution(&s.pair.lower, &probes(&s, &s.pair.lower, &model), &model, 0.05).unwrap();
    assert!(report.interior > 0);
    assert!(report.passed(), "{report:?}");
}

#[test]
fn upper_barrier_is_not_a_subsolution() {
    // Its time slope carries sup F over the whole ball, far above F at the touching point.
    let s = setup(1.0, 32);
    let model = Model { drift: &s.heat, system: &s.system, path: &s.path, local: LocalOptions::default() };
    let probes = probes(&s, &s.pair.upper, &model);
    let report = check_subsolution(&s.pair.upper, &probes, &model, 0.05).unwrap();
    assert!(s.pair.c_upper > 1.0);
    assert!(!report.passed());
    assert!(report.max_violation > 0.5 * s.pair.c_upper, "{} vs {}", report.max_violation, s.pair.c_upper);

    // Raising the tolerance can only drop violations.
    let mut last: Option<Vec<usize>> = None;
    for tol in [0.0, 0.1, 1.0, 10.0, 1e3] {
        let v = check_subsolution(&s.pair.upper, &probes, &model, tol).unwrap().violations;
        if let Some(prev) = &last {
            assert!(v.iter().all(|i| prev.contains(i)), "tol {tol}");
        }
        last = Some(v);
    }
    assert!(last.unwrap().is_empty());
}

#[test]
fn initial_excess_bounds_later_excess() {
    let grid = Grid::cube(1, -2.0, 2.0, 81).unwrap();
    let g = Gaussian { amplitude: 0.3, width: 0.5, center: vec![0.0] };
    let u0 = GridField::from_fn(grid.clone(), |x| g.value(x));
    let v0 = GridField::from_fn(grid.clone(), |x| g.value(x) - if x[0].abs() < 0.5 { 1.0 } else { 0.0 });
    let path = brownian_lift(33, 1, 0.5, 64).unwrap();
    let drift: Arc<dyn DriftOperator> = Arc::new(Heat { nu: 0.1 });
    let opts = SolveOptions {
        output_times: (0..=10).map(|k| k as f64 / 20.0).collect(),
        gradient_floor: Some(vec![40.0]),
        ..Default::default()
    };
    let run = |u0: GridField| {
        let p = PdeProblem { drift: drift.clone(), system: free(), path: path.clone(), u0, t_end: 0.5, dt: 1e-3 };
        solve_smooth(&p, &opts).unwrap().history
    };
    let excess = excess_profile(&run(u0), &run(v0)).unwrap();
    assert!((excess[0] - 1.0).abs() < 1e-12);
    assert!(excess.iter().all(|e| *e <= 1.0 + 1e-12), "{excess:?}");
    assert!(excess.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{excess:?}");
}

#[test]
fn envelope_rejects_mixed_meshes() {
    let a = history(&[0.0; 6], 3);
    let b = FieldHistory::new(Grid::cube(1, 0.0, 1.0, 3).unwrap(), vec![0.0, 0.5], vec![vec![0.0; 3]; 2]).unwrap();
    assert!(matches!(envelope(&[a, b]), Err(Error::MeshMismatch(_))));
    assert!(envelope(&[]).is_err());
}

fn history(values: &[f64], nodes: usize) -> FieldHistory {
    let grid = Grid::cube(1, 0.0, 1.0, nodes).unwrap();
    let frames: Vec<Vec<f64>> = values.chunks(nodes).map(|c| c.to_vec()).collect();
    let times = (0..frames.len()).map(|k| k as f64).collect();
    FieldHistory::new(grid, times, frames).unwrap()
}

proptest! {
    #[test]
    fn envelope_is_an_idempotent_commutative_maximum(
        a in prop::collection::vec(-5.0..5.0f64, 12),
        b in prop::collection::vec(-5.0..5.0f64, 12),
        c in prop::collection::vec(-5.0..5.0f64, 12),
    ) {
        let (a, b, c) = (history(&a, 4), history(&b, 4), history(&c, 4));
        prop_assert_eq!(envelope(&[a.clone(), a.clone()]).unwrap(), a.clone());
        let ab = envelope(&[a.clone(), b.clone()]).unwrap();
        prop_assert_eq!(&ab, &envelope(&[b.clone(), a.clone()]).unwrap());
        let left = envelope(&[ab.clone(), c.clone()]).unwrap();
        let right = envelope(&[a.clone(), envelope(&[b.clone(), c.clone()]).unwrap()]).unwrap();
        prop_assert_eq!(&left, &right);
        for m in [&a, &b, &c] {
            prop_assert!(excess_profile(m, &left).unwrap().iter().all(|e| *e <= 0.0));
        }
    }
}
