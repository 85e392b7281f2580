use std::sync::Arc;

use pathwise::datum::{Gaussian, Quadratic};
use pathwise::grid::Grid;
use pathwise::hamiltonians::{ExprHamiltonian, HamiltonianSystem, QuadraticMomentum, ScalarField};
use pathwise::local_solver::{LocalOptions, LocalSolver};
use pathwise::rough_path::brownian_lift;
use proptest::prelude::*;

fn free(n: usize) -> HamiltonianSystem {
    HamiltonianSystem::single(Arc::new(QuadraticMomentum::new(n)))
}

#[test]
fn linear_datum_on_brownian_path() {
    let sys = free(2);
    let path = brownian_lift(11, 1, 1.0, 256).unwrap();
    let solver = LocalSolver::new(&sys, &path, LocalOptions::default());
    let grid = Grid::cube(2, -1.0, 1.0, 9).unwrap();
    let p0 = vec![0.6, -0.8];
    let phi = Quadratic::linear(p0.clone(), 0.0);
    for t in [0.3, 0.7, 1.0] {
        let s = solver.apply(&phi, 0.0, t, &grid).unwrap();
        let tau = path.value_at(t).unwrap()[0] - path.value_at(0.0).unwrap()[0];
        for (i, x) in grid.nodes().iter().enumerate() {
            let exact = p0[0] * x[0] + p0[1] * x[1] + 0.5 * tau;
            assert!((s.phi[i] - exact).abs() < 1e-12, "t={t}: {} vs {exact}", s.phi[i]);
        }
    }
}

#[test]
fn quadratic_datum_follows_the_closed_form_on_both_sides() {
    let sys = free(1);
    let path = brownian_lift(12, 1, 1.0, 256).unwrap();
    let solver = LocalSolver::new(&sys, &path, LocalOptions::default());
    let grid = Grid::cube(1, -1.0, 1.0, 129).unwrap();
    let dx = grid.dx();
    for a in [0.4, -0.4] {
        let phi = Quadratic::isotropic(1, a);
        let h = solver.horizon(&phi, 0.5, &grid).unwrap().h;
        assert!(h > 0.0);
        for t in [0.5 - 0.9 * h.min(0.5), 0.5 + 0.9 * h.min(0.5)] {
            let s = solver.apply(&phi, 0.5, t, &grid).unwrap();
            let tau = path.value_at(t).unwrap()[0] - path.value_at(0.5).unwrap()[0];
            for (i, x) in grid.nodes().iter().enumerate() {
                let exact = a * x[0] * x[0] / (2.0 * (1.0 - a * tau));
                assert!((s.phi[i] - exact).abs() < 2.0 * dx * dx, "a={a} t={t}");
            }
        }
    }
}

#[test]
fn operator_properties_hold_for_a_potential() {
    let sys = HamiltonianSystem::single(Arc::new(ExprHamiltonian::parse("0.5*p1^2 - 0.3*cos(x1)", 1).unwrap()));
    let path = brownian_lift(13, 1, 0.5, 128).unwrap();
    let solver = LocalSolver::new(&sys, &path, LocalOptions::default());
    let grid = Grid::cube(1, -1.0, 1.0, 129).unwrap();
    let g = Gaussian { amplitude: 0.2, width: 0.6, center: vec![0.1] };
    let h = solver.horizon(&g, 0.0, &grid).unwrap().h.min(0.5);
    let times: Vec<f64> = [0.3, 0.6, 0.9].iter().map(|f| f * h).collect();
    let lin = Quadratic::linear(vec![0.1], -0.2);
    let r = solver.check_properties(&g, &lin, 0.0, &times, -0.7, &grid).unwrap();
    let dx = grid.dx();
    assert!(r.shift_defect < 1e-10, "{r:?}");
    assert!(r.comparison_defect <= 5.0 * dx * dx, "{r:?}");
    assert!(r.semigroup_defect <= 5.0 * dx * dx, "{r:?}");
}

#[test]
fn snapshot_gradient_matches_datum_transport() {
    let sys = free(1);
    let path = brownian_lift(14, 1, 1.0, 64).unwrap();
    let solver = LocalSolver::new(&sys, &path, LocalOptions::default());
    let grid = Grid::cube(1, -1.0, 1.0, 65).unwrap();
    let a = 0.5;
    let s = solver.apply(&Quadratic::isotropic(1, a), 0.0, 0.4, &grid).unwrap();
    let tau = path.value_at(0.4).unwrap()[0] - path.value_at(0.0).unwrap()[0];
    for (i, x) in grid.nodes().iter().enumerate() {
        assert!((s.dphi[i] - a * x[0] / (1.0 - a * tau)).abs() < 1e-8);
        assert!((s.det_jx[i] - (1.0 - a * tau)).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ordered_data_stay_ordered(seed in 0u64..1000, lift in 0.0..0.3f64, center in -0.5..0.5f64) {
        let sys = free(1);
        let path = brownian_lift(seed, 1, 0.5, 64).unwrap();
        let solver = LocalSolver::new(&sys, &path, LocalOptions::default());
        let grid = Grid::cube(1, -1.0, 1.0, 65).unwrap();
        let base = Gaussian { amplitude: 0.3, width: 0.7, center: vec![0.0] };
        let bump = Gaussian { amplitude: lift, width: 0.7, center: vec![center] };
        #[derive(Debug)]
        struct Sum(Gaussian, Gaussian);
        impl ScalarField for Sum {
            fn dim(&self) -> usize { 1 }
            fn value(&self, x: &[f64]) -> f64 { self.0.value(x) + self.1.value(x) }
            fn grad(&self, x: &[f64]) -> Vec<f64> { vec![self.0.grad(x)[0] + self.1.grad(x)[0]] }
            fn hess(&self, x: &[f64]) -> Vec<f64> { vec![self.0.hess(x)[0] + self.1.hess(x)[0]] }
        }
        let top = Sum(base.clone(), bump);
        let h = solver.horizon(&top, 0.0, &grid).unwrap().h.min(solver.horizon(&base, 0.0, &grid).unwrap().h).min(0.5);
        let t = 0.8 * h;
        let lo = solver.apply(&base, 0.0, t, &grid).unwrap();
        let hi = solver.apply(&top, 0.0, t, &grid).unwrap();
        let dx = grid.dx();
        let worst = lo.phi.iter().zip(&hi.phi).map(|(a, b)| a - b).fold(f64::MIN, f64::max);
        prop_assert!(worst <= 5.0 * dx * dx, "{worst}");
    }
}
