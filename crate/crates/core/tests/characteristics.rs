use std::sync::Arc;

use pathwise::characteristics::{deviation_modulus, flow, jacobian_fd_defect, trajectory, CharState, FlowMode};
use pathwise::hamiltonians::{ExprHamiltonian, HamiltonianSystem, QuadraticMomentum};
use pathwise::rough_path::{brownian_lift, GeometricRoughPath};
use pathwise::Error;
use proptest::prelude::*;

fn line(slope: f64) -> GeometricRoughPath {
    let times: Vec<f64> = (0..=32).map(|k| k as f64 / 32.0).collect();
    let vals: Vec<Vec<f64>> = times.iter().map(|&t| vec![slope * t]).collect();
    GeometricRoughPath::piecewise_linear_lift(&times, &vals).unwrap()
}

fn expr(src: &str, n: usize) -> HamiltonianSystem {
    HamiltonianSystem::single(Arc::new(ExprHamiltonian::parse(src, n).unwrap()))
}

#[test]
fn deviation_modulus_is_radius_times_oscillation() {
    let sys = HamiltonianSystem::single(Arc::new(QuadraticMomentum::new(1)));
    let rho = deviation_modulus(&sys, &line(0.3), 2.0, 0.0, 1.0, &[], 8, 1e-3).unwrap();
    assert!((rho - 0.6).abs() < 1e-9, "{rho}");
}

#[test]
fn trajectory_matches_individual_flows() {
    let sys = expr("0.5*p1^2 + 0.2*cos(x1)", 1);
    let path = brownian_lift(5, 1, 1.0, 128).unwrap();
    let init = CharState::initial(vec![0.1], vec![0.4], Some(vec![0.3]));
    let times = [0.25, 0.5, 0.75, 1.0];
    let traj = trajectory(&sys, &path, &init, 0.0, &times, FlowMode::RoughStep, 1e-3).unwrap();
    for (t, s) in times.iter().zip(&traj) {
        let direct = flow(&sys, &path, &init, 0.0, *t, FlowMode::RoughStep, 1e-3).unwrap();
        assert!(s.distance(&direct) < 1e-12);
    }
}

#[test]
fn commuting_pair_matches_sequential_time_changes() {
    // Two x-independent components commute, so the flow factorises.
    let sys = HamiltonianSystem::new(vec![
        Arc::new(ExprHamiltonian::parse("0.5*p1^2", 2).unwrap()),
        Arc::new(ExprHamiltonian::parse("0.5*p2^2 + p1", 2).unwrap()),
    ])
    .unwrap();
    let path = brownian_lift(2, 2, 1.0, 256).unwrap();
    let init = CharState::initial(vec![0.2, -0.3], vec![0.5, 1.1], None);
    let a = flow(&sys, &path, &init, 0.0, 1.0, FlowMode::Commuting, 1e-3).unwrap();
    let b = flow(&sys, &path, &init, 0.0, 1.0, FlowMode::RoughStep, 1e-4).unwrap();
    assert!(a.distance(&b) < 1e-5, "{}", a.distance(&b));
    let w = path.value_at(1.0).unwrap();
    assert!((a.x[0] - (0.2 - 0.5 * w[0] - w[1])).abs() < 1e-10);
    assert!((a.x[1] - (-0.3 - 1.1 * w[1])).abs() < 1e-10);
}

#[test]
fn time_change_rejects_two_components() {
    let sys = HamiltonianSystem::new(vec![
        Arc::new(ExprHamiltonian::parse("0.5*p1^2", 1).unwrap()),
        Arc::new(ExprHamiltonian::parse("0.5*p1^2 - x1", 1).unwrap()),
    ])
    .unwrap();
    let path = brownian_lift(2, 2, 1.0, 16).unwrap();
    let init = CharState::initial(vec![0.0], vec![1.0], None);
    let r = flow(&sys, &path, &init, 0.0, 1.0, FlowMode::TimeChange, 1e-3);
    assert!(matches!(r, Err(Error::ModeMismatch { .. })));
    let r = flow(&sys, &path, &init, 0.0, 1.0, FlowMode::Commuting, 1e-3);
    assert!(matches!(r, Err(Error::ModeMismatch { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flows_invert(seed in 0u64..1000, x in -1.0..1.0f64, p in -1.0..1.0f64) {
        let sys = expr("0.5*p1^2 + 0.3*sin(x1)", 1);
        let path = brownian_lift(seed, 1, 1.0, 64).unwrap();
        let init = CharState::initial(vec![x], vec![p], Some(vec![0.2]));
        for mode in [FlowMode::TimeChange, FlowMode::RoughStep] {
            let fwd = flow(&sys, &path, &init, 0.2, 0.8, mode, 1e-3).unwrap();
            let back = flow(&sys, &path, &fwd, 0.8, 0.2, mode, 1e-3).unwrap();
            prop_assert!(back.distance(&init) < 1e-5, "{mode:?}");
        }
    }

    #[test]
    fn jacobian_tracks_initial_data(seed in 0u64..1000, x in -1.0..1.0f64) {
        let sys = expr("0.5*p1^2 - 0.5*x1^2 * 0.2", 1);
        let path = brownian_lift(seed, 1, 1.0, 64).unwrap();
        let init = CharState::initial(vec![x], vec![x.sin()], Some(vec![x.cos()]));
        let d = jacobian_fd_defect(&sys, &path, &init, |y| vec![y[0].sin()], |y| vec![y[0].cos()], 0.0, 0.5, FlowMode::TimeChange, 1e-3).unwrap();
        prop_assert!(d < 1e-4, "{d}");
    }
}
