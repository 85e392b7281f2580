use pathwise::rough_path::{
    brownian_lift, chen_defect, geometric_defect, read_csv, rough_integral, write_csv, ControlledIntegrand,
    GeometricRoughPath, PairwiseLift, TwoLevelIncrements, CONSTRUCTION_TOL,
};
use proptest::prelude::*;

fn sampled(f: impl Fn(f64) -> Vec<f64>, samples: usize) -> GeometricRoughPath {
    let times: Vec<f64> = (0..=samples).map(|k| k as f64 / samples as f64).collect();
    let vals: Vec<Vec<f64>> = times.iter().map(|&t| f(t)).collect();
    GeometricRoughPath::piecewise_linear_lift(&times, &vals).unwrap()
}

#[test]
fn brownian_variance_matches_time() {
    let seeds = 10_000;
    let (mut sum, mut sum_sq) = ([0.0_f64; 2], [0.0_f64; 2]);
    for seed in 0..seeds {
        let path = brownian_lift(seed, 2, 1.0, 1 << 10).unwrap();
        let w = path.value(path.len() - 1);
        for c in 0..2 {
            sum[c] += w[c] * w[c];
            sum_sq[c] += w[c].powi(4);
        }
    }
    let n = seeds as f64;
    for c in 0..2 {
        let mean = sum[c] / n;
        let se = ((sum_sq[c] / n - mean * mean) / n).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * se, "component {c}: {mean} ± {se}");
    }
}

#[test]
fn forced_zero_second_level_has_chen_defect_one_quarter() {
    let times = vec![0.0, 0.5, 1.0];
    let values = vec![vec![0.0, 0.0], vec![0.5, 0.5], vec![1.0, 1.0]];
    let lift = PairwiseLift::from_fn(times, values, |_, _| vec![0.0; 4]).unwrap();
    let d = chen_defect(&lift, 0.0, 0.5, 1.0).unwrap();
    assert!((d - 0.25).abs() < 1e-15, "{d}");
}

#[test]
fn dilation_scales_holder_terms() {
    let path = brownian_lift(4, 2, 1.0, 256).unwrap();
    let (a1, a2) = path.holder_components();
    for lambda in [0.5, 3.0] {
        let (b1, b2) = path.dilate(lambda).holder_components();
        assert!((b1 - lambda * a1).abs() <= 1e-12 * b1.max(1.0));
        assert!((b2 - lambda * lambda * a2).abs() <= 1e-10 * b2.max(1.0));
    }
}

#[test]
fn compensated_integral_converges_at_second_order() {
    // ∫ sin(W) dW along W(t) = t² + 0.3 sin(5t), against 1 - cos(W_1) + cos(W_0).
    let w = |t: f64| t * t + 0.3 * (5.0 * t).sin();
    let path = sampled(|t| vec![w(t)], 1 << 12);
    let exact = (w(0.0)).cos() - (w(1.0)).cos();
    let errors: Vec<f64> = [16usize, 32, 64]
        .iter()
        .map(|&n| {
            let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
            let ws: Vec<f64> = times.iter().map(|&t| path.value_at(t).unwrap()[0]).collect();
            let integrand = ControlledIntegrand {
                times: times.clone(),
                values: ws.iter().map(|v| vec![v.sin()]).collect(),
                derivatives: Some(ws.iter().map(|v| vec![v.cos()]).collect()),
            };
            (rough_integral(&integrand, &path, 0.0, 1.0).unwrap() - exact).abs()
        })
        .collect();
    for pair in errors.windows(2) {
        let order = (pair[0] / pair[1]).log2();
        assert!(order > 1.8, "{errors:?}");
    }
}

#[test]
fn csv_roundtrip_is_exact() {
    let path = brownian_lift(9, 2, 0.5, 100).unwrap();
    let mut buf = Vec::new();
    write_csv(&path, &mut buf).unwrap();
    let back = read_csv(buf.as_slice(), path.alpha()).unwrap();
    assert_eq!(back.times(), path.times());
    for k in 0..path.len() {
        assert_eq!(back.value(k), path.value(k));
        assert_eq!(back.cumulative_second(k), path.cumulative_second(k));
    }
}

#[test]
fn corrupted_csv_is_rejected() {
    let path = sampled(|t| vec![t, t * t], 8);
    let mut buf = Vec::new();
    write_csv(&path, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    // Break the symmetric part of the second level on the last row.
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let last = lines.pop().unwrap();
    let mut fields: Vec<String> = last.split(',').map(String::from).collect();
    fields[3] = "5.0".into();
    lines.push(fields.join(","));
    assert!(read_csv(lines.join("\n").as_bytes(), 0.4).is_err());
}

fn increments() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 2..40)
}

proptest! {
    #[test]
    fn piecewise_linear_lifts_are_valid(steps in increments()) {
        let n = steps.len();
        let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let mut values = vec![vec![0.0, 0.0]];
        for (a, b) in &steps {
            let last = values.last().unwrap().clone();
            values.push(vec![last[0] + a, last[1] + b]);
        }
        let path = GeometricRoughPath::piecewise_linear_lift(&times, &values).unwrap();
        let (chen, geo) = path.max_defects(1);
        prop_assert!(chen <= CONSTRUCTION_TOL && geo <= CONSTRUCTION_TOL, "{chen} {geo}");
        // Off-sample queries use the exact lift of the interpolant.
        let (s, u, t) = (0.13, 0.41, 0.87);
        prop_assert!(chen_defect(&path, s, u, t).unwrap() <= CONSTRUCTION_TOL);
        prop_assert!(geometric_defect(&path, s, t).unwrap() <= CONSTRUCTION_TOL);
    }

    #[test]
    fn subsample_and_concat_stay_valid(seed in 0u64..500, stride in 1usize..8) {
        let path = brownian_lift(seed, 2, 1.0, 64).unwrap();
        let coarse = path.subsample(stride).unwrap();
        let (chen, geo) = coarse.max_defects(1);
        prop_assert!(chen <= CONSTRUCTION_TOL && geo <= CONSTRUCTION_TOL);
        let tail = brownian_lift(seed + 1, 2, 1.0, 16).unwrap();
        let shifted_times: Vec<f64> = tail.times().iter().map(|t| t + 1.0).collect();
        let tail_vals: Vec<Vec<f64>> = (0..tail.len()).map(|k| tail.value(k).to_vec()).collect();
        let tail = GeometricRoughPath::piecewise_linear_lift(&shifted_times, &tail_vals).unwrap();
        let joined = path.concat(&tail).unwrap();
        let inc = joined.increment(0.5, 1.5).unwrap();
        let direct = chen_defect(&joined, 0.5, 1.0, 1.5).unwrap();
        prop_assert!(direct <= CONSTRUCTION_TOL, "{direct} {inc:?}");
    }

    #[test]
    fn reversed_increment_inverts(seed in 0u64..500, s in 0.0..1.0f64, t in 0.0..1.0f64) {
        let path = brownian_lift(seed, 2, 1.0, 32).unwrap();
        let fwd = path.increment(s, t).unwrap();
        let back = path.increment(t, s).unwrap();
        for i in 0..2 {
            prop_assert!((fwd.dw[i] + back.dw[i]).abs() < 1e-14);
        }
        // Sym(𝕎) = ½ ΔW ⊗ ΔW in both directions.
        for i in 0..2 {
            for j in 0..2 {
                let sym = 0.5 * (back.area[i * 2 + j] + back.area[j * 2 + i]);
                prop_assert!((sym - 0.5 * back.dw[i] * back.dw[j]).abs() < 1e-12);
            }
        }
    }
}
