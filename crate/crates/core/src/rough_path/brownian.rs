use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::GeometricRoughPath;
use crate::error::{Error, Result};

/// Hölder exponent reported for Brownian lifts.
pub const BROWNIAN_ALPHA: f64 = 0.4;

/// Piecewise-linear lift of an `m`-dimensional Brownian path sampled on a
/// uniform grid of `resolution` steps over `[0, horizon]`.
///
/// When `resolution` is a power of two the samples come from the dyadic
/// (Lévy) midpoint construction, so for a fixed seed the path at
/// resolution `2^k` is exactly the subsample of the path at `2^{k+1}`.
pub fn brownian_lift(seed: u64, m: usize, horizon: f64, resolution: usize) -> Result<GeometricRoughPath> {
    if resolution < 2 {
        return Err(Error::InvalidInput(format!("resolution must be at least 2, got {resolution}")));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    if m == 0 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let n = resolution;
    let mut values = vec![0.0; (n + 1) * m];

    if n.is_power_of_two() {
        for i in 0..m {
            values[n * m + i] = horizon.sqrt() * normal();
        }
        let mut half = n / 2;
        while half >= 1 {
            let span = 2 * half;
            let sd = (horizon * half as f64 / n as f64).sqrt() / std::f64::consts::SQRT_2;
            let mut left = 0;
            while left < n {
                let mid = left + half;
                let right = left + span;
                for i in 0..m {
                    let bridge = 0.5 * (values[left * m + i] + values[right * m + i]);
                    values[mid * m + i] = bridge + sd * normal();
                }
                left = right;
            }
            half /= 2;
        }
    } else {
        let sd = (horizon / n as f64).sqrt();
        for k in 1..=n {
            for i in 0..m {
                values[k * m + i] = values[(k - 1) * m + i] + sd * normal();
            }
        }
    }
    let times = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
    Ok(GeometricRoughPath::lift_flat(times, values, m, BROWNIAN_ALPHA))
}
