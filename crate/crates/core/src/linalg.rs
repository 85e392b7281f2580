//! Row-major helpers for the small dense matrices used throughout
//! (`n ≤ 3` in practice).

use nalgebra::DMatrix;

pub fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

pub fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

pub fn mat_vec(a: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum()).collect()
}

pub fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

pub fn det(a: &[f64], n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        _ => DMatrix::from_row_slice(n, n, a).determinant(),
    }
}

/// Solves `A x = b`; `None` if `A` is singular.
pub fn solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    match n {
        1 => (a[0] != 0.0).then(|| vec![b[0] / a[0]]),
        2 => {
            let d = a[0] * a[3] - a[1] * a[2];
            (d != 0.0).then(|| vec![(a[3] * b[0] - a[1] * b[1]) / d, (a[0] * b[1] - a[2] * b[0]) / d])
        }
        _ => {
            let lu = DMatrix::from_row_slice(n, n, a).lu();
            lu.solve(&nalgebra::DVector::from_column_slice(b)).map(|x| x.as_slice().to_vec())
        }
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(n, n, a);
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}
