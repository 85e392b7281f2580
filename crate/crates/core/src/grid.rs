//! Uniform rectangular grids and scalar fields on them.
//!
//! Nodes are stored with axis 0 varying fastest.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
}

impl Grid {
    /// `counts[k] ≥ 2` nodes along axis `k`, endpoints included.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let n = lower.len();
        if n == 0 || upper.len() != n || counts.len() != n {
            return Err(Error::InvalidInput("grid bounds and counts must share a positive dimension".into()));
        }
        for k in 0..n {
            if !(upper[k] > lower[k]) || !lower[k].is_finite() || !upper[k].is_finite() {
                return Err(Error::InvalidInput(format!("grid axis {k} has empty range [{}, {}]", lower[k], upper[k])));
            }
            if counts[k] < 2 {
                return Err(Error::InvalidInput(format!("grid axis {k} needs at least 2 nodes")));
            }
        }
        Ok(Self { lower, upper, counts })
    }

    /// Same number of nodes on every axis of the box `[lo, hi]^n`.
    pub fn cube(n: usize, lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        Self::new(vec![lo; n], vec![hi; n], vec![nodes; n])
    }

    /// Grid with spacing `dx` on every axis; the box must be a whole number of cells.
    pub fn with_spacing(lower: Vec<f64>, upper: Vec<f64>, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::InvalidInput(format!("grid spacing must be positive, got {dx}")));
        }
        let mut counts = Vec::with_capacity(lower.len());
        for (l, u) in lower.iter().zip(&upper) {
            let cells = (u - l) / dx;
            let whole = cells.round();
            if (cells - whole).abs() > 1e-9 * whole.max(1.0) {
                return Err(Error::InvalidInput(format!("box length {} is not a multiple of dx = {dx}", u - l)));
            }
            counts.push(whole as usize + 1);
        }
        Self::new(lower, upper, counts)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.counts[axis] - 1) as f64
    }

    /// Largest spacing over axes.
    pub fn dx(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).fold(0.0, f64::max)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.counts[..axis].iter().product()
    }

    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        self.counts
            .iter()
            .map(|&c| {
                let i = idx % c;
                idx /= c;
                i
            })
            .collect()
    }

    pub fn ravel(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        for k in (0..self.dim()).rev() {
            idx = idx * self.counts[k] + multi[k];
        }
        idx
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.upper[axis]
        } else {
            self.lower[axis] + i as f64 * self.spacing(axis)
        }
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        self.unravel(idx).iter().enumerate().map(|(k, &i)| self.coordinate(k, i)).collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// `true` when the node touches the boundary of the box.
    pub fn is_boundary(&self, idx: usize) -> bool {
        self.unravel(idx).iter().zip(&self.counts).any(|(&i, &c)| i == 0 || i + 1 == c)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let slack = 1e-12;
        (0..self.dim()).all(|k| {
            let h = self.spacing(k);
            x[k] >= self.lower[k] - slack * h && x[k] <= self.upper[k] + slack * h
        })
    }

    /// The same mesh extended by `cells` nodes on every side.
    pub fn padded(&self, cells: usize) -> Grid {
        let n = self.dim();
        let mut lower = self.lower.clone();
        let mut upper = self.upper.clone();
        let mut counts = self.counts.clone();
        for k in 0..n {
            let h = self.spacing(k);
            lower[k] -= cells as f64 * h;
            upper[k] += cells as f64 * h;
            counts[k] += 2 * cells;
        }
        Grid { lower, upper, counts }
    }

    /// Index offset of `inner` inside `self` when the two meshes are aligned.
    pub fn embedding_offset(&self, inner: &Grid) -> Option<Vec<usize>> {
        if inner.dim() != self.dim() {
            return None;
        }
        let mut off = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let h = self.spacing(k);
            if (inner.spacing(k) - h).abs() > 1e-9 * h {
                return None;
            }
            let shift = (inner.lower[k] - self.lower[k]) / h;
            let r = shift.round();
            if (shift - r).abs() > 1e-6 || r < 0.0 || r as usize + inner.counts[k] > self.counts[k] {
                return None;
            }
            off.push(r as usize);
        }
        Some(off)
    }

    /// Maps each node of `inner` to its index in `self`.
    pub fn embedding(&self, inner: &Grid) -> Option<Vec<usize>> {
        let off = self.embedding_offset(inner)?;
        Some(
            (0..inner.len())
                .map(|i| {
                    let mut m = inner.unravel(i);
                    for (a, o) in m.iter_mut().zip(&off) {
                        *a += o;
                    }
                    self.ravel(&m)
                })
                .collect(),
        )
    }

    pub fn same_mesh(&self, other: &Grid) -> bool {
        self.counts == other.counts
            && self.lower.iter().zip(&other.lower).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
            && self.upper.iter().zip(&other.upper).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
    }

    /// Cell containing `x` (clamped to the box) and local coordinates in `[0, 1]`.
    pub fn cell(&self, x: &[f64]) -> (Vec<usize>, Vec<f64>) {
        let n = self.dim();
        let mut base = Vec::with_capacity(n);
        let mut frac = Vec::with_capacity(n);
        for k in 0..n {
            let h = self.spacing(k);
            let s = ((x[k] - self.lower[k]) / h).clamp(0.0, (self.counts[k] - 1) as f64);
            let i = (s.floor() as usize).min(self.counts[k] - 2);
            base.push(i);
            frac.push(s - i as f64);
        }
        (base, frac)
    }

    /// Multilinear interpolation of `width` interleaved components at `x`
    /// (clamped to the box).
    pub fn interpolate_into(&self, values: &[f64], width: usize, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let (base, frac) = self.cell(x);
        out.iter_mut().for_each(|v| *v = 0.0);
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = 0;
            for k in 0..n {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                idx += (base[k] + bit) * self.stride(k);
            }
            if w == 0.0 {
                continue;
            }
            for c in 0..width {
                out[c] += w * values[idx * width + c];
            }
        }
    }

    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let mut out = [0.0];
        self.interpolate_into(values, 1, x, &mut out);
        out[0]
    }

    /// Centered difference of `values` along `axis` at node `idx`
    /// (one-sided at the box boundary).
    pub fn diff(&self, values: &[f64], width: usize, comp: usize, idx: usize, axis: usize) -> f64 {
        let i = self.unravel(idx)[axis];
        let s = self.stride(axis);
        let h = self.spacing(axis);
        let at = |j: usize| values[j * width + comp];
        if i == 0 {
            (at(idx + s) - at(idx)) / h
        } else if i + 1 == self.counts[axis] {
            (at(idx) - at(idx - s)) / h
        } else {
            (at(idx + s) - at(idx - s)) / (2.0 * h)
        }
    }
}

/// Scalar values on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::MeshMismatch(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        Self { grid, values }
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &GridField) -> Result<f64> {
        if !self.grid.same_mesh(&other.grid) {
            return Err(Error::MeshMismatch("fields live on different grids".into()));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

/// A grid field sampled at a sequence of times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHistory {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl FieldHistory {
    pub fn new(grid: Grid, times: Vec<f64>, frames: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != frames.len() || frames.iter().any(|f| f.len() != grid.len()) {
            return Err(Error::MeshMismatch("frame count or size does not match the mesh".into()));
        }
        Ok(Self { grid, times, frames })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn frame(&self, k: usize) -> GridField {
        GridField { grid: self.grid.clone(), values: self.frames[k].clone() }
    }

    pub fn last(&self) -> GridField {
        self.frame(self.len() - 1)
    }

    /// `true` when both histories share the grid and time mesh.
    pub fn same_mesh(&self, other: &FieldHistory) -> bool {
        self.grid.same_mesh(&other.grid)
            && self.times.len() == other.times.len()
            && self.times.iter().zip(&other.times).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
    }

    pub fn map2(&self, other: &FieldHistory, f: impl Fn(f64, f64) -> f64) -> Result<FieldHistory> {
        if !self.same_mesh(other) {
            return Err(Error::MeshMismatch("histories differ in grid or time mesh".into()));
        }
        let frames = self
            .frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
            .collect();
        Ok(FieldHistory { grid: self.grid.clone(), times: self.times.clone(), frames })
    }

    pub fn max_abs_diff(&self, other: &FieldHistory) -> Result<f64> {
        let d = self.map2(other, |a, b| (a - b).abs())?;
        Ok(d.frames.iter().flatten().copied().fold(0.0, f64::max))
    }

    /// CSV rows `t, x1..xn, u`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.grid.dim();
        let mut header = String::from("t");
        for k in 1..=n {
            header.push_str(&format!(",x{k}"));
        }
        header.push_str(",u");
        writeln!(out, "{header}")?;
        for (t, frame) in self.times.iter().zip(&self.frames) {
            for (i, u) in frame.iter().enumerate() {
                let mut line = format!("{t:.16e}");
                for c in self.grid.node(i) {
                    line.push_str(&format!(",{c:.16e}"));
                }
                line.push_str(&format!(",{u:.16e}"));
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ravel_roundtrip_and_nodes() {
        let g = Grid::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![5, 3]).unwrap();
        assert_eq!(g.len(), 15);
        for i in 0..g.len() {
            assert_eq!(g.ravel(&g.unravel(i)), i);
        }
        assert_eq!(g.node(0), vec![0.0, -1.0]);
        assert_eq!(g.node(14), vec![1.0, 1.0]);
        assert_eq!(g.node(1), vec![0.25, -1.0]);
        assert!(g.is_boundary(0) && !g.is_boundary(6));
    }

    #[test]
    fn spacing_constructor_checks_divisibility() {
        let g = Grid::with_spacing(vec![-1.0], vec![1.0], 1.0 / 64.0).unwrap();
        assert_eq!(g.counts(), &[129]);
        assert!(Grid::with_spacing(vec![0.0], vec![1.0], 0.3).is_err());
    }

    #[test]
    fn padding_embeds_aligned() {
        let g = Grid::cube(2, 0.0, 1.0, 5).unwrap();
        let p = g.padded(3);
        assert_eq!(p.counts(), &[11, 11]);
        let emb = p.embedding(&g).unwrap();
        for (i, &j) in emb.iter().enumerate() {
            let (a, b) = (g.node(i), p.node(j));
            assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        }
        assert!(g.embedding(&p).is_none());
    }

    proptest! {
        #[test]
        fn bilinear_interpolation_reproduces_bilinear_functions(
            a in -2.0..2.0f64, b in -2.0..2.0f64, c in -2.0..2.0f64, d in -2.0..2.0f64,
            x in -1.0..1.0f64, y in 0.0..2.0f64,
        ) {
            let g = Grid::new(vec![-1.0, 0.0], vec![1.0, 2.0], vec![7, 4]).unwrap();
            let f = |p: &[f64]| a + b * p[0] + c * p[1] + d * p[0] * p[1];
            let field = GridField::from_fn(g.clone(), f);
            let v = g.interpolate(&field.values, &[x, y]);
            prop_assert!((v - f(&[x, y])).abs() < 1e-12);
        }
    }
}
