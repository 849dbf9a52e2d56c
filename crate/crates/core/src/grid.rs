//! Uniform tensor grids on boxes `[a, b)^d` and discrete L² helpers.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::c64;

/// Tensor grid with `n[k]` points on `[lower[k], upper[k])`, last axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, n: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != n.len() || n.is_empty() {
            return Err(Error::Dimension("grid bounds and sizes disagree".into()));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(b > a)) || n.iter().any(|&k| k == 0) {
            return Err(Error::Grid("empty grid box".into()));
        }
        Ok(GridSpec { lower, upper, n })
    }

    pub fn uniform_1d(a: f64, b: f64, n: usize) -> Self {
        GridSpec { lower: vec![a], upper: vec![b], n: vec![n] }
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.n[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.dx(k)).product()
    }

    pub fn axis(&self, axis: usize) -> Vec<f64> {
        let h = self.dx(axis);
        (0..self.n[axis]).map(|i| self.lower[axis] + i as f64 * h).collect()
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let d = self.dim();
        let mut x = vec![0.0; d];
        let mut rem = flat;
        for k in (0..d).rev() {
            let i = rem % self.n[k];
            rem /= self.n[k];
            x[k] = self.lower[k] + i as f64 * self.dx(k);
        }
        x
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn same_as(&self, other: &GridSpec) -> bool {
        self == other
    }

    pub fn inner(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        let s: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
        s * self.cell_volume()
    }

    pub fn norm(&self, a: &[Complex64]) -> f64 {
        (a.iter().map(|x| x.norm_sqr()).sum::<f64>() * self.cell_volume()).sqrt()
    }

    /// Inner product of `C^N`-valued fields stored component-major.
    pub fn inner_vec(&self, a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> Complex64 {
        a.iter().zip(b).map(|(x, y)| self.inner(x, y)).sum()
    }

    pub fn norm_vec(&self, a: &[Vec<Complex64>]) -> f64 {
        a.iter().map(|x| self.norm(x).powi(2)).sum::<f64>().sqrt()
    }

    /// Writes `(x..., re, im)` rows of a scalar field.
    pub fn write_csv(&self, path: &Path, values: &[Complex64]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let xs: Vec<String> = (0..self.dim()).map(|k| format!("x{}", k + 1)).collect();
        writeln!(w, "{},re,im", xs.join(","))?;
        for (i, v) in values.iter().enumerate() {
            let x = self.point(i);
            let cols: Vec<String> = x.iter().map(|c| format!("{c:.10e}")).collect();
            writeln!(w, "{},{:.12e},{:.12e}", cols.join(","), v.re, v.im)?;
        }
        Ok(())
    }
}

pub fn zeros(n: usize) -> Vec<Complex64> {
    vec![c64(0.0, 0.0); n]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_index_is_row_major() {
        let g = GridSpec::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![2, 4]).unwrap();
        assert_eq!(g.point(1), vec![0.0, 0.5]);
        assert_eq!(g.point(4), vec![0.5, 0.0]);
        assert!((g.cell_volume() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gaussian_norm_by_trapezoid() {
        let g = GridSpec::uniform_1d(-10.0, 10.0, 256);
        let v: Vec<Complex64> = g
            .points()
            .map(|x| c64(std::f64::consts::PI.powf(-0.25) * (-x[0] * x[0] / 2.0).exp(), 0.0))
            .collect();
        assert!((g.norm(&v) - 1.0).abs() < 1e-12);
    }
}
