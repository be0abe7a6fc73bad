//! Parallel-beam Radon transform as an explicit sparse matrix.
//!
//! Pixel `(r, c)` covers `[c - n/2, c + 1 - n/2] × [n/2 - r - 1, n/2 - r]`
//! (unit pixels, row 0 at the top). Angles are `π a / n_angles`; the
//! detector array spans the image diagonal with `n_detectors` bins.
//! Matrix entries are exact ray/pixel intersection lengths and the
//! adjoint is the transpose of the same entries.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                col_idx.push(c);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(column, value)` entries of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn transpose(&self) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                rows[c].push((r, v));
            }
        }
        Self::from_rows(self.rows, rows)
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    fn scale(&mut self, s: f64) {
        self.vals.iter_mut().for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadonModel {
    n: usize,
    n_angles: usize,
    n_detectors: usize,
    matrix: CsrMatrix,
    transposed: CsrMatrix,
    scale: f64,
}

impl RadonModel {
    pub fn build(n: usize, n_angles: usize, n_detectors: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("image side must be at least 2"));
        }
        if n_angles == 0 {
            return Err(Error::invalid("need at least one projection angle"));
        }
        if n_detectors < n {
            return Err(Error::invalid("need at least as many detectors as image columns"));
        }
        let half = n as f64 / 2.0;
        let spacing = n as f64 * core::f64::consts::SQRT_2 / n_detectors as f64;
        let mut rows = Vec::with_capacity(n_angles * n_detectors);
        for a in 0..n_angles {
            let theta = core::f64::consts::PI * a as f64 / n_angles as f64;
            let (st, ct) = (libm::sin(theta), libm::cos(theta));
            for d in 0..n_detectors {
                let s = (d as f64 - (n_detectors as f64 - 1.0) / 2.0) * spacing;
                let mut row = Vec::new();
                for r in 0..n {
                    for c in 0..n {
                        let x0 = c as f64 - half;
                        let y1 = half - r as f64;
                        let len = ray_box_length(s, ct, st, x0, x0 + 1.0, y1 - 1.0, y1);
                        if len > 1e-12 {
                            row.push((r * n + c, len));
                        }
                    }
                }
                rows.push(row);
            }
        }
        let matrix = CsrMatrix::from_rows(n * n, rows);
        let transposed = matrix.transpose();
        Ok(Self {
            n,
            n_angles,
            n_detectors,
            matrix,
            transposed,
            scale: 1.0,
        })
    }

    /// Rescales the matrix to unit spectral norm (power iteration), which
    /// keeps the Euler transport flow stable at step `1/N`.
    pub fn normalized(mut self) -> Self {
        let sigma = self.spectral_norm(200);
        if sigma > 0.0 {
            let s = 1.0 / sigma;
            self.matrix.scale(s);
            self.transposed.scale(s);
            self.scale *= s;
        }
        self
    }

    /// Largest singular value estimate from `iters` power iterations.
    pub fn spectral_norm(&self, iters: usize) -> f64 {
        let mut v = vec![1.0; self.n * self.n];
        let mut av = vec![0.0; self.matrix.rows()];
        let mut sigma = 0.0;
        for _ in 0..iters {
            let nv = libm::sqrt(v.iter().map(|x| x * x).sum());
            if nv == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            self.matrix.mul_vec(&v, &mut av);
            sigma = libm::sqrt(av.iter().map(|x| x * x).sum());
            self.transposed.mul_vec(&av, &mut v);
        }
        sigma
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Factor applied to the raw intersection lengths (1 unless normalized).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.matrix.mul_vec(x, out);
    }

    pub fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        self.transposed.mul_vec(y, out);
    }
}

/// Length of the line `{p : p·(cos θ, sin θ) = s}` inside an axis-aligned box.
fn ray_box_length(s: f64, ct: f64, st: f64, xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> f64 {
    // p(t) = s·u + t·v with u = (ct, st), v = (-st, ct)
    let (px, py) = (s * ct, s * st);
    let (vx, vy) = (-st, ct);
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (p, v, lo, hi) in [(px, vx, xmin, xmax), (py, vy, ymin, ymax)] {
        if v.abs() < 1e-15 {
            if p < lo || p > hi {
                return 0.0;
            }
        } else {
            let (a, b) = ((lo - p) / v, (hi - p) / v);
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
    }
    (t1 - t0).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertical_ray_through_pixel_has_unit_length() {
        assert!((ray_box_length(0.5, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(ray_box_length(1.5, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn diagonal_ray_through_unit_square() {
        let (s, c) = (
            libm::sin(core::f64::consts::FRAC_PI_4),
            libm::cos(core::f64::consts::FRAC_PI_4),
        );
        // line x + y = sqrt(2)·s0 through the centre (0.5, 0.5)
        let s0 = 0.5 * c + 0.5 * s;
        let len = ray_box_length(s0, c, s, 0.0, 1.0, 0.0, 1.0);
        assert!((len - core::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn entries_are_nonnegative() {
        let m = RadonModel::build(8, 5, 12).unwrap();
        for r in 0..m.matrix().rows() {
            assert!(m.matrix().row(r).all(|(_, v)| v > 0.0));
        }
    }

    #[test]
    fn rejects_too_few_detectors() {
        assert!(RadonModel::build(8, 4, 7).is_err());
        assert!(RadonModel::build(8, 0, 8).is_err());
    }
}
