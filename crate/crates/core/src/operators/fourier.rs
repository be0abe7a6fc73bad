//! Masked unitary 2-D discrete Fourier transform.
//!
//! k-space is stored unshifted (DC at index 0) as interleaved `[re, im]`
//! pairs. Both directions scale by `1/n`, so the full-mask operator is
//! unitary and its adjoint is also its inverse.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling pattern over the `n × n` k-space grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    n: usize,
    keep: Vec<bool>,
    acceleration: f64,
}

impl Mask {
    pub fn full(n: usize) -> Self {
        Self {
            n,
            keep: vec![true; n * n],
            acceleration: 1.0,
        }
    }

    /// Cartesian mask: every entry in a kept row is sampled.
    pub fn from_rows(rows: &[bool]) -> Result<Self> {
        let n = rows.len();
        let keep: Vec<bool> = rows.iter().flat_map(|&r| core::iter::repeat_n(r, n)).collect();
        Self::from_entries(n, keep)
    }

    pub fn from_entries(n: usize, keep: Vec<bool>) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("mask side must be at least 2"));
        }
        if keep.len() != n * n {
            return Err(Error::ShapeMismatch {
                what: "mask entries",
                expected: n * n,
                found: keep.len(),
            });
        }
        let kept = keep.iter().filter(|&&k| k).count();
        if kept == 0 {
            return Err(Error::invalid("mask keeps no samples"));
        }
        Ok(Self {
            n,
            keep,
            acceleration: (n * n) as f64 / kept as f64,
        })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, row: usize, col: usize) -> bool {
        self.keep[row * self.n + col]
    }

    /// Ratio of grid size to sampled entries.
    pub fn acceleration(&self) -> f64 {
        self.acceleration
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn is_full(&self) -> bool {
        self.keep.iter().all(|&k| k)
    }

    /// Row indicators when every row is either fully kept or fully dropped.
    pub fn rows(&self) -> Option<Vec<bool>> {
        let n = self.n;
        let mut rows = Vec::with_capacity(n);
        for r in 0..n {
            let row = &self.keep[r * n..(r + 1) * n];
            if row.iter().all(|&k| k) {
                rows.push(true);
            } else if row.iter().all(|&k| !k) {
                rows.push(false);
            } else {
                return None;
            }
        }
        Some(rows)
    }
}

/// Twiddle tables for an `n`-point DFT.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dft {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Dft {
    pub fn new(n: usize) -> Self {
        let (cos, sin) = (0..n)
            .map(|m| {
                let a = 2.0 * core::f64::consts::PI * m as f64 / n as f64;
                (libm::cos(a), libm::sin(a))
            })
            .unzip();
        Self { n, cos, sin }
    }

    /// In-place separable 2-D transform with `1/n` scaling.
    /// `inverse` selects the `+i` exponent.
    pub fn transform(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        let n = self.n;
        let sgn = if inverse { 1.0 } else { -1.0 };
        let mut tr = vec![0.0; n];
        let mut ti = vec![0.0; n];
        // rows
        for r in 0..n {
            let (rr, ri) = (&re[r * n..(r + 1) * n], &im[r * n..(r + 1) * n]);
            self.line(rr, ri, 1, &mut tr, &mut ti, sgn);
            re[r * n..(r + 1) * n].copy_from_slice(&tr);
            im[r * n..(r + 1) * n].copy_from_slice(&ti);
        }
        // columns
        let mut cr = vec![0.0; n];
        let mut ci = vec![0.0; n];
        for c in 0..n {
            for r in 0..n {
                cr[r] = re[r * n + c];
                ci[r] = im[r * n + c];
            }
            self.line(&cr, &ci, 1, &mut tr, &mut ti, sgn);
            for r in 0..n {
                re[r * n + c] = tr[r];
                im[r * n + c] = ti[r];
            }
        }
        let s = 1.0 / n as f64;
        re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= s);
    }

    fn line(&self, xr: &[f64], xi: &[f64], stride: usize, outr: &mut [f64], outi: &mut [f64], sgn: f64) {
        let n = self.n;
        for k in 0..n {
            let (mut ar, mut ai) = (0.0, 0.0);
            for j in 0..n {
                let m = (k * j) % n;
                let (c, s) = (self.cos[m], sgn * self.sin[m]);
                let (a, b) = (xr[j * stride], xi[j * stride]);
                ar += a * c - b * s;
                ai += a * s + b * c;
            }
            outr[k] = ar;
            outi[k] = ai;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierModel {
    mask: Mask,
    dft: Dft,
}

impl FourierModel {
    pub fn new(mask: Mask) -> Self {
        let dft = Dft::new(mask.side());
        Self { mask, dft }
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn side(&self) -> usize {
        self.mask.side()
    }

    /// Image (`n²` reals) to masked k-space (`2n²` interleaved reals).
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n2 = self.side() * self.side();
        let mut re = x.to_vec();
        let mut im = vec![0.0; n2];
        self.dft.transform(&mut re, &mut im, false);
        for (i, &k) in self.mask.keep.iter().enumerate() {
            let (r, m) = if k { (re[i], im[i]) } else { (0.0, 0.0) };
            out[2 * i] = r;
            out[2 * i + 1] = m;
        }
    }

    /// Masked inverse transform; writes the real part and returns the
    /// largest absolute imaginary part that was discarded.
    pub fn adjoint_into(&self, y: &[f64], out: &mut [f64]) -> f64 {
        let n2 = self.side() * self.side();
        let mut re = vec![0.0; n2];
        let mut im = vec![0.0; n2];
        for (i, &k) in self.mask.keep.iter().enumerate() {
            if k {
                re[i] = y[2 * i];
                im[i] = y[2 * i + 1];
            }
        }
        self.dft.transform(&mut re, &mut im, true);
        out.copy_from_slice(&re);
        im.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}
