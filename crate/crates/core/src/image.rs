use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square real-valued image, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    n: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Self {
            n,
            data: vec![value; n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("image side must be at least 2"));
        }
        if data.len() != n * n {
            return Err(Error::ShapeMismatch {
                what: "image data",
                expected: n * n,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Self { n, data })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.n + col] = v;
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Image) -> Result<Image> {
        self.check_same(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + alpha * b).collect();
        Ok(Image { n: self.n, data })
    }

    pub fn scaled(&self, alpha: f64) -> Image {
        Image {
            n: self.n,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.check_same(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn distance(&self, other: &Image) -> Result<f64> {
        self.check_same(other)?;
        let ss: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(libm::sqrt(ss))
    }

    pub(crate) fn check_same(&self, other: &Image) -> Result<()> {
        if self.n != other.n {
            return Err(Error::ShapeMismatch {
                what: "image side",
                expected: self.n,
                found: other.n,
            });
        }
        Ok(())
    }
}
