//! Image quality metrics.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;

/// PSNR values are capped here when the error vanishes.
pub const PSNR_CAP_DB: f64 = 100.0;

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &Image, reference: &Image, peak: f64) -> Result<f64> {
    x.check_same(reference)?;
    if !(peak > 0.0) {
        return Err(Error::invalid("psnr peak must be positive"));
    }
    let n = x.data().len() as f64;
    let mse = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse < peak * peak * 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * libm::log10(peak * peak / mse)).min(PSNR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over all fully contained Gaussian windows.
pub fn ssim(x: &Image, reference: &Image, peak: f64) -> Result<f64> {
    ssim_with(x, reference, peak, SsimParams::default())
}

pub fn ssim_with(x: &Image, reference: &Image, peak: f64, p: SsimParams) -> Result<f64> {
    x.check_same(reference)?;
    if !(peak > 0.0) {
        return Err(Error::invalid("ssim peak must be positive"));
    }
    let n = x.side();
    if p.window == 0 || n < p.window {
        return Err(Error::invalid("image is smaller than the ssim window"));
    }
    let g = gaussian_window(p.window, p.sigma);
    let c1 = (p.k1 * peak) * (p.k1 * peak);
    let c2 = (p.k2 * peak) * (p.k2 * peak);
    let span = n - p.window + 1;
    let mut total = 0.0;
    for r0 in 0..span {
        for c0 in 0..span {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, gi) in g.iter().enumerate() {
                for (j, gj) in g.iter().enumerate() {
                    let w = gi * gj;
                    let a = x.get(r0 + i, c0 + j);
                    let b = reference.get(r0 + i, c0 + j);
                    mx += w * a;
                    my += w * b;
                    sxx += w * a * a;
                    syy += w * b * b;
                    sxy += w * (a * b);
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (span * span) as f64)
}

/// Mean absolute pixel difference.
pub fn l1_mean(x: &Image, reference: &Image) -> Result<f64> {
    x.check_same(reference)?;
    let s: f64 = x.data().iter().zip(reference.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / x.data().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_phantom, PhantomKind};

    #[test]
    fn psnr_cap_and_analytic_values() {
        let a = make_phantom(PhantomKind::Ellipses, 16, 1).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let shifted = Image::from_vec(16, a.data().iter().map(|v| v + 0.1).collect()).unwrap();
        assert!((psnr(&shifted, &a, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let shifted = Image::from_vec(16, a.data().iter().map(|v| v + 0.01).collect()).unwrap();
        assert!((psnr(&shifted, &a, 1.0).unwrap() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_rejects_bad_input() {
        let a = Image::zeros(8);
        assert!(psnr(&a, &Image::zeros(9), 1.0).is_err());
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = make_phantom(PhantomKind::Ellipses, 16, 1).unwrap();
        let b = make_phantom(PhantomKind::Ellipses, 16, 2).unwrap();
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b, 1.0).unwrap(), ssim(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn ssim_inverted_is_low() {
        for seed in 0..20 {
            let a = make_phantom(PhantomKind::Ellipses, 16, seed).unwrap();
            let inv = Image::from_vec(16, a.data().iter().map(|v| 1.0 - v).collect()).unwrap();
            assert!(ssim(&inv, &a, 1.0).unwrap() < 0.5);
        }
    }

    #[test]
    fn ssim_needs_window_sized_image() {
        assert!(ssim(&Image::zeros(8), &Image::zeros(8), 1.0).is_err());
    }

    #[test]
    fn window_is_normalized() {
        let g = gaussian_window(11, 1.5);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(g[0], g[10]);
    }
}
