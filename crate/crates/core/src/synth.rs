//! Synthetic phantoms, sampling masks, measurement noise and datasets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::operators::{ForwardModel, Mask, Measurement, MeasurementKind, RadonModel};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Ellipses,
    Blocks,
}

/// Random structured image with values in `[0, 1]`.
pub fn make_phantom(kind: PhantomKind, n: usize, seed: u64) -> Result<Image> {
    if n < 8 {
        return Err(Error::invalid("phantom side must be at least 8"));
    }
    let mut r = rng::stream(seed, "phantom", 0);
    let img = match kind {
        PhantomKind::Ellipses => ellipses(n, &mut r),
        PhantomKind::Blocks => blocks(n, &mut r),
    };
    Ok(img)
}

fn distinct_intensity(r: &mut Rng, used: &[f64], lo: f64, hi: f64) -> f64 {
    loop {
        let v = r.random_range(lo..hi);
        if used.iter().all(|u| (u - v).abs() > 0.05) {
            return v;
        }
    }
}

fn ellipses(n: usize, r: &mut Rng) -> Image {
    let count = r.random_range(3..=7);
    let mut img = Image::zeros(n);
    let mut used: Vec<f64> = Vec::with_capacity(count);
    // outer body, then smaller ellipses inside it
    let (ocx, ocy) = (r.random_range(-0.1..0.1), r.random_range(-0.1..0.1));
    let (oa, ob) = (r.random_range(0.6..0.85), r.random_range(0.6..0.85));
    let ophi = r.random_range(0.0..core::f64::consts::PI);
    for i in 0..count {
        let (cx, cy, a, b, phi) = if i == 0 {
            (ocx, ocy, oa, ob, ophi)
        } else {
            let t = r.random_range(0.0..core::f64::consts::TAU);
            let rad = r.random_range(0.0..0.5);
            (
                ocx + rad * oa * libm::cos(t),
                ocy + rad * ob * libm::sin(t),
                r.random_range(0.1..0.35),
                r.random_range(0.1..0.35),
                r.random_range(0.0..core::f64::consts::PI),
            )
        };
        let v = if i == 0 {
            distinct_intensity(r, &used, 0.15, 0.4)
        } else {
            distinct_intensity(r, &used, 0.0, 1.0)
        };
        used.push(v);
        let (s, c) = (libm::sin(phi), libm::cos(phi));
        for row in 0..n {
            for col in 0..n {
                let u = 2.0 * (col as f64 + 0.5) / n as f64 - 1.0 - cx;
                let w = 1.0 - 2.0 * (row as f64 + 0.5) / n as f64 - cy;
                let (p, q) = (u * c + w * s, -u * s + w * c);
                if (p * p) / (a * a) + (q * q) / (b * b) <= 1.0 {
                    img.set(row, col, v);
                }
            }
        }
    }
    img
}

fn blocks(n: usize, r: &mut Rng) -> Image {
    let background = r.random_range(0.0..0.2);
    let mut img = Image::filled(n, background);
    let count = r.random_range(3..=7);
    for _ in 0..count {
        let (r0, c0) = (r.random_range(0..n - 1), r.random_range(0..n - 1));
        let (r1, c1) = (r.random_range(r0 + 1..=n), r.random_range(c0 + 1..=n));
        let v = r.random_range(0.0..1.0);
        for row in r0..r1 {
            for col in c0..c1 {
                img.set(row, col, v);
            }
        }
    }
    img
}

/// Row indices ordered from lowest to highest |frequency| in the unshifted
/// DFT layout: 0, n-1, 1, n-2, 2, ...
fn low_frequency_order(n: usize) -> impl Iterator<Item = usize> {
    (0..n).map(move |i| if i % 2 == 0 { i / 2 } else { n - 1 - i / 2 })
}

/// Cartesian row mask: the lowest-frequency `⌈n·center_fraction⌉` rows plus
/// random rows, `round(n / acceleration)` rows in total.
pub fn make_mask(n: usize, acceleration: f64, center_fraction: f64, seed: u64) -> Result<Mask> {
    if !(acceleration >= 1.0) {
        return Err(Error::invalid("acceleration must be at least 1"));
    }
    if !(0.0..1.0).contains(&center_fraction) {
        return Err(Error::invalid("center fraction must lie in [0, 1)"));
    }
    let center = libm::ceil(n as f64 * center_fraction - 1e-9) as usize;
    let budget = libm::round(n as f64 / acceleration) as usize;
    if budget == 0 || center > budget {
        return Err(Error::invalid(format!(
            "infeasible mask: {center} center rows with a budget of {budget}"
        )));
    }
    let mut rows = vec![false; n];
    for i in low_frequency_order(n).take(center) {
        rows[i] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !rows[i]).collect();
    let mut r = rng::stream(seed, "mask", 0);
    for k in sample(&mut r, free.len(), budget - center).into_iter() {
        rows[free[k]] = true;
    }
    let mut mask = Mask::from_rows(&rows)?;
    if budget == n {
        mask = Mask::full(n);
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipGranularity {
    /// Toggle whole phase-encode rows (keeps the mask Cartesian).
    #[default]
    Rows,
    /// Toggle individual k-space entries.
    Entries,
}

/// Toggles exactly `round(flip_fraction · units)` distinct rows (or entries).
/// Applying it twice with the same seed restores the input.
pub fn perturb_mask(m: &Mask, flip_fraction: f64, granularity: FlipGranularity, seed: u64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&flip_fraction) {
        return Err(Error::invalid("flip fraction must lie in [0, 1]"));
    }
    let n = m.side();
    let mut r = rng::stream(seed, "mask-flip", 0);
    match granularity {
        FlipGranularity::Rows => {
            let mut rows = m
                .rows()
                .ok_or_else(|| Error::invalid("row flips need a row-structured mask"))?;
            let k = libm::round(flip_fraction * n as f64) as usize;
            for i in sample(&mut r, n, k).into_iter() {
                rows[i] = !rows[i];
            }
            if rows.iter().all(|&k| !k) {
                return Err(Error::invalid("mask flip would remove every row"));
            }
            if rows.iter().all(|&k| k) {
                return Ok(Mask::full(n));
            }
            Mask::from_rows(&rows)
        }
        FlipGranularity::Entries => {
            let mut keep = m.keep().to_vec();
            let k = libm::round(flip_fraction * (n * n) as f64) as usize;
            for i in sample(&mut r, n * n, k).into_iter() {
                keep[i] = !keep[i];
            }
            if keep.iter().all(|&k| !k) {
                return Err(Error::invalid("mask flip would remove every entry"));
            }
            Mask::from_entries(n, keep)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Standard deviation per real component.
    pub gaussian_sigma: f64,
    /// Incident photon count for the sinogram Poisson model.
    pub poisson_photon_flux: Option<f64>,
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self {
            gaussian_sigma: sigma,
            poisson_photon_flux: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0) {
            return Err(Error::invalid("gaussian sigma must be nonnegative"));
        }
        if let Some(f) = self.poisson_photon_flux {
            if !(f > 0.0) {
                return Err(Error::invalid("photon flux must be positive"));
            }
        }
        Ok(())
    }
}

/// `A(x)` plus noise. Fourier: complex Gaussian on observed entries.
/// Radon: Poisson photon counts (when a flux is set) followed by Gaussian
/// electronic noise. A noiseless config returns `A(x)` exactly.
pub fn simulate_measurement(x: &Image, fm: &ForwardModel, nc: &NoiseConfig, seed: u64) -> Result<Measurement> {
    nc.validate()?;
    let mut y = fm.apply(x)?;
    let mut r = rng::stream(seed, "noise", 0);
    let sigma = nc.gaussian_sigma;
    match fm {
        ForwardModel::Fourier(f) => {
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("{e}")))?;
                let data = y.data_mut();
                for (i, &k) in f.mask().keep().iter().enumerate() {
                    if k {
                        data[2 * i] += normal.sample(&mut r);
                        data[2 * i + 1] += normal.sample(&mut r);
                    }
                }
            }
        }
        ForwardModel::Radon(_) | ForwardModel::Identity { .. } => {
            if let (Some(flux), MeasurementKind::Radon) = (nc.poisson_photon_flux, fm.kind()) {
                for v in y.data_mut() {
                    let mean = flux * libm::exp(-*v);
                    let count = if mean > 0.0 {
                        Poisson::new(mean)
                            .map_err(|e| Error::invalid(format!("{e}")))?
                            .sample(&mut r)
                    } else {
                        0.0
                    };
                    *v = -libm::log(count.max(1.0) / flux);
                }
            }
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("{e}")))?;
                for v in y.data_mut() {
                    *v += normal.sample(&mut r);
                }
            }
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetCounts {
    /// Prospective measurements (distribution ℙ).
    pub unpaired: usize,
    /// Clean reference images (distribution ℚ).
    pub clean: usize,
    /// Retrospective (measurement, image) pairs.
    pub paired: usize,
    /// Prospective pairs held out for validation.
    pub validation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub unpaired: Vec<Measurement>,
    pub clean: Vec<Image>,
    pub paired: Vec<(Measurement, Image)>,
    pub validation: Vec<(Measurement, Image)>,
}

impl Dataset {
    pub fn is_empty(&self) -> bool {
        self.unpaired.is_empty() && self.paired.is_empty()
    }
}

fn sample_pair(
    kind: PhantomKind,
    n: usize,
    fm: &ForwardModel,
    nc: &NoiseConfig,
    seed: u64,
    tag: &str,
    i: usize,
) -> Result<(Measurement, Image)> {
    let img_tag = format!("{tag}-image");
    let noise_tag = format!("{tag}-noise");
    let x = make_phantom(kind, n, rng::stream_key(seed, &img_tag, i as u64))?;
    let y = simulate_measurement(&x, fm, nc, rng::stream_key(seed, &noise_tag, i as u64))?;
    Ok((y, x))
}

/// ℙ and validation are acquired with `fm_test` (prospective), pairs with
/// `fm_train` (retrospective), ℚ are independent clean phantoms. Each
/// subset draws from its own seed stream.
pub fn build_dataset(
    counts: DatasetCounts,
    kind: PhantomKind,
    fm_train: &ForwardModel,
    fm_test: &ForwardModel,
    nc: &NoiseConfig,
    seed: u64,
) -> Result<Dataset> {
    let n = fm_train.side();
    if fm_test.side() != n {
        return Err(Error::ShapeMismatch {
            what: "test model side",
            expected: n,
            found: fm_test.side(),
        });
    }
    let unpaired = (0..counts.unpaired)
        .map(|i| sample_pair(kind, n, fm_test, nc, seed, "unpaired", i).map(|(y, _)| y))
        .collect::<Result<_>>()?;
    let clean = (0..counts.clean)
        .map(|i| make_phantom(kind, n, rng::stream_key(seed, "clean-image", i as u64)))
        .collect::<Result<_>>()?;
    let paired = (0..counts.paired)
        .map(|i| sample_pair(kind, n, fm_train, nc, seed, "paired", i))
        .collect::<Result<_>>()?;
    let validation = (0..counts.validation)
        .map(|i| sample_pair(kind, n, fm_test, nc, seed, "validation", i))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        unpaired,
        clean,
        paired,
        validation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Modality {
    Fourier {
        acceleration: f64,
        center_fraction: f64,
        flip_fraction: f64,
        #[serde(default)]
        flip_granularity: FlipGranularity,
    },
    Radon {
        n_angles: usize,
        n_detectors: usize,
        /// Scale the matrix to unit spectral norm.
        #[serde(default = "default_true")]
        normalize: bool,
    },
}

fn default_true() -> bool {
    true
}

/// Everything needed to regenerate a dataset bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub side: usize,
    pub phantom: PhantomKind,
    pub modality: Modality,
    pub noise: NoiseConfig,
    pub counts: DatasetCounts,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            side: 16,
            phantom: PhantomKind::Ellipses,
            modality: Modality::Fourier {
                acceleration: 4.0,
                center_fraction: 0.125,
                flip_fraction: 0.03,
                flip_granularity: FlipGranularity::Rows,
            },
            noise: NoiseConfig::gaussian(0.01),
            counts: DatasetCounts {
                unpaired: 200,
                clean: 200,
                paired: 50,
                validation: 20,
            },
            seed: 0,
        }
    }
}

impl DataConfig {
    /// Retrospective (training) and prospective (test) forward models.
    pub fn forward_models(&self) -> Result<(ForwardModel, ForwardModel)> {
        match &self.modality {
            Modality::Fourier {
                acceleration,
                center_fraction,
                flip_fraction,
                flip_granularity,
            } => {
                let train = make_mask(
                    self.side,
                    *acceleration,
                    *center_fraction,
                    rng::stream_key(self.seed, "train-mask", 0),
                )?;
                let test = perturb_mask(
                    &train,
                    *flip_fraction,
                    *flip_granularity,
                    rng::stream_key(self.seed, "test-mask", 0),
                )?;
                Ok((ForwardModel::fourier(train), ForwardModel::fourier(test)))
            }
            Modality::Radon {
                n_angles,
                n_detectors,
                normalize,
            } => {
                let mut m = RadonModel::build(self.side, *n_angles, *n_detectors)?;
                if *normalize {
                    m = m.normalized();
                }
                let fm = ForwardModel::Radon(m);
                Ok((fm.clone(), fm))
            }
        }
    }

    pub fn build(&self) -> Result<(ForwardModel, ForwardModel, Dataset)> {
        let (train, test) = self.forward_models()?;
        let ds = build_dataset(self.counts, self.phantom, &train, &test, &self.noise, self.seed)?;
        Ok((train, test, ds))
    }
}
