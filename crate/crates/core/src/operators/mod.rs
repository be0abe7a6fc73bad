//! Imaging forward models and their exact adjoints.

mod fourier;
mod radon;

pub use fourier::{FourierModel, Mask};
pub use radon::{CsrMatrix, RadonModel};

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diff::LinearMap;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementKind {
    Fourier,
    Radon,
    /// Image-domain observation (denoising); used mainly in tests.
    Identity,
}

/// Observed data. Fourier data is `rows × cols` complex values stored as
/// interleaved `[re, im]` pairs; sinograms are `angles × detectors` reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    kind: MeasurementKind,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Measurement {
    pub fn new(kind: MeasurementKind, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let expected = match kind {
            MeasurementKind::Fourier => 2 * rows * cols,
            _ => rows * cols,
        };
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                what: "measurement data",
                expected,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("measurement contains non-finite values"));
        }
        Ok(Self { kind, rows, cols, data })
    }

    pub fn kind(&self) -> MeasurementKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn l1_distance(&self, other: &Measurement) -> Result<f64> {
        check_len(other.data.len(), self.data.len(), "measurement")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum())
    }
}

/// A linear imaging operator `A` together with its adjoint `A*`.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardModel {
    Fourier(FourierModel),
    Radon(RadonModel),
    Identity { n: usize },
}

impl ForwardModel {
    pub fn fourier(mask: Mask) -> Self {
        ForwardModel::Fourier(FourierModel::new(mask))
    }

    pub fn identity(n: usize) -> Self {
        ForwardModel::Identity { n }
    }

    pub fn kind(&self) -> MeasurementKind {
        match self {
            ForwardModel::Fourier(_) => MeasurementKind::Fourier,
            ForwardModel::Radon(_) => MeasurementKind::Radon,
            ForwardModel::Identity { .. } => MeasurementKind::Identity,
        }
    }

    /// Side length of the image domain.
    pub fn side(&self) -> usize {
        match self {
            ForwardModel::Fourier(f) => f.side(),
            ForwardModel::Radon(r) => r.side(),
            ForwardModel::Identity { n } => *n,
        }
    }

    /// `(rows, cols)` of the measurement grid.
    pub fn range_shape(&self) -> (usize, usize) {
        match self {
            ForwardModel::Fourier(f) => (f.side(), f.side()),
            ForwardModel::Radon(r) => (r.n_angles(), r.n_detectors()),
            ForwardModel::Identity { n } => (*n, *n),
        }
    }

    pub fn mask(&self) -> Option<&Mask> {
        match self {
            ForwardModel::Fourier(f) => Some(f.mask()),
            _ => None,
        }
    }

    pub fn apply(&self, x: &Image) -> Result<Measurement> {
        check_len(x.side(), self.side(), "image side")?;
        let (rows, cols) = self.range_shape();
        let mut out = vec![0.0; self.output_len()];
        self.apply_into(x.data(), &mut out);
        Measurement::new(self.kind(), rows, cols, out)
    }

    pub fn adjoint(&self, y: &Measurement) -> Result<Image> {
        self.check_measurement(y)?;
        let mut out = vec![0.0; self.input_len()];
        self.adjoint_into(y.data(), &mut out);
        Image::from_vec(self.side(), out)
    }

    pub fn check_measurement(&self, y: &Measurement) -> Result<()> {
        if y.kind() != self.kind() {
            return Err(Error::KindMismatch {
                expected: self.kind(),
                found: y.kind(),
            });
        }
        check_len(y.data().len(), self.output_len(), "measurement")
    }

    /// A zero measurement shaped like this model's range.
    pub fn zero_measurement(&self) -> Measurement {
        let (rows, cols) = self.range_shape();
        Measurement {
            kind: self.kind(),
            rows,
            cols,
            data: vec![0.0; self.output_len()],
        }
    }
}

impl LinearMap for ForwardModel {
    fn input_len(&self) -> usize {
        let n = self.side();
        n * n
    }

    fn output_len(&self) -> usize {
        let (r, c) = self.range_shape();
        match self {
            ForwardModel::Fourier(_) => 2 * r * c,
            _ => r * c,
        }
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ForwardModel::Fourier(f) => f.apply_into(x, out),
            ForwardModel::Radon(r) => r.apply_into(x, out),
            ForwardModel::Identity { .. } => out.copy_from_slice(x),
        }
    }

    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        match self {
            ForwardModel::Fourier(f) => {
                f.adjoint_into(y, out);
            }
            ForwardModel::Radon(r) => r.adjoint_into(y, out),
            ForwardModel::Identity { .. } => out.copy_from_slice(y),
        }
    }
}

/// Unitary masked DFT of a real image; unobserved entries are zero.
pub fn fourier_apply(x: &Image, mask: &Mask) -> Result<Measurement> {
    ForwardModel::fourier(mask.clone()).apply(x)
}

/// Inverse unitary DFT of the masked measurement, real part.
pub fn fourier_adjoint(y: &Measurement, mask: &Mask) -> Result<Image> {
    fourier_adjoint_with_residual(y, mask).map(|(img, _)| img)
}

/// Like [`fourier_adjoint`], also returning the largest discarded
/// imaginary magnitude (near zero for conjugate-symmetric input).
pub fn fourier_adjoint_with_residual(y: &Measurement, mask: &Mask) -> Result<(Image, f64)> {
    let fm = FourierModel::new(mask.clone());
    if y.kind() != MeasurementKind::Fourier {
        return Err(Error::KindMismatch {
            expected: MeasurementKind::Fourier,
            found: y.kind(),
        });
    }
    let n = mask.side();
    check_len(y.data().len(), 2 * n * n, "measurement")?;
    let mut out = vec![0.0; n * n];
    let imag = fm.adjoint_into(y.data(), &mut out);
    Ok((Image::from_vec(n, out)?, imag))
}

pub fn radon_build(n: usize, n_angles: usize, n_detectors: usize) -> Result<ForwardModel> {
    RadonModel::build(n, n_angles, n_detectors).map(ForwardModel::Radon)
}

/// Max over random probes of `|⟨Ax,y⟩ − ⟨x,A*y⟩| / max(|⟨Ax,y⟩|, 1e-12)`.
pub fn adjoint_test(map: &dyn LinearMap, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::invalid("adjoint test needs at least one trial"));
    }
    let (ni, no) = (map.input_len(), map.output_len());
    let mut ax = vec![0.0; no];
    let mut aty = vec![0.0; ni];
    let mut worst = 0.0_f64;
    for t in 0..trials {
        let mut r = rng::stream(seed, "adjoint-test", t as u64);
        let x: Vec<f64> = (0..ni).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..no).map(|_| r.random_range(-1.0..1.0)).collect();
        map.apply_into(&x, &mut ax);
        map.adjoint_into(&y, &mut aty);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1e-12));
    }
    Ok(worst)
}

fn check_len(found: usize, expected: usize, what: &'static str) -> Result<()> {
    if found != expected {
        return Err(Error::ShapeMismatch { what, expected, found });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(n: usize, seed: u64) -> Image {
        let mut r = rng::stream(seed, "test-image", 0);
        Image::from_vec(n, (0..n * n).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_measurement_adjoints_to_zero() {
        let mask = Mask::from_rows(&[true, false, true, false, false, true, false, false]).unwrap();
        let y = ForwardModel::fourier(mask.clone()).zero_measurement();
        let x = fourier_adjoint(&y, &mask).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_mask_apply_then_adjoint_recovers_image() {
        let x = random_image(8, 1);
        let mask = Mask::full(8);
        let y = fourier_apply(&x, &mask).unwrap();
        let (back, imag) = fourier_adjoint_with_residual(&y, &mask).unwrap();
        assert!(imag < 1e-9);
        assert!(back.distance(&x).unwrap() < 1e-12);
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let x = random_image(8, 2);
        let y = ForwardModel::identity(8).apply(&x).unwrap();
        assert!(matches!(
            fourier_adjoint(&y, &Mask::full(8)),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let x = random_image(6, 3);
        assert!(ForwardModel::fourier(Mask::full(8)).apply(&x).is_err());
    }

    #[test]
    fn radon_single_pixel_column_matches_direct_geometry() {
        // angle 0 rays are vertical lines x = s; a pixel column [x0, x0+1]
        // collects length 1 from every detector centre inside it.
        let n = 8;
        let n_det = 16;
        let fm = RadonModel::build(n, 1, n_det).unwrap();
        let (r, c) = (3, 4);
        let mut e = vec![0.0; n * n];
        e[r * n + c] = 1.0;
        let mut sino = vec![0.0; n_det];
        fm.apply_into(&e, &mut sino);
        let spacing = n as f64 * core::f64::consts::SQRT_2 / n_det as f64;
        let x0 = c as f64 - n as f64 / 2.0;
        let mut expected = 0.0;
        for (d, &v) in sino.iter().enumerate() {
            let s = (d as f64 - (n_det as f64 - 1.0) / 2.0) * spacing;
            let want = if s > x0 && s < x0 + 1.0 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "detector {d}: {v} vs {want}");
            expected += want;
        }
        let col_sum: f64 = sino.iter().sum();
        assert!((col_sum - expected).abs() < 1e-12);
        assert!(col_sum > 0.0);
    }

    #[test]
    fn radon_oblique_weights_match_sampled_ray_length() {
        // Riemann-sum estimate of the chord length, independent of the clipper.
        let n = 6;
        let n_angles = 5;
        let n_det = 9;
        let model = RadonModel::build(n, n_angles, n_det).unwrap();
        let spacing = n as f64 * core::f64::consts::SQRT_2 / n_det as f64;
        let a = 2;
        let theta = core::f64::consts::PI * a as f64 / n_angles as f64;
        let (st, ct) = (libm::sin(theta), libm::cos(theta));
        for d in [2usize, 4, 6] {
            let s = (d as f64 - (n_det as f64 - 1.0) / 2.0) * spacing;
            let mut lengths = vec![0.0; n * n];
            let steps = 400_000;
            let span = n as f64 * 1.5;
            let dt = 2.0 * span / steps as f64;
            for k in 0..steps {
                let t = -span + (k as f64 + 0.5) * dt;
                let (px, py) = (s * ct - t * st, s * st + t * ct);
                let c = libm::floor(px + n as f64 / 2.0);
                let r = libm::floor(n as f64 / 2.0 - py);
                if c >= 0.0 && r >= 0.0 && (c as usize) < n && (r as usize) < n {
                    lengths[r as usize * n + c as usize] += dt;
                }
            }
            let row = a * n_det + d;
            let mut dense = vec![0.0; n * n];
            for (c, v) in model.matrix().row(row) {
                dense[c] = v;
            }
            for (got, want) in dense.iter().zip(&lengths) {
                assert!((got - want).abs() < 1e-3, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn radon_zero_image_gives_zero_sinogram() {
        let fm = radon_build(8, 6, 12).unwrap();
        let y = fm.apply(&Image::zeros(8)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_identity_holds_for_shipped_models() {
        let rows: Vec<bool> = (0..16).map(|i| i % 3 == 0).collect();
        let fourier = ForwardModel::fourier(Mask::from_rows(&rows).unwrap());
        assert!(adjoint_test(&fourier, 20, 5).unwrap() < 1e-10);
        let radon = radon_build(16, 12, 23).unwrap();
        assert!(adjoint_test(&radon, 20, 5).unwrap() < 1e-12);
    }

    struct Corrupted(ForwardModel);

    impl LinearMap for Corrupted {
        fn input_len(&self) -> usize {
            self.0.input_len()
        }
        fn output_len(&self) -> usize {
            self.0.output_len()
        }
        fn apply_into(&self, x: &[f64], out: &mut [f64]) {
            self.0.apply_into(x, out)
        }
        fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
            self.0.adjoint_into(y, out);
            out[0] += 0.5 * y[1];
        }
    }

    #[test]
    fn corrupted_adjoint_is_detected() {
        let c = Corrupted(radon_build(8, 4, 12).unwrap());
        assert!(adjoint_test(&c, 20, 1).unwrap() > 1e-3);
    }

    #[test]
    fn normalized_radon_has_unit_norm() {
        let m = RadonModel::build(8, 6, 12).unwrap().normalized();
        assert!((m.spectral_norm(300) - 1.0).abs() < 1e-6);
    }
}
