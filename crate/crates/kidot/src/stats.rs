//! Paired t-tests and bootstrap confidence intervals.

use kidot_core::rng;
use rand::Rng as _;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// Two-sided p-value.
    pub p_value: f64,
    /// Set when the differences have no spread; `p_value` is then 1.
    pub degenerate: bool,
}

/// Two-sided paired t-test on `a − b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Config("paired t-test needs at least two pairs".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Config("paired t-test needs finite values".into()));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let scale = d.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let df = a.len() - 1;
    if var.sqrt() <= 1e-12 * scale {
        return Ok(TTest {
            t: 0.0,
            df,
            p_value: 1.0,
            degenerate: true,
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Config(e.to_string()))?;
    let p_value = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest {
        t,
        df,
        p_value,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bootstrap {
    /// Metric on the original sample.
    pub point: f64,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Resamples `samples` with replacement `n_boot` times, recomputing
/// `metric` on each replicate; the interval is the 2.5/97.5 percentiles.
pub fn bootstrap_metric<T: Clone>(
    samples: &[T],
    metric: impl Fn(&[T]) -> f64,
    n_boot: usize,
    seed: u64,
) -> Result<Bootstrap> {
    if samples.is_empty() {
        return Err(Error::Config("bootstrap needs at least one sample".into()));
    }
    if n_boot < 100 {
        return Err(Error::Config("bootstrap needs at least 100 replicates".into()));
    }
    let mut r = rng::stream(seed, "bootstrap", 0);
    let mut buf = Vec::with_capacity(samples.len());
    let mut reps = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        buf.clear();
        buf.extend((0..samples.len()).map(|_| samples[r.random_range(0..samples.len())].clone()));
        reps.push(metric(&buf));
    }
    let nb = n_boot as f64;
    let mean = reps.iter().sum::<f64>() / nb;
    let std = (reps.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nb - 1.0)).sqrt();
    reps.sort_by(f64::total_cmp);
    Ok(Bootstrap {
        point: metric(samples),
        mean,
        std,
        ci_low: percentile(&reps, 0.025),
        ci_high: percentile(&reps, 0.975),
    })
}

/// Linear-interpolated percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean of a slice; handy as a bootstrap metric.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (zero for fewer than two values).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(r: &mut rng::Rng) -> f64 {
        StandardNormal.sample(r)
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let a = [1.0, 2.0, 3.0];
        let t = paired_ttest(&a, &a).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.p_value, 1.0);
        let b: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let c: Vec<f64> = b.iter().map(|v| v + 1.0).collect();
        assert!(paired_ttest(&c, &b).unwrap().degenerate);
    }

    #[test]
    fn shifted_normals_are_significant() {
        let mut r = rng::stream(11, "ttest", 0);
        let a: Vec<f64> = (0..100).map(|_| normal(&mut r)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 0.5 + 0.1 * normal(&mut r)).collect();
        let t = paired_ttest(&a, &b).unwrap();
        assert!(t.p_value < 0.001);
        assert!(t.t < -30.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(paired_ttest(&[1.0], &[2.0]).is_err());
        assert!(paired_ttest(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn bootstrap_constant_and_coverage() {
        let c = vec![2.5; 30];
        let b = bootstrap_metric(&c, mean, 200, 1).unwrap();
        assert_eq!((b.ci_low, b.ci_high), (2.5, 2.5));
        let mut r = rng::stream(2, "boot", 0);
        let xs: Vec<f64> = (0..50).map(|_| normal(&mut r)).collect();
        let b = bootstrap_metric(&xs, mean, 500, 3).unwrap();
        assert!(b.ci_low <= b.point && b.point <= b.ci_high);
        assert!(bootstrap_metric::<f64>(&[], mean, 200, 0).is_err());
        assert!(bootstrap_metric(&xs, mean, 50, 0).is_err());
    }

    #[test]
    fn bootstrap_width_shrinks_with_sample_size() {
        let mut r = rng::stream(4, "boot-width", 0);
        let small: Vec<f64> = (0..100).map(|_| normal(&mut r)).collect();
        let large: Vec<f64> = (0..400).map(|_| normal(&mut r)).collect();
        let w = |xs: &[f64]| {
            let b = bootstrap_metric(xs, mean, 2000, 5).unwrap();
            b.ci_high - b.ci_low
        };
        let ratio = w(&small) / w(&large);
        assert!((ratio - 2.0).abs() < 0.6, "{ratio}");
    }
}
