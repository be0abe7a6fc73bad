//! Exact small-scale optimal transport and the straight-line path verifier.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nets::{critic_apply_batch, CriticArch};
use crate::param::ParamVector;
use crate::rng;

/// Largest cloud the assignment solver accepts.
pub const MAX_ASSIGNMENT_SIZE: usize = 256;

/// A weighted empirical measure on `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    uniform: bool,
}

impl PointCloud {
    /// Uniformly weighted cloud.
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::invalid("point cloud is empty"));
        }
        let w = vec![1.0 / n as f64; n];
        Self::check_points(&points)?;
        Ok(Self {
            points,
            weights: w,
            uniform: true,
        })
    }

    pub fn with_weights(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        Self::check_points(&points)?;
        if weights.len() != points.len() {
            return Err(Error::ShapeMismatch {
                what: "cloud weights",
                expected: points.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights must sum to one"));
        }
        let n = weights.len() as f64;
        let uniform = weights.iter().all(|&w| w == 1.0 / n);
        Ok(Self {
            points,
            weights,
            uniform,
        })
    }

    pub fn from_images(images: &[Image]) -> Result<Self> {
        Self::new(images.iter().map(|x| x.data().to_vec()).collect())
    }

    fn check_points(points: &[Vec<f64>]) -> Result<()> {
        let d = points[0].len();
        if d == 0 {
            return Err(Error::invalid("points must have positive dimension"));
        }
        for p in points {
            if p.len() != d {
                return Err(Error::ShapeMismatch {
                    what: "point dimension",
                    expected: d,
                    found: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("points must be finite"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    fn images(&self) -> Result<Vec<Image>> {
        let d = self.dim();
        let n = libm::round(libm::sqrt(d as f64)) as usize;
        if n * n != d {
            return Err(Error::invalid("cloud points are not square images"));
        }
        self.points.iter().map(|p| Image::from_vec(n, p.clone())).collect()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn check_dims(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            what: "cloud dimension",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// Minimum-cost perfect matching on a square cost matrix (row-major).
/// Returns `assignment[row] = column`.
pub fn solve_assignment(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(Error::ShapeMismatch {
            what: "cost matrix",
            expected: n * n,
            found: cost.len(),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("assignment costs must be finite"));
    }
    // shortest augmenting paths with row/column potentials, 1-based
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// `min_σ (1/n) Σ ‖a_i − b_σ(i)‖₂` for equal-size uniform clouds.
pub fn assignment_w1(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_dims(a, b)?;
    if a.len() != b.len() || !a.is_uniform() || !b.is_uniform() {
        return Err(Error::Unsupported(
            "assignment needs equal-size uniformly weighted clouds".into(),
        ));
    }
    let n = a.len();
    if n > MAX_ASSIGNMENT_SIZE {
        return Err(Error::Unsupported(alloc::format!(
            "assignment limited to {MAX_ASSIGNMENT_SIZE} points, got {n}"
        )));
    }
    let mut cost = Vec::with_capacity(n * n);
    for pa in a.points() {
        for pb in b.points() {
            cost.push(dist(pa, pb));
        }
    }
    let sigma = solve_assignment(&cost, n)?;
    Ok(sigma.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64)
}

/// Exact W1 between two 1-D measures via `∫ |F_a − F_b|`.
pub fn w1_1d(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_dims(a, b)?;
    if a.dim() != 1 {
        return Err(Error::invalid("one-dimensional clouds required"));
    }
    let xa: Vec<f64> = a.points().iter().map(|p| p[0]).collect();
    let xb: Vec<f64> = b.points().iter().map(|p| p[0]).collect();
    if a.is_uniform() && b.is_uniform() && a.len() == b.len() {
        return Ok(sorted_coupling(xa, xb));
    }
    Ok(cdf_distance(&xa, a.weights(), &xb, b.weights()))
}

fn sorted_coupling(mut xa: Vec<f64>, mut xb: Vec<f64>) -> f64 {
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    xa.iter().zip(&xb).map(|(p, q)| (p - q).abs()).sum::<f64>() / xa.len() as f64
}

fn cdf_distance(xa: &[f64], wa: &[f64], xb: &[f64], wb: &[f64]) -> f64 {
    let mut ia: Vec<usize> = (0..xa.len()).collect();
    let mut ib: Vec<usize> = (0..xb.len()).collect();
    ia.sort_by(|&i, &j| xa[i].total_cmp(&xa[j]));
    ib.sort_by(|&i, &j| xb[i].total_cmp(&xb[j]));
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0_f64, 0.0_f64);
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    while i < ia.len() || j < ib.len() {
        let ta = ia.get(i).map_or(f64::INFINITY, |&k| xa[k]);
        let tb = ib.get(j).map_or(f64::INFINITY, |&k| xb[k]);
        let t = ta.min(tb);
        if let Some(p) = prev {
            total += (fa - fb).abs() * (t - p);
        }
        while i < ia.len() && xa[ia[i]] == t {
            fa += wa[ia[i]];
            i += 1;
        }
        while j < ib.len() && xb[ib[j]] == t {
            fb += wb[ib[j]];
            j += 1;
        }
        prev = Some(t);
    }
    total
}

/// Exact W1: the sorted/CDF formula in one dimension, otherwise the
/// assignment solver. Anything else is refused rather than approximated.
pub fn exact_w1(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_dims(a, b)?;
    if a.dim() == 1 {
        w1_1d(a, b)
    } else {
        assignment_w1(a, b)
    }
}

/// `E_Q[φ] − E_P[φ]` with `P` the pushed-forward cloud.
pub fn dual_w1_estimate(arch: &CriticArch, critic: &ParamVector, pushed_p: &PointCloud, q: &PointCloud) -> Result<f64> {
    check_dims(pushed_p, q)?;
    let mean = |c: &PointCloud| -> Result<f64> {
        let vals = critic_apply_batch(arch, critic, &c.images()?)?;
        Ok(vals.iter().zip(c.weights()).map(|(v, w)| v * w).sum())
    };
    Ok(mean(q)? - mean(pushed_p)?)
}

/// Sliced W1 with `n_projections` Gaussian-sampled unit directions.
pub fn sliced_w1(a: &PointCloud, b: &PointCloud, n_projections: usize, seed: u64) -> Result<f64> {
    check_dims(a, b)?;
    if n_projections == 0 {
        return Err(Error::invalid("need at least one projection"));
    }
    let d = a.dim();
    let mut r = rng::stream(seed, "sliced-w1", 0);
    let mut total = 0.0;
    let mut dir = vec![0.0; d];
    for _ in 0..n_projections {
        loop {
            for v in dir.iter_mut() {
                *v = StandardNormal.sample(&mut r);
            }
            let nn = libm::sqrt(dir.iter().map(|v| v * v).sum());
            if nn > 1e-12 {
                dir.iter_mut().for_each(|v| *v /= nn);
                break;
            }
        }
        let proj = |c: &PointCloud| -> Vec<f64> {
            c.points()
                .iter()
                .map(|p| p.iter().zip(&dir).map(|(x, u)| x * u).sum())
                .collect()
        };
        let (pa, pb) = (proj(a), proj(b));
        total += if a.is_uniform() && b.is_uniform() && a.len() == b.len() {
            sorted_coupling(pa, pb)
        } else {
            cdf_distance(&pa, a.weights(), &pb, b.weights())
        };
    }
    Ok(total / n_projections as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSolution {
    pub knots: Vec<Vec<f64>>,
    /// Largest distance from a knot to the segment `[y, x]`.
    pub deviation: f64,
    pub objective: f64,
    /// Largest excess of a step length over `M/K`.
    pub max_violation: f64,
}

/// Trapezoidal approximation of `∫₀¹ ‖s(t) − y‖² dt` on uniform knots.
pub fn discretized_path_objective(knots: &[Vec<f64>], y: &[f64]) -> f64 {
    let k = knots.len() - 1;
    let h = 1.0 / k as f64;
    let sq = |p: &[f64]| p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let inner: f64 = knots[1..k].iter().map(|p| sq(p)).sum();
    h * (0.5 * sq(&knots[0]) + inner + 0.5 * sq(&knots[k]))
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = b.iter().zip(a).map(|(u, v)| u - v).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 == 0.0 {
        0.0
    } else {
        (p.iter().zip(a).zip(&ab).map(|((pi, ai), d)| (pi - ai) * d).sum::<f64>() / len2).clamp(0.0, 1.0)
    };
    libm::sqrt(
        p.iter()
            .zip(a)
            .zip(&ab)
            .map(|((pi, ai), d)| (pi - ai - t * d) * (pi - ai - t * d))
            .sum(),
    )
}

fn max_step_violation(knots: &[Vec<f64>], r: f64) -> f64 {
    knots.windows(2).map(|w| dist(&w[0], &w[1]) - r).fold(0.0, f64::max)
}

/// One sequential sweep of pairwise projections onto `‖s_{k+1} − s_k‖ ≤ r`
/// keeping both endpoints fixed.
fn projection_sweep(knots: &mut [Vec<f64>], r: f64) {
    let k = knots.len() - 1;
    for i in 0..k {
        let d = dist(&knots[i], &knots[i + 1]);
        if d <= r {
            continue;
        }
        let excess = d - r;
        let (left_free, right_free) = (i != 0, i + 1 != k);
        let (wl, wr) = match (left_free, right_free) {
            (true, true) => (0.5, 0.5),
            (true, false) => (1.0, 0.0),
            (false, true) => (0.0, 1.0),
            (false, false) => continue,
        };
        let (lo, hi) = knots.split_at_mut(i + 1);
        let (a, b) = (&mut lo[i], &mut hi[0]);
        for (u, v) in a.iter_mut().zip(b.iter_mut()) {
            let dir = (*v - *u) / d;
            *u += wl * excess * dir;
            *v -= wr * excess * dir;
        }
    }
}

const SWEEPS_PER_ITERATE: usize = 5;
const FEASIBILITY_TOL: f64 = 1e-10;
const MAX_FINAL_SWEEPS: usize = 1_000_000;

/// Minimizes the discretized path objective over `K + 1` knots pinned at
/// `y` and `x` with step lengths at most `M/K`, by projected gradient from
/// a random start.
pub fn straightline_check(y: &[f64], x: &[f64], m: f64, k: usize, iters: usize, seed: u64) -> Result<PathSolution> {
    if y.len() != x.len() {
        return Err(Error::ShapeMismatch {
            what: "endpoint dimension",
            expected: y.len(),
            found: x.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::invalid("endpoints must have positive dimension"));
    }
    if k < 4 {
        return Err(Error::invalid("need at least 4 knot intervals"));
    }
    let gap = dist(x, y);
    if !(m >= gap) {
        return Err(Error::invalid(alloc::format!(
            "speed bound {m} is below the endpoint distance {gap}"
        )));
    }
    let r = m / k as f64;
    let mut rand = rng::stream(seed, "straightline", 0);
    let scale = gap.max(1.0);
    let mut knots: Vec<Vec<f64>> = (0..=k)
        .map(|i| {
            if i == 0 {
                y.to_vec()
            } else if i == k {
                x.to_vec()
            } else {
                y.iter().map(|&v| v + scale * rand.random_range(-1.0..1.0)).collect()
            }
        })
        .collect();
    for _ in 0..SWEEPS_PER_ITERATE {
        projection_sweep(&mut knots, r);
    }
    // gradient of the trapezoid sum is 2h(s_k − y); a step of 1/(4h) halves
    // each interior knot's offset from y
    for _ in 0..iters {
        for s in &mut knots[1..k] {
            for (v, &yv) in s.iter_mut().zip(y) {
                *v -= 0.5 * (*v - yv);
            }
        }
        for _ in 0..SWEEPS_PER_ITERATE {
            projection_sweep(&mut knots, r);
        }
    }
    let mut sweeps = 0;
    while max_step_violation(&knots, r) > FEASIBILITY_TOL && sweeps < MAX_FINAL_SWEEPS {
        projection_sweep(&mut knots, r);
        sweeps += 1;
    }
    let deviation = knots
        .iter()
        .map(|p| point_segment_distance(p, y, x))
        .fold(0.0, f64::max);
    Ok(PathSolution {
        objective: discretized_path_objective(&knots, y),
        max_violation: max_step_violation(&knots, r),
        deviation,
        knots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[&[f64]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| p.to_vec()).collect()).unwrap()
    }

    #[test]
    fn single_points() {
        let a = cloud(&[&[0.0, 0.0]]);
        let b = cloud(&[&[3.0, 4.0]]);
        assert_eq!(exact_w1(&a, &b).unwrap(), 5.0);
        assert_eq!(exact_w1(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn assignment_picks_the_cheap_matching() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        assert_eq!(solve_assignment(&cost, 3).unwrap(), vec![1, 0, 2]);
    }

    #[test]
    fn weighted_one_dimensional() {
        let a = PointCloud::with_weights(vec![vec![0.0], vec![1.0]], vec![0.25, 0.75]).unwrap();
        let b = cloud(&[&[0.0]]);
        assert!((exact_w1(&a, &b).unwrap() - 0.75).abs() < 1e-15);
        assert!((exact_w1(&b, &a).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn unsupported_configurations_are_refused() {
        let a = cloud(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let b = cloud(&[&[0.0, 0.0]]);
        assert!(matches!(exact_w1(&a, &b), Err(Error::Unsupported(_))));
        let big = PointCloud::new(vec![vec![0.0, 0.0]; 257]).unwrap();
        assert!(matches!(exact_w1(&big, &big), Err(Error::Unsupported(_))));
    }

    #[test]
    fn cloud_validation() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![vec![0.0], vec![0.0, 1.0]]).is_err());
        assert!(PointCloud::with_weights(vec![vec![0.0], vec![1.0]], vec![0.5, 0.6]).is_err());
        assert!(PointCloud::with_weights(vec![vec![0.0], vec![1.0]], vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn straight_line_objective_limit() {
        let k = 256;
        let knots: Vec<Vec<f64>> = (0..=k).map(|i| vec![i as f64 / k as f64, 0.0]).collect();
        let j = discretized_path_objective(&knots, &[0.0, 0.0]);
        assert!((j - 1.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn verifier_finds_segment() {
        let sol = straightline_check(&[0.0, 0.0], &[1.0, 0.0], 2.0, 32, 200, 0).unwrap();
        assert!(sol.deviation < 1e-3, "{}", sol.deviation);
        assert!(sol.max_violation <= 1e-9);
        assert_eq!(sol.knots[0], vec![0.0, 0.0]);
        assert_eq!(sol.knots[32], vec![1.0, 0.0]);
    }

    #[test]
    fn verifier_tight_speed_bound() {
        let sol = straightline_check(&[0.0, 0.0], &[1.0, 0.0], 1.0, 32, 200, 3).unwrap();
        assert!(sol.deviation < 1e-6, "{}", sol.deviation);
    }

    #[test]
    fn verifier_rejects_infeasible() {
        assert!(straightline_check(&[0.0], &[1.0], 0.5, 32, 10, 0).is_err());
        assert!(straightline_check(&[0.0], &[1.0], 2.0, 3, 10, 0).is_err());
    }

    #[test]
    fn sliced_identity_and_symmetry() {
        let a = cloud(&[&[0.0, 0.0], &[1.0, 2.0], &[3.0, -1.0]]);
        let b = cloud(&[&[0.5, 0.0], &[1.0, 1.0], &[2.0, -1.0]]);
        assert_eq!(sliced_w1(&a, &a, 50, 1).unwrap(), 0.0);
        assert_eq!(sliced_w1(&a, &b, 50, 1).unwrap(), sliced_w1(&b, &a, 50, 1).unwrap());
    }

    #[test]
    fn sliced_translation_in_the_plane() {
        let a = cloud(&[&[0.0, 0.0], &[1.0, 0.5], &[-0.3, 0.2]]);
        let b = PointCloud::new(a.points().iter().map(|p| vec![p[0] + 3.0, p[1] + 4.0]).collect()).unwrap();
        let s = sliced_w1(&a, &b, 2000, 9).unwrap();
        let expected = 5.0 * 2.0 / core::f64::consts::PI;
        assert!((s - expected).abs() < 0.05 * expected, "{s} vs {expected}");
    }
}
