//! Reverse-mode gradients of scalar losses and a central-difference oracle.

mod tape;

pub use tape::{ConvShape, LinearMap, Tape, Var};

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::param::ParamVector;

/// A scalar program over a flat parameter vector.
///
/// `build` records the program on `tape` given the parameter leaf and
/// returns the scalar output node. The same recording serves plain
/// evaluation, reverse-mode gradients and finite differences.
pub trait Loss<'a> {
    fn build(&self, tape: &mut Tape<'a>, params: Var) -> Result<Var>;
}

impl<'a, F> Loss<'a> for F
where
    F: Fn(&mut Tape<'a>, Var) -> Result<Var>,
{
    fn build(&self, tape: &mut Tape<'a>, params: Var) -> Result<Var> {
        self(tape, params)
    }
}

/// Loss value at `params`.
pub fn value<'a>(loss: &impl Loss<'a>, params: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(params.to_vec())?;
    let out = loss.build(&mut tape, p)?;
    scalar_output(&tape, out)
}

/// Loss value and its exact reverse-mode gradient.
pub fn value_and_grad<'a>(loss: &impl Loss<'a>, params: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let p = tape.input(params.to_vec())?;
    let out = loss.build(&mut tape, p)?;
    let v = scalar_output(&tape, out)?;
    let mut g = tape.gradient(out, &[p])?;
    Ok((v, g.swap_remove(0)))
}

pub fn grad<'a>(loss: &impl Loss<'a>, params: &ParamVector) -> Result<Vec<f64>> {
    value_and_grad(loss, params.values()).map(|(_, g)| g)
}

fn scalar_output(tape: &Tape<'_>, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::ShapeMismatch {
            what: "loss output",
            expected: 1,
            found: v.len(),
        });
    }
    Ok(v[0])
}

/// Central differences `(L(p + h e_i) - L(p - h e_i)) / 2h` per coordinate.
pub fn finite_diff_grad<'a>(loss: &impl Loss<'a>, params: &ParamVector, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut p = params.values().to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let plus = value(loss, &p)?;
        p[i] = orig - h;
        let minus = value(loss, &p)?;
        p[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::invalid(format!("loss not finite when probing coordinate {i}")));
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_abs_rel_err: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub tol: f64,
}

impl GradReport {
    /// Relative error per coordinate uses the denominator `max(|a|, |n|, 1e-8)`.
    pub fn compare(analytic: Vec<f64>, numeric: Vec<f64>, tol: f64) -> Result<Self> {
        if analytic.len() != numeric.len() {
            return Err(Error::ShapeMismatch {
                what: "gradient comparison",
                expected: analytic.len(),
                found: numeric.len(),
            });
        }
        let mut worst = (0.0_f64, 0usize);
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let denom = a.abs().max(n.abs()).max(1e-8);
            let err = (a - n).abs() / denom;
            if err > worst.0 {
                worst = (err, i);
            }
        }
        Ok(Self {
            max_abs_rel_err: worst.0,
            worst_index: worst.1,
            analytic,
            numeric,
            tol,
        })
    }

    pub fn passed(&self) -> bool {
        self.max_abs_rel_err < self.tol
    }
}

/// Compares the reverse-mode gradient with central differences (h = 1e-5).
pub fn check_grad<'a>(loss: &impl Loss<'a>, params: &ParamVector, tol: f64) -> Result<GradReport> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let analytic = grad(loss, params)?;
    let numeric = finite_diff_grad(loss, params, 1e-5)?;
    GradReport::compare(analytic, numeric, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::ParamLayout;
    use alloc::vec;

    fn scalar_params(v: f64) -> ParamVector {
        let layout = ParamLayout::new().with("p", &[1]).unwrap();
        ParamVector::from_values(layout, vec![v]).unwrap()
    }

    fn square<'a>(t: &mut Tape<'a>, p: Var) -> Result<Var> {
        t.sum_sq(p)
    }

    fn abs<'a>(t: &mut Tape<'a>, p: Var) -> Result<Var> {
        t.abs_sum(p)
    }

    #[test]
    fn grad_of_square() {
        assert_eq!(grad(&square, &scalar_params(3.0)).unwrap(), vec![6.0]);
    }

    #[test]
    fn constant_loss_zero_grad() {
        let loss = |t: &mut Tape<'_>, _p: Var| t.constant(vec![7.0]);
        assert_eq!(grad(&loss, &scalar_params(3.0)).unwrap(), vec![0.0]);
    }

    #[test]
    fn finite_diff_square() {
        let g = finite_diff_grad(&square, &scalar_params(3.0), 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_abs_away_from_kink() {
        let g = finite_diff_grad(&abs, &scalar_params(0.5), 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_rejects_nonpositive_step() {
        assert!(finite_diff_grad(&square, &scalar_params(1.0), 0.0).is_err());
    }

    #[test]
    fn check_grad_quadratic_passes() {
        let layout = ParamLayout::new().with("p", &[3]).unwrap();
        let p = ParamVector::from_values(layout, vec![0.3, -1.2, 2.0]).unwrap();
        let r = check_grad(&square, &p, 1e-6).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let layout = ParamLayout::new().with("p", &[4]).unwrap();
        let p = ParamVector::from_values(layout, vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let mut analytic = grad(&square, &p).unwrap();
        analytic[2] *= 2.0;
        let numeric = finite_diff_grad(&square, &p, 1e-5).unwrap();
        let r = GradReport::compare(analytic, numeric, 1e-6).unwrap();
        assert!(!r.passed());
        assert_eq!(r.worst_index, 2);
    }
}
