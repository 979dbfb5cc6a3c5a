//! Central finite-difference oracle for reverse-mode gradients.

use super::{Tensor, Var};
use crate::error::{Error, Result};

/// Worst disagreement found by [`finite_diff_check_many`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Max over coordinates of `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` where the maximum occurred.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

fn scalar_of(v: &Var) -> Result<f64> {
    if !v.value().is_scalar() {
        return Err(Error::Usage(format!("gradient check needs a scalar function, got shape {:?}", v.shape())));
    }
    let y = v.value().data()[0];
    if !y.is_finite() {
        return Err(Error::numeric(format!("function value is not finite: {y}")));
    }
    Ok(y)
}

/// Compares the backward-pass gradient of a scalar `f` at `x` against
/// central differences with step `h`, returning the max relative error.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Var) -> Result<Var>,
{
    let report = finite_diff_check_many(|xs| f(&xs[0]), std::slice::from_ref(x), h)?;
    Ok(report.max_rel_error)
}

/// Multi-input form of [`finite_diff_check`]; every input is perturbed.
pub fn finite_diff_check_many<F>(f: F, xs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let leaves: Vec<Var> = xs.iter().cloned().map(Var::leaf).collect();
    let y = f(&leaves)?;
    scalar_of(&y)?;
    y.backward()?;
    let analytic: Vec<Tensor> = leaves.iter().map(|l| l.grad().unwrap_or_else(|| l.value().map(|_| 0.0))).collect();
    drop(y);
    drop(leaves);

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let vars: Vec<Var> = inputs.iter().cloned().map(Var::constant).collect();
        scalar_of(&f(&vars)?)
    };

    let mut inputs = xs.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), coordinates: 0 };
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            inputs[i].data_mut()[j] = orig + h;
            let plus = eval(&inputs)?;
            inputs[i].data_mut()[j] = orig - h;
            let minus = eval(&inputs)?;
            inputs[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = (i, j);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_quadratic() {
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = finite_diff_check(|v| Ok(v.mul(v)?.sum()), &x, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn catches_wrong_gradients() {
        // abs() at 0 has analytic gradient 0 but a numeric slope of 0 too;
        // use a kink away from the evaluation point instead: |x| at x = 1e-7.
        let x = Tensor::new(vec![1], vec![1e-7]).unwrap();
        let err = finite_diff_check(|v| Ok(v.abs().sum()), &x, 1e-5).unwrap();
        assert!(err > 0.5);
    }

    #[test]
    fn non_finite_function_is_an_error() {
        let x = Tensor::new(vec![1], vec![1.0]).unwrap();
        let r = finite_diff_check(|v| Ok(v.scale(f64::INFINITY).sum()), &x, 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
