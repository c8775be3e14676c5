//! Central finite-difference verification of recorded gradients.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Worst component-wise relative error between the engine's gradient of
/// `f` at `point` and central differences with step `epsilon`.
///
/// The relative error of a component is `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, point: &Tensor<f64>, epsilon: f64) -> Result<f64>
where
    F: for<'g> Fn(Var<'g, f64>) -> Result<Var<'g, f64>>,
{
    if epsilon <= 0.0 {
        return Err(Error::invalid("finite-difference epsilon must be positive"));
    }
    let analytic = {
        let g = Graph::new();
        let x = g.variable(point.clone())?;
        let y = f(x)?;
        g.grad(y, &[x], false)?[0].value().to_f64_vec()
    };
    let eval = |p: Tensor<f64>| -> Result<f64> {
        let g = Graph::new();
        let x = g.variable(p)?;
        let y = f(x)?;
        if !y.value().is_scalar() {
            return Err(Error::Gradient("function output must be scalar".into()));
        }
        Ok(y.item())
    };
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = point.clone();
        plus.data_mut()[i] += epsilon;
        let mut minus = point.clone();
        minus.data_mut()[i] -= epsilon;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * epsilon);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_at_two() {
        let p = Tensor::from_f64(&[1], &[2.0]).unwrap();
        let err = finite_diff_check(|x| x.square()?.mul(x), &p, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let p = Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let err =
            finite_diff_check(|x| x.scale(0.0)?.sum_all()?.add_scalar(3.0), &p, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }
}
