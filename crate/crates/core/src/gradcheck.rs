//! Finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Maximum relative error between the tape gradient of the scalar function
/// `f` at `x` and a central difference with step `eps`:
///
/// `max_i |analytic_i - cd_i| / (|analytic_i| + |cd_i| + 1e-12)`
///
/// Non-differentiable points are not special-cased; they show up as large
/// errors.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if !(eps > 0.0) {
        return Err(Error::usage(format!("grad_check eps must be positive, got {eps}")));
    }
    let analytic = {
        let tape = Tape::new();
        let xv = tape.param(x.clone())?;
        let y = f(&tape, xv)?;
        tape.backward(y)?.get_or_zeros(xv)
    };

    let eval = |probe: Tensor| -> Result<f64> {
        let tape = Tape::new();
        let xv = tape.constant(probe)?;
        Ok(f(&tape, xv)?.item())
    };

    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let cd = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - cd).abs() / (a.abs() + cd.abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_is_tight() {
        let a = Tensor::from_rows(&[vec![2.0, 0.5, -0.3], vec![0.5, 1.0, 0.2], vec![-0.3, 0.2, 3.0]])
            .unwrap();
        let x = Tensor::row(&[0.7, -0.4, 0.9]);
        let err = grad_check(
            |tape, x| {
                let a = tape.constant(a.clone())?;
                x.matmul(a)?.mul(x)?.sum()
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn linear_is_exact() {
        let c = Tensor::row(&[1.5, -2.0, 0.25, 4.0]);
        let x = Tensor::row(&[0.1, 0.2, -0.3, 0.4]);
        let err = grad_check(
            |tape, x| x.mul(tape.constant(c.clone())?)?.sum(),
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn kink_is_reported() {
        let err = grad_check(|_, x| x.abs()?.sum(), &Tensor::scalar(0.0), DEFAULT_EPS).unwrap();
        assert!(err > 0.5, "{err}");
    }

    #[test]
    fn rejects_bad_eps() {
        assert!(grad_check(|_, x| x.sum(), &Tensor::scalar(1.0), 0.0).is_err());
    }
}
