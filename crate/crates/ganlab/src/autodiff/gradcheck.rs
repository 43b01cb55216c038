//! Central finite-difference oracle for gradient verification.
//!
//! The oracle only uses forward evaluations of the function under test, so it
//! stays independent of the reverse sweep it is checking.

use ndarray::Array2;

use crate::autodiff::{Tape, Var};
use crate::error::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

/// Relative error of `analytic` against `numeric`, guarded near zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-12, analytic.abs() + numeric.abs())
}

/// Compare the tape gradient of a scalar-valued function against central
/// finite differences over every coordinate of `x`. Returns the max
/// relative error.
///
/// `f` must build the same expression for any input value; it is evaluated
/// on a fresh tape for the analytic gradient and twice per coordinate for
/// the differences.
pub fn finite_difference_check<F>(f: F, x: &Array2<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Tape, &Var) -> Result<Var>,
{
    fd_check_params(|tape, vars| f(tape, &vars[0]), &[x.clone()], eps)
}

/// Multi-tensor variant of [`finite_difference_check`]: `f` receives one
/// leaf per entry of `params` and must return a scalar.
pub fn fd_check_params<F>(f: F, params: &[Array2<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    assert!(eps > 0.0, "eps must be positive");

    let eval = |values: &[Array2<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&tape, &vars)?;
        Ok(out.scalar_value())
    };

    // Analytic gradients from one taped backward pass.
    let analytic: Vec<Array2<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(&out)?;
        vars.iter().map(|v| grads.value(v)).collect()
    };

    let mut worst = 0.0_f64;
    let mut work: Vec<Array2<f64>> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for (idx, &orig) in param.indexed_iter() {
            work[pi][idx] = orig + eps;
            let plus = eval(&work)?;
            work[pi][idx] = orig - eps;
            let minus = eval(&work)?;
            work[pi][idx] = orig;
            let central = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[pi][idx], central));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn square_sum_is_nearly_exact() {
        let err = finite_difference_check(
            |_tape, x| Ok(x.square().sum()),
            &array![[3.0]],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn sigmoid_sum_matches() {
        let x = array![[0.3, -1.2, 0.7], [2.1, -0.4, 0.05]];
        let err =
            finite_difference_check(|_tape, x| Ok(x.sigmoid().sum()), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn leaky_relu_away_from_kink_matches() {
        // All inputs are at least 10*eps in magnitude.
        let x = array![[0.5, -0.8, 1.3], [-2.0, 0.02, -0.01]];
        let err = finite_difference_check(
            |_tape, x| Ok(x.leaky_relu(0.2).square().sum()),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn multi_param_check() {
        let a = array![[0.4, -0.7]];
        let b = array![[1.0], [0.5]];
        let err = fd_check_params(
            |_tape, vars| Ok(vars[0].matmul(&vars[1])?.square().sum()),
            &[a, b],
            1e-5,
        );
        assert!(err.unwrap() < 1e-7);
    }
}
