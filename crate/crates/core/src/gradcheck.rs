//! Central finite-difference checks for tape gradients.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Relative error used by every gradient check:
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compare reverse-mode gradients of a scalar tape function against central
/// differences with step `eps`, returning the largest relative error over
/// all input coordinates.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[k].len() {
            let x0 = inputs[k].data()[j];
            probe[k].data_mut()[j] = x0 + eps;
            let up = eval(&probe)?;
            probe[k].data_mut()[j] = x0 - eps;
            let down = eval(&probe)?;
            probe[k].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(grad[j], numeric));
        }
    }
    Ok(worst)
}
