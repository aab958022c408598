//! Central finite-difference gradient checks for tape-recorded functions.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max_i |g_i - fd_i| / (1 + |g_i|)` over every coordinate of every input.
    pub max_rel_err: f64,
    pub coords: usize,
}

/// Compares reverse-mode gradients of `f` at `inputs` with central differences of step `h`.
///
/// `f` receives one parameter leaf per input and must return a scalar.
pub fn check<F>(inputs: &[Matrix], h: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Matrix> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|m| tape.param(m.clone())).collect();
        f(&tape, &vars)?.backward()?;
        vars.iter().map(|v| v.grad()).collect()
    };

    let eval = |point: &[Matrix]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = point.iter().map(|m| tape.constant(m.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut max_rel_err: f64 = 0.0;
    let mut coords = 0;
    let mut point = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = point[which].as_slice()[k];
            point[which].as_mut_slice()[k] = orig + h;
            let up = eval(&point)?;
            point[which].as_mut_slice()[k] = orig - h;
            let down = eval(&point)?;
            point[which].as_mut_slice()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = grad.as_slice()[k];
            max_rel_err = max_rel_err.max((g - fd).abs() / (1.0 + g.abs()));
            coords += 1;
        }
    }
    Ok(GradCheck {
        max_rel_err,
        coords,
    })
}
