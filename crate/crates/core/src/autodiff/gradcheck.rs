//! Central finite-difference gradient checking.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    /// Max relative error per parameter, in the order the parameters were given.
    pub max_rel_error: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

/// `|a − n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`; non-finite inputs map to infinity.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if !analytic.is_finite() || !numeric.is_finite() {
        return f64::INFINITY;
    }
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.item(out))
}

/// Compares the tape's gradients of a scalar function against central
/// differences with the given `step`.
pub fn gradcheck<F>(f: F, params: &[Tensor], step: f64, tolerance: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut max_rel_error = Vec::with_capacity(params.len());
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[pi], p.shape());
        let mut worst: f64 = 0.0;
        for k in 0..p.len() {
            let orig = p.data()[k];
            work[pi].data_mut()[k] = orig + step;
            let plus = evaluate(&f, &work)?;
            work[pi].data_mut()[k] = orig - step;
            let minus = evaluate(&f, &work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
        max_rel_error.push(worst);
    }
    let passed = max_rel_error.iter().all(|e| *e <= tolerance);
    Ok(GradcheckReport {
        max_rel_error,
        tolerance,
        passed,
    })
}
