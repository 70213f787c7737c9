//! Central finite-difference check of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::TensorError;

/// Magnitude below which gradients are compared absolutely rather than
/// relatively; keeps round-off in near-zero entries from dominating.
pub const REL_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
    pub max_rel_err: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares the tape gradient of the scalar `f(inputs)` with central
/// differences of step `h` for every element of every input.
pub fn gradcheck<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport, TensorError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, TensorError>,
{
    let eval = |vals: &[Tensor]| -> Result<f64, TensorError> {
        let tape = Tape::new();
        let vars = vals.iter().map(|t| tape.constant(t.shape(), t.data().to_vec())).collect::<Result<Vec<_>, _>>()?;
        Ok(f(&tape, &vars)?.item())
    };

    let tape = Tape::new();
    let vars = inputs.iter().map(|t| tape.input(t.shape(), t.data().to_vec())).collect::<Result<Vec<_>, _>>()?;
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport { max_rel_err: 0.0, worst: (0, 0), checked: 0 };
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[i].numel()];
        let analytic = grads.wrt(*v).unwrap_or(&zeros).to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = x0 - h;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if err > report.max_rel_err || !err.is_finite() {
                report.max_rel_err = err;
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
