use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Central-difference step used by [`gradcheck`].
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Compares reverse-mode gradients of a scalar function against central
/// differences and returns the worst `|analytic - numeric| / max(1, |analytic|)`.
pub fn gradcheck<F>(f: F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let y = tape.value(out);
        if y.len() != 1 {
            return Err(Error::Precondition(format!(
                "gradcheck needs a scalar function, got shape {:?}",
                y.shape()
            )));
        }
        let y = y.item();
        if !y.is_finite() {
            return Err(Error::NumericDomain(format!("function value {y}")));
        }
        Ok(y)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).item().is_finite() {
        return Err(Error::NumericDomain("function value at the base point".into()));
    }
    tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (idx, &var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(var)
            .unwrap_or_else(|| Tensor::zeros(inputs[idx].shape()));
        for c in 0..inputs[idx].len() {
            let x0 = inputs[idx].data()[c];
            probe[idx].data_mut()[c] = x0 + GRADCHECK_STEP;
            let up = eval(&probe)?;
            probe[idx].data_mut()[c] = x0 - GRADCHECK_STEP;
            let down = eval(&probe)?;
            probe[idx].data_mut()[c] = x0;
            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            let a = analytic.data()[c];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if !err.is_finite() {
                return Err(Error::NumericDomain(format!(
                    "gradient comparison at input {idx}, coordinate {c}"
                )));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
