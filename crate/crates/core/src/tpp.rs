//! Conditional intensity and point-process likelihood.

use crate::autodiff::{softplus, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Linear, ParamBuilder};

/// `λ*(t) = softplus(f2(h(t)))` with an affine `f2`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityHead {
    pub affine: Linear,
}

impl IntensityHead {
    pub fn new(builder: &mut ParamBuilder<'_>, hidden: usize) -> Self {
        IntensityHead { affine: builder.linear("intensity", 1, hidden, true, 1.0) }
    }

    /// Scalar intensity node for latent state `h`.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], h: Var) -> Var {
        let a = self.affine.forward(tape, params, h);
        tape.softplus(a)
    }
}

/// Softplus of a pre-activation; strictly positive for finite input.
pub fn intensity(pre_activation: f64) -> f64 {
    softplus(pre_activation)
}

/// `-(Σ log λ*(t_i) - Λ)`
pub fn nll(event_intensities: &[f64], compensator: f64) -> Result<f64> {
    let mut log_sum = 0.0;
    for &l in event_intensities {
        if !(l > 0.0) {
            return Err(Error::NonPositiveIntensity(l));
        }
        log_sum += l.ln();
    }
    Ok(compensator - log_sum)
}

/// Tape version of [`nll`]. `compensator` is a scalar node.
pub fn nll_on_tape(tape: &mut Tape, event_intensities: &[Var], compensator: Var) -> Var {
    if event_intensities.is_empty() {
        return compensator;
    }
    let lams = tape.concat(event_intensities);
    let logs = tape.ln(lams);
    let log_sum = tape.sum(logs);
    tape.sub(compensator, log_sum)
}
