//! Gradient guidance through the Tweedie estimate, for differentiable losses.

use super::loss::LossFunction;
use crate::error::{Error, Result};
use crate::schedule::tweedie_with;
use crate::score::NoisePredictor;
use crate::tensor::Tensor;

/// `-scale * grad_{x_t} l(x0_hat(x_t))`.
///
/// The chain rule runs through Tweedie's formula,
/// `d x0_hat / d x_t = (I - sqrt(1 - abar) d eps_hat / d x_t) / sqrt(abar)`.
/// Backends that expose `eps_vjp` (the analytic mixture) get the exact
/// Jacobian; for the others `eps_hat` is held fixed, so `x0_hat` is treated as
/// linear in `x_t` with slope `1 / sqrt(abar)`.
pub fn dps_rule_step_direction<P: NoisePredictor + ?Sized>(
    x_t: &Tensor,
    t: usize,
    model: &P,
    loss: &dyn LossFunction,
    scale: f64,
) -> Result<Tensor> {
    if !loss.differentiable() {
        return Err(Error::Capability(
            "rule loss is not differentiable; gradient guidance is unavailable".into(),
        ));
    }
    x_t.ensure_shape(model.sample_shape())?;
    if t == 0 {
        return Ok(loss.gradient(x_t)?.scale(-scale));
    }
    let ab = model.schedule().alpha_bar(t);
    let eps = model.eps(x_t, t)?;
    let x0 = tweedie_with(x_t, ab, &eps)?;
    let g = loss.gradient(&x0)?;
    let jt_g = match model.eps_vjp(x_t, t, &g)? {
        Some(v) => g.lincomb(1.0, &v, -(1.0 - ab).sqrt())?.scale(1.0 / ab.sqrt()),
        None => g.scale(1.0 / ab.sqrt()),
    };
    Ok(jt_g.scale(-scale))
}
