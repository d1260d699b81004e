//! Monte-Carlo estimate of the desirability `Psi(x, t) = E[exp(-l(x_0)) | x_t = x]`.

use super::loss::LossFunction;
use super::sampler::rollout;
use crate::error::{Error, Result};
use crate::score::NoisePredictor;
use crate::tensor::Tensor;

/// Averages `exp(-l(x_0))` over `num_traj` unguided reverse trajectories
/// started at `(x_t, t)`. Trajectory `j` draws from its own substream, so the
/// estimate is deterministic given the seed.
pub fn desirability_mc<P: NoisePredictor + ?Sized>(
    model: &P,
    loss: &dyn LossFunction,
    x_t: &Tensor,
    t: usize,
    num_traj: usize,
    seed: u64,
) -> Result<f64> {
    if num_traj == 0 {
        return Err(Error::param("need at least one trajectory"));
    }
    x_t.ensure_shape(model.sample_shape())?;
    if t > model.schedule().steps() {
        return Err(Error::param(format!(
            "t = {t} exceeds T = {}",
            model.schedule().steps()
        )));
    }
    if t == 0 {
        return Ok((-loss.loss(x_t)?).exp());
    }
    let mut acc = 0.0;
    for j in 0..num_traj {
        let x0 = rollout(model, x_t.clone(), t, seed, j as u64)?;
        acc += (-loss.loss(&x0)?).exp();
    }
    Ok(acc / num_traj as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::loss::{ConstantLoss, QuadraticLoss};
    use crate::schedule::NoiseSchedule;
    use crate::score::{GmmSpec, ScoreProvider};

    #[test]
    fn trivial_cases() {
        let s = NoiseSchedule::linear(50, 2e-3, 0.4).unwrap();
        let p = ScoreProvider::gmm(GmmSpec::standard_normal(1), s).unwrap();
        let x = Tensor::scalar(0.7);
        let q = QuadraticLoss::new(Tensor::scalar(2.0));
        assert_eq!(
            desirability_mc(&p, &q, &x, 0, 3, 0).unwrap(),
            (-0.5 * 1.3f64 * 1.3).exp()
        );
        assert_eq!(desirability_mc(&p, &ConstantLoss(0.0), &x, 30, 20, 0).unwrap(), 1.0);
        assert!(desirability_mc(&p, &q, &x, 30, 0, 0).is_err());
        let a = desirability_mc(&p, &q, &x, 30, 50, 4).unwrap();
        assert_eq!(a, desirability_mc(&p, &q, &x, 30, 50, 4).unwrap());
    }
}
