//! Rule losses evaluated on clean-space estimates.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A terminal cost `l_y(x)` on clean space.
///
/// Implementations must be deterministic and re-entrant. Differentiable
/// losses override [`LossFunction::gradient`]; the default reports that no
/// gradient exists, which is the normal state of affairs for musical rules.
pub trait LossFunction: Send + Sync {
    fn loss(&self, x: &Tensor) -> Result<f64>;

    fn differentiable(&self) -> bool {
        false
    }

    fn gradient(&self, _x: &Tensor) -> Result<Tensor> {
        Err(Error::Capability("loss has no analytic gradient".into()))
    }
}

impl<L: LossFunction + ?Sized> LossFunction for &L {
    fn loss(&self, x: &Tensor) -> Result<f64> {
        (**self).loss(x)
    }
    fn differentiable(&self) -> bool {
        (**self).differentiable()
    }
    fn gradient(&self, x: &Tensor) -> Result<Tensor> {
        (**self).gradient(x)
    }
}

impl<L: LossFunction + ?Sized> LossFunction for Arc<L> {
    fn loss(&self, x: &Tensor) -> Result<f64> {
        (**self).loss(x)
    }
    fn differentiable(&self) -> bool {
        (**self).differentiable()
    }
    fn gradient(&self, x: &Tensor) -> Result<Tensor> {
        (**self).gradient(x)
    }
}

/// `weight / 2 * ||x - center||^2`.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    pub center: Tensor,
    pub weight: f64,
}

impl QuadraticLoss {
    pub fn new(center: Tensor) -> Self {
        Self { center, weight: 1.0 }
    }

    pub fn with_weight(center: Tensor, weight: f64) -> Self {
        Self { center, weight }
    }
}

impl LossFunction for QuadraticLoss {
    fn loss(&self, x: &Tensor) -> Result<f64> {
        x.ensure_same_shape(&self.center)?;
        let sq: f64 = x
            .data()
            .iter()
            .zip(self.center.data())
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        Ok(0.5 * self.weight * sq)
    }

    fn differentiable(&self) -> bool {
        true
    }

    fn gradient(&self, x: &Tensor) -> Result<Tensor> {
        x.lincomb(self.weight, &self.center, -self.weight)
    }
}

/// Zero when coordinate `index` exceeds `threshold`, `penalty` otherwise.
#[derive(Debug, Clone)]
pub struct StepLoss {
    pub index: usize,
    pub threshold: f64,
    pub penalty: f64,
}

impl StepLoss {
    pub fn new(threshold: f64, penalty: f64) -> Self {
        Self {
            index: 0,
            threshold,
            penalty,
        }
    }
}

impl LossFunction for StepLoss {
    fn loss(&self, x: &Tensor) -> Result<f64> {
        let v = x
            .data()
            .get(self.index)
            .ok_or_else(|| Error::param(format!("step loss index {} out of range", self.index)))?;
        Ok(if *v > self.threshold { 0.0 } else { self.penalty })
    }
}

/// Constant loss; guidance with it must reduce to the unguided sampler.
#[derive(Debug, Clone, Copy)]
pub struct ConstantLoss(pub f64);

impl LossFunction for ConstantLoss {
    fn loss(&self, _x: &Tensor) -> Result<f64> {
        Ok(self.0)
    }

    fn differentiable(&self) -> bool {
        true
    }

    fn gradient(&self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::zeros(x.shape()))
    }
}

/// Wraps a closure as a black-box loss.
pub struct FnLoss<F>(pub F);

impl<F> LossFunction for FnLoss<F>
where
    F: Fn(&Tensor) -> Result<f64> + Send + Sync,
{
    fn loss(&self, x: &Tensor) -> Result<f64> {
        (self.0)(x)
    }
}

/// `sum_i w_i l_i(x)`; differentiable only if every part is.
#[derive(Clone, Default)]
pub struct WeightedLoss {
    parts: Vec<(f64, Arc<dyn LossFunction>)>,
}

impl WeightedLoss {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, weight: f64, loss: impl LossFunction + 'static) -> Self {
        self.parts.push((weight, Arc::new(loss)));
        self
    }

    pub fn push(&mut self, weight: f64, loss: Arc<dyn LossFunction>) {
        self.parts.push((weight, loss));
    }

    pub fn parts(&self) -> &[(f64, Arc<dyn LossFunction>)] {
        &self.parts
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// The differentiable parts only, as their own weighted loss.
    pub fn differentiable_parts(&self) -> WeightedLoss {
        Self {
            parts: self.parts.iter().filter(|(_, l)| l.differentiable()).cloned().collect(),
        }
    }
}

impl LossFunction for WeightedLoss {
    fn loss(&self, x: &Tensor) -> Result<f64> {
        let mut total = 0.0;
        for (w, l) in &self.parts {
            if *w != 0.0 {
                total += w * l.loss(x)?;
            }
        }
        Ok(total)
    }

    fn differentiable(&self) -> bool {
        self.parts.iter().all(|(_, l)| l.differentiable())
    }

    fn gradient(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Tensor::zeros(x.shape());
        for (w, l) in &self.parts {
            if *w != 0.0 {
                g.add_scaled(&l.gradient(x)?, *w)?;
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches_fd() {
        let l = QuadraticLoss::with_weight(Tensor::vector(vec![1.0, -2.0]), 3.0);
        let x = Tensor::vector(vec![0.3, 0.7]);
        let g = l.gradient(&x).unwrap();
        for i in 0..2 {
            let h = 1e-6;
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (l.loss(&xp).unwrap() - l.loss(&xm).unwrap()) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn step_has_no_gradient() {
        let l = StepLoss::new(0.0, 5.0);
        assert_eq!(l.loss(&Tensor::scalar(0.1)).unwrap(), 0.0);
        assert_eq!(l.loss(&Tensor::scalar(0.0)).unwrap(), 5.0);
        assert!(matches!(l.gradient(&Tensor::scalar(1.0)), Err(Error::Capability(_))));
    }

    #[test]
    fn weighted_composition() {
        let c = Tensor::scalar(2.0);
        let w = WeightedLoss::new()
            .with(2.0, QuadraticLoss::new(c))
            .with(1.0, StepLoss::new(0.0, 5.0));
        assert!(!w.differentiable());
        assert_eq!(w.loss(&Tensor::scalar(-1.0)).unwrap(), 2.0 * 4.5 + 5.0);
        let d = w.differentiable_parts();
        assert!(d.differentiable());
        assert_eq!(d.parts().len(), 1);
        assert_eq!(d.gradient(&Tensor::scalar(-1.0)).unwrap().data(), &[-6.0]);
    }
}
