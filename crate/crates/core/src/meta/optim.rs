use crate::autodiff::Tensor;

use super::{MetaError, OuterOptimizerKind};

/// State of the outer-loop optimizer: Adam moments per parameter tensor, or
/// plain gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterOptimizerState {
    pub kind: OuterOptimizerKind,
    pub rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl OuterOptimizerState {
    pub fn adam(rate: f64, params: &[Tensor]) -> Self {
        OuterOptimizerState {
            kind: OuterOptimizerKind::Adam,
            rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn sgd(rate: f64) -> Self {
        OuterOptimizerState {
            kind: OuterOptimizerKind::Sgd,
            rate,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            step: 0,
            first_moment: vec![],
            second_moment: vec![],
        }
    }

    pub fn new(kind: OuterOptimizerKind, rate: f64, params: &[Tensor]) -> Self {
        match kind {
            OuterOptimizerKind::Adam => Self::adam(rate, params),
            OuterOptimizerKind::Sgd => Self::sgd(rate),
        }
    }

    /// Updates `params` in place from `grads`.
    pub fn apply(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), MetaError> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape()) {
            return Err(MetaError::Shape("gradients do not match parameters".into()));
        }
        self.step += 1;
        match self.kind {
            OuterOptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p = p.zip_same(g, |w, d| w - self.rate * d);
                }
            }
            OuterOptimizerKind::Adam => {
                if self.first_moment.len() != params.len() {
                    return Err(MetaError::Shape("optimizer state does not match parameters".into()));
                }
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                for i in 0..params.len() {
                    let m = self.first_moment[i].zip_same(&grads[i], |m, g| b1 * m + (1.0 - b1) * g);
                    let v = self.second_moment[i].zip_same(&grads[i], |v, g| b2 * v + (1.0 - b2) * g * g);
                    let update = m.zip_same(&v, |m, v| (m / c1) / ((v / c2).sqrt() + self.eps));
                    params[i] = params[i].zip_same(&update, |w, u| w - self.rate * u);
                    self.first_moment[i] = m;
                    self.second_moment[i] = v;
                }
            }
        }
        Ok(())
    }
}
