//! Momentum SGD.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// `v ← momentum·v − lr·g; w ← w + v`, with velocity kept per parameter name.
#[derive(Clone, Debug)]
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl SgdState {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0,1), got {momentum}"
            )));
        }
        Ok(SgdState {
            learning_rate,
            momentum,
            velocity: BTreeMap::new(),
        })
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor> {
        self.velocity.get(name)
    }

    /// Updates every parameter named in `names`. Each must have a gradient in `grads`.
    pub fn step<'a>(
        &mut self,
        params: &mut ParamStore,
        names: impl IntoIterator<Item = &'a str>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        for name in names {
            let grad = grads
                .get(name)
                .ok_or_else(|| Error::MissingGradient(name.to_string()))?;
            let param = params
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))?;
            if !param.trainable {
                return Err(Error::invalid(format!("parameter `{name}` is frozen")));
            }
            param.value.expect_same_shape(grad)?;
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(grad.shape().to_vec()));
            let (lr, mu) = (self.learning_rate, self.momentum);
            for ((w, vel), g) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(v.data_mut())
                .zip(grad.data())
            {
                *vel = mu * *vel - lr * g;
                *w += *vel;
            }
            if !param.value.all_finite() {
                return Err(Error::NonFinite(format!("parameter `{name}` after update")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(w), true);
        p
    }

    fn grads(g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(g))])
    }

    #[test]
    fn plain_sgd_step() {
        let mut p = single(1.0);
        let mut s = SgdState::new(1e-4, 0.0).unwrap();
        s.step(&mut p, ["w"], &grads(2.0)).unwrap();
        assert!((p.value("w").unwrap().item() - 0.9998).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence() {
        let mut p = single(0.0);
        let mut s = SgdState::new(0.1, 0.9).unwrap();
        s.step(&mut p, ["w"], &grads(1.0)).unwrap();
        assert!((s.velocity("w").unwrap().item() + 0.1).abs() < 1e-15);
        s.step(&mut p, ["w"], &grads(1.0)).unwrap();
        assert!((s.velocity("w").unwrap().item() + 0.19).abs() < 1e-15);
        assert!((p.value("w").unwrap().item() + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_decays_velocity_only() {
        let mut p = single(0.0);
        let mut s = SgdState::new(0.1, 0.9).unwrap();
        s.step(&mut p, ["w"], &grads(1.0)).unwrap();
        let w_before = p.value("w").unwrap().item();
        let mut q = single(3.0);
        let mut fresh = SgdState::new(0.1, 0.9).unwrap();
        fresh.step(&mut q, ["w"], &grads(0.0)).unwrap();
        assert_eq!(q.value("w").unwrap().item(), 3.0);
        s.step(&mut p, ["w"], &grads(0.0)).unwrap();
        assert!((s.velocity("w").unwrap().item() + 0.09).abs() < 1e-15);
        assert!((p.value("w").unwrap().item() - (w_before - 0.09)).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = single(0.0);
        let mut s = SgdState::new(0.1, 0.9).unwrap();
        let err = s.step(&mut p, ["w"], &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(n) if n == "w"));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(SgdState::new(0.0, 0.9).is_err());
        assert!(SgdState::new(0.1, 1.0).is_err());
    }
}
