use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    /// Applies one update to every trainable parameter, then zeroes all grads.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        for p in store.iter() {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGrad(p.name.clone()));
            }
        }
        match *self {
            Optimizer::Sgd { lr } => {
                for p in store.params_mut().iter_mut().filter(|p| p.trainable) {
                    for (v, g) in p.value.data_mut().iter_mut().zip(&p.grad) {
                        *v -= lr * g;
                    }
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                store.adam_t += 1;
                let t = store.adam_t as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for p in store.params_mut().iter_mut().filter(|p| p.trainable) {
                    let values = p.value.data_mut();
                    for k in 0..values.len() {
                        let g = p.grad[k];
                        p.adam_m[k] = beta1 * p.adam_m[k] + (1.0 - beta1) * g;
                        p.adam_v[k] = beta2 * p.adam_v[k] + (1.0 - beta2) * g * g;
                        let m_hat = p.adam_m[k] / bc1;
                        let v_hat = p.adam_v[k] / bc2;
                        values[k] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        store.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn scalar_store(v: f64, g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::vector(vec![v])).unwrap();
        s.accumulate_grads(&[crate::autodiff::ParamGrad { param: id, offset: 0, values: vec![g] }], 1.0);
        s
    }

    #[test]
    fn sgd_step() {
        let mut s = scalar_store(0.0, 1.0);
        Optimizer::sgd(0.1).step(&mut s).unwrap();
        let id = s.id("p").unwrap();
        assert_eq!(s.value(id).data(), &[-0.1]);
        assert_eq!(s.grad(id), &[0.0]);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        for g in [1e-3, 0.5, 7.0, -120.0] {
            let mut s = scalar_store(0.0, g);
            Optimizer::adam(0.003).step(&mut s).unwrap();
            let p = s.value(s.id("p").unwrap()).data()[0];
            let expected = -0.003 * g / (g.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15, "g={g}: {p} vs {expected}");
            assert!((p.abs() - 0.003).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_grad_leaves_param_unchanged() {
        for opt in [Optimizer::sgd(0.1), Optimizer::adam(0.1)] {
            let mut s = scalar_store(0.25, 0.0);
            opt.step(&mut s).unwrap();
            assert_eq!(s.value(s.id("p").unwrap()).data(), &[0.25]);
        }
    }

    #[test]
    fn nan_grad_aborts_with_name() {
        let mut s = scalar_store(0.0, f64::NAN);
        let err = Optimizer::sgd(0.1).step(&mut s).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGrad(ref n) if n == "p"));
        assert_eq!(s.value(s.id("p").unwrap()).data(), &[0.0]);
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut s = scalar_store(1.0, 1.0);
        let id = s.id("p").unwrap();
        s.set_trainable(id, false);
        Optimizer::adam(0.1).step(&mut s).unwrap();
        assert_eq!(s.value(id).data(), &[1.0]);
    }
}
