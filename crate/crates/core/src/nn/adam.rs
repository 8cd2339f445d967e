use serde::{Deserialize, Serialize};

use super::checkpoint::Archive;
use super::params::{Gradients, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive moment estimation with bias correction. Moments are kept per
/// parameter; parameters without a gradient in a step are left untouched.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(store: &ParamStore<F>, config: AdamConfig) -> Self {
        let zeros = |_| {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.rows, p.value.cols))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            m: zeros(()),
            v: zeros(()),
        }
    }

    pub fn apply(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFiniteLoss("non-finite gradient".into()));
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (F::c(c.beta1), F::c(c.beta2));
        let bc1 = F::c(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = F::c(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (F::c(c.lr), F::c(c.eps));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let p = store.get_mut(id);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (F::one() - b1) * gi;
                v.data[i] = b2 * v.data[i] + (F::one() - b2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        if !store.all_finite() {
            return Err(Error::NonFiniteLoss("parameters became non-finite".into()));
        }
        Ok(())
    }
}

impl<F: Real> Adam<F> {
    pub fn save_to(&self, ar: &mut Archive, prefix: &str) {
        ar.put_u64(&format!("{prefix}/step"), &[self.step]);
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            ar.put_real(&format!("{prefix}/m/{i}"), vec![m.rows, m.cols], &m.data);
            ar.put_real(&format!("{prefix}/v/{i}"), vec![v.rows, v.cols], &v.data);
        }
    }

    pub fn load_from(&mut self, ar: &Archive, prefix: &str) -> Result<()> {
        self.step = ar.get_u64(&format!("{prefix}/step"))?[0];
        for i in 0..self.m.len() {
            for (slot, key) in [(&mut self.m[i], "m"), (&mut self.v[i], "v")] {
                let (_, data) = ar.get_real::<F>(&format!("{prefix}/{key}/{i}"))?;
                if data.len() != slot.len() {
                    return Err(Error::BadCheckpoint(format!("optimizer moment {prefix}/{key}/{i}")));
                }
                slot.data = data;
            }
        }
        Ok(())
    }
}

/// Scalar Adam for the entropy temperature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalarAdam {
    pub step: u64,
    pub m: f64,
    pub v: f64,
}

impl ScalarAdam {
    pub fn apply(&mut self, value: &mut f64, grad: f64, c: &AdamConfig) {
        self.step += 1;
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * grad;
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * grad * grad;
        let mh = self.m / (1.0 - c.beta1.powi(self.step as i32));
        let vh = self.v / (1.0 - c.beta2.powi(self.step as i32));
        *value -= c.lr * mh / (vh.sqrt() + c.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamId;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::row(&[1.0, -2.0, 3.5])).unwrap();
        let before = store.get(id).clone();
        let mut adam = Adam::new(&store, AdamConfig::default());
        let mut grads = Gradients::default();
        grads.grads.insert(id, Tensor::zeros(1, 3));
        adam.apply(&mut store, &grads).unwrap();
        assert_eq!(store.get(id), &before);
        // An absent gradient is also a no-op.
        adam.apply(&mut store, &Gradients::default()).unwrap();
        assert_eq!(store.get(id), &before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::scalar(1.0)).unwrap();
        let mut adam = Adam::new(&store, AdamConfig::default());
        let mut grads = Gradients::default();
        grads.grads.insert(ParamId(0), Tensor::scalar(0.5));
        adam.apply(&mut store, &grads).unwrap();
        // Bias-corrected first step is lr * g/|g| (up to eps).
        assert!((store.get(id).item() - (1.0 - 3e-4)).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::row(&[3.0, -4.0])).unwrap();
        let mut adam = Adam::new(
            &store,
            AdamConfig {
                lr: 0.05,
                ..Default::default()
            },
        );
        for _ in 0..2000 {
            let mut grads = Gradients::default();
            grads.grads.insert(id, store.get(id).map(|w| 2.0 * w));
            adam.apply(&mut store, &grads).unwrap();
        }
        assert!(store.get(id).data.iter().all(|w| w.abs() < 1e-2));
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::scalar(0.0)).unwrap();
        let mut adam = Adam::new(&store, AdamConfig::default());
        let mut grads = Gradients::default();
        grads.grads.insert(id, Tensor::scalar(f32::NAN));
        assert!(adam.apply(&mut store, &grads).is_err());
    }
}
