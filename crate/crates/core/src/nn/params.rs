//! Named parameter arrays.

use std::collections::HashMap;

use rand::Rng;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
}

/// Owns every trainable array of one network family (actor, critics, ...).
/// Shapes are fixed once a parameter is registered.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    index: HashMap<String, ParamId>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, value });
        Ok(id)
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::from_fn(rows, cols, |_, _| F::c(rng.random_range(-bound..bound)));
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Replace the values of a parameter; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<F>) -> Result<()> {
        let slot = &mut self.params[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter `{}` is {:?}, got {:?}",
                slot.name,
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = value;
        Ok(())
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].value
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Flat view over every scalar, used by finite-difference checks.
    pub fn scalar_mut(&mut self, flat: usize) -> &mut F {
        let mut rest = flat;
        for p in &mut self.params {
            if rest < p.value.len() {
                return &mut p.value.data[rest];
            }
            rest -= p.value.len();
        }
        panic!("flat parameter index {flat} out of range");
    }

    /// Polyak averaging: `self <- (1 - tau) * self + tau * online`.
    pub fn soft_update_from(&mut self, online: &Self, tau: F) -> Result<()> {
        if !self.same_layout(online) {
            return Err(Error::ShapeMismatch(
                "target and online parameter layouts differ".into(),
            ));
        }
        let keep = F::one() - tau;
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            for (tv, &ov) in t.value.data.iter_mut().zip(&o.value.data) {
                *tv = keep * *tv + tau * ov;
            }
        }
        Ok(())
    }
}

/// Gradients keyed by parameter. Missing entries mean "not reachable".
#[derive(Clone, Debug, Default)]
pub struct Gradients<F> {
    pub grads: HashMap<ParamId, Tensor<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.grads.get(&id)
    }

    /// Gradient of `id`, zero-filled when the parameter was unreachable.
    pub fn dense(&self, store: &ParamStore<F>, id: ParamId) -> Tensor<F> {
        match self.grads.get(&id) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = store.get(id).shape();
                Tensor::zeros(r, c)
            }
        }
    }

    /// Flattened in store order (same order as `ParamStore::scalar_mut`).
    pub fn flatten(&self, store: &ParamStore<F>) -> Vec<F> {
        store
            .ids()
            .flat_map(|id| self.dense(store, id).data)
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(|g| g.all_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_update_endpoints() {
        let mut target = ParamStore::<f64>::new();
        target.add("w", Tensor::scalar(0.0)).unwrap();
        let mut online = ParamStore::<f64>::new();
        online.add("w", Tensor::scalar(1.0)).unwrap();

        let mut t = target.clone();
        t.soft_update_from(&online, 1.0).unwrap();
        assert_eq!(t.get(ParamId(0)).item(), 1.0);

        let mut t = target.clone();
        t.soft_update_from(&online, 0.0).unwrap();
        assert_eq!(t.get(ParamId(0)).item(), 0.0);

        let mut t = target.clone();
        t.soft_update_from(&online, 0.005).unwrap();
        assert!((t.get(ParamId(0)).item() - 0.005).abs() < 1e-15);
    }

    #[test]
    fn soft_update_rejects_layout_mismatch() {
        let mut target = ParamStore::<f32>::new();
        target.add("w", Tensor::zeros(2, 2)).unwrap();
        let mut online = ParamStore::<f32>::new();
        online.add("w", Tensor::zeros(2, 3)).unwrap();
        assert!(matches!(
            target.soft_update_from(&online, 0.5),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn names_are_unique_and_shapes_fixed() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add("a", Tensor::zeros(1, 3)).unwrap();
        assert!(s.add("a", Tensor::zeros(1, 3)).is_err());
        assert!(s.set(id, Tensor::zeros(3, 1)).is_err());
        assert!(s.set(id, Tensor::filled(1, 3, 2.0)).is_ok());
    }
}
