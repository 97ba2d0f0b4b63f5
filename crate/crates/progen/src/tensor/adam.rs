//! Bias-corrected Adam over a parameter store, with per-group learning rates.

use super::{ParamGroup, ParameterStore, TensorError};

/// Learning rates per parameter group.
#[derive(Debug, Clone, Copy)]
pub struct LearningRates {
    pub visual: f64,
    pub other: f64,
}

impl LearningRates {
    pub fn uniform(lr: f64) -> Self {
        Self { visual: lr, other: lr }
    }

    fn for_group(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Visual => self.visual,
            ParamGroup::Other => self.other,
        }
    }
}

/// Adam state: first/second moment buffers aligned with the store.
#[derive(Debug, Clone)]
pub struct Adam {
    lrs: LearningRates,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParameterStore, lrs: LearningRates) -> Self {
        Self {
            lrs,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: store.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: store.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Requires every parameter's gradient to be populated;
    /// consumes and zeroes the gradients.
    pub fn step(&mut self, store: &mut ParameterStore) -> Result<(), TensorError> {
        for p in store.iter() {
            if !p.has_grad {
                return Err(TensorError::MissingGrad { name: p.name.clone() });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (idx, p) in store.params_mut().iter_mut().enumerate() {
            let lr = self.lrs.for_group(p.group);
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] -= lr * mhat / (vhat.sqrt() + self.eps);
                p.grad[i] = 0.0;
            }
            p.has_grad = false;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamGroup;

    fn store_with(pairs: &[(&str, f64, ParamGroup)]) -> ParameterStore {
        let mut store = ParameterStore::new();
        for (name, value, group) in pairs {
            store.register(name, vec![1], vec![*value], *group).unwrap();
        }
        store
    }

    fn set_grad(store: &mut ParameterStore, name: &str, g: f64) {
        let id = store.id_of(name).unwrap();
        let idx = store.iter().position(|p| p.name == name).unwrap();
        let _ = id;
        store.params_mut()[idx].grad[0] = g;
        store.params_mut()[idx].has_grad = true;
    }

    #[test]
    fn zero_grad_leaves_parameters_unchanged() {
        let mut store = store_with(&[("w", 1.5, ParamGroup::Other)]);
        set_grad(&mut store, "w", 0.0);
        let mut adam = Adam::new(&store, LearningRates::uniform(0.1));
        adam.step(&mut store).unwrap();
        assert_eq!(store.get(store.id_of("w").unwrap()).value[0], 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Hand-executed update: m̂ = v̂ = 1 at step 1 for g = 1, so the
        // displacement is lr / (1 + eps·adjust) ≈ lr.
        let mut store = store_with(&[("w", 0.0, ParamGroup::Other)]);
        set_grad(&mut store, "w", 1.0);
        let mut adam = Adam::new(&store, LearningRates::uniform(0.1));
        adam.step(&mut store).unwrap();
        let w = store.get(store.id_of("w").unwrap()).value[0];
        assert!((w + 0.1).abs() < 1e-8, "got {w}");
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn groups_update_at_their_own_rates() {
        let mut store = store_with(&[
            ("backbone.k", 0.0, ParamGroup::Visual),
            ("head.w", 0.0, ParamGroup::Other),
        ]);
        set_grad(&mut store, "backbone.k", 1.0);
        set_grad(&mut store, "head.w", 1.0);
        let mut adam = Adam::new(
            &store,
            LearningRates { visual: 5e-5, other: 1e-4 },
        );
        adam.step(&mut store).unwrap();
        let visual = store.get(store.id_of("backbone.k").unwrap()).value[0];
        let other = store.get(store.id_of("head.w").unwrap()).value[0];
        assert!((visual + 5e-5).abs() < 1e-9);
        assert!((other + 1e-4).abs() < 1e-9);
    }

    #[test]
    fn missing_grad_is_a_contract_error() {
        let mut store = store_with(&[("w", 0.0, ParamGroup::Other)]);
        let mut adam = Adam::new(&store, LearningRates::uniform(0.1));
        assert!(matches!(
            adam.step(&mut store),
            Err(TensorError::MissingGrad { .. })
        ));
    }

    #[test]
    fn grads_zeroed_after_step() {
        let mut store = store_with(&[("w", 0.0, ParamGroup::Other)]);
        set_grad(&mut store, "w", 2.0);
        let mut adam = Adam::new(&store, LearningRates::uniform(0.1));
        adam.step(&mut store).unwrap();
        let p = store.get(store.id_of("w").unwrap());
        assert_eq!(p.grad[0], 0.0);
        assert!(!p.has_grad);
    }
}
