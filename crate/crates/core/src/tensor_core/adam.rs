use super::params::ParamStore;
use super::tensor::Real;
use crate::error::{Error, Result};

/// Bias-corrected Adam with per-parameter moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Moments in parameter order, for checkpointing.
    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    /// Restores a saved state. Moment lengths are validated on the next step.
    pub fn restore(&mut self, step: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }

    /// Applies one update to every parameter of `store` and then clears the
    /// gradients. Fails before touching anything if a gradient is missing.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (_, name, t) in store.iter() {
            if t.grad().is_none() {
                return Err(Error::MissingGradient(name.to_string()));
            }
        }
        if self.m.is_empty() {
            self.m = store.iter().map(|(_, _, t)| vec![0.0; t.shape().numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != store.len() {
            return Err(Error::Invalid(format!(
                "optimizer holds {} moment buffers for {} parameters",
                self.m.len(),
                store.len()
            )));
        }
        for (i, (_, name, t)) in store.iter().enumerate() {
            if self.m[i].len() != t.shape().numel() || self.v[i].len() != t.shape().numel() {
                return Err(Error::Invalid(format!("moment shape mismatch for {name}")));
            }
        }
        self.step += 1;
        let t_step = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t_step);
        let bc2 = 1.0 - self.beta2.powf(t_step);
        let (b1, b2) = (self.beta1, self.beta2);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let param = store.get_mut(id);
            let grad = param.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (p, g)) in param.data_mut().iter_mut().zip(grad).enumerate() {
                let g = g.as_f64();
                let mj = b1 * m[j] as f64 + (1.0 - b1) * g;
                let vj = b2 * v[j] as f64 + (1.0 - b2) * g * g;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let update = self.lr * (mj / bc1) / ((vj / bc2).sqrt() + self.eps);
                *p -= T::lit(update);
            }
        }
        store.clear_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::{Shape, Tensor};

    fn scalar_store(x: f64) -> (ParamStore<f64>, crate::tensor_core::ParamId) {
        let mut store = ParamStore::new();
        let id = store
            .add("x", Tensor::full(Shape::new(1, 1, 1, 1), x))
            .unwrap();
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let (mut store, id) = scalar_store(0.7);
        store.get_mut(id).set_grad(Some(vec![0.0])).unwrap();
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut store).unwrap();
        assert_eq!(store.get(id).data()[0], 0.7);
        assert_eq!(adam.step_count(), 1);
        assert!(store.get(id).grad().is_none());
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut store, id) = scalar_store(0.0);
        store.get_mut(id).set_grad(Some(vec![1.0])).unwrap();
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut store).unwrap();
        assert!((store.get(id).data()[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn missing_gradient_rejected() {
        let (mut store, _) = scalar_store(1.0);
        let mut adam = AdamState::new(1e-3);
        let err = adam.step(&mut store).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "x"));
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn quadratic_descent_is_monotone_after_warmup() {
        let (mut store, id) = scalar_store(1.0);
        let mut adam = AdamState::new(1e-2);
        let mut history = Vec::new();
        for _ in 0..50 {
            let x = store.get(id).data()[0];
            store.get_mut(id).set_grad(Some(vec![2.0 * x])).unwrap();
            adam.step(&mut store).unwrap();
            history.push(store.get(id).data()[0].abs());
        }
        assert!(history.windows(2).skip(1).all(|w| w[1] < w[0]));
        assert!(history[49] < 0.7);
    }
}
