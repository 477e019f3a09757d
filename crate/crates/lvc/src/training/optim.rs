//! Adam optimizer over a parameter store.

use crate::autograd::Arr;
use crate::coder::params::{ParamId, ParamStore};

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Arr>,
    v: Vec<Arr>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Adam {
        let zeros: Vec<Arr> = store
            .ids()
            .map(|id| Arr::zeros(store.value(id).dim()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update with per-parameter gradients (`None` leaves untouched).
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Arr>]) {
        assert_eq!(grads.len(), store.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for (idx, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = b2 * *v + (1.0 - b2) * g * g;
            });
            let id = ParamId::from_index(idx);
            store.update(id, |p| {
                ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                    let mh = m / bc1;
                    let vh = v / bc2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.define("x", Arr::from_elem((1, 1, 1), 5.0));
        let mut opt = Adam::new(&store, 0.1);
        for _ in 0..200 {
            let x = store.value(id)[(0, 0, 0)];
            let grad = Arr::from_elem((1, 1, 1), 2.0 * x);
            opt.step(&mut store, &[Some(grad)]);
        }
        let x = store.value(id)[(0, 0, 0)];
        assert!(x.abs() < 0.05, "did not converge, x = {x}");
    }

    #[test]
    fn untouched_params_stay_bit_identical() {
        let mut store = ParamStore::new();
        let a = store.define("a", Arr::from_elem((1, 1, 1), 1.25));
        let b = store.define("b", Arr::from_elem((1, 1, 1), -0.5));
        let mut opt = Adam::new(&store, 0.1);
        opt.step(&mut store, &[Some(Arr::from_elem((1, 1, 1), 1.0)), None]);
        assert_ne!(store.value(a)[(0, 0, 0)], 1.25);
        assert_eq!(store.value(b)[(0, 0, 0)], -0.5);
    }
}
