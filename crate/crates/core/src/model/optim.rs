//! AdamW with decoupled weight decay. One optimizer instance per parameter
//! store per phase; moment buffers are laid out parallel to the store.

use super::params::ParamStore;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update from `grads` (parallel to the store's params).
    /// Non-trainable params are skipped entirely, weight decay included.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) {
        assert_eq!(grads.len(), store.len(), "gradient layout mismatch");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for pid in 0..store.len() {
            if !store.get(pid).trainable {
                continue;
            }
            let g = &grads[pid];
            let m = &mut self.m[pid];
            let v = &mut self.v[pid];
            let data = &mut store.get_mut(pid).data;
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * data[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param_store(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", "g", 1, 1, vec![value]);
        s
    }

    #[test]
    fn descends_a_quadratic() {
        // minimize (w - 3)^2 from w = 0
        let mut store = one_param_store(0.0);
        let mut opt = AdamW::new(0.1, 1e-8, 0.0);
        for _ in 0..200 {
            let w = store.get(0).data[0];
            let grad = vec![vec![2.0 * (w - 3.0)]];
            opt.step(&mut store, &grad);
        }
        assert!((store.get(0).data[0] - 3.0).abs() < 0.05);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut store = one_param_store(1.0);
        store.set_trainable_where(|_| true, false);
        let mut opt = AdamW::new(0.1, 1e-8, 0.01);
        opt.step(&mut store, &[vec![5.0]]);
        assert_eq!(store.get(0).data[0], 1.0);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut store = one_param_store(1.0);
        let mut opt = AdamW::new(0.1, 1e-8, 0.5);
        opt.step(&mut store, &[vec![0.0]]);
        assert!(store.get(0).data[0] < 1.0);
    }
}
