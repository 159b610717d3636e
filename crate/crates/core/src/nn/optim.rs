//! Adaptive-moment optimizer and the cosine learning-rate schedule used
//! by every training task.

use ndarray::ArrayD;

use super::layers::ParamStore;

/// Adam with the usual defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let m = store.iter().map(|(_, p)| ArrayD::zeros(p.raw_dim())).collect();
        let v = store.iter().map(|(_, p)| ArrayD::zeros(p.raw_dim())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[ArrayD<f64>], lr: f64) {
        assert_eq!(grads.len(), store.len(), "gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..grads.len() {
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut *m).and(g).for_each(|mm, &gg| {
                *mm = self.beta1 * *mm + (1.0 - self.beta1) * gg;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|vv, &gg| {
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gg * gg;
            });
            let p = store.value_mut(super::layers::ParamId(i));
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|pp, &mm, &vv| {
                let m_hat = mm / bc1;
                let v_hat = vv / bc2;
                *pp -= lr * m_hat / (v_hat.sqrt() + self.eps);
            });
        }
    }
}

/// Cosine decay from `base` to `min_lr` over `total_steps` steps.
pub fn cosine_lr(base: f64, min_lr: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps <= 1 {
        return base;
    }
    let frac = (step.min(total_steps - 1)) as f64 / (total_steps - 1) as f64;
    min_lr + 0.5 * (base - min_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize f(p) = sum(p^2); gradient 2p
        let mut store = ParamStore::new();
        let id = store.add("p", ArrayD::from_elem(IxDyn(&[4]), 2.0));
        let mut opt = Adam::new(&store);
        for _ in 0..500 {
            let grad = store.value(id).mapv(|p| 2.0 * p);
            opt.step(&mut store, &[grad], 0.05);
        }
        assert!(store.value(id).iter().all(|&p| p.abs() < 1e-2));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let base = 2e-4;
        let min = 1e-6;
        assert!((cosine_lr(base, min, 0, 100) - base).abs() < 1e-12);
        assert!((cosine_lr(base, min, 99, 100) - min).abs() < 1e-12);
        assert!(cosine_lr(base, min, 50, 100) < base);
        assert!(cosine_lr(base, min, 50, 100) > min);
    }
}
