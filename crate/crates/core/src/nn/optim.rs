use crate::nn::params::ParameterStore;
use crate::scalar::Real;

pub const DEFAULT_LR: f64 = 5e-4;
pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;

/// Adam with decoupled weight decay.
///
/// Per step: `theta *= 1 - lr * wd`, then the bias-corrected Adam update
/// `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            ..Self::default()
        }
    }

    /// Applies one update using the gradients stored in `store`.
    pub fn step<T: Real>(&self, store: &mut ParameterStore<T>) {
        store.step += 1;
        let t = store.step as i32;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = T::lit(self.lr);
        let decay = one - lr * T::lit(self.weight_decay);
        let eps = T::lit(self.eps);
        for p in store.iter_mut() {
            let data = p.value.data_mut();
            for i in 0..data.len() {
                let g = p.grad[i];
                let m = b1 * p.first_moment[i] + (one - b1) * g;
                let v = b2 * p.second_moment[i] + (one - b2) * g * g;
                p.first_moment[i] = m;
                p.second_moment[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                data[i] = data[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// One AdamW step with default betas and epsilon.
pub fn optimizer_step<T: Real>(store: &mut ParameterStore<T>, lr: f64, weight_decay: f64) {
    AdamW::new(lr, weight_decay).step(store);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut s = ParameterStore::<f64>::new(3);
        s.add_uniform("w", vec![5], 1.0).unwrap();
        let before = s.iter().next().unwrap().value.clone();
        optimizer_step(&mut s, 5e-4, 0.0);
        assert_eq!(s.iter().next().unwrap().value, before);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn scalar_step_matches_hand_recurrence() {
        let mut s = ParameterStore::<f64>::new(0);
        let id = s.add("x", Tensor::scalar(2.0)).unwrap();
        s.get_mut(id).grad[0] = 0.5;
        let (lr, wd) = (0.1, 0.01);
        optimizer_step(&mut s, lr, wd);
        // m = 0.05, v = 0.00025; m_hat = 0.5, v_hat = 0.25
        let expected = 2.0 * (1.0 - lr * wd) - lr * 0.5 / (0.5 + 1e-8);
        assert!((s.get(id).value.item() - expected).abs() < 1e-12);

        s.get_mut(id).grad[0] = -1.0;
        let x1 = s.get(id).value.item();
        optimizer_step(&mut s, lr, wd);
        let m: f64 = 0.9 * 0.05 + -0.1;
        let v: f64 = 0.999 * 0.00025 + 0.001 * 1.0;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let expected = x1 * (1.0 - lr * wd) - lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((s.get(id).value.item() - expected).abs() < 1e-12);
    }

    #[test]
    fn defaults() {
        let a = AdamW::default();
        assert_eq!((a.lr, a.weight_decay), (5e-4, 5e-4));
    }
}
