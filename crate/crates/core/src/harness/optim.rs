use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::Scalar;

/// `lr0 * decay^floor(epoch / period)` for 0-based `epoch`.
pub fn lr_at_epoch(lr0: f64, decay: f64, period: usize, epoch: usize) -> f64 {
    lr0 * decay.powi((epoch / period.max(1)) as i32)
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<Option<(Tensor<S>, Tensor<S>)>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`. Each parameter is first shrunk by
    /// `lr * weight_decay` and then moved by the bias-corrected adaptive step.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &[(ParamId, Tensor<S>)], lr: f64) {
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let (one_b1, one_b2) = (S::of(1.0 - self.beta1), S::of(1.0 - self.beta2));
        let shrink = S::of(1.0 - lr * self.weight_decay);
        let step_size = S::of(lr / bc1);
        let bc2_sqrt = S::of(bc2.sqrt());
        let eps = S::of(self.eps);
        for (id, g) in grads {
            let (m, v) = self.moments[id.index()].get_or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let p = store.get_mut(*id);
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p = *p * shrink - step_size * *m / (v.sqrt() / bc2_sqrt + eps);
            }
        }
    }
}
