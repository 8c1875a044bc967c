use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update from the store's gradient buffers,
    /// which are zeroed afterwards.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {lr}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let grad = store.get(id).grad.data().to_vec();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let value = store.value_mut(id).data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            if value.iter().any(|x| !x.is_finite()) {
                return Err(Error::numeric(format!("adam_step ({})", store.get(id).name)));
            }
        }
        store.zero_grad();
        Ok(())
    }
}
