//! AdamW: Adam with decoupled weight decay. Decay applies only to matrix and
//! convolution weights (tensors with 2+ axes), not to biases or norm gains.

use super::store::ParamStore;
use ndarray::ArrayD;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> AdamW {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: store
                .entries
                .iter()
                .map(|e| ArrayD::zeros(e.value.raw_dim()))
                .collect(),
            v: store
                .entries
                .iter()
                .map(|e| ArrayD::zeros(e.value.raw_dim()))
                .collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[ArrayD<f64>]) {
        assert_eq!(grads.len(), store.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..grads.len() {
            let decay = if store.value(i).ndim() >= 2 {
                self.weight_decay
            } else {
                0.0
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(m).and(&grads[i]).for_each(|m, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            });
            ndarray::Zip::from(v).and(&grads[i]).for_each(|v, &g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            });
            let lr = self.lr;
            let eps = self.eps;
            let (m, v) = (&self.m[i], &self.v[i]);
            let value = store.value_mut(i);
            ndarray::Zip::from(value)
                .and(m)
                .and(v)
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p -= lr * (mhat / (vhat.sqrt() + eps) + decay * *p);
                });
        }
    }

    /// Serializes optimizer state (moment tensors and step count) for exact
    /// training resume.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.t.to_le_bytes());
        for arr in self.m.iter().chain(self.v.iter()) {
            for &x in arr.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn load_state_bytes(&mut self, bytes: &[u8]) -> Result<(), String> {
        let expected = 8 + 8 * (self.m.iter().map(|a| a.len()).sum::<usize>() * 2);
        if bytes.len() != expected {
            return Err(format!(
                "optimizer state is {} bytes, expected {expected}",
                bytes.len()
            ));
        }
        self.t = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let mut off = 8;
        for arr in self.m.iter_mut().chain(self.v.iter_mut()) {
            for x in arr.iter_mut() {
                *x = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
                off += 8;
            }
        }
        Ok(())
    }
}
