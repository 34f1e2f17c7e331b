use serde::{Deserialize, Serialize};

use super::{GradBuffer, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Moment buffers and step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One ADAM update over every trainable parameter.
    ///
    /// Weight decay is decoupled: `θ ← θ − lr·wd·θ` happens before the moment
    /// update. A non-finite gradient anywhere aborts the whole step with no
    /// parameter touched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &GradBuffer<T>, cfg: &AdamConfig) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::InvalidArgument("optimizer state does not match parameter store".into()));
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(cfg.beta1);
        let b2 = T::from_f64_lossy(cfg.beta2);
        let one = T::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = T::from_f64_lossy(cfg.lr);
        let decay = T::from_f64_lossy(cfg.lr * cfg.weight_decay);
        let eps = T::from_f64_lossy(cfg.eps);
        for id in store.ids().collect::<Vec<_>>() {
            if !store.is_trainable(id) {
                continue;
            }
            let g = grads.get(id).data();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let theta = store.value_mut(id).data_mut();
            for j in 0..theta.len() {
                theta[j] = theta[j] - decay * theta[j];
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                theta[j] = theta[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn single(theta: f64, grad: f64) -> (ParamStore<f64>, GradBuffer<f64>) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(theta)).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let s = tape.scale(w, grad).unwrap();
        let loss = tape.sum(s).unwrap();
        let g = tape.backward(loss).unwrap();
        let mut buf = GradBuffer::zeros_like(&store);
        buf.accumulate(&tape, &g, 1.0);
        (store, buf)
    }

    #[test]
    fn zero_grad_without_decay_is_identity() {
        let (mut store, buf) = single(0.7, 0.0);
        let mut st = AdamState::new(&store);
        let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
        st.step(&mut store, &buf, &cfg).unwrap();
        assert_eq!(store.value(store.id("w").unwrap()).item(), 0.7);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut store, buf) = single(0.0, 3.0);
        let mut st = AdamState::new(&store);
        let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
        st.step(&mut store, &buf, &cfg).unwrap();
        // m̂ = 3, v̂ = 9 → Δ = -lr · 3 / (3 + eps)
        let expected = -1e-3 * 3.0 / (3.0 + 1e-8);
        assert!((store.value(store.id("w").unwrap()).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_hand_recurrence() {
        let (mut store, buf) = single(0.25, -1.5);
        let mut st = AdamState::new(&store);
        let cfg = AdamConfig { weight_decay: 1e-2, ..Default::default() };
        st.step(&mut store, &buf, &cfg).unwrap();
        st.step(&mut store, &buf, &cfg).unwrap();

        let (lr, b1, b2, eps, wd, g) = (1e-3, 0.9f64, 0.999f64, 1e-8, 1e-2, -1.5);
        let (mut th, mut m, mut v) = (0.25f64, 0.0, 0.0);
        for t in 1..=2 {
            th -= lr * wd * th;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            th -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((store.value(store.id("w").unwrap()).item() - th).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_is_rejected_without_update() {
        let (mut store, buf) = single(0.5, f64::NAN);
        let mut st = AdamState::new(&store);
        assert!(st.step(&mut store, &buf, &AdamConfig::default()).is_err());
        assert_eq!(store.value(store.id("w").unwrap()).item(), 0.5);
        assert_eq!(st.step_count(), 0);
    }
}
