//! AdamW with decoupled weight decay, plus the epoch-linear warmup schedule.

use crate::error::{FocusError, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug)]
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
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, kept in the store's parameter order.
pub struct AdamW {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> AdamW {
        let m = store.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let v = store.iter().map(|p| vec![0.0; p.data.len()]).collect();
        AdamW { cfg, m, v, t: 0 }
    }

    /// Rebuild an optimizer mid-run from checkpointed moments.
    pub fn restore(
        cfg: AdamConfig,
        store: &ParamStore,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        t: u64,
    ) -> Result<AdamW> {
        let sizes: Vec<usize> = store.iter().map(|p| p.data.len()).collect();
        let m_ok = m.len() == sizes.len() && m.iter().zip(&sizes).all(|(s, &n)| s.len() == n);
        let v_ok = v.len() == sizes.len() && v.iter().zip(&sizes).all(|(s, &n)| s.len() == n);
        if !m_ok || !v_ok {
            return Err(FocusError::Format(
                "optimizer state does not match the parameter store layout".into(),
            ));
        }
        Ok(AdamW { cfg, m, v, t })
    }

    pub fn state(&self) -> (&[Vec<f64>], &[Vec<f64>], u64) {
        (&self.m, &self.v, self.t)
    }

    /// One update from the gradients currently held in the store.
    /// `lr_scale` multiplies the base learning rate (warmup).
    pub fn step(&mut self, store: &mut ParamStore, lr_scale: f64) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(FocusError::Config(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.t += 1;
        let lr = self.cfg.lr * lr_scale;
        let bias1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for (i, p) in store.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let g = p.grad[j];
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g;
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p.data[j] -=
                    lr * (m_hat / (v_hat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * p.data[j]);
            }
        }
        Ok(())
    }
}

/// Learning-rate multiplier for a 1-based epoch index: climbs linearly to 1
/// over the first `warmup` epochs, then stays there.
pub fn warmup_scale(epoch: usize, warmup: usize) -> f64 {
    if warmup == 0 || epoch >= warmup {
        1.0
    } else {
        epoch as f64 / warmup as f64
    }
}
