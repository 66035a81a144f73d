use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid optimiser settings {self:?}")))
        }
    }
}

/// Adam over a [`ParamStore`]. Parameters whose gradient is `None` (not
/// reached by the loss, or frozen) are left untouched, moments included.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: Vec<u64>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store
            .ids()
            .map(|id| {
                let [r, c] = store.get(id).shape();
                Tensor::zeros(r, c)
            })
            .collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            steps: vec![0; store.len()],
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn step(&mut self, store: &mut ParamStore, mut grads: Vec<Option<Tensor>>) {
        if let Some(max_norm) = self.cfg.clip_norm {
            clip_global_norm(&mut grads, max_norm);
        }
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
            ..
        } = self.cfg;
        let ids: Vec<_> = store.ids().collect();
        for (i, (id, grad)) in ids.into_iter().zip(grads).enumerate() {
            let Some(g) = grad else { continue };
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let w = store.get_mut(id).data_mut();
            for k in 0..w.len() {
                let gk = g.data()[k];
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                w[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.scale_in_place(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untouched_without_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(1.0));
        let b = store.add("b", Tensor::scalar(1.0));
        let mut opt = Adam::new(&store, AdamConfig::default());
        opt.step(&mut store, vec![Some(Tensor::scalar(2.0)), None]);
        assert!(store.get(a).item() < 1.0);
        assert_eq!(store.get(b).item(), 1.0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Some(Tensor::row_vector(vec![3.0, 4.0])), None];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].as_ref().unwrap().data()[1] - 0.8).abs() < 1e-15);
    }
}
