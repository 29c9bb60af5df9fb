//! Adaptive-moment optimiser with decoupled weight decay and global
//! gradient-norm clipping.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global L2 gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 1e-6,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    m: Tensor<T>,
    v: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    step: u64,
    state: HashMap<ParamId, Moments<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            step: 0,
            state: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Global L2 norm of a gradient set.
    pub fn grad_norm(grads: &HashMap<ParamId, Tensor<T>>) -> f64 {
        let mut ids: Vec<&ParamId> = grads.keys().collect();
        ids.sort();
        ids.into_iter()
            .map(|id| grads[id].data().iter().map(|x| x.as_f64().powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Applies one update and returns the pre-clipping gradient norm.
    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &HashMap<ParamId, Tensor<T>>) -> Result<f64> {
        let norm = Self::grad_norm(grads);
        if !norm.is_finite() {
            return Err(CoreError::NonFinite { stage: "gradient".into() });
        }
        let clip = match self.cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let lr = self.cfg.lr;
        let decay = T::lit(1.0 - lr * self.cfg.weight_decay);
        let (clip, b1t, b2t) = (T::lit(clip), T::lit(b1), T::lit(b2));
        let (one, eps) = (T::one(), T::lit(self.cfg.eps));
        let step_size = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let mut ids: Vec<ParamId> = grads.keys().copied().collect();
        ids.sort();
        for id in ids {
            let g = &grads[&id];
            let p = store.get_mut(id);
            if p.shape() != g.shape() {
                return Err(CoreError::Shape(format!(
                    "gradient {:?} for parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let st = self.state.entry(id).or_insert_with(|| Moments {
                m: Tensor::zeros(g.shape()),
                v: Tensor::zeros(g.shape()),
            });
            let m = st.m.data_mut();
            let v = st.v.data_mut();
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let gi = gi * clip;
                *mi = b1t * *mi + (one - b1t) * gi;
                *vi = b2t * *vi + (one - b2t) * gi * gi;
                *pi = *pi * decay - step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
        Ok(norm)
    }

    /// Moment tensors keyed `m.<param>` / `v.<param>`.
    pub fn state_tensors(&self, store: &ParamStore<T>) -> BTreeMap<String, Tensor<T>> {
        let mut out = BTreeMap::new();
        for (id, st) in &self.state {
            let name = &store.entry(*id).name;
            out.insert(format!("m.{name}"), st.m.clone());
            out.insert(format!("v.{name}"), st.v.clone());
        }
        out
    }

    pub fn load_state(
        &mut self,
        store: &ParamStore<T>,
        step: u64,
        tensors: &BTreeMap<String, Tensor<T>>,
    ) -> Result<()> {
        let mut state = HashMap::new();
        for (key, m) in tensors {
            let Some(name) = key.strip_prefix("m.") else { continue };
            let id = store
                .id(name)
                .ok_or_else(|| CoreError::MissingParam(format!("optimiser state for unknown `{name}`")))?;
            let v = tensors
                .get(&format!("v.{name}"))
                .ok_or_else(|| CoreError::MissingParam(format!("v.{name}")))?;
            if m.shape() != store.get(id).shape() || v.shape() != m.shape() {
                return Err(CoreError::Shape(format!("optimiser state for `{name}`")));
            }
            state.insert(
                id,
                Moments {
                    m: m.clone(),
                    v: v.clone(),
                },
            );
        }
        self.state = state;
        self.step = step;
        Ok(())
    }
}
