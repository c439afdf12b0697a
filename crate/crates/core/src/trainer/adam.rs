use serde::{Deserialize, Serialize};

use crate::diffmath::Tensor;
use crate::error::{Result, WadgError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments over a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    params: AdamParams,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: AdamParams, shapes: &[&Tensor]) -> Self {
        let zeros: Vec<Tensor> = shapes.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            params,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update; `ascent` flips the sign so the objective increases.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], ascent: bool) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(WadgError::Invalid(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let AdamParams {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.params;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let sign = if ascent { 1.0 } else { -1.0 };
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if p.shape() != g.shape() {
                return Err(WadgError::ShapeMismatch {
                    op: "adam",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            let (m, v) = (m.data_mut(), v.data_mut());
            for (k, (pk, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                let update = (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                let delta = sign * lr * update;
                // skipping exact zeros keeps the sign of zero-valued weights
                if delta != 0.0 {
                    *pk += delta;
                }
            }
        }
        Ok(())
    }
}
