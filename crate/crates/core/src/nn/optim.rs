use serde::{Deserialize, Serialize};

use super::network::{Grads, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Moment buffers for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        let n = net.num_params();
        AdamState {
            config,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One Adam update with bias correction, descending along `grads`.
pub fn adam_step(net: &mut Network, grads: &Grads, state: &mut AdamState) -> Result<()> {
    if !grads.is_congruent(net) || state.m.len() != net.num_params() {
        return Err(Error::invalid(
            "gradients or optimizer state do not match the network",
        ));
    }
    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    let mut idx = 0;
    for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
        let params = layer.weights.data_mut().iter_mut().zip(g.weights.data());
        let biases = layer.bias.iter_mut().zip(&g.bias);
        for (p, &gi) in params.chain(biases) {
            let m = &mut state.m[idx];
            let v = &mut state.v[idx];
            *m = beta1 * *m + (1.0 - beta1) * gi;
            *v = beta2 * *v + (1.0 - beta2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
            idx += 1;
        }
    }
    Ok(())
}

/// Plain gradient descent.
pub fn sgd_step(net: &mut Network, grads: &Grads, lr: f64) -> Result<()> {
    if !grads.is_congruent(net) {
        return Err(Error::invalid("gradients do not match the network"));
    }
    for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
        for (p, gi) in layer.weights.data_mut().iter_mut().zip(g.weights.data()) {
            *p -= lr * gi;
        }
        for (p, gi) in layer.bias.iter_mut().zip(&g.bias) {
            *p -= lr * gi;
        }
    }
    Ok(())
}
