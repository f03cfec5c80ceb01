//! Adam with bias correction over named parameters.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{el, Element, Tensor};

use super::TrainConfig;

/// First and second moment estimates for one parameter tensor.
#[derive(Clone)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Mutable training-loop state: optimizer moments, step/epoch counters, the
/// active sample set chosen by hard mining, and the loop's RNG.
pub struct TrainState<T: Element> {
    pub moments: BTreeMap<String, AdamMoments<T>>,
    pub step: u64,
    pub epoch: usize,
    pub active_indices: Vec<usize>,
    pub rng: ChaCha8Rng,
}

impl<T: Element> TrainState<T> {
    pub fn new(rng: ChaCha8Rng, sample_count: usize) -> TrainState<T> {
        TrainState {
            moments: BTreeMap::new(),
            step: 0,
            epoch: 0,
            active_indices: (0..sample_count).collect(),
            rng,
        }
    }
}

/// Pulls the accumulated gradient of every parameter; a parameter without a
/// gradient is a contract violation.
pub fn collect_grads<T: Element>(params: &ModelParams<T>) -> Result<BTreeMap<String, Vec<T>>> {
    let mut grads = BTreeMap::new();
    for (name, tensor) in params.iter() {
        let g = tensor.grad().ok_or_else(|| {
            Error::Contract(format!("parameter {name} has no gradient; run backward first"))
        })?;
        grads.insert(name.clone(), g);
    }
    Ok(grads)
}

/// One Adam update over all parameters. Parameters are replaced with fresh
/// leaves, so previous graphs and gradients drop with the old tensors.
pub fn adam_step<T: Element>(
    params: &mut ModelParams<T>,
    grads: &BTreeMap<String, Vec<T>>,
    state: &mut TrainState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let beta1 = el::<T>(cfg.beta1);
    let beta2 = el::<T>(cfg.beta2);
    let one = T::one();
    let lr = el::<T>(cfg.lr);
    let eps = el::<T>(cfg.eps_adam);
    let bc1 = one - beta1.powi(t);
    let bc2 = one - beta2.powi(t);

    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let g = grads
            .get(&name)
            .ok_or_else(|| Error::Contract(format!("no gradient provided for parameter {name}")))?;
        let tensor = params.get(&name)?.clone();
        if g.len() != tensor.numel() {
            return Err(Error::Dim(format!(
                "gradient for {name} has {} elements, parameter has {}",
                g.len(),
                tensor.numel()
            )));
        }
        let entry = state.moments.entry(name.clone()).or_insert_with(|| AdamMoments {
            m: vec![T::zero(); g.len()],
            v: vec![T::zero(); g.len()],
        });
        let mut data = tensor.data().to_vec();
        for i in 0..g.len() {
            let gi = g[i];
            entry.m[i] = beta1 * entry.m[i] + (one - beta1) * gi;
            entry.v[i] = beta2 * entry.v[i] + (one - beta2) * gi * gi;
            let m_hat = entry.m[i] / bc1;
            let v_hat = entry.v[i] / bc2;
            data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        params.replace(&name, Tensor::param(tensor.shape(), data)?)?;
    }
    Ok(())
}
