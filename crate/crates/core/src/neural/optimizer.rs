use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureVector, Space};
use super::network::{cross_entropy, smooth_l1, Gradients, QNetwork, Scalar};
use super::NeuralError;
use crate::machine::State;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }
}

/// Optimizer with its running state. Adam moments are allocated on the
/// first step; embedding rows are updated lazily (only rows with a gradient).
#[derive(Clone, Debug)]
pub struct Optimizer<F> {
    pub config: OptimizerConfig,
    t: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer { config, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Applies `scale * grads`; `scale` is typically `1 / batch size`.
    pub fn step(&mut self, net: &mut QNetwork<F>, grads: &Gradients<F>, scale: F) {
        match self.config {
            OptimizerConfig::Sgd { lr } => sgd_step(net, grads, F::of(lr) * scale),
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                self.adam_step(net, grads, scale, [lr, beta1, beta2, eps].map(F::of))
            }
        }
    }

    fn adam_step(&mut self, net: &mut QNetwork<F>, grads: &Gradients<F>, scale: F, hp: [F; 4]) {
        let [lr, b1, b2, eps] = hp;
        if self.m.is_empty() {
            self.m = net.params().iter().map(|p| vec![F::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = F::one() - b1.powi(self.t);
        let c2 = F::one() - b2.powi(self.t);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut update = |k: usize, i: usize, p: &mut F, g: F| {
            let g = g * scale;
            m[k][i] = flush(b1 * m[k][i] + (F::one() - b1) * g);
            v[k][i] = flush(b2 * v[k][i] + (F::one() - b2) * g * g);
            let mh = m[k][i] / c1;
            let vh = v[k][i] / c2;
            *p = *p - lr * mh / (vh.sqrt() + eps);
        };
        let dims = net.shape.dims;
        for (k, space) in Space::ALL.iter().enumerate() {
            let dim = dims.dim(*space);
            for (&id, row) in &grads.tables[k] {
                let base = id as usize * dim;
                for (j, &g) in row.iter().enumerate() {
                    update(k, base + j, &mut net.tables[k][base + j], g);
                }
            }
        }
        let cols = net.hidden.cols;
        let mut grow = vec![F::zero(); cols];
        for j in 0..net.hidden.rows {
            grow.iter_mut().for_each(|g| *g = F::zero());
            let mut gb = F::zero();
            for (dh, x) in &grads.hidden {
                if dh[j] != F::zero() {
                    gb = gb + dh[j];
                    for (g, &xi) in grow.iter_mut().zip(x) {
                        *g = *g + dh[j] * xi;
                    }
                }
            }
            for i in 0..cols {
                update(4, j * cols + i, &mut net.hidden.w[j * cols + i], grow[i]);
            }
            update(5, j, &mut net.hidden.b[j], gb);
        }
        let mut k = 6;
        for (slot, head) in net.heads.iter_mut().enumerate() {
            let Some(head) = head else { continue };
            let zeros_w;
            let zeros_b;
            let (gw, gb) = match &grads.heads[slot] {
                Some((w, b)) => (w.as_slice(), b.as_slice()),
                None => {
                    zeros_w = vec![F::zero(); head.w.len()];
                    zeros_b = vec![F::zero(); head.b.len()];
                    (zeros_w.as_slice(), zeros_b.as_slice())
                }
            };
            for (i, p) in head.w.iter_mut().enumerate() {
                update(k, i, p, gw[i]);
            }
            for (i, p) in head.b.iter_mut().enumerate() {
                update(k + 1, i, p, gb[i]);
            }
            k += 2;
        }
    }
}

/// Moments of weights that stop receiving gradient decay geometrically into
/// the subnormal range, where arithmetic is very slow; clamp them to zero.
fn flush<F: Scalar>(x: F) -> F {
    if x.abs() < F::min_positive_value() {
        F::zero()
    } else {
        x
    }
}

fn sgd_step<F: Scalar>(net: &mut QNetwork<F>, grads: &Gradients<F>, lr: F) {
    let dims = net.shape.dims;
    for (k, space) in Space::ALL.iter().enumerate() {
        let dim = dims.dim(*space);
        for (&id, row) in &grads.tables[k] {
            let base = id as usize * dim;
            for (p, &g) in net.tables[k][base..base + dim].iter_mut().zip(row) {
                *p = *p - lr * g;
            }
        }
    }
    let cols = net.hidden.cols;
    for (dh, x) in &grads.hidden {
        for (j, &d) in dh.iter().enumerate() {
            if d == F::zero() {
                continue;
            }
            let step = lr * d;
            net.hidden.b[j] = net.hidden.b[j] - step;
            for (p, &xi) in net.hidden.w[j * cols..(j + 1) * cols].iter_mut().zip(x) {
                *p = *p - step * xi;
            }
        }
    }
    for (head, g) in net.heads.iter_mut().zip(&grads.heads) {
        if let (Some(head), Some((gw, gb))) = (head, g) {
            for (p, &g) in head.w.iter_mut().zip(gw) {
                *p = *p - lr * g;
            }
            for (p, &g) in head.b.iter_mut().zip(gb) {
                *p = *p - lr * g;
            }
        }
    }
}

/// `r + gamma * max(next_q)`; an empty `next_q` marks a terminal successor.
pub fn q_target(reward: f64, gamma: f64, next_q: &[f64]) -> f64 {
    match next_q.iter().copied().reduce(f64::max) {
        Some(max) => reward + gamma * max,
        None => reward,
    }
}

/// Accumulates the smooth-L1 TD gradient for one transition; returns the loss.
pub fn td_gradient<F: Scalar, R: Rng>(
    net: &QNetwork<F>,
    f: &FeatureVector,
    state: State,
    action: usize,
    target: F,
    dropout_rng: Option<&mut R>,
    grads: &mut Gradients<F>,
) -> Result<F, NeuralError> {
    if !target.is_finite() {
        return Err(NeuralError::NonFinite("TD target"));
    }
    let cache = net.forward_cached(f, state, dropout_rng)?;
    let (loss, d) = smooth_l1(cache.q[action], target);
    let mut dq = vec![F::zero(); cache.q.len()];
    dq[action] = d;
    net.backward(f, &cache, &dq, grads);
    Ok(loss)
}

/// Accumulates the cross-entropy gradient for one example; returns the loss.
pub fn supervised_gradient<F: Scalar, R: Rng>(
    net: &QNetwork<F>,
    f: &FeatureVector,
    state: State,
    gold: usize,
    dropout_rng: Option<&mut R>,
    grads: &mut Gradients<F>,
) -> Result<F, NeuralError> {
    let cache = net.forward_cached(f, state, dropout_rng)?;
    let (loss, dq) = cross_entropy(&cache.q, gold);
    net.backward(f, &cache, &dq, grads);
    Ok(loss)
}

/// One online TD step towards `target` for `action`; returns the loss
/// before the step.
pub fn td_update<F: Scalar, R: Rng>(
    net: &mut QNetwork<F>,
    opt: &mut Optimizer<F>,
    f: &FeatureVector,
    state: State,
    action: usize,
    target: F,
    dropout_rng: Option<&mut R>,
) -> Result<F, NeuralError> {
    let mut grads = Gradients::default();
    let loss = td_gradient(net, f, state, action, target, dropout_rng, &mut grads)?;
    if !grads.is_finite() {
        return Err(NeuralError::NonFinite("gradient"));
    }
    opt.step(net, &grads, F::one());
    Ok(loss)
}

/// One cross-entropy step on the head serving `state`; returns the loss
/// before the step.
pub fn supervised_update<F: Scalar, R: Rng>(
    net: &mut QNetwork<F>,
    opt: &mut Optimizer<F>,
    f: &FeatureVector,
    state: State,
    gold: usize,
    dropout_rng: Option<&mut R>,
) -> Result<F, NeuralError> {
    let mut grads = Gradients::default();
    let loss = supervised_gradient(net, f, state, gold, dropout_rng, &mut grads)?;
    if !grads.is_finite() {
        return Err(NeuralError::NonFinite("gradient"));
    }
    opt.step(net, &grads, F::one());
    Ok(loss)
}
