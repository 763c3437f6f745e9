use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamConfig {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One Adam update with bias correction and decoupled weight decay. `grads`
/// is indexed like the store; `None` entries (frozen parameters) are skipped
/// entirely, including the decay.
pub fn adam_step(store: &mut ParamStore, grads: &[Option<Tensor>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::invalid(format!("{} gradients for {} parameters", grads.len(), store.len())));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            let p = &store.tensors()[i];
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            if !g.is_finite() {
                let id = store.ids().nth(i).expect("index in range");
                return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    for (i, p) in store.tensors_mut().iter_mut().enumerate() {
        let Some(g) = &grads[i] else { continue };
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, (w, gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            *w = *w * decay - cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Global L2 norm over every present gradient.
pub fn global_norm(grads: &[Option<Tensor>]) -> f64 {
    grads.iter().flatten().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescales all gradients by `max_norm / norm` when their global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
