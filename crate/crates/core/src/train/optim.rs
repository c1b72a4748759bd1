use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::substrate::{ParamStore, Tensor};

/// Piecewise-linear one-cycle rate: `start_lr → max_lr` over the warm-up
/// epochs, then `max_lr → end_lr` until the last step.
pub fn one_cycle_lr(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    let total = cfg.epochs * steps_per_epoch;
    if steps_per_epoch == 0 || step > total {
        return Err(Error::invalid(format!(
            "step {step} outside the schedule of {total} steps"
        )));
    }
    let warm = cfg.warmup_epochs * steps_per_epoch;
    // (1-f)·a + f·b hits both endpoints exactly.
    let lerp = |a: f64, b: f64, f: f64| (1.0 - f) * a + f * b;
    Ok(if step < warm {
        lerp(cfg.start_lr, cfg.max_lr, step as f64 / warm as f64)
    } else {
        lerp(cfg.max_lr, cfg.end_lr, (step - warm) as f64 / (total - warm) as f64)
    })
}

/// First and second moment estimates, aligned with a parameter store.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl AdamState {
    pub fn for_store(store: &ParamStore<f32>) -> Self {
        let mut s = AdamState::default();
        s.fit(store);
        s
    }

    /// Grows the moment buffers when parameters were added since creation.
    pub fn fit(&mut self, store: &ParamStore<f32>) {
        for p in store.iter().skip(self.m.len()) {
            self.m.push(Tensor::zeros(p.value.shape()));
            self.v.push(Tensor::zeros(p.value.shape()));
        }
    }
}

/// Decoupled weight decay applies to matrices only, never to vectors (biases,
/// normalisation statistics).
fn decays(value: &Tensor<f32>) -> bool {
    value.shape().len() >= 2
}

/// Scales trainable gradients so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore<f32>, max_norm: f64) -> Result<f64> {
    let norm = store.grad_norm();
    if !norm.is_finite() {
        let bad = store
            .iter()
            .find(|p| p.trainable && !p.grad.is_finite())
            .map_or("?".to_string(), |p| p.name.clone());
        return Err(Error::NonFinite(format!("gradient of {bad}")));
    }
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for p in store.iter_mut().filter(|p| p.trainable) {
            for g in p.grad.data_mut() {
                *g *= s;
            }
        }
    }
    Ok(norm)
}

/// One AdamW update of every trainable parameter from its `grad` buffer.
pub fn adamw_step(
    store: &mut ParamStore<f32>,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if let Some(p) = store.iter().find(|p| p.trainable && !p.grad.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", p.name)));
    }
    state.fit(store);
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    for (i, p) in store.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let decay = if decays(&p.value) { (lr * cfg.weight_decay) as f32 } else { 0.0 };
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let w = p.value.data_mut();
        for (((w, g), m), v) in w.iter_mut().zip(p.grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m as f64 / bc1;
            let vhat = *v as f64 / bc2;
            *w -= decay * *w;
            *w -= (lr * mhat / (vhat.sqrt() + cfg.adam_eps)) as f32;
        }
    }
    Ok(())
}
