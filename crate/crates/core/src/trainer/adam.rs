use super::TrainConfig;
use crate::error::{Error, Result};
use crate::network::ParamStore;

/// One bias-corrected Adam update of every parameter; gradients are zeroed
/// afterwards.
pub fn adam_step(store: &mut ParamStore, lr: f64, cfg: &TrainConfig) -> Result<()> {
    for e in store.entries() {
        if e.grad.len() != e.value.len() || e.m.len() != e.value.len() || e.v.len() != e.value.len() {
            return Err(Error::Integrity(format!("buffers of '{}' are not congruent", e.name)));
        }
    }
    store.step += 1;
    let t = store.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for e in store.entries_mut() {
        for i in 0..e.value.len() {
            let g = e.grad[i];
            e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
            e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = e.m[i] / c1;
            let v_hat = e.v[i] / c2;
            e.value[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps_adam);
        }
        e.grad.fill(0.0);
    }
    Ok(())
}
