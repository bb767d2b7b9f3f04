use super::TrainConfig;
use crate::error::{Error, Result};

/// Polynomial decay `lr0 · (1 − epoch/epochs)^power`, applied per epoch.
pub fn poly_lr(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch > cfg.epochs {
        return Err(Error::Range(format!("epoch {epoch} exceeds {}", cfg.epochs)));
    }
    let frac = 1.0 - epoch as f64 / cfg.epochs as f64;
    Ok(cfg.lr0 * frac.powf(cfg.poly_power))
}
