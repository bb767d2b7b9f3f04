//! Masked loss, Adam, the learning-rate schedule, checkpoints and the epoch
//! loop.

mod adam;
mod checkpoint;
mod config;
mod loss;
mod schedule;

pub use adam::adam_step;
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::TrainConfig;
pub use loss::masked_mse_loss;
pub use schedule::poly_lr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::DepthSample;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Model};
use crate::network::{Gradients, Network, NetworkConfig, ParamStore};

/// Metrics for one finished epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based index of the finished epoch.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_rmse: f64,
    pub val_mae: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tlr\ttrain_loss\tval_rmse\tval_mae";

    pub fn tsv(&self) -> String {
        format!(
            "{}\t{:.8}\t{:.6}\t{:.3}\t{:.3}",
            self.epoch, self.lr, self.train_loss, self.val_rmse, self.val_mae
        )
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Splits off the trailing `val_fraction` of `dataset` (at least one sample
/// on each side).
pub fn split_dataset(dataset: &[DepthSample], val_fraction: f64) -> Result<(&[DepthSample], &[DepthSample])> {
    if dataset.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    let n_val = ((dataset.len() as f64 * val_fraction).round() as usize).clamp(1, dataset.len() - 1);
    Ok(dataset.split_at(dataset.len() - n_val))
}

/// Fresh parameters for `cfg`, drawn from a generator seeded by `cfg.seed`.
pub fn init_checkpoint(cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut params = ParamStore::new();
    let net = Network::new(NetworkConfig { variant: cfg.variant });
    net.init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    params.round_to_f32();
    Ok(Checkpoint {
        config: cfg.clone(),
        epoch: 0,
        best_val_rmse: f64::INFINITY,
        params,
    })
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mix = seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix));
    idx
}

fn sample_pass(net: &Network, params: &ParamStore, s: &DepthSample) -> Result<(f64, Gradients)> {
    let (pred, tape) = net.forward(&s.input, params)?;
    let (loss, d) = masked_mse_loss(&pred, s.gt.features(), s.gt.mask())?;
    let g = net.backward(&tape, &d, params)?;
    Ok((loss, g))
}

/// Per-sample passes, fanned out over up to `threads` scoped workers.
/// Results come back in input order.
fn batch_passes(net: &Network, params: &ParamStore, batch: &[&DepthSample], threads: usize) -> Vec<Result<(f64, Gradients)>> {
    let threads = threads.min(batch.len()).max(1);
    if threads == 1 {
        return batch.iter().map(|s| sample_pass(net, params, s)).collect();
    }
    let chunk = batch.len().div_ceil(threads);
    std::thread::scope(|sc| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| sc.spawn(move || part.iter().map(|s| sample_pass(net, params, s)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn diverged(what: &str, lr: f64, params: &ParamStore) -> Error {
    Error::Diverged(format!(
        "{what}; lr={lr:e} step={} param_norm={:e}",
        params.step,
        params.norm()
    ))
}

/// Trains one epoch in place and evaluates on `val`.
pub fn run_epoch(ckpt: &mut Checkpoint, train: &[DepthSample], val: &[DepthSample]) -> Result<EpochLog> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cfg = ckpt.config.clone();
    let net = Network::new(NetworkConfig { variant: cfg.variant });
    let lr = poly_lr(ckpt.epoch, &cfg)?;
    let order = epoch_order(cfg.seed, ckpt.epoch, train.len());
    let mut loss_sum = 0.0;
    for idx in order.chunks(cfg.batch_size) {
        let batch: Vec<&DepthSample> = idx.iter().map(|&i| &train[i]).collect();
        let results = batch_passes(&net, &ckpt.params, &batch, cfg.threads);
        let scale = 1.0 / batch.len() as f64;
        let mut total = Gradients::zeros_like(&ckpt.params);
        for r in results {
            let (loss, g) = r?;
            if !loss.is_finite() {
                return Err(diverged(&format!("loss {loss} at epoch {}", ckpt.epoch + 1), lr, &ckpt.params));
            }
            loss_sum += loss;
            total.merge(&g);
        }
        let mut mean = Gradients::new();
        for (name, vals) in total.iter() {
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(diverged(&format!("non-finite gradient for '{name}'"), lr, &ckpt.params));
            }
            mean.add(name, &vals.iter().map(|v| v * scale).collect::<Vec<_>>());
        }
        ckpt.params.zero_grads();
        ckpt.params.accumulate(&mean)?;
        adam_step(&mut ckpt.params, lr, &cfg)?;
        ckpt.params.round_to_f32();
        if let Some(e) = ckpt.params.entries().iter().find(|e| e.value.iter().any(|v| !v.is_finite())) {
            return Err(diverged(&format!("parameter '{}' became non-finite", e.name), lr, &ckpt.params));
        }
    }
    ckpt.epoch += 1;
    let model = ModelRef { net: &net, params: &ckpt.params };
    let report = evaluate(&model, val)?;
    Ok(EpochLog {
        epoch: ckpt.epoch,
        lr,
        train_loss: loss_sum / train.len() as f64,
        val_rmse: report.rmse_mm,
        val_mae: report.mae_mm,
    })
}

struct ModelRef<'a> {
    net: &'a Network,
    params: &'a ParamStore,
}

impl crate::eval::DepthPredictor for ModelRef<'_> {
    fn predict(&self, input: &crate::tensor::MaskedMap) -> Result<crate::tensor::Array3> {
        Ok(self.net.forward(input, self.params)?.0)
    }
}

/// Continues `ckpt` until its configured epoch count (or early stop).
/// `observe` sees every epoch's log, the current state and whether it is a
/// new best.
pub fn resume<F>(mut ckpt: Checkpoint, train: &[DepthSample], val: &[DepthSample], mut observe: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochLog, &Checkpoint, bool) -> Result<()>,
{
    ckpt.config.validate()?;
    let mut best = ckpt.clone();
    let mut log = Vec::new();
    let mut floor = f64::INFINITY;
    let mut stale = 0;
    while ckpt.epoch < ckpt.config.epochs {
        let entry = run_epoch(&mut ckpt, train, val)?;
        let improved = entry.val_rmse < ckpt.best_val_rmse;
        if improved {
            ckpt.best_val_rmse = entry.val_rmse;
            best = ckpt.clone();
        }
        observe(&entry, &ckpt, improved)?;
        log.push(entry);
        if entry.train_loss < floor {
            floor = entry.train_loss;
            stale = 0;
        } else {
            stale += 1;
        }
        if ckpt.config.loss_floor_patience > 0 && stale >= ckpt.config.loss_floor_patience {
            break;
        }
    }
    best.best_val_rmse = ckpt.best_val_rmse;
    Ok(TrainOutcome { best, last: ckpt, log })
}

/// Trains from scratch with a held-out split taken from the tail of `dataset`.
pub fn train<F>(dataset: &[DepthSample], cfg: &TrainConfig, observe: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochLog, &Checkpoint, bool) -> Result<()>,
{
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (tr, val) = split_dataset(dataset, cfg.val_fraction)?;
    resume(init_checkpoint(cfg)?, tr, val, observe)
}

impl Checkpoint {
    /// The network and parameters as a ready-to-run model.
    pub fn model(&self) -> Model {
        Model {
            network: Network::new(NetworkConfig { variant: self.config.variant }),
            params: self.params.clone(),
        }
    }
}
