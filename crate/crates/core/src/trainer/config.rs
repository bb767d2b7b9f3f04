use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::Variant;

/// Optimizer, schedule and loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub poly_power: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many epochs without a new lowest training loss.
    /// 0 disables early stopping.
    pub loss_floor_patience: usize,
    pub variant: Variant,
    /// Fraction of the dataset held out for validation.
    pub val_fraction: f64,
    /// Worker cap for per-sample passes. Results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr0: 0.01,
            poly_power: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            batch_size: 4,
            seed: 0,
            loss_floor_patience: 0,
            variant: Variant::Full,
            val_fraction: 0.2,
            threads: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 12] = [
        "epochs",
        "lr0",
        "poly_power",
        "beta1",
        "beta2",
        "eps_adam",
        "batch_size",
        "seed",
        "loss_floor_patience",
        "variant",
        "val_fraction",
        "threads",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be finite and non-negative");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.eps_adam > 0.0) || !self.poly_power.is_finite() {
            return bad("eps_adam must be positive and poly_power finite");
        }
        if self.batch_size == 0 || self.threads == 0 {
            return bad("batch_size and threads must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "lr0" => self.lr0 = parse(key, value)?,
            "poly_power" => self.poly_power = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps_adam" => self.eps_adam = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "loss_floor_patience" => self.loss_floor_patience = parse(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// One `key=value` line per field. Reals use Rust's shortest round-trip
    /// formatting so [`TrainConfig::from_kv`] restores them exactly.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let vals = [
            self.epochs.to_string(),
            format!("{:?}", self.lr0),
            format!("{:?}", self.poly_power),
            format!("{:?}", self.beta1),
            format!("{:?}", self.beta2),
            format!("{:?}", self.eps_adam),
            self.batch_size.to_string(),
            self.seed.to_string(),
            self.loss_floor_patience.to_string(),
            self.variant.to_string(),
            format!("{:?}", self.val_fraction),
            self.threads.to_string(),
        ];
        for (k, v) in Self::KEYS.iter().zip(vals) {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Overlays `key=value` lines onto `self`. Blank lines and `#` comments
    /// are skipped.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got '{line}'")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_kv(text)?;
        Ok(c)
    }
}
