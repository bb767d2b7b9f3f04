use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{AdaptiveKernel, ConvKernel};

/// One named learnable array with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl ParamEntry {
    fn new(name: String, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let n = value.len();
        Self {
            name,
            shape,
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Ordered collection of named parameters plus optimizer state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    /// Number of optimizer steps taken.
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter. Names must be unique.
    pub fn insert(&mut self, name: &str, shape: Vec<usize>, value: Vec<f64>) -> Result<()> {
        if self.position(name).is_some() {
            return Err(Error::Integrity(format!("duplicate parameter '{name}'")));
        }
        if shape.iter().product::<usize>() != value.len() {
            return Err(Error::Integrity(format!(
                "parameter '{name}' has {} values for shape {shape:?}",
                value.len()
            )));
        }
        self.entries.push(ParamEntry::new(name.to_string(), shape, value));
        Ok(())
    }

    /// Inserts a fully specified entry, moments included.
    pub fn insert_entry(&mut self, entry: ParamEntry) -> Result<()> {
        let n = entry.shape.iter().product::<usize>();
        if entry.value.len() != n || entry.grad.len() != n || entry.m.len() != n || entry.v.len() != n {
            return Err(Error::Integrity(format!(
                "parameter '{}' buffers are not congruent with shape {:?}",
                entry.name, entry.shape
            )));
        }
        if self.position(&entry.name).is_some() {
            return Err(Error::Integrity(format!("duplicate parameter '{}'", entry.name)));
        }
        self.entries.push(entry);
        Ok(())
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn value(&self, name: &str) -> Option<&[f64]> {
        self.get(name).map(|e| e.value.as_slice())
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| e.value.as_mut_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(ParamEntry::len).sum()
    }

    /// Maps a flat scalar index to `(name, offset)`.
    pub fn locate(&self, mut flat: usize) -> Option<(String, usize)> {
        for e in &self.entries {
            if flat < e.len() {
                return Some((e.name.clone(), flat));
            }
            flat -= e.len();
        }
        None
    }

    fn require(&self, name: &str) -> Result<&ParamEntry> {
        self.get(name)
            .ok_or_else(|| Error::Integrity(format!("missing parameter '{name}'")))
    }

    /// Assembles the kernel stored under `<layer>.weight` / `<layer>.bias`.
    pub fn conv_kernel(&self, layer: &str) -> Result<ConvKernel> {
        let w = self.require(&format!("{layer}.weight"))?;
        let b = self.require(&format!("{layer}.bias"))?;
        let [c_out, c_in, side, side2] = w.shape[..] else {
            return Err(Error::Integrity(format!("'{layer}.weight' is not rank 4")));
        };
        if side != side2 || side % 2 == 0 {
            return Err(Error::Integrity(format!("'{layer}.weight' window is not odd square")));
        }
        ConvKernel::new(c_out, c_in, side / 2, w.value.clone(), b.value.clone())
    }

    /// Assembles the adaptive kernel stored under `<layer>.k1..k3` / `<layer>.bias`.
    pub fn adaptive_kernel(&self, layer: &str, c1: usize) -> Result<AdaptiveKernel> {
        let k1 = self.require(&format!("{layer}.k1"))?;
        let k2 = self.require(&format!("{layer}.k2"))?;
        let k3 = self.require(&format!("{layer}.k3"))?;
        let b = self.require(&format!("{layer}.bias"))?;
        let [c_out, cin] = k1.shape[..] else {
            return Err(Error::Integrity(format!("'{layer}.k1' is not rank 2")));
        };
        if cin < c1 {
            return Err(Error::Integrity(format!("'{layer}' has fewer than {c1} input channels")));
        }
        AdaptiveKernel::new(
            c_out,
            c1,
            cin - c1,
            [k1.value.clone(), k2.value.clone(), k3.value.clone()],
            b.value.clone(),
        )
    }

    /// Declares a conv layer initialised uniformly in ±sqrt(1/fan_in), bias 0.
    pub fn init_conv<R: Rng>(&mut self, rng: &mut R, layer: &str, c_out: usize, c_in: usize, half: usize) -> Result<()> {
        let side = 2 * half + 1;
        let fan_in = c_in * side * side;
        let bound = (1.0 / fan_in as f64).sqrt();
        let w = (0..c_out * fan_in).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(&format!("{layer}.weight"), vec![c_out, c_in, side, side], w)?;
        self.insert(&format!("{layer}.bias"), vec![c_out], vec![0.0; c_out])
    }

    pub fn init_adaptive<R: Rng>(&mut self, rng: &mut R, layer: &str, c_out: usize, c1: usize, c2: usize) -> Result<()> {
        let fan_in = c1 + c2;
        let bound = (1.0 / fan_in as f64).sqrt();
        for k in ["k1", "k2", "k3"] {
            let w = (0..c_out * fan_in).map(|_| rng.gen_range(-bound..bound)).collect();
            self.insert(&format!("{layer}.{k}"), vec![c_out, fan_in], w)?;
        }
        self.insert(&format!("{layer}.bias"), vec![c_out], vec![0.0; c_out])
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    /// Adds `g` into the gradient buffers.
    pub fn accumulate(&mut self, g: &Gradients) -> Result<()> {
        for (name, vals) in &g.entries {
            let e = self
                .entries
                .iter_mut()
                .find(|e| &e.name == name)
                .ok_or_else(|| Error::Integrity(format!("gradient for unknown parameter '{name}'")))?;
            if e.grad.len() != vals.len() {
                return Err(Error::Integrity(format!(
                    "gradient for '{name}' has {} values, parameter has {}",
                    vals.len(),
                    e.grad.len()
                )));
            }
            for (a, b) in e.grad.iter_mut().zip(vals) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Euclidean norm of all parameter values.
    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| &e.value)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// FNV-1a hash over names, shapes and value bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for e in &self.entries {
            feed(e.name.as_bytes());
            for d in &e.shape {
                feed(&(*d as u64).to_le_bytes());
            }
            for v in &e.value {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Rounds values and moments to the nearest 32-bit real.
    pub fn round_to_f32(&mut self) {
        for e in &mut self.entries {
            for buf in [&mut e.value, &mut e.m, &mut e.v] {
                for x in buf.iter_mut() {
                    *x = *x as f32 as f64;
                }
            }
        }
    }
}

/// Parameter gradients keyed by name, in first-touched order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    entries: Vec<(String, Vec<f64>)>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero gradients shaped like every entry of `store`.
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            entries: store
                .entries()
                .iter()
                .map(|e| (e.name.clone(), vec![0.0; e.len()]))
                .collect(),
        }
    }

    pub fn add(&mut self, name: &str, vals: &[f64]) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some((_, acc)) => {
                for (a, b) in acc.iter_mut().zip(vals) {
                    *a += b;
                }
            }
            None => self.entries.push((name.to_string(), vals.to_vec())),
        }
    }

    pub fn merge(&mut self, other: &Gradients) {
        for (n, v) in &other.entries {
            self.add(n, v);
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v.as_slice()))
    }

    pub fn is_all_zero(&self) -> bool {
        self.entries.iter().all(|(_, v)| v.iter().all(|x| *x == 0.0))
    }
}
