use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Mask2, MaskedMap};

/// Noisy depths below this are clamped up to it.
pub const MIN_RANGE: f64 = 1.0;
/// Region-level noise: number of square regions.
pub const REGION_COUNT: usize = 8;
/// Region-level noise: region side in pixels.
pub const REGION_SIZE: usize = 25;

/// How many valid points survive sparsification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sparsity {
    /// Independent keep probability per valid pixel.
    Keep(f64),
    /// Exactly this many valid pixels, uniformly without replacement.
    Count(usize),
}

fn valid_indices(m: &Mask2) -> Vec<usize> {
    m.data()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Drops valid pixels; never adds validity. Dropped pixels become 0 / mask 0.
pub fn sparsify(map: &MaskedMap, mode: Sparsity, seed: u64) -> Result<MaskedMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let valid = valid_indices(map.mask());
    let mut keep = vec![false; map.height() * map.width()];
    match mode {
        Sparsity::Keep(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Range(format!("keep probability {p} outside [0, 1]")));
            }
            for i in valid {
                keep[i] = rng.gen::<f64>() < p;
            }
        }
        Sparsity::Count(n) => {
            if n > valid.len() {
                return Err(Error::Range(format!(
                    "cannot keep {n} points out of {} valid",
                    valid.len()
                )));
            }
            for j in sample(&mut rng, valid.len(), n) {
                keep[valid[j]] = true;
            }
        }
    }
    let mask = Mask2::from_bools(map.height(), map.width(), &keep)?;
    crate::tensor::canonicalize(map.features().clone(), mask)
}

fn noise(sigma: f64) -> Result<Normal<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Range(format!("noise sigma {sigma} must be finite and >= 0")));
    }
    Normal::new(0.0, sigma).map_err(|e| Error::Range(e.to_string()))
}

/// Record of which pixels a noise protocol touched.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseLog {
    /// Top-left corners of noise regions (region-level noise only).
    pub regions: Vec<(usize, usize)>,
    /// Number of points perturbed per region, or one entry for scene noise.
    pub perturbed: Vec<usize>,
}

fn perturb(map: MaskedMap, idx: &[usize], dist: &Normal<f64>, rng: &mut ChaCha8Rng) -> MaskedMap {
    let (mut f, m) = map.into_parts();
    for &i in idx {
        let d = f.data()[i] + dist.sample(rng);
        f.data_mut()[i] = d.max(MIN_RANGE);
    }
    MaskedMap::raw(f, m).expect("shape unchanged")
}

/// Adds zero-mean Gaussian noise to ⌊0.1·|valid|⌋ uniformly chosen valid
/// points, clamping results below 1 m. Masks are unchanged.
pub fn corrupt_scene_noise(map: &MaskedMap, sigma: f64, seed: u64) -> Result<(MaskedMap, NoiseLog)> {
    let dist = noise(sigma)?;
    let out = map.canonical();
    let valid = valid_indices(map.mask());
    let k = valid.len() / 10;
    if sigma == 0.0 {
        return Ok((out, NoiseLog { regions: vec![], perturbed: vec![k] }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = sample(&mut rng, valid.len(), k).into_iter().map(|j| valid[j]).collect();
    let out = perturb(out, &chosen, &dist, &mut rng);
    Ok((out, NoiseLog { regions: vec![], perturbed: vec![k] }))
}

/// Picks eight 25×25 regions (fully in bounds, possibly overlapping) and
/// perturbs ⌊0.5·valid⌋ of the valid points inside each.
pub fn corrupt_region_noise(map: &MaskedMap, sigma: f64, seed: u64) -> Result<(MaskedMap, NoiseLog)> {
    let dist = noise(sigma)?;
    let (h, w) = (map.height(), map.width());
    if h < REGION_SIZE || w < REGION_SIZE {
        return Err(Error::Dimension(format!(
            "region noise needs at least {REGION_SIZE}x{REGION_SIZE}, got {h}x{w}"
        )));
    }
    let mut out = map.canonical();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = NoiseLog::default();
    for _ in 0..REGION_COUNT {
        let y0 = rng.gen_range(0..=h - REGION_SIZE);
        let x0 = rng.gen_range(0..=w - REGION_SIZE);
        let inside: Vec<usize> = (y0..y0 + REGION_SIZE)
            .flat_map(|y| (x0..x0 + REGION_SIZE).map(move |x| y * w + x))
            .filter(|&i| map.mask().data()[i] != 0.0)
            .collect();
        let k = inside.len() / 2;
        let chosen: Vec<usize> = sample(&mut rng, inside.len(), k).into_iter().map(|j| inside[j]).collect();
        if sigma > 0.0 {
            out = perturb(out, &chosen, &dist, &mut rng);
        }
        log.regions.push((y0, x0));
        log.perturbed.push(k);
    }
    Ok((out, log))
}
