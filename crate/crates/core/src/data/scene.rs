use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corrupt::{sparsify, Sparsity};
use super::DepthSample;
use crate::error::{Error, Result};
use crate::tensor::{Array3, Mask2, MaskedMap};

/// Parameters of a synthetic driving-like scene: a sloped ground plane with
/// fronto-parallel boxes in front of it.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Inclusive range of box counts.
    pub objects: (usize, usize),
    pub min_depth: f64,
    pub max_depth: f64,
    /// Expected fraction of pixels kept when sparsifying into a network input.
    pub density: f64,
    /// Range falloff exponent of the simulated sensor: keep probability is
    /// proportional to `depth^-falloff`. 0 samples uniformly.
    pub falloff: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            seed: 0,
            objects: (2, 5),
            min_depth: 2.0,
            max_depth: 80.0,
            density: 0.05,
            falloff: 1.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("scene must be non-empty".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!("density {} outside (0, 1]", self.density)));
        }
        if self.min_depth < 1.0 || self.max_depth <= self.min_depth {
            return Err(Error::Config(format!(
                "depth range [{}, {}] must satisfy 1 <= min < max",
                self.min_depth, self.max_depth
            )));
        }
        if !(self.falloff >= 0.0 && self.falloff.is_finite()) {
            return Err(Error::Config(format!("falloff {} must be finite and non-negative", self.falloff)));
        }
        if self.objects.0 > self.objects.1 {
            return Err(Error::Config("object count range is inverted".into()));
        }
        Ok(())
    }
}

/// Renders a dense ground-truth depth map, deterministic in `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<MaskedMap> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height, spec.width);
    let (lo, hi) = (spec.min_depth, spec.max_depth);
    let span = hi - lo;

    let far = rng.gen_range(lo + 0.5 * span..=hi);
    let near = rng.gen_range(lo..=lo + 0.2 * span);
    let lateral = rng.gen_range(-0.15..=0.15) * (far - near);
    let ty = |y: usize| if h > 1 { y as f64 / (h - 1) as f64 } else { 0.0 };
    let tx = |x: usize| if w > 1 { x as f64 / (w - 1) as f64 - 0.5 } else { 0.0 };
    let mut depth = Array3::from_fn(1, h, w, |_, y, x| {
        (far + (near - far) * ty(y) + lateral * tx(x)).clamp(lo, hi)
    });

    let count = rng.gen_range(spec.objects.0..=spec.objects.1);
    for _ in 0..count {
        let bh = rng.gen_range((h / 8).max(1)..=(h / 3).max(1));
        let bw = rng.gen_range((w / 8).max(1)..=(w / 3).max(1));
        let y0 = rng.gen_range(0..=h - bh);
        let x0 = rng.gen_range(0..=w - bw);
        // stand in front of the ground at the box's bottom edge
        let ground = depth.get(0, y0 + bh - 1, x0 + bw / 2);
        let d = rng.gen_range(lo..=ground.max(lo + 0.5).min(hi));
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                if d < depth.get(0, y, x) {
                    depth.set(0, y, x, d);
                }
            }
        }
    }
    MaskedMap::raw(depth, Mask2::ones(h, w))
}

/// Keep probabilities `min(1, c·d^-falloff)` with `c` chosen so they average
/// to `density` over the valid pixels.
pub fn sensor_keep_probabilities(gt: &MaskedMap, density: f64, falloff: f64) -> Vec<f64> {
    let w: Vec<f64> = gt
        .features()
        .data()
        .iter()
        .zip(gt.mask().data())
        .map(|(d, m)| if *m == 0.0 { 0.0 } else { d.powf(-falloff) })
        .collect();
    let n = gt.mask().count() as f64;
    if n == 0.0 {
        return w;
    }
    // bisection on c; the clamped mean is monotone in c
    let mean = |c: f64| w.iter().map(|x| (c * x).min(1.0)).sum::<f64>() / n;
    let (mut lo, mut hi) = (0.0, 1.0);
    while mean(hi) < density && hi < 1e300 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < density {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    w.iter().map(|x| (hi * x).min(1.0)).collect()
}

/// Simulated range sensor: Bernoulli keep per valid pixel with
/// [`sensor_keep_probabilities`]. `falloff = 0` is plain Bernoulli(density).
pub fn sample_sensor(gt: &MaskedMap, density: f64, falloff: f64, seed: u64) -> Result<MaskedMap> {
    if falloff == 0.0 {
        return sparsify(gt, Sparsity::Keep(density), seed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = sensor_keep_probabilities(gt, density, falloff);
    let (h, w) = (gt.height(), gt.width());
    let mask = Mask2::from_fn(h, w, |y, x| {
        let i = y * w + x;
        gt.mask().data()[i] != 0.0 && rng.gen::<f64>() < p[i]
    });
    MaskedMap::raw(gt.features().clone(), mask).map(|m| m.canonical())
}

/// `count` scenes with sparsified inputs. Scene `i` uses seed `seed + i`
/// for geometry and an independent stream for sampling.
pub fn make_dataset(count: usize, base: &SceneSpec) -> Result<Vec<DepthSample>> {
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    (0..count)
        .map(|i| {
            let spec = SceneSpec {
                seed: base.seed.wrapping_add(i as u64),
                ..base.clone()
            };
            let gt = generate_scene(&spec)?;
            let input = sample_sensor(&gt, spec.density, spec.falloff, spec.seed ^ 0x5eed_5a3b_1e00_0000)?;
            DepthSample::new(format!("scene_{i:05}"), input, gt, spec.max_depth)
        })
        .collect()
}
