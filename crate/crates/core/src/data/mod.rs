//! Depth samples, file IO, synthetic scenes and corruption protocols.

mod corrupt;
mod manifest;
mod pgm;
mod scene;

pub use corrupt::{corrupt_region_noise, corrupt_scene_noise, sparsify, NoiseLog, Sparsity, MIN_RANGE, REGION_COUNT, REGION_SIZE};
pub use manifest::{load_dataset, read_manifest, write_manifest};
pub use pgm::{decode_depth_pgm, encode_depth_pgm, read_depth_pgm, write_depth_pgm, DEPTH_SCALE, MAX_PGM_DEPTH};
pub use scene::{generate_scene, make_dataset, sample_sensor, sensor_keep_probabilities, SceneSpec};

use crate::error::{Error, Result};
use crate::tensor::MaskedMap;

/// Default maximum sensor range in metres.
pub const MAX_RANGE: f64 = 100.0;

/// A sparse input depth map with its ground truth, both 1-channel, in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSample {
    pub id: String,
    pub input: MaskedMap,
    pub gt: MaskedMap,
}

impl DepthSample {
    /// Checks shapes and that every valid depth is positive; ground truth
    /// must also lie within `max_range`.
    pub fn new(id: impl Into<String>, input: MaskedMap, gt: MaskedMap, max_range: f64) -> Result<Self> {
        if input.channels() != 1 || gt.channels() != 1 {
            return Err(Error::Config("depth maps must have 1 channel".into()));
        }
        if input.height() != gt.height() || input.width() != gt.width() {
            return Err(Error::Dimension(format!(
                "input {}x{} and ground truth {}x{} differ",
                input.height(),
                input.width(),
                gt.height(),
                gt.width()
            )));
        }
        check_positive(&input, f64::INFINITY, "input")?;
        check_positive(&gt, max_range, "ground truth")?;
        Ok(Self {
            id: id.into(),
            input: input.canonical(),
            gt: gt.canonical(),
        })
    }
}

fn check_positive(m: &MaskedMap, max: f64, what: &str) -> Result<()> {
    for (d, v) in m.features().data().iter().zip(m.mask().data()) {
        if *v != 0.0 && !(*d > 0.0 && *d <= max) {
            return Err(Error::Range(format!("{what} depth {d} outside (0, {max}]")));
        }
    }
    Ok(())
}
