use std::fmt;
use std::str::FromStr;

use super::{evaluate, DepthPredictor, MetricReport};
use crate::data::{corrupt_region_noise, corrupt_scene_noise, sparsify, DepthSample, Sparsity};
use crate::error::{Error, Result};

/// Corruption applied to every input before a fixed model is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Level = noise σ in metres on 10% of valid points.
    SceneNoise,
    /// Level = noise σ in metres inside eight 25×25 regions.
    RegionNoise,
    /// Level = keep fraction of valid input points.
    Sparsity,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::SceneNoise => "scene_noise",
            Protocol::RegionNoise => "region_noise",
            Protocol::Sparsity => "sparsity",
        }
    }

    /// Corrupts one sample's input at `level`.
    pub fn apply(self, sample: &DepthSample, level: f64, seed: u64) -> Result<DepthSample> {
        let input = match self {
            Protocol::SceneNoise => corrupt_scene_noise(&sample.input, level, seed)?.0,
            Protocol::RegionNoise => corrupt_region_noise(&sample.input, level, seed)?.0,
            Protocol::Sparsity => sparsify(&sample.input, Sparsity::Keep(level), seed)?,
        };
        Ok(DepthSample {
            id: sample.id.clone(),
            input,
            gt: sample.gt.clone(),
        })
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scene_noise" => Ok(Protocol::SceneNoise),
            "region_noise" => Ok(Protocol::RegionNoise),
            "sparsity" => Ok(Protocol::Sparsity),
            _ => Err(Error::Config(format!("unknown protocol '{s}'"))),
        }
    }
}

/// One row of a robustness curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub level: f64,
    pub report: MetricReport,
}

/// Evaluates the fixed `model` on `dataset` corrupted at each level. Sample
/// `i` at every level uses corruption seed `seed + i`.
pub fn robustness_sweep<P: DepthPredictor + ?Sized>(
    model: &P,
    dataset: &[DepthSample],
    protocol: Protocol,
    levels: &[f64],
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    levels
        .iter()
        .map(|&level| {
            let corrupted = dataset
                .iter()
                .enumerate()
                .map(|(i, s)| protocol.apply(s, level, seed.wrapping_add(i as u64)))
                .collect::<Result<Vec<_>>>()?;
            Ok(CurvePoint {
                level,
                report: evaluate(model, &corrupted)?,
            })
        })
        .collect()
}

pub fn curve_header() -> &'static str {
    "level\trmse\tmae\tirmse\timae\trel"
}

/// Tab-separated curve with a header line.
pub fn format_curve(points: &[CurvePoint]) -> String {
    let mut s = String::from(curve_header());
    s.push('\n');
    for p in points {
        let r = &p.report;
        s.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            p.level, r.rmse_mm, r.mae_mm, r.irmse_per_km, r.imae_per_km, r.rel
        ));
    }
    s
}
