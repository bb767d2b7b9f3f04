//! Error metrics, comparison baselines and robustness sweeps.

mod baseline;
mod metrics;
mod sweep;

pub use baseline::nn_fill_baseline;
pub use metrics::{compute_dataset_metrics, compute_metrics, InverseMetrics, MetricReport, SampleMetrics};
pub use sweep::{curve_header, format_curve, robustness_sweep, CurvePoint, Protocol};

use crate::data::DepthSample;
use crate::error::Result;
use crate::network::{Network, ParamStore};
use crate::tensor::{Array3, MaskedMap};

/// Anything that turns a sparse depth map into a dense 1×H×W prediction.
pub trait DepthPredictor {
    fn predict(&self, input: &MaskedMap) -> Result<Array3>;
}

/// A network together with the parameters it runs with.
#[derive(Debug, Clone)]
pub struct Model {
    pub network: Network,
    pub params: ParamStore,
}

impl DepthPredictor for Model {
    fn predict(&self, input: &MaskedMap) -> Result<Array3> {
        Ok(self.network.forward(input, &self.params)?.0)
    }
}

/// Nearest-valid-neighbour fill.
#[derive(Debug, Clone, Copy, Default)]
pub struct NnFill;

impl DepthPredictor for NnFill {
    fn predict(&self, input: &MaskedMap) -> Result<Array3> {
        Ok(nn_fill_baseline(input))
    }
}

/// Predicts every sample and pools metrics over all valid ground truth.
pub fn evaluate<P: DepthPredictor + ?Sized>(model: &P, dataset: &[DepthSample]) -> Result<MetricReport> {
    let preds = dataset
        .iter()
        .map(|s| model.predict(&s.input))
        .collect::<Result<Vec<_>>>()?;
    compute_dataset_metrics(
        dataset
            .iter()
            .zip(&preds)
            .map(|(s, p)| (s.id.as_str(), p, &s.gt)),
    )
}
