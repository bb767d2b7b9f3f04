//! RMSE / MAE (mm), iRMSE / iMAE (1/km) and REL over valid ground truth.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Array3, MaskedMap};

/// Running sums over valid pixels; merged to pool pixels across samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Sums {
    n: usize,
    sq: f64,
    abs: f64,
    rel: f64,
    inv_n: usize,
    inv_sq: f64,
    inv_abs: f64,
}

impl Sums {
    fn merge(&mut self, o: &Sums) {
        self.n += o.n;
        self.sq += o.sq;
        self.abs += o.abs;
        self.rel += o.rel;
        self.inv_n += o.inv_n;
        self.inv_sq += o.inv_sq;
        self.inv_abs += o.inv_abs;
    }
}

/// Inverse-depth metrics of one sample, or the number of valid pixels where
/// the prediction was not strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InverseMetrics {
    Ok { irmse_per_km: f64, imae_per_km: f64 },
    Failed { offending_pixels: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetrics {
    pub id: String,
    pub rmse_mm: f64,
    pub mae_mm: f64,
    pub inverse: InverseMetrics,
    pub rel: f64,
    pub valid_count: usize,
}

/// Metrics pooled over every valid pixel of every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rmse_mm: f64,
    pub mae_mm: f64,
    /// Pooled over samples whose inverse metrics did not fail; `NaN` when all failed.
    pub irmse_per_km: f64,
    pub imae_per_km: f64,
    pub rel: f64,
    pub valid_count: usize,
    pub inverse_failed_samples: usize,
    pub per_sample: Vec<SampleMetrics>,
}

impl MetricReport {
    pub fn tsv_header() -> &'static str {
        "rmse_mm\tmae_mm\tirmse_per_km\timae_per_km\trel\tvalid_count"
    }

    pub fn tsv_row(&self) -> String {
        format!(
            "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.rmse_mm, self.mae_mm, self.irmse_per_km, self.imae_per_km, self.rel, self.valid_count
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14}{:>14}", "metric", "value")?;
        writeln!(f, "{:<14}{:>14.3}", "RMSE [mm]", self.rmse_mm)?;
        writeln!(f, "{:<14}{:>14.3}", "MAE [mm]", self.mae_mm)?;
        writeln!(f, "{:<14}{:>14.3}", "iRMSE [1/km]", self.irmse_per_km)?;
        writeln!(f, "{:<14}{:>14.3}", "iMAE [1/km]", self.imae_per_km)?;
        writeln!(f, "{:<14}{:>14.5}", "REL", self.rel)?;
        write!(f, "{:<14}{:>14}", "valid pixels", self.valid_count)?;
        if self.inverse_failed_samples > 0 {
            write!(f, "\n{} samples had non-positive predictions", self.inverse_failed_samples)?;
        }
        Ok(())
    }
}

fn sums_for(pred: &Array3, gt: &MaskedMap) -> Result<(Sums, usize)> {
    if pred.channels() != 1 || gt.channels() != 1 || pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::Dimension(format!(
            "prediction {:?} and ground truth {:?} are not congruent",
            pred.shape(),
            gt.features().shape()
        )));
    }
    let mut s = Sums::default();
    let mut offending = 0;
    for ((o, t), m) in pred.data().iter().zip(gt.features().data()).zip(gt.mask().data()) {
        if *m == 0.0 {
            continue;
        }
        if *t <= 0.0 {
            return Err(Error::Range(format!("ground truth depth {t} is not positive")));
        }
        let e = o - t;
        s.n += 1;
        s.sq += e * e;
        s.abs += e.abs();
        s.rel += (e / t).abs();
        if *o > 0.0 {
            let ie = 1.0 / o - 1.0 / t;
            s.inv_n += 1;
            s.inv_sq += ie * ie;
            s.inv_abs += ie.abs();
        } else {
            offending += 1;
        }
    }
    if s.n == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    Ok((s, offending))
}

fn finish(id: &str, s: &Sums, offending: usize) -> SampleMetrics {
    let n = s.n as f64;
    let inverse = if offending > 0 {
        InverseMetrics::Failed { offending_pixels: offending }
    } else {
        InverseMetrics::Ok {
            irmse_per_km: (s.inv_sq / n).sqrt() * 1000.0,
            imae_per_km: s.inv_abs / n * 1000.0,
        }
    };
    SampleMetrics {
        id: id.to_string(),
        rmse_mm: (s.sq / n).sqrt() * 1000.0,
        mae_mm: s.abs / n * 1000.0,
        inverse,
        rel: s.rel / n,
        valid_count: s.n,
    }
}

/// Pools every valid pixel of every `(id, prediction, ground truth)` triple.
pub fn compute_dataset_metrics<'a, I>(items: I) -> Result<MetricReport>
where
    I: IntoIterator<Item = (&'a str, &'a Array3, &'a MaskedMap)>,
{
    let mut total = Sums::default();
    let mut inv = Sums::default();
    let mut per_sample = Vec::new();
    let mut failed = 0;
    for (id, pred, gt) in items {
        let (s, offending) = sums_for(pred, gt)?;
        total.merge(&s);
        if offending == 0 {
            inv.merge(&s);
        } else {
            failed += 1;
        }
        per_sample.push(finish(id, &s, offending));
    }
    if total.n == 0 {
        return Err(Error::EmptyDataset);
    }
    let n = total.n as f64;
    let (irmse, imae) = if inv.n > 0 {
        let k = inv.n as f64;
        ((inv.inv_sq / k).sqrt() * 1000.0, inv.inv_abs / k * 1000.0)
    } else {
        (f64::NAN, f64::NAN)
    };
    let report = MetricReport {
        rmse_mm: (total.sq / n).sqrt() * 1000.0,
        mae_mm: total.abs / n * 1000.0,
        irmse_per_km: irmse,
        imae_per_km: imae,
        rel: total.rel / n,
        valid_count: total.n,
        inverse_failed_samples: failed,
        per_sample,
    };
    debug_assert!(report.rmse_mm + 1e-9 * report.rmse_mm.max(1.0) >= report.mae_mm);
    Ok(report)
}

/// Metrics of a single prediction against its ground truth.
pub fn compute_metrics(pred: &Array3, gt: &MaskedMap) -> Result<MetricReport> {
    compute_dataset_metrics([("sample", pred, gt)])
}
