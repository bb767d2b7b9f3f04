use crate::error::{Error, Result};
use crate::tensor::{Array3, Mask2};

/// Mean squared error over ground-truth-valid pixels only, with its
/// gradient `2(o − t)/|V|` on V and 0 elsewhere.
pub fn masked_mse_loss(pred: &Array3, gt: &Array3, gt_mask: &Mask2) -> Result<(f64, Array3)> {
    if pred.shape() != gt.shape() || pred.channels() != 1 || gt_mask.height() != gt.height() || gt_mask.width() != gt.width() {
        return Err(Error::Dimension(format!(
            "prediction {:?}, ground truth {:?} and mask {}x{} are not congruent",
            pred.shape(),
            gt.shape(),
            gt_mask.height(),
            gt_mask.width()
        )));
    }
    let n = gt_mask.count();
    if n == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let inv = 1.0 / n as f64;
    let mut d = Array3::zeros(1, pred.height(), pred.width());
    let mut loss = 0.0;
    for (i, m) in gt_mask.data().iter().enumerate() {
        if *m == 0.0 {
            continue;
        }
        let e = pred.data()[i] - gt.data()[i];
        loss += e * e;
        d.data_mut()[i] = 2.0 * e * inv;
    }
    Ok((loss * inv, d))
}
