use super::{check_grad_shape, OpGrad};
use crate::error::{dim_err, Result};
use crate::tensor::{Array3, Mask2, MaskedMap};

fn check_window(p: &MaskedMap, window: usize) -> Result<()> {
    if window != 2 {
        return Err(dim_err(format!("si_maxpool supports window 2, got {window}")));
    }
    if p.height() % 2 != 0 || p.width() % 2 != 0 {
        return Err(dim_err(format!(
            "si_maxpool needs even spatial dims, got {}x{}",
            p.height(),
            p.width()
        )));
    }
    Ok(())
}

/// Per output pixel and channel, the flat input index of the winning entry,
/// or `None` when the window holds no valid entry.
fn argmax(p: &MaskedMap) -> Vec<Option<usize>> {
    let (c, h, w) = p.features().shape();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    let f = p.features();
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best: Option<(usize, f64)> = None;
                // row-major scan; strict > keeps the first of tied maxima
                for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let (y, x) = (2 * oy + y, 2 * ox + x);
                    if !p.mask().is_valid(y, x) {
                        continue;
                    }
                    let v = f.get(ci, y, x);
                    if best.map_or(true, |(_, b)| v > b) {
                        best = Some((f.index(ci, y, x), v));
                    }
                }
                out.push(best.map(|(i, _)| i));
            }
        }
    }
    out
}

/// Sparsity-invariant 2×2 max-pooling with stride 2. Invalid entries never
/// win; the output mask is set where any window entry is valid.
pub fn si_maxpool(p: &MaskedMap, window: usize) -> Result<MaskedMap> {
    check_window(p, window)?;
    let (c, h, w) = p.features().shape();
    let (ho, wo) = (h / 2, w / 2);
    let m = p.mask();
    let mask = Mask2::from_fn(ho, wo, |y, x| {
        m.is_valid(2 * y, 2 * x)
            || m.is_valid(2 * y, 2 * x + 1)
            || m.is_valid(2 * y + 1, 2 * x)
            || m.is_valid(2 * y + 1, 2 * x + 1)
    });
    let src = p.features().data();
    let data = argmax(p).into_iter().map(|i| i.map_or(0.0, |i| src[i])).collect();
    MaskedMap::raw(Array3::from_vec(c, ho, wo, data)?, mask)
}

/// Routes each output gradient to its window's valid argmax.
pub fn si_maxpool_backward(p: &MaskedMap, d_out: &Array3) -> Result<OpGrad> {
    check_window(p, 2)?;
    let (c, h, w) = p.features().shape();
    check_grad_shape(d_out, c, h / 2, w / 2, "si_maxpool_backward")?;
    let mut d_x = Array3::zeros(c, h, w);
    let dx = d_x.data_mut();
    for (g, idx) in d_out.data().iter().zip(argmax(p)) {
        if let Some(i) = idx {
            dx[i] += g;
        }
    }
    Ok(OpGrad {
        inputs: vec![d_x],
        params: None,
    })
}
