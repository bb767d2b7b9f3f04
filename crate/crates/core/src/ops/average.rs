use super::OpGrad;
use crate::error::{dim_err, Result};
use crate::tensor::{Array3, MaskedMap, EPS};

fn check_pair(p: &MaskedMap, q: &MaskedMap) -> Result<()> {
    if p.features().shape() != q.features().shape() {
        return Err(dim_err(format!(
            "si_average: shapes {:?} and {:?} differ",
            p.features().shape(),
            q.features().shape()
        )));
    }
    Ok(())
}

/// Sparsity-invariant average: `z = (m_x⊙x + m_y⊙y) / (m_x + m_y + ε)`,
/// `m_z = m_x ∨ m_y`.
pub fn si_average(p: &MaskedMap, q: &MaskedMap) -> Result<MaskedMap> {
    check_pair(p, q)?;
    let (c, h, w) = p.features().shape();
    let n = h * w;
    let (mx, my) = (p.mask().data(), q.mask().data());
    let (x, y) = (p.features().data(), q.features().data());
    let mut z = Array3::zeros(c, h, w);
    for (ci, plane) in z.data_mut().chunks_mut(n).enumerate() {
        let base = ci * n;
        for (i, v) in plane.iter_mut().enumerate() {
            let den = mx[i] + my[i];
            if den > 0.0 {
                let num = if mx[i] != 0.0 { x[base + i] } else { 0.0 } + if my[i] != 0.0 { y[base + i] } else { 0.0 };
                *v = num / (den + EPS);
            }
        }
    }
    MaskedMap::raw(z, p.mask().or(q.mask())?)
}

/// `d_x = m_x ⊙ d / (m_x + m_y + ε)` and symmetrically for `y`.
pub fn si_average_backward(p: &MaskedMap, q: &MaskedMap, d_out: &Array3) -> Result<OpGrad> {
    check_pair(p, q)?;
    super::check_grad_shape(d_out, p.channels(), p.height(), p.width(), "si_average_backward")?;
    let n = p.height() * p.width();
    let (mx, my) = (p.mask().data(), q.mask().data());
    let mut dx = Array3::zeros(p.channels(), p.height(), p.width());
    let mut dy = dx.clone();
    for (ci, g) in d_out.data().chunks(n).enumerate() {
        let base = ci * n;
        for i in 0..n {
            let den = mx[i] + my[i] + EPS;
            if mx[i] != 0.0 {
                dx.data_mut()[base + i] = g[i] / den;
            }
            if my[i] != 0.0 {
                dy.data_mut()[base + i] = g[i] / den;
            }
        }
    }
    Ok(OpGrad {
        inputs: vec![dx, dy],
        params: None,
    })
}
