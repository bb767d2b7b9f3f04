use super::{check_grad_shape, AdaptiveKernel, OpGrad, ParamGrad, Scenario};
use crate::error::{dim_err, Result};
use crate::tensor::{Array3, MaskedMap};

fn check_inputs(p: &MaskedMap, q: &MaskedMap, ak: &AdaptiveKernel) -> Result<()> {
    if p.height() != q.height() || p.width() != q.width() {
        return Err(dim_err(format!(
            "si_concat_conv: spatial sizes {}x{} and {}x{} differ",
            p.height(),
            p.width(),
            q.height(),
            q.width()
        )));
    }
    if p.channels() != ak.c1() || q.channels() != ak.c2() {
        return Err(dim_err(format!(
            "si_concat_conv: inputs have {}+{} channels, kernel expects {}+{}",
            p.channels(),
            q.channels(),
            ak.c1(),
            ak.c2()
        )));
    }
    Ok(())
}

/// Gathers the concatenated feature vector `[x; y]` at pixel `i`, with
/// invalid halves left at zero.
fn gather(p: &MaskedMap, q: &MaskedMap, i: usize, vx: bool, vy: bool, buf: &mut [f64]) {
    let n = p.height() * p.width();
    let (c1, c2) = (p.channels(), q.channels());
    buf.fill(0.0);
    if vx {
        let x = p.features().data();
        for c in 0..c1 {
            buf[c] = x[c * n + i];
        }
    }
    if vy {
        let y = q.features().data();
        for c in 0..c2 {
            buf[c1 + c] = y[c * n + i];
        }
    }
}

/// Joint concatenation and 1×1 convolution with a kernel set chosen per
/// pixel by the validity pattern of the two inputs. Pixels where both inputs
/// are invalid stay zero; the output mask is `m_x ∨ m_y`.
pub fn si_concat_conv_forward(p: &MaskedMap, q: &MaskedMap, ak: &AdaptiveKernel) -> Result<MaskedMap> {
    check_inputs(p, q, ak)?;
    let (h, w) = (p.height(), p.width());
    let n = h * w;
    let cin = ak.c1() + ak.c2();
    let mut z = Array3::zeros(ak.c_out(), h, w);
    let mut v = vec![0.0; cin];
    for i in 0..n {
        let (vx, vy) = (p.mask().data()[i] != 0.0, q.mask().data()[i] != 0.0);
        let Some(s) = Scenario::of(vx, vy) else { continue };
        gather(p, q, i, vx, vy, &mut v);
        let k = ak.set(s);
        let out = z.data_mut();
        for co in 0..ak.c_out() {
            let row = &k[co * cin..(co + 1) * cin];
            out[co * n + i] = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + ak.bias()[co];
        }
    }
    MaskedMap::raw(z, p.mask().or(q.mask())?)
}

/// Gradients flow only through the kernel set selected at each pixel.
pub fn si_concat_conv_backward(
    p: &MaskedMap,
    q: &MaskedMap,
    ak: &AdaptiveKernel,
    d_out: &Array3,
) -> Result<OpGrad> {
    check_inputs(p, q, ak)?;
    let (h, w) = (p.height(), p.width());
    check_grad_shape(d_out, ak.c_out(), h, w, "si_concat_conv_backward")?;
    let n = h * w;
    let (c1, c2) = (ak.c1(), ak.c2());
    let cin = c1 + c2;
    let mut dk = AdaptiveKernel::zeros(ak.c_out(), c1, c2);
    let mut dx = Array3::zeros(c1, h, w);
    let mut dy = Array3::zeros(c2, h, w);
    let mut v = vec![0.0; cin];
    let mut dv = vec![0.0; cin];
    let g = d_out.data();
    for i in 0..n {
        let (vx, vy) = (p.mask().data()[i] != 0.0, q.mask().data()[i] != 0.0);
        let Some(s) = Scenario::of(vx, vy) else { continue };
        gather(p, q, i, vx, vy, &mut v);
        let k = ak.set(s);
        dv.fill(0.0);
        for co in 0..ak.c_out() {
            let gc = g[co * n + i];
            if gc == 0.0 {
                continue;
            }
            dk.bias_mut()[co] += gc;
            let drow = &mut dk.set_mut(s)[co * cin..(co + 1) * cin];
            for (d, x) in drow.iter_mut().zip(&v) {
                *d += gc * x;
            }
            for (d, kv) in dv.iter_mut().zip(&k[co * cin..(co + 1) * cin]) {
                *d += gc * kv;
            }
        }
        if vx {
            for c in 0..c1 {
                dx.data_mut()[c * n + i] = dv[c];
            }
        }
        if vy {
            for c in 0..c2 {
                dy.data_mut()[c * n + i] = dv[c1 + c];
            }
        }
    }
    Ok(OpGrad {
        inputs: vec![dx, dy],
        params: Some(ParamGrad::Adaptive(dk)),
    })
}
