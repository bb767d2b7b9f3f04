use super::gemm::gemm;
use super::{check_grad_shape, ConvKernel, OpGrad, ParamGrad};
use crate::error::{dim_err, Result};
use crate::tensor::{zero_invalid, Array3, Mask2, MaskedMap, EPS};

/// Number of valid mask entries in the (2k+1)² window around each pixel.
/// Out-of-bounds positions count as invalid.
pub fn window_mask_sum(mask: &Mask2, half: usize) -> Vec<f64> {
    let (h, w) = (mask.height(), mask.width());
    let k = half as isize;
    // separable box sum: rows then columns
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = (x as isize - k).max(0) as usize;
            let hi = ((x as isize + k) as usize).min(w - 1);
            rows[y * w + x] = (lo..=hi).map(|xx| mask.get(y, xx)).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let lo = (y as isize - k).max(0) as usize;
        let hi = ((y as isize + k) as usize).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).sum();
        }
    }
    out
}

/// Output mask of a (2k+1)² sparsity-invariant convolution: a window
/// max-pool of the input mask.
pub fn conv_output_mask(mask: &Mask2, half: usize) -> Mask2 {
    let sums = window_mask_sum(mask, half);
    let w = mask.width();
    Mask2::from_fn(mask.height(), w, |y, x| sums[y * w + x] > 0.0)
}

/// Unfolds `x` into a (C·K·K)×(H·W) column matrix with zero padding.
fn im2col(x: &Array3, half: usize) -> Vec<f64> {
    let (c, h, w) = x.shape();
    let side = 2 * half + 1;
    let n = h * w;
    let mut cols = vec![0.0; c * side * side * n];
    for ci in 0..c {
        let plane = x.plane(ci);
        for ky in 0..side {
            for kx in 0..side {
                let row = ((ci * side + ky) * side + kx) * n;
                let dx = kx as isize - half as isize;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - half as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = sy as usize * w;
                    let dst = row + y * w;
                    let s0 = (src as isize + x_lo as isize + dx) as usize;
                    cols[dst + x_lo..dst + x_hi].copy_from_slice(&plane[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back into a C×H×W array.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, half: usize) -> Array3 {
    let side = 2 * half + 1;
    let n = h * w;
    let mut out = Array3::zeros(c, h, w);
    for ci in 0..c {
        let plane = out.plane_mut(ci);
        for ky in 0..side {
            for kx in 0..side {
                let row = ((ci * side + ky) * side + kx) * n;
                let dx = kx as isize - half as isize;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - half as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = row + y * w;
                    let d0 = (sy as isize * w as isize + x_lo as isize + dx) as usize;
                    for (d, s) in plane[d0..d0 + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&cols[src + x_lo..src + x_hi])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

fn check_channels(p: &MaskedMap, kern: &ConvKernel) -> Result<()> {
    if p.channels() != kern.c_in() {
        return Err(dim_err(format!(
            "si_conv: input has {} channels, kernel expects {}",
            p.channels(),
            kern.c_in()
        )));
    }
    Ok(())
}

/// Sparsity-invariant convolution, stride 1, same-size output.
///
/// `z(u,v) = Σ m·w·x / (Σ m + ε) + b` over the window; the output mask is
/// the window max-pool of the input mask and invalid outputs stay zero.
pub fn si_conv_forward(p: &MaskedMap, kern: &ConvKernel) -> Result<MaskedMap> {
    check_channels(p, kern)?;
    let (h, w) = (p.height(), p.width());
    let n = h * w;
    let half = kern.half();
    let sums = window_mask_sum(p.mask(), half);
    let out_mask = Mask2::from_fn(h, w, |y, x| sums[y * w + x] > 0.0);

    let cols = im2col(&p.masked_features(), half);
    let kk = kern.c_in() * kern.side() * kern.side();
    let mut z = vec![0.0; kern.c_out() * n];
    gemm(kern.c_out(), kk, n, kern.weights(), false, &cols, false, 0.0, &mut z);
    for (co, plane) in z.chunks_mut(n).enumerate() {
        let b = kern.bias()[co];
        for ((v, s), m) in plane.iter_mut().zip(&sums).zip(out_mask.data()) {
            *v = if *m != 0.0 { *v / (s + EPS) + b } else { 0.0 };
        }
    }
    MaskedMap::raw(Array3::from_vec(kern.c_out(), h, w, z)?, out_mask)
}

/// Gradients of [`si_conv_forward`] w.r.t. input features, weights and bias.
pub fn si_conv_backward(p: &MaskedMap, kern: &ConvKernel, d_out: &Array3) -> Result<OpGrad> {
    check_channels(p, kern)?;
    let (h, w) = (p.height(), p.width());
    check_grad_shape(d_out, kern.c_out(), h, w, "si_conv_backward")?;
    let n = h * w;
    let half = kern.half();
    let sums = window_mask_sum(p.mask(), half);

    // upstream gradient restricted to valid outputs, then scaled by 1/(S+ε)
    let mut d_bias = vec![0.0; kern.c_out()];
    let mut dn = d_out.data().to_vec();
    for (co, plane) in dn.chunks_mut(n).enumerate() {
        for (v, s) in plane.iter_mut().zip(&sums) {
            if *s > 0.0 {
                d_bias[co] += *v;
                *v /= s + EPS;
            } else {
                *v = 0.0;
            }
        }
    }

    let cols = im2col(&p.masked_features(), half);
    let kk = kern.c_in() * kern.side() * kern.side();
    let mut d_w = vec![0.0; kern.c_out() * kk];
    gemm(kern.c_out(), n, kk, &dn, false, &cols, true, 0.0, &mut d_w);

    let mut d_cols = cols;
    gemm(kk, kern.c_out(), n, kern.weights(), true, &dn, false, 0.0, &mut d_cols);
    let mut d_x = col2im(&d_cols, kern.c_in(), h, w, half);
    zero_invalid(&mut d_x, p.mask());

    Ok(OpGrad {
        inputs: vec![d_x],
        params: Some(ParamGrad::Conv(ConvKernel::new(
            kern.c_out(),
            kern.c_in(),
            half,
            d_w,
            d_bias,
        )?)),
    })
}
