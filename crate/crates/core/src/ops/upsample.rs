use super::{check_grad_shape, OpGrad};
use crate::error::Result;
use crate::tensor::{zero_invalid, Array3, Mask2, MaskedMap, EPS};

/// `F(m) > threshold` marks an upsampled location as valid.
pub const UPSAMPLE_MASK_THRESHOLD: f64 = 1e-6;

/// Two-tap interpolation weights for one output coordinate.
#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

/// Half-pixel-centre taps for a 2× upsample of an axis of length `n`,
/// clamped to the edge.
fn taps(n: usize) -> Vec<Tap> {
    (0..2 * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let f = src.floor();
            let frac = src - f;
            let clamp = |i: f64| (i.max(0.0) as usize).min(n - 1);
            Tap {
                i0: clamp(f),
                i1: clamp(f + 1.0),
                w0: 1.0 - frac,
                w1: frac,
            }
        })
        .collect()
}

fn up_plane(src: &[f64], h: usize, w: usize, ty: &[Tap], tx: &[Tap], dst: &mut [f64]) {
    let w2 = 2 * w;
    // columns first, then rows
    let mut tmp = vec![0.0; h * w2];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (ox, t) in tx.iter().enumerate() {
            tmp[y * w2 + ox] = t.w0 * row[t.i0] + t.w1 * row[t.i1];
        }
    }
    for (oy, t) in ty.iter().enumerate() {
        let (r0, r1) = (&tmp[t.i0 * w2..(t.i0 + 1) * w2], &tmp[t.i1 * w2..(t.i1 + 1) * w2]);
        for (ox, d) in dst[oy * w2..(oy + 1) * w2].iter_mut().enumerate() {
            *d = t.w0 * r0[ox] + t.w1 * r1[ox];
        }
    }
}

fn up_plane_adjoint(src: &[f64], h: usize, w: usize, ty: &[Tap], tx: &[Tap], dst: &mut [f64]) {
    let w2 = 2 * w;
    let mut tmp = vec![0.0; h * w2];
    for (oy, t) in ty.iter().enumerate() {
        for ox in 0..w2 {
            let g = src[oy * w2 + ox];
            tmp[t.i0 * w2 + ox] += t.w0 * g;
            tmp[t.i1 * w2 + ox] += t.w1 * g;
        }
    }
    for y in 0..h {
        for (ox, t) in tx.iter().enumerate() {
            let g = tmp[y * w2 + ox];
            dst[y * w + t.i0] += t.w0 * g;
            dst[y * w + t.i1] += t.w1 * g;
        }
    }
}

/// Plain bilinear 2× upsampling with half-pixel centres and edge clamping.
pub fn bilinear_up2(x: &Array3) -> Array3 {
    let (c, h, w) = x.shape();
    let (ty, tx) = (taps(h), taps(w));
    let mut out = Array3::zeros(c, 2 * h, 2 * w);
    for ci in 0..c {
        up_plane(x.plane(ci), h, w, &ty, &tx, out.plane_mut(ci));
    }
    out
}

/// Transpose of [`bilinear_up2`]: maps a 2H×2W array back to H×W.
pub fn bilinear_up2_adjoint(g: &Array3, h: usize, w: usize) -> Array3 {
    let c = g.channels();
    let (ty, tx) = (taps(h), taps(w));
    let mut out = Array3::zeros(c, h, w);
    for ci in 0..c {
        up_plane_adjoint(g.plane(ci), h, w, &ty, &tx, out.plane_mut(ci));
    }
    out
}

fn upsampled_mask(mask: &Mask2) -> Vec<f64> {
    let m = Array3::from_vec(1, mask.height(), mask.width(), mask.data().to_vec())
        .expect("mask shape is consistent");
    bilinear_up2(&m).into_vec()
}

/// Sparsity-invariant bilinear upsampling: `z = F(m⊙x) / (F(m) + ε)`,
/// `m_z = 1[F(m) > threshold]`. Output is 2H×2W.
pub fn si_upsample_forward(p: &MaskedMap) -> Result<MaskedMap> {
    let fm = upsampled_mask(p.mask());
    let (h2, w2) = (2 * p.height(), 2 * p.width());
    let out_mask = Mask2::from_bools(
        h2,
        w2,
        &fm.iter().map(|v| *v > UPSAMPLE_MASK_THRESHOLD).collect::<Vec<_>>(),
    )?;
    let mut z = bilinear_up2(&p.masked_features());
    let n = h2 * w2;
    for plane in z.data_mut().chunks_mut(n) {
        for ((v, f), m) in plane.iter_mut().zip(&fm).zip(out_mask.data()) {
            *v = if *m != 0.0 { *v / (f + EPS) } else { 0.0 };
        }
    }
    MaskedMap::raw(z, out_mask)
}

/// Gradient of [`si_upsample_forward`] w.r.t. input features. `F(m)` is a
/// constant of the features, so this is the adjoint stencil applied to
/// `d_out / (F(m) + ε)`.
pub fn si_upsample_backward(p: &MaskedMap, d_out: &Array3) -> Result<OpGrad> {
    let (c, h, w) = p.features().shape();
    check_grad_shape(d_out, c, 2 * h, 2 * w, "si_upsample_backward")?;
    let fm = upsampled_mask(p.mask());
    let mut scaled = d_out.clone();
    let n = 4 * h * w;
    for plane in scaled.data_mut().chunks_mut(n) {
        for (v, f) in plane.iter_mut().zip(&fm) {
            *v = if *f > UPSAMPLE_MASK_THRESHOLD { *v / (f + EPS) } else { 0.0 };
        }
    }
    let mut d_x = bilinear_up2_adjoint(&scaled, h, w);
    zero_invalid(&mut d_x, p.mask());
    Ok(OpGrad {
        inputs: vec![d_x],
        params: None,
    })
}
