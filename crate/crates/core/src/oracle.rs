//! Naive per-pixel reference implementations and random instance builders.
//!
//! Nothing here shares code with the fast operator paths in [`crate::ops`];
//! each function evaluates the defining formula directly with nested loops
//! so it can serve as an independent check.

use rand::Rng;

use crate::ops::{AdaptiveKernel, ConvKernel, Scenario};
use crate::tensor::{Array3, Mask2, MaskedMap, EPS};

/// Sparsity-invariant convolution computed one output pixel at a time.
pub fn naive_si_conv(p: &MaskedMap, kern: &ConvKernel) -> (Array3, Mask2) {
    let (c_in, h, w) = p.features().shape();
    let k = kern.half() as isize;
    let mut z = Array3::zeros(kern.c_out(), h, w);
    let mut mz = Mask2::zeros(h, w);
    for u in 0..h as isize {
        for v in 0..w as isize {
            let mut msum = 0.0;
            for i in -k..=k {
                for j in -k..=k {
                    let (y, x) = (u + i, v + j);
                    if y >= 0 && y < h as isize && x >= 0 && x < w as isize {
                        msum += p.mask().get(y as usize, x as usize);
                    }
                }
            }
            if msum == 0.0 {
                continue;
            }
            mz.set(u as usize, v as usize, true);
            for co in 0..kern.c_out() {
                let mut num = 0.0;
                for ci in 0..c_in {
                    for i in -k..=k {
                        for j in -k..=k {
                            let (y, x) = (u + i, v + j);
                            if y < 0 || y >= h as isize || x < 0 || x >= w as isize {
                                continue;
                            }
                            let m = p.mask().get(y as usize, x as usize);
                            if m == 0.0 {
                                continue;
                            }
                            num += m
                                * kern.weight(co, ci, (i + k) as usize, (j + k) as usize)
                                * p.features().get(ci, y as usize, x as usize);
                        }
                    }
                }
                z.set(co, u as usize, v as usize, num / (msum + EPS) + kern.bias()[co]);
            }
        }
    }
    (z, mz)
}

/// Conventional zero-padded convolution (cross-correlation), stride 1.
pub fn dense_conv(x: &Array3, kern: &ConvKernel, weight_scale: f64) -> Array3 {
    let (c_in, h, w) = x.shape();
    let k = kern.half() as isize;
    Array3::from_fn(kern.c_out(), h, w, |co, u, v| {
        let mut acc = kern.bias()[co];
        for ci in 0..c_in {
            for i in -k..=k {
                for j in -k..=k {
                    let (y, xx) = (u as isize + i, v as isize + j);
                    if y >= 0 && y < h as isize && xx >= 0 && xx < w as isize {
                        acc += weight_scale
                            * kern.weight(co, ci, (i + k) as usize, (j + k) as usize)
                            * x.get(ci, y as usize, xx as usize);
                    }
                }
            }
        }
        acc
    })
}

/// Bilinear sample of plane `c` of `a` at fractional source coordinate
/// `(sy, sx)` with clamp-to-edge.
fn bilinear_sample(a: &Array3, c: usize, sy: f64, sx: f64) -> f64 {
    let (h, w) = (a.height() as isize, a.width() as isize);
    let y0 = sy.floor();
    let x0 = sx.floor();
    let (fy, fx) = (sy - y0, sx - x0);
    let clamp = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let (y0, x0) = (y0 as isize, x0 as isize);
    let g = |y: isize, x: isize| a.get(c, clamp(y, h), clamp(x, w));
    (1.0 - fy) * ((1.0 - fx) * g(y0, x0) + fx * g(y0, x0 + 1)) + fy * ((1.0 - fx) * g(y0 + 1, x0) + fx * g(y0 + 1, x0 + 1))
}

/// Plain bilinear 2× upsample evaluated per output pixel.
pub fn naive_bilinear_up2(a: &Array3) -> Array3 {
    Array3::from_fn(a.channels(), 2 * a.height(), 2 * a.width(), |c, u, v| {
        bilinear_sample(a, c, (u as f64 + 0.5) / 2.0 - 0.5, (v as f64 + 0.5) / 2.0 - 0.5)
    })
}

/// Sparsity-invariant upsampling evaluated per output pixel.
pub fn naive_si_upsample(p: &MaskedMap) -> (Array3, Mask2) {
    let (c, h, w) = p.features().shape();
    let mut mx = Array3::zeros(c, h, w);
    let mut m = Array3::zeros(1, h, w);
    for y in 0..h {
        for x in 0..w {
            let valid = p.mask().get(y, x);
            m.set(0, y, x, valid);
            for ci in 0..c {
                if valid != 0.0 {
                    mx.set(ci, y, x, p.features().get(ci, y, x));
                }
            }
        }
    }
    let mut z = Array3::zeros(c, 2 * h, 2 * w);
    let mut mz = Mask2::zeros(2 * h, 2 * w);
    for u in 0..2 * h {
        for v in 0..2 * w {
            let (sy, sx) = ((u as f64 + 0.5) / 2.0 - 0.5, (v as f64 + 0.5) / 2.0 - 0.5);
            let fm = bilinear_sample(&m, 0, sy, sx);
            if fm > 1e-6 {
                mz.set(u, v, true);
                for ci in 0..c {
                    z.set(ci, u, v, bilinear_sample(&mx, ci, sy, sx) / (fm + EPS));
                }
            }
        }
    }
    (z, mz)
}

/// 2×2 stride-2 max-pool that skips invalid entries.
pub fn naive_si_maxpool(p: &MaskedMap) -> (Array3, Mask2) {
    let (c, h, w) = p.features().shape();
    let mut z = Array3::zeros(c, h / 2, w / 2);
    let mut mz = Mask2::zeros(h / 2, w / 2);
    for ci in 0..c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let mut best = f64::NEG_INFINITY;
                for y in 2 * oy..2 * oy + 2 {
                    for x in 2 * ox..2 * ox + 2 {
                        if p.mask().get(y, x) == 1.0 {
                            best = best.max(p.features().get(ci, y, x));
                        }
                    }
                }
                if best > f64::NEG_INFINITY {
                    z.set(ci, oy, ox, best);
                    mz.set(oy, ox, true);
                }
            }
        }
    }
    (z, mz)
}

/// Sparsity-invariant average evaluated per pixel.
pub fn naive_si_average(p: &MaskedMap, q: &MaskedMap) -> (Array3, Mask2) {
    let (c, h, w) = p.features().shape();
    let mut z = Array3::zeros(c, h, w);
    let mut mz = Mask2::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (p.mask().get(y, x), q.mask().get(y, x));
            if a == 0.0 && b == 0.0 {
                continue;
            }
            mz.set(y, x, true);
            for ci in 0..c {
                let xa = if a == 1.0 { p.features().get(ci, y, x) } else { 0.0 };
                let yb = if b == 1.0 { q.features().get(ci, y, x) } else { 0.0 };
                z.set(ci, y, x, (a * xa + b * yb) / (a + b + EPS));
            }
        }
    }
    (z, mz)
}

/// Joint concatenation + 1×1 convolution, dispatching on `(m_x, m_y)` per pixel.
pub fn naive_si_concat_conv(p: &MaskedMap, q: &MaskedMap, ak: &AdaptiveKernel) -> (Array3, Mask2) {
    let (c1, h, w) = p.features().shape();
    let c2 = q.channels();
    let cin = c1 + c2;
    let mut z = Array3::zeros(ak.c_out(), h, w);
    let mut mz = Mask2::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (p.mask().is_valid(y, x), q.mask().is_valid(y, x));
            let Some(s) = Scenario::of(a, b) else { continue };
            mz.set(y, x, true);
            let k = ak.set(s);
            for co in 0..ak.c_out() {
                let mut acc = ak.bias()[co];
                for ci in 0..c1 {
                    if a {
                        acc += k[co * cin + ci] * p.features().get(ci, y, x);
                    }
                }
                for ci in 0..c2 {
                    if b {
                        acc += k[co * cin + c1 + ci] * q.features().get(ci, y, x);
                    }
                }
                z.set(co, y, x, acc);
            }
        }
    }
    (z, mz)
}

/// Plain 1×1 convolution of the channel concatenation `[x; y]`.
pub fn dense_concat_conv(x: &Array3, y: &Array3, weights: &[f64], bias: &[f64]) -> Array3 {
    let (c1, h, w) = x.shape();
    let c2 = y.channels();
    let cin = c1 + c2;
    Array3::from_fn(bias.len(), h, w, |co, u, v| {
        let mut acc = bias[co];
        for ci in 0..c1 {
            acc += weights[co * cin + ci] * x.get(ci, u, v);
        }
        for ci in 0..c2 {
            acc += weights[co * cin + c1 + ci] * y.get(ci, u, v);
        }
        acc
    })
}

/// Random mask with roughly `density` valid pixels.
pub fn random_mask<R: Rng>(rng: &mut R, h: usize, w: usize, density: f64) -> Mask2 {
    Mask2::from_fn(h, w, |_, _| rng.gen::<f64>() < density)
}

/// Random features in [-1, 1) paired with `mask`, left non-canonical: mask-0
/// locations carry values too, so any operator that reads them is caught.
pub fn random_raw_map<R: Rng>(rng: &mut R, c: usize, mask: Mask2) -> MaskedMap {
    let (h, w) = (mask.height(), mask.width());
    let f = Array3::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0));
    MaskedMap::raw(f, mask).expect("shapes agree")
}

pub fn random_map<R: Rng>(rng: &mut R, c: usize, h: usize, w: usize, density: f64) -> MaskedMap {
    let m = random_mask(rng, h, w, density);
    random_raw_map(rng, c, m).canonical()
}

pub fn random_conv_kernel<R: Rng>(rng: &mut R, c_out: usize, c_in: usize, half: usize) -> ConvKernel {
    let side = 2 * half + 1;
    let weights = (0..c_out * c_in * side * side).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bias = (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ConvKernel::new(c_out, c_in, half, weights, bias).expect("consistent shape")
}

pub fn random_adaptive_kernel<R: Rng>(rng: &mut R, c_out: usize, c1: usize, c2: usize) -> AdaptiveKernel {
    let n = c_out * (c1 + c2);
    let mut set = || (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let sets = [set(), set(), set()];
    let bias = (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
    AdaptiveKernel::new(c_out, c1, c2, sets, bias).expect("consistent shape")
}

/// Adds garbage in [-50, 50) to every feature at mask-0 locations.
pub fn inject_garbage<R: Rng>(rng: &mut R, p: &MaskedMap) -> MaskedMap {
    let mut f = p.features().clone();
    let (c, h, w) = f.shape();
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                if !p.mask().is_valid(y, x) {
                    let v = f.get(ci, y, x) + rng.gen_range(-50.0..50.0);
                    f.set(ci, y, x, v);
                }
            }
        }
    }
    MaskedMap::raw(f, p.mask().clone()).expect("shapes agree")
}

/// Plain 2D max-pool of a mask with a (2k+1)² window and zero padding.
pub fn naive_window_maxpool(mask: &Mask2, half: usize) -> Mask2 {
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let k = half as isize;
    Mask2::from_fn(mask.height(), mask.width(), |u, v| {
        let mut any = false;
        for i in -k..=k {
            for j in -k..=k {
                let (y, x) = (u as isize + i, v as isize + j);
                if y >= 0 && y < h && x >= 0 && x < w && mask.is_valid(y as usize, x as usize) {
                    any = true;
                }
            }
        }
        any
    })
}
