//! Dense C×H×W arrays, binary masks, and the masked feature map every
//! sparsity-invariant operator consumes and produces.

use crate::error::{dim_err, Error, Result};

/// Guard added to every normalizing denominator.
pub const EPS: f64 = 1e-8;

/// Row-major C×H×W array of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Array3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Array3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(dim_err(format!(
                "data length {} does not match shape {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Array3) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_same_shape(&self, other: &Array3, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(dim_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            )))
        }
    }

    /// Adds `other` into `self` elementwise.
    pub fn add_assign(&mut self, other: &Array3) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Array3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn elementwise_mul(a: &Array3, b: &Array3) -> Result<Array3> {
    a.check_same_shape(b, "elementwise_mul")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Array3::from_vec(a.channels, a.height, a.width, data)
}

pub fn elementwise_add(a: &Array3, b: &Array3) -> Result<Array3> {
    a.check_same_shape(b, "elementwise_add")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Array3::from_vec(a.channels, a.height, a.width, data)
}

/// `num / (den + eps)`, with a zero numerator always giving exactly zero.
#[inline]
pub fn div_eps(num: f64, den: f64, eps: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / (den + eps)
    }
}

/// Elementwise [`div_eps`]. Denominators must be non-negative.
pub fn scalar_div_eps(num: &Array3, den: &Array3, eps: f64) -> Result<Array3> {
    num.check_same_shape(den, "scalar_div_eps")?;
    if let Some(d) = den.data.iter().find(|d| **d < 0.0) {
        return Err(Error::Range(format!("negative denominator {d}")));
    }
    let data = num
        .data
        .iter()
        .zip(&den.data)
        .map(|(n, d)| div_eps(*n, *d, eps))
        .collect();
    Array3::from_vec(num.channels, num.height, num.width, data)
}

/// Single-channel binary validity mask stored as 0.0 / 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask2 {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Mask2 {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(dim_err(format!(
                "mask length {} does not match {}x{}",
                data.len(),
                height,
                width
            )));
        }
        if let Some(v) = data.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::Range(format!("mask value {v} is not binary")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_bools(height: usize, width: usize, bits: &[bool]) -> Result<Self> {
        Self::from_vec(
            height,
            width,
            bits.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect(),
        )
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(if f(y, x) { 1.0 } else { 0.0 });
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0.0
    }

    pub fn set(&mut self, y: usize, x: usize, valid: bool) {
        self.data[y * self.width + x] = if valid { 1.0 } else { 0.0 };
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0 || *v == 1.0)
    }

    /// Elementwise OR.
    pub fn or(&self, other: &Mask2) -> Result<Mask2> {
        if self.height != other.height || self.width != other.width {
            return Err(dim_err(format!(
                "mask shapes {}x{} and {}x{} differ",
                self.height, self.width, other.height, other.width
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| if *a != 0.0 || *b != 0.0 { 1.0 } else { 0.0 })
            .collect();
        Ok(Mask2 {
            height: self.height,
            width: self.width,
            data,
        })
    }
}

/// A feature map paired with its validity mask.
///
/// Library operators always emit the canonical form (features are zero where
/// the mask is zero), but accept non-canonical inputs and never read features
/// at invalid locations.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMap {
    features: Array3,
    mask: Mask2,
}

impl MaskedMap {
    /// Pairs features with a mask without zeroing invalid locations.
    pub fn raw(features: Array3, mask: Mask2) -> Result<Self> {
        if features.height != mask.height || features.width != mask.width {
            return Err(dim_err(format!(
                "features {:?} and mask {}x{} are not spatially compatible",
                features.shape(),
                mask.height,
                mask.width
            )));
        }
        Ok(Self { features, mask })
    }

    pub fn features(&self) -> &Array3 {
        &self.features
    }

    pub fn mask(&self) -> &Mask2 {
        &self.mask
    }

    pub fn into_parts(self) -> (Array3, Mask2) {
        (self.features, self.mask)
    }

    pub fn channels(&self) -> usize {
        self.features.channels
    }

    pub fn height(&self) -> usize {
        self.features.height
    }

    pub fn width(&self) -> usize {
        self.features.width
    }

    pub fn is_canonical(&self) -> bool {
        let n = self.features.plane_len();
        self.features
            .data
            .chunks(n)
            .all(|plane| plane.iter().zip(&self.mask.data).all(|(f, m)| *m != 0.0 || *f == 0.0))
    }

    /// Features with every mask-0 location zeroed.
    pub fn masked_features(&self) -> Array3 {
        let mut out = self.features.clone();
        zero_invalid(&mut out, &self.mask);
        out
    }

    pub fn canonical(&self) -> MaskedMap {
        MaskedMap {
            features: self.masked_features(),
            mask: self.mask.clone(),
        }
    }
}

/// Builds a canonical masked map: features are `x ⊙ m` broadcast over channels.
pub fn canonicalize(x: Array3, m: Mask2) -> Result<MaskedMap> {
    let mut p = MaskedMap::raw(x, m)?;
    zero_invalid(&mut p.features, &p.mask);
    Ok(p)
}

/// Zeroes every channel of `a` where `m` is 0.
pub fn zero_invalid(a: &mut Array3, m: &Mask2) {
    let n = a.plane_len();
    debug_assert_eq!(n, m.data.len());
    for plane in a.data.chunks_mut(n) {
        for (v, mv) in plane.iter_mut().zip(&m.data) {
            if *mv == 0.0 {
                *v = 0.0;
            }
        }
    }
}
