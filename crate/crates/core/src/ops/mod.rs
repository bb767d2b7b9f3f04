//! Sparsity-invariant operators with explicit forward and backward passes.
//!
//! Every forward returns a canonical [`MaskedMap`]; every backward returns an
//! [`OpGrad`] whose input gradients are zero wherever the corresponding input
//! mask is zero. Features at invalid locations are never read.

mod average;
mod concat_conv;
mod conv;
pub(crate) mod gemm;
mod pool;
mod relu;
mod upsample;

pub use average::{si_average, si_average_backward};
pub use concat_conv::{si_concat_conv_backward, si_concat_conv_forward};
pub use conv::{conv_output_mask, si_conv_backward, si_conv_forward, window_mask_sum};
pub use pool::{si_maxpool, si_maxpool_backward};
pub use relu::{relu_masked, relu_masked_backward};
pub use upsample::{bilinear_up2, bilinear_up2_adjoint, si_upsample_backward, si_upsample_forward, UPSAMPLE_MASK_THRESHOLD};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Array3;

/// Weights and bias of a (2k+1)×(2k+1) sparsity-invariant convolution.
///
/// Weights are stored `[c_out][c_in][ky][kx]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    c_out: usize,
    c_in: usize,
    half: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvKernel {
    pub fn new(c_out: usize, c_in: usize, half: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let side = 2 * half + 1;
        if weights.len() != c_out * c_in * side * side {
            return Err(dim_err(format!(
                "conv weights length {} does not match {c_out}x{c_in}x{side}x{side}",
                weights.len()
            )));
        }
        if bias.len() != c_out {
            return Err(dim_err(format!("conv bias length {} != {c_out}", bias.len())));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Range("conv kernel has non-finite values".into()));
        }
        Ok(Self {
            c_out,
            c_in,
            half,
            weights,
            bias,
        })
    }

    pub fn zeros(c_out: usize, c_in: usize, half: usize) -> Self {
        let side = 2 * half + 1;
        Self {
            c_out,
            c_in,
            half,
            weights: vec![0.0; c_out * c_in * side * side],
            bias: vec![0.0; c_out],
        }
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    /// Half-width k of the (2k+1)-wide window.
    pub fn half(&self) -> usize {
        self.half
    }

    pub fn side(&self) -> usize {
        2 * self.half + 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    #[inline]
    pub fn weight(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f64 {
        let s = self.side();
        self.weights[((co * self.c_in + ci) * s + ky) * s + kx]
    }
}

/// Three 1×1 weight sets for joint concatenation and convolution, selected
/// per pixel by which of the two inputs is valid. Each set is
/// `[c_out][c1 + c2]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveKernel {
    c_out: usize,
    c1: usize,
    c2: usize,
    sets: [Vec<f64>; 3],
    bias: Vec<f64>,
}

/// Which inputs are valid at a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    FirstOnly,
    SecondOnly,
    Both,
}

impl Scenario {
    pub fn of(first: bool, second: bool) -> Option<Scenario> {
        match (first, second) {
            (true, false) => Some(Scenario::FirstOnly),
            (false, true) => Some(Scenario::SecondOnly),
            (true, true) => Some(Scenario::Both),
            (false, false) => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Scenario::FirstOnly => 0,
            Scenario::SecondOnly => 1,
            Scenario::Both => 2,
        }
    }
}

impl AdaptiveKernel {
    pub fn new(c_out: usize, c1: usize, c2: usize, sets: [Vec<f64>; 3], bias: Vec<f64>) -> Result<Self> {
        let n = c_out * (c1 + c2);
        if sets.iter().any(|s| s.len() != n) {
            return Err(dim_err(format!(
                "adaptive kernel sets must each hold {c_out}x{} weights",
                c1 + c2
            )));
        }
        if bias.len() != c_out {
            return Err(dim_err(format!("adaptive bias length {} != {c_out}", bias.len())));
        }
        if sets.iter().flatten().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Range("adaptive kernel has non-finite values".into()));
        }
        Ok(Self {
            c_out,
            c1,
            c2,
            sets,
            bias,
        })
    }

    pub fn zeros(c_out: usize, c1: usize, c2: usize) -> Self {
        let n = c_out * (c1 + c2);
        Self {
            c_out,
            c1,
            c2,
            sets: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            bias: vec![0.0; c_out],
        }
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c1(&self) -> usize {
        self.c1
    }

    pub fn c2(&self) -> usize {
        self.c2
    }

    pub fn set(&self, s: Scenario) -> &[f64] {
        &self.sets[s.index()]
    }

    pub fn set_mut(&mut self, s: Scenario) -> &mut [f64] {
        &mut self.sets[s.index()]
    }

    pub fn sets(&self) -> &[Vec<f64>; 3] {
        &self.sets
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}

/// Parameter gradient of an operator, shaped like its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrad {
    Conv(ConvKernel),
    Adaptive(AdaptiveKernel),
}

/// Gradients returned by a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct OpGrad {
    /// One entry per input map, shaped like that input's features.
    pub inputs: Vec<Array3>,
    pub params: Option<ParamGrad>,
}

impl OpGrad {
    pub fn input(&self, i: usize) -> &Array3 {
        &self.inputs[i]
    }

    pub fn conv(&self) -> Option<&ConvKernel> {
        match &self.params {
            Some(ParamGrad::Conv(k)) => Some(k),
            _ => None,
        }
    }

    pub fn adaptive(&self) -> Option<&AdaptiveKernel> {
        match &self.params {
            Some(ParamGrad::Adaptive(k)) => Some(k),
            _ => None,
        }
    }
}

pub(crate) fn check_grad_shape(d_out: &Array3, c: usize, h: usize, w: usize, op: &str) -> Result<()> {
    if d_out.shape() != (c, h, w) {
        return Err(dim_err(format!(
            "{op}: upstream gradient {:?} does not match output ({c}, {h}, {w})",
            d_out.shape()
        )));
    }
    Ok(())
}
