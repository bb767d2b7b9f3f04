//! Central finite-difference checks of every backward pass.
//!
//! Each check builds a small random instance, takes the scalar objective
//! `L = Σ r ⊙ out` for a fixed random `r`, and compares the analytic
//! gradient with `(L(θ+h) − L(θ−h)) / 2h` entry by entry.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig, ParamStore};
use crate::ops::{self, AdaptiveKernel, ConvKernel, Scenario};
use crate::oracle::{random_adaptive_kernel, random_conv_kernel, random_map};
use crate::tensor::{Array3, Mask2, MaskedMap};
use crate::trainer::masked_mse_loss;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Default per-operator tolerance.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Default whole-network tolerance.
pub const NETWORK_TOLERANCE: f64 = 1e-3;
/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Operators with a checkable backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpName {
    SiConv,
    SiUpsample,
    SiMaxpool,
    SiAverage,
    SiConcatConv,
    ReluMasked,
}

impl OpName {
    pub const ALL: [OpName; 6] = [
        OpName::SiConv,
        OpName::SiUpsample,
        OpName::SiMaxpool,
        OpName::SiAverage,
        OpName::SiConcatConv,
        OpName::ReluMasked,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OpName::SiConv => "si_conv",
            OpName::SiUpsample => "si_upsample",
            OpName::SiMaxpool => "si_maxpool",
            OpName::SiAverage => "si_average",
            OpName::SiConcatConv => "si_concat_conv",
            OpName::ReluMasked => "relu_masked",
        }
    }
}

impl fmt::Display for OpName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpName::ALL
            .into_iter()
            .find(|op| op.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown operator '{s}'")))
    }
}

/// Worst relative error per parameter group.
#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub groups: Vec<(String, f64)>,
    pub checked: usize,
}

impl GradReport {
    fn record(&mut self, group: &str, err: f64) {
        self.checked += 1;
        match self.groups.iter_mut().find(|(g, _)| g == group) {
            Some((_, e)) => *e = e.max(err),
            None => self.groups.push((group.to_string(), err)),
        }
    }

    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_error() < tolerance
    }

    pub fn merge(&mut self, other: &GradReport) {
        for (g, e) in &other.groups {
            match self.groups.iter_mut().find(|(n, _)| n == g) {
                Some((_, x)) => *x = x.max(*e),
                None => self.groups.push((g.clone(), *e)),
            }
        }
        self.checked += other.checked;
    }
}

fn dot(a: &Array3, b: &Array3) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn random_like<R: Rng>(rng: &mut R, c: usize, h: usize, w: usize) -> Array3 {
    Array3::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
}

fn with_feature(p: &MaskedMap, i: usize, delta: f64) -> MaskedMap {
    let mut f = p.features().clone();
    f.data_mut()[i] += delta;
    MaskedMap::raw(f, p.mask().clone()).expect("same shape")
}

/// Checks input-feature gradients at valid entries. `skip` lets nonsmooth
/// operators exclude entries too close to a kink.
fn check_inputs(
    report: &mut GradReport,
    group: &str,
    p: &MaskedMap,
    analytic: &Array3,
    skip: impl Fn(usize) -> bool,
    objective: impl Fn(&MaskedMap) -> f64,
) {
    let n = p.height() * p.width();
    for i in 0..p.features().data().len() {
        if p.mask().data()[i % n] == 0.0 || skip(i) {
            continue;
        }
        let num = (objective(&with_feature(p, i, STEP)) - objective(&with_feature(p, i, -STEP))) / (2.0 * STEP);
        report.record(group, relative_error(analytic.data()[i], num));
    }
}

fn check_slice(
    report: &mut GradReport,
    group: &str,
    analytic: &[f64],
    len: usize,
    objective: impl Fn(usize, f64) -> f64,
) {
    for i in 0..len {
        let num = (objective(i, STEP) - objective(i, -STEP)) / (2.0 * STEP);
        report.record(group, relative_error(analytic[i], num));
    }
}

fn perturb_conv(k: &ConvKernel, bias: bool, i: usize, d: f64) -> ConvKernel {
    let mut k = k.clone();
    if bias {
        k.bias_mut()[i] += d;
    } else {
        k.weights_mut()[i] += d;
    }
    k
}

fn perturb_adaptive(k: &AdaptiveKernel, set: Option<Scenario>, i: usize, d: f64) -> AdaptiveKernel {
    let mut k = k.clone();
    match set {
        Some(s) => k.set_mut(s)[i] += d,
        None => k.bias_mut()[i] += d,
    }
    k
}

/// Runs the finite-difference check of one operator on a seeded instance.
pub fn check_op(op: OpName, seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport::default();
    let c = rng.gen_range(1..=3);
    let (h, w) = (2 * rng.gen_range(2..=3), 2 * rng.gen_range(2..=3));
    let density = rng.gen_range(0.3..0.8);
    match op {
        OpName::SiConv => {
            let p = random_map(&mut rng, c, h, w, density);
            let c_out = rng.gen_range(1..=3);
            let kern = random_conv_kernel(&mut rng, c_out, c, 1);
            let r = random_like(&mut rng, c_out, h, w);
            let g = ops::si_conv_backward(&p, &kern, &r)?;
            let dk = g.conv().expect("conv grad");
            let obj = |p: &MaskedMap, k: &ConvKernel| dot(ops::si_conv_forward(p, k).unwrap().features(), &r);
            check_inputs(&mut report, "input", &p, g.input(0), |_| false, |q| obj(q, &kern));
            check_slice(&mut report, "weights", dk.weights(), dk.weights().len(), |i, d| {
                obj(&p, &perturb_conv(&kern, false, i, d))
            });
            check_slice(&mut report, "bias", dk.bias(), dk.bias().len(), |i, d| {
                obj(&p, &perturb_conv(&kern, true, i, d))
            });
        }
        OpName::SiUpsample => {
            let p = random_map(&mut rng, c, h / 2, w / 2, density);
            let r = random_like(&mut rng, c, h, w);
            let g = ops::si_upsample_backward(&p, &r)?;
            check_inputs(&mut report, "input", &p, g.input(0), |_| false, |q| {
                dot(ops::si_upsample_forward(q).unwrap().features(), &r)
            });
        }
        OpName::SiMaxpool => {
            let p = random_map(&mut rng, c, h, w, density);
            let r = random_like(&mut rng, c, h / 2, w / 2);
            let g = ops::si_maxpool_backward(&p, &r)?;
            let near_tie = |i: usize| {
                let f = p.features();
                let n = h * w;
                let (ci, y, x) = (i / n, (i % n) / w, i % w);
                let (oy, ox) = (y / 2 * 2, x / 2 * 2);
                let v = f.get(ci, y, x);
                (oy..oy + 2).any(|yy| {
                    (ox..ox + 2).any(|xx| {
                        (yy, xx) != (y, x) && p.mask().is_valid(yy, xx) && (f.get(ci, yy, xx) - v).abs() < 4.0 * STEP
                    })
                })
            };
            check_inputs(&mut report, "input", &p, g.input(0), near_tie, |q| {
                dot(ops::si_maxpool(q, 2).unwrap().features(), &r)
            });
        }
        OpName::SiAverage => {
            let p = random_map(&mut rng, c, h, w, density);
            let q = random_map(&mut rng, c, h, w, density);
            let r = random_like(&mut rng, c, h, w);
            let g = ops::si_average_backward(&p, &q, &r)?;
            check_inputs(&mut report, "input_x", &p, g.input(0), |_| false, |a| {
                dot(ops::si_average(a, &q).unwrap().features(), &r)
            });
            check_inputs(&mut report, "input_y", &q, g.input(1), |_| false, |b| {
                dot(ops::si_average(&p, b).unwrap().features(), &r)
            });
        }
        OpName::SiConcatConv => {
            let c2 = rng.gen_range(1..=3);
            let c_out = rng.gen_range(1..=3);
            let p = random_map(&mut rng, c, h, w, density);
            let q = random_map(&mut rng, c2, h, w, density);
            let ak = random_adaptive_kernel(&mut rng, c_out, c, c2);
            let r = random_like(&mut rng, c_out, h, w);
            let g = ops::si_concat_conv_backward(&p, &q, &ak, &r)?;
            let dk = g.adaptive().expect("adaptive grad");
            let obj = |a: &MaskedMap, b: &MaskedMap, k: &AdaptiveKernel| {
                dot(ops::si_concat_conv_forward(a, b, k).unwrap().features(), &r)
            };
            check_inputs(&mut report, "input_x", &p, g.input(0), |_| false, |a| obj(a, &q, &ak));
            check_inputs(&mut report, "input_y", &q, g.input(1), |_| false, |b| obj(&p, b, &ak));
            for (name, s) in [("k1", Scenario::FirstOnly), ("k2", Scenario::SecondOnly), ("k3", Scenario::Both)] {
                check_slice(&mut report, name, dk.set(s), dk.set(s).len(), |i, d| {
                    obj(&p, &q, &perturb_adaptive(&ak, Some(s), i, d))
                });
            }
            check_slice(&mut report, "bias", dk.bias(), dk.bias().len(), |i, d| {
                obj(&p, &q, &perturb_adaptive(&ak, None, i, d))
            });
        }
        OpName::ReluMasked => {
            let p = random_map(&mut rng, c, h, w, density);
            let r = random_like(&mut rng, c, h, w);
            let g = ops::relu_masked_backward(&p, &r)?;
            let f = p.features().clone();
            check_inputs(&mut report, "input", &p, g.input(0), |i| f.data()[i].abs() < 4.0 * STEP, |q| {
                dot(ops::relu_masked(q).unwrap().features(), &r)
            });
        }
    }
    Ok(report)
}

/// Finite-difference check of the whole network on an 8×8 input against
/// the masked MSE objective, over `samples` randomly chosen scalar
/// parameters.
pub fn check_network(seed: u64, samples: usize) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (8, 8);
    let net = Network::new(NetworkConfig::default());
    let mut store = ParamStore::new();
    net.init_params(&mut store, &mut rng);

    let depth = random_map(&mut rng, 1, h, w, 0.4);
    let depth = {
        let f = Array3::from_fn(1, h, w, |_, y, x| 2.0 + depth.features().get(0, y, x).abs() * 10.0);
        crate::tensor::canonicalize(f, depth.mask().clone())?
    };
    let gt = Array3::from_fn(1, h, w, |_, _, _| rng.gen_range(2.0..12.0));
    let gt_mask = Mask2::from_fn(h, w, |_, _| rng.gen::<f64>() < 0.7);

    let loss_of = |s: &ParamStore| -> f64 {
        let (pred, _) = net.forward(&depth, s).unwrap();
        masked_mse_loss(&pred, &gt, &gt_mask).unwrap().0
    };

    let (pred, tape) = net.forward(&depth, &store)?;
    let (_, d_pred) = masked_mse_loss(&pred, &gt, &gt_mask)?;
    let grads = net.backward(&tape, &d_pred, &store)?;

    let total = store.total_len();
    let mut report = GradReport::default();
    for flat in sample(&mut rng, total, samples.min(total)).into_iter() {
        let (name, idx) = store.locate(flat).expect("index within total");
        let mut plus = store.clone();
        plus.value_mut(&name).expect("known name")[idx] += STEP;
        let mut minus = store.clone();
        minus.value_mut(&name).expect("known name")[idx] -= STEP;
        let num = (loss_of(&plus) - loss_of(&minus)) / (2.0 * STEP);
        let analytic = grads.get(&name).expect("grad for every param")[idx];
        report.record(&name, relative_error(analytic, num));
    }
    Ok(report)
}
