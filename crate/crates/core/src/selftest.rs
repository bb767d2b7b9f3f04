//! The invariant suite behind `hmsnet selftest`: each property runs a few
//! seeded trials and reports pass/fail with its worst observed deviation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{decode_depth_pgm, encode_depth_pgm};
use crate::error::Result;
use crate::eval::compute_metrics;
use crate::gradcheck::{check_op, OpName, OP_TOLERANCE};
use crate::network::{Network, NetworkConfig, ParamStore};
use crate::ops::{self, ConvKernel, Scenario};
use crate::oracle::*;
use crate::tensor::{Array3, Mask2, MaskedMap, EPS};
use crate::trainer::{init_checkpoint, poly_lr, Checkpoint, TrainConfig};

#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn row(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> PropertyResult {
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    PropertyResult { name: name.to_string(), passed, detail }
}

fn rel_diff(a: &Array3, b: &Array3) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300))
        .fold(0.0, f64::max)
}

const TRIALS: usize = 10;

/// Runs every property with generators seeded from `seed`.
pub fn run_selftest(seed: u64) -> Vec<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    out.push(row("oracle equivalence (5 ops)", || {
        let mut worst: f64 = 0.0;
        for _ in 0..TRIALS {
            let (c, h, w) = (rng.gen_range(1..=3), 2 * rng.gen_range(1..=4), 2 * rng.gen_range(1..=4));
            let (mp, mq) = (random_mask(&mut rng, h, w, 0.5), random_mask(&mut rng, h, w, 0.5));
            let p = random_raw_map(&mut rng, c, mp);
            let q = random_raw_map(&mut rng, c, mq);
            let k = random_conv_kernel(&mut rng, 2, c, 1);
            let ak = random_adaptive_kernel(&mut rng, 2, c, c);
            let pairs = [
                (ops::si_conv_forward(&p, &k)?, naive_si_conv(&p, &k)),
                (ops::si_upsample_forward(&p)?, naive_si_upsample(&p)),
                (ops::si_maxpool(&p, 2)?, naive_si_maxpool(&p)),
                (ops::si_average(&p, &q)?, naive_si_average(&p, &q)),
                (ops::si_concat_conv_forward(&p, &q, &ak)?, naive_si_concat_conv(&p, &q, &ak)),
            ];
            for (fast, (z, m)) in pairs {
                if fast.mask() != &m {
                    return Ok((false, "mask differs from oracle".into()));
                }
                worst = worst.max(fast.features().max_abs_diff(&z));
            }
        }
        Ok((worst < 1e-10, format!("max abs diff {worst:.2e}")))
    }));

    out.push(row("mask-out invariance (ops, forward + backward)", || {
        for _ in 0..TRIALS {
            let (c, h, w) = (2, 6, 6);
            let p = random_map(&mut rng, c, h, w, 0.4);
            let q = random_map(&mut rng, c, h, w, 0.4);
            let (pg, qg) = (inject_garbage(&mut rng, &p), inject_garbage(&mut rng, &q));
            let k = random_conv_kernel(&mut rng, 2, c, 1);
            let ak = random_adaptive_kernel(&mut rng, 2, c, c);
            let d = Array3::from_fn(2, h, w, |_, _, _| rng.gen_range(-1.0..1.0));
            let d_up = Array3::from_fn(c, 2 * h, 2 * w, |_, _, _| rng.gen_range(-1.0..1.0));
            let d_pool = Array3::from_fn(c, h / 2, w / 2, |_, _, _| rng.gen_range(-1.0..1.0));
            let same = ops::si_conv_forward(&p, &k)? == ops::si_conv_forward(&pg, &k)?
                && ops::si_conv_backward(&p, &k, &d)? == ops::si_conv_backward(&pg, &k, &d)?
                && ops::si_upsample_forward(&p)? == ops::si_upsample_forward(&pg)?
                && ops::si_upsample_backward(&p, &d_up)? == ops::si_upsample_backward(&pg, &d_up)?
                && ops::si_maxpool(&p, 2)? == ops::si_maxpool(&pg, 2)?
                && ops::si_maxpool_backward(&p, &d_pool)? == ops::si_maxpool_backward(&pg, &d_pool)?
                && ops::si_average(&p, &q)? == ops::si_average(&pg, &qg)?
                && ops::si_average_backward(&p, &q, &d)? == ops::si_average_backward(&pg, &qg, &d)?
                && ops::si_concat_conv_forward(&p, &q, &ak)? == ops::si_concat_conv_forward(&pg, &qg, &ak)?
                && ops::si_concat_conv_backward(&p, &q, &ak, &d)? == ops::si_concat_conv_backward(&pg, &qg, &ak, &d)?
                && ops::relu_masked(&p)? == ops::relu_masked(&pg)?
                && ops::relu_masked_backward(&p, &d)? == ops::relu_masked_backward(&pg, &d)?;
            if !same {
                return Ok((false, "garbage changed an output".into()));
            }
        }
        Ok((true, format!("{TRIALS} trials, exact")))
    }));

    out.push(row("mask propagation laws", || {
        for _ in 0..TRIALS {
            let p = random_map(&mut rng, 1, 8, 8, 0.15);
            let q = random_map(&mut rng, 1, 8, 8, 0.15);
            let k = random_conv_kernel(&mut rng, 1, 1, 2);
            let conv_ok = ops::si_conv_forward(&p, &k)?.mask() == &naive_window_maxpool(p.mask(), 2);
            let avg_ok = ops::si_average(&p, &q)?.mask() == &p.mask().or(q.mask())?;
            let m = Array3::from_vec(1, 8, 8, p.mask().data().to_vec())?;
            let fm = ops::bilinear_up2(&m);
            let up_expected = Mask2::from_fn(16, 16, |y, x| fm.get(0, y, x) > ops::UPSAMPLE_MASK_THRESHOLD);
            let up_ok = ops::si_upsample_forward(&p)?.mask() == &up_expected;
            let pool_expected = Mask2::from_fn(4, 4, |y, x| {
                (0..2).any(|i| (0..2).any(|j| p.mask().is_valid(2 * y + i, 2 * x + j)))
            });
            let pool_ok = ops::si_maxpool(&p, 2)?.mask() == &pool_expected;
            if !(conv_ok && avg_ok && up_ok && pool_ok) {
                return Ok((false, format!("conv {conv_ok} avg {avg_ok} up {up_ok} pool {pool_ok}")));
            }
        }
        Ok((true, format!("{TRIALS} trials")))
    }));

    out.push(row("dense reductions (within ε/S)", || {
        let mut worst: f64 = 0.0;
        for _ in 0..TRIALS {
            let x = Array3::from_fn(2, 8, 8, |_, _, _| rng.gen_range(0.5..2.0));
            let y = Array3::from_fn(2, 8, 8, |_, _, _| rng.gen_range(0.5..2.0));
            let p = MaskedMap::raw(x.clone(), Mask2::ones(8, 8))?;
            let q = MaskedMap::raw(y.clone(), Mask2::ones(8, 8))?;
            let k = random_conv_kernel(&mut rng, 2, 2, 1);
            let z = ops::si_conv_forward(&p, &k)?;
            let dense = dense_conv(&x, &k, 1.0 / 9.0);
            for c in 0..2 {
                for u in 1..7 {
                    for v in 1..7 {
                        let (a, b) = (z.features().get(c, u, v) - k.bias()[c], dense.get(c, u, v) - k.bias()[c]);
                        // only the weighted sum carries the ε factor
                        worst = worst.max(((a - b) / b.abs().max(1e-12)).abs() / (EPS / 9.0));
                    }
                }
            }
            let up = ops::si_upsample_forward(&p)?;
            worst = worst.max(rel_diff(up.features(), &ops::bilinear_up2(&x)) / EPS);
            let avg = ops::si_average(&p, &q)?;
            let mean = Array3::from_fn(2, 8, 8, |c, u, v| (x.get(c, u, v) + y.get(c, u, v)) / 2.0);
            worst = worst.max(rel_diff(avg.features(), &mean) / (EPS / 2.0));
            let ak = random_adaptive_kernel(&mut rng, 2, 2, 2);
            let cc = ops::si_concat_conv_forward(&p, &q, &ak)?;
            let d = dense_concat_conv(&x, &y, ak.set(Scenario::Both), ak.bias());
            worst = worst.max(rel_diff(cc.features(), &d) / EPS);
        }
        // deviation measured in units of the ε-induced bound; 1 + rounding
        Ok((worst < 1.0 + 1e-3, format!("worst deviation {worst:.4} × ε/S")))
    }));

    out.push(row("density invariance on constant fields", || {
        let mut worst: f64 = 0.0;
        let kern = ConvKernel::new(1, 1, 2, vec![1.0; 25], vec![0.5])?;
        for _ in 0..TRIALS {
            let m = random_mask(&mut rng, 10, 10, 0.3);
            let p = MaskedMap::raw(Array3::filled(1, 10, 10, 7.0), m)?;
            let z = ops::si_conv_forward(&p, &kern)?;
            for (i, v) in z.features().data().iter().enumerate() {
                if z.mask().data()[i] == 1.0 {
                    worst = worst.max((v - 7.5).abs());
                }
            }
        }
        Ok((worst < 1e-6, format!("max |z − 7.5| {worst:.2e}")))
    }));

    out.push(row("network mask-out invariance", || {
        let net = Network::new(NetworkConfig::default());
        let mut store = ParamStore::new();
        net.init_params(&mut store, &mut rng);
        for _ in 0..3 {
            let p = random_map(&mut rng, 1, 16, 16, 0.1);
            let pg = inject_garbage(&mut rng, &p);
            if net.forward(&p, &store)?.0 != net.forward(&pg, &store)?.0 {
                return Ok((false, "prediction changed".into()));
            }
        }
        Ok((true, "3 trials, bit-identical".into()))
    }));

    out.push(row("backward vs finite differences", || {
        let mut worst: f64 = 0.0;
        for op in OpName::ALL {
            let r = check_op(op, seed)?;
            if !r.passes(OP_TOLERANCE) {
                return Ok((false, format!("{op} max rel err {:.2e}", r.max_error())));
            }
            worst = worst.max(r.max_error());
        }
        Ok((true, format!("max rel err {worst:.2e}")))
    }));

    out.push(row("metric worked example", || {
        let pred = Array3::from_vec(1, 1, 2, vec![2.0, 4.0])?;
        let gt = MaskedMap::raw(Array3::from_vec(1, 1, 2, vec![1.0, 2.0])?, Mask2::ones(1, 2))?;
        let r = compute_metrics(&pred, &gt)?;
        let want = [1000.0 * 2.5f64.sqrt(), 1500.0, 1000.0 * 0.15625f64.sqrt(), 375.0, 1.0];
        let got = [r.rmse_mm, r.mae_mm, r.irmse_per_km, r.imae_per_km, r.rel];
        let worst = got.iter().zip(want).map(|(g, w)| ((g - w) / w).abs()).fold(0.0, f64::max);
        Ok((worst < 1e-6, format!("max rel diff {worst:.2e}")))
    }));

    out.push(row("metric RMSE ≥ MAE", || {
        for _ in 0..100 {
            let n = rng.gen_range(1..20);
            let pred = Array3::from_fn(1, 1, n, |_, _, _| rng.gen_range(1.0..50.0));
            let gt = MaskedMap::raw(Array3::from_fn(1, 1, n, |_, _, _| rng.gen_range(1.0..50.0)), Mask2::ones(1, n))?;
            let r = compute_metrics(&pred, &gt)?;
            if r.rmse_mm < r.mae_mm * (1.0 - 1e-12) {
                return Ok((false, format!("rmse {} < mae {}", r.rmse_mm, r.mae_mm)));
            }
        }
        Ok((true, "100 random reports".into()))
    }));

    out.push(row("learning-rate schedule endpoints", || {
        let cfg = TrainConfig::default();
        let ok = poly_lr(0, &cfg)? == 0.01
            && poly_lr(cfg.epochs, &cfg)? == 0.0
            && (poly_lr(25, &cfg)? - 0.01 * 0.5f64.powf(0.9)).abs() < 1e-15;
        Ok((ok, "0, 25, 50".into()))
    }));

    out.push(row("PGM round trip", || {
        let m = random_mask(&mut rng, 12, 9, 0.5);
        let f = Array3::from_fn(1, 12, 9, |_, _, _| rng.gen_range(1..25600) as f64 / 256.0);
        let map = MaskedMap::raw(f, m)?.canonical();
        let back = decode_depth_pgm(&encode_depth_pgm(&map)?)?;
        Ok((back == map, "12×9 random map".into()))
    }));

    out.push(row("checkpoint round trip", || {
        let ck = init_checkpoint(&TrainConfig { seed, ..Default::default() })?;
        let back = Checkpoint::from_bytes(&ck.to_bytes())?;
        Ok((back == ck, format!("{} parameters", ck.params.total_len())))
    }));

    out
}

/// Fixed-width table, one property per line.
pub fn format_table(rows: &[PropertyResult]) -> String {
    let width = rows.iter().map(|r| r.name.chars().count()).max().unwrap_or(0);
    let mut s = String::new();
    for r in rows {
        let pad = width - r.name.chars().count();
        s.push_str(&format!(
            "{}{}  {}  {}\n",
            r.name,
            " ".repeat(pad),
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        ));
    }
    s
}
