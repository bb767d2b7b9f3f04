use crate::tensor::{Array3, MaskedMap};

/// Fills every pixel with the depth of its nearest valid input pixel
/// (Euclidean; ties go to the smaller row, then the smaller column).
/// An input with no valid pixel yields all zeros.
pub fn nn_fill_baseline(input: &MaskedMap) -> Array3 {
    let (h, w) = (input.height(), input.width());
    let rows: Vec<Vec<usize>> = (0..h)
        .map(|y| (0..w).filter(|&x| input.mask().is_valid(y, x)).collect())
        .collect();
    let mut out = Array3::zeros(1, h, w);
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<(usize, usize, usize)> = None;
            for dy in 0..h {
                if let Some((d, _, _)) = best {
                    if dy * dy > d {
                        break;
                    }
                }
                let mut cands = Vec::with_capacity(2);
                if dy <= y {
                    cands.push(y - dy);
                }
                if dy > 0 && y + dy < h {
                    cands.push(y + dy);
                }
                for r in cands {
                    let cols = &rows[r];
                    let pos = cols.partition_point(|&c| c < x);
                    for c in [pos.checked_sub(1), Some(pos)].into_iter().flatten() {
                        if let Some(&cx) = cols.get(c) {
                            let d = dy * dy + cx.abs_diff(x).pow(2);
                            let key = (d, r, cx);
                            if best.map_or(true, |b| key < b) {
                                best = Some(key);
                            }
                        }
                    }
                }
            }
            if let Some((_, r, c)) = best {
                out.set(0, y, x, input.features().get(0, r, c));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mask2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(input: &MaskedMap) -> Array3 {
        let (h, w) = (input.height(), input.width());
        Array3::from_fn(1, h, w, |_, y, x| {
            let mut best: Option<(usize, usize, usize)> = None;
            for r in 0..h {
                for c in 0..w {
                    if input.mask().is_valid(r, c) {
                        let key = (y.abs_diff(r).pow(2) + x.abs_diff(c).pow(2), r, c);
                        if best.map_or(true, |b| key < b) {
                            best = Some(key);
                        }
                    }
                }
            }
            best.map_or(0.0, |(_, r, c)| input.features().get(0, r, c))
        })
    }

    #[test]
    fn dense_input_is_identity() {
        let f = Array3::from_fn(1, 4, 5, |_, y, x| (y * 5 + x) as f64 + 1.0);
        let m = MaskedMap::raw(f.clone(), Mask2::ones(4, 5)).unwrap();
        assert_eq!(nn_fill_baseline(&m), f);
    }

    #[test]
    fn single_point_is_constant() {
        let mut mask = Mask2::zeros(6, 6);
        mask.set(2, 3, true);
        let m = crate::tensor::canonicalize(Array3::filled(1, 6, 6, 7.5), mask).unwrap();
        assert!(nn_fill_baseline(&m).data().iter().all(|v| *v == 7.5));
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let (h, w) = (rng.gen_range(1..12), rng.gen_range(1..12));
            let density = rng.gen_range(0.02..0.5);
            let mask = Mask2::from_fn(h, w, |_, _| rng.gen::<f64>() < density);
            let f = Array3::from_fn(1, h, w, |_, _, _| rng.gen_range(1.0..50.0));
            let m = crate::tensor::canonicalize(f, mask).unwrap();
            assert_eq!(nn_fill_baseline(&m), brute(&m));
        }
    }
}
