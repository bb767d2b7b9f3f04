use super::{check_grad_shape, OpGrad};
use crate::error::Result;
use crate::tensor::{Array3, MaskedMap};

/// `max(0, x)` at valid locations; the mask passes through.
pub fn relu_masked(p: &MaskedMap) -> Result<MaskedMap> {
    let mut f = p.masked_features();
    for v in f.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    MaskedMap::raw(f, p.mask().clone())
}

pub fn relu_masked_backward(p: &MaskedMap, d_out: &Array3) -> Result<OpGrad> {
    let (c, h, w) = p.features().shape();
    check_grad_shape(d_out, c, h, w, "relu_masked_backward")?;
    let n = h * w;
    let m = p.mask().data();
    let mut d = d_out.clone();
    for (plane, x) in d.data_mut().chunks_mut(n).zip(p.features().data().chunks(n)) {
        for i in 0..n {
            if m[i] == 0.0 || x[i] <= 0.0 {
                plane[i] = 0.0;
            }
        }
    }
    Ok(OpGrad {
        inputs: vec![d],
        params: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mask2;

    #[test]
    fn gates_sign_and_mask() {
        let p = MaskedMap::raw(
            Array3::from_vec(1, 1, 3, vec![2.0, -1.0, 5.0]).unwrap(),
            Mask2::from_vec(1, 3, vec![1.0, 1.0, 0.0]).unwrap(),
        )
        .unwrap();
        let z = relu_masked(&p).unwrap();
        assert_eq!(z.features().data(), &[2.0, 0.0, 0.0]);
        let g = relu_masked_backward(&p, &Array3::filled(1, 1, 3, 3.0)).unwrap();
        assert_eq!(g.input(0).data(), &[3.0, 0.0, 0.0]);
    }
}
