//! Fully-connected (affine) layer over a batch of row vectors.

use super::gemm::{gemm, gemm_strided};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// input (N, In) * weights (Out, In)^T + bias -> (N, Out)
pub fn fully_connected_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if input.dims().len() != 2 || weights.dims().len() != 2 {
        return Err(Error::Shape("fully_connected expects rank-2 input and weights".into()));
    }
    let (n, d_in) = (input.dims()[0], input.dims()[1]);
    let (d_out, w_in) = (weights.dims()[0], weights.dims()[1]);
    if d_in != w_in || bias.numel() != d_out {
        return Err(Error::Shape(format!(
            "fully_connected: input {:?} weights {:?} bias {:?}",
            input.dims(),
            weights.dims(),
            bias.dims()
        )));
    }
    let mut out = Tensor::zeros(&[n, d_out]);
    gemm_strided(
        n,
        d_in,
        d_out,
        input.data(),
        d_in as isize,
        1,
        weights.data(),
        1,
        d_in as isize,
        0.0,
        out.data_mut(),
    );
    for r in 0..n {
        for o in 0..d_out {
            out.data_mut()[r * d_out + o] += bias.data()[o];
        }
    }
    Ok(out)
}

pub fn fully_connected_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, d_in) = (input.dims()[0], input.dims()[1]);
    let d_out = weights.dims()[0];
    if grad_out.dims() != [n, d_out] {
        return Err(Error::Shape(format!(
            "fully_connected backward: grad {:?}, expected {:?}",
            grad_out.dims(),
            [n, d_out]
        )));
    }
    let mut grad_in = Tensor::zeros(&[n, d_in]);
    let mut grad_w = Tensor::zeros(weights.dims());
    let mut grad_b = Tensor::zeros(&[d_out]);
    // dX = dY * W
    gemm(n, d_out, d_in, grad_out.data(), weights.data(), 0.0, grad_in.data_mut());
    // dW = dY^T * X
    gemm_strided(
        d_out,
        n,
        d_in,
        grad_out.data(),
        1,
        d_out as isize,
        input.data(),
        d_in as isize,
        1,
        0.0,
        grad_w.data_mut(),
    );
    for r in 0..n {
        for o in 0..d_out {
            grad_b.data_mut()[o] += grad_out.data()[r * d_out + o];
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_map_hand_case() {
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, -1.0, 3.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.5, 0.0]).unwrap();
        let y = fully_connected_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.5, 5.0]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 4]);
        let b = Tensor::zeros(&[2]);
        assert!(fully_connected_forward(&x, &w, &b).is_err());
    }
}
