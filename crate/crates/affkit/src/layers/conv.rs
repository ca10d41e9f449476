//! 2-D cross-correlation with zero padding.

use super::gemm::{col2im, gemm, gemm_strided, im2col};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::Shape(format!(
            "conv: padded input {padded} smaller than kernel {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn check_conv_args(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<()> {
    if input.dims().len() != 4 || weights.dims().len() != 4 || bias.dims().len() != 1 {
        return Err(Error::Shape(
            "conv expects rank-4 input/weights and rank-1 bias".into(),
        ));
    }
    if input.dims()[1] != weights.dims()[1] {
        return Err(Error::Shape(format!(
            "conv: input channels {} != weight channels {}",
            input.dims()[1],
            weights.dims()[1]
        )));
    }
    if bias.dims()[0] != weights.dims()[0] {
        return Err(Error::Shape(format!(
            "conv: bias length {} != output channels {}",
            bias.dims()[0],
            weights.dims()[0]
        )));
    }
    Ok(())
}

/// input (N, C_in, H, W) * weights (C_out, C_in, kh, kw) + bias -> (N, C_out, H_o, W_o)
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    check_conv_args(input, weights, bias)?;
    let [n, c_in, h, w] = [input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]];
    let [c_out, _, kh, kw] = [
        weights.dims()[0],
        weights.dims()[1],
        weights.dims()[2],
        weights.dims()[3],
    ];
    let out_h = conv_output_size(h, kh, stride, pad)?;
    let out_w = conv_output_size(w, kw, stride, pad)?;
    let lanes = out_h * out_w;
    let patch = c_in * kh * kw;

    let mut out = Tensor::zeros(&[n, c_out, out_h, out_w]);
    for b in 0..n {
        let cols = im2col(
            &input.data()[b * c_in * h * w..(b + 1) * c_in * h * w],
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        );
        let dst = &mut out.data_mut()[b * c_out * lanes..(b + 1) * c_out * lanes];
        gemm(c_out, patch, lanes, weights.data(), &cols, 0.0, dst);
        for oc in 0..c_out {
            let bv = bias.data()[oc];
            for v in dst[oc * lanes..(oc + 1) * lanes].iter_mut() {
                *v += bv;
            }
        }
    }
    Ok(out)
}

/// Weight and bias gradients only, for layers whose input gradient is never
/// consumed (the first layer of a network).
pub fn conv2d_param_grads(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor)> {
    let [n, c_in, h, w] = [input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]];
    let [c_out, _, kh, kw] = [
        weights.dims()[0],
        weights.dims()[1],
        weights.dims()[2],
        weights.dims()[3],
    ];
    let out_h = grad_out.dims()[2];
    let out_w = grad_out.dims()[3];
    let lanes = out_h * out_w;
    let patch = c_in * kh * kw;
    let mut grad_w = Tensor::zeros(weights.dims());
    let mut grad_b = Tensor::zeros(&[c_out]);
    for b in 0..n {
        let go = &grad_out.data()[b * c_out * lanes..(b + 1) * c_out * lanes];
        let cols = im2col(
            &input.data()[b * c_in * h * w..(b + 1) * c_in * h * w],
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        );
        gemm_strided(
            c_out,
            lanes,
            patch,
            go,
            lanes as isize,
            1,
            &cols,
            1,
            lanes as isize,
            1.0,
            grad_w.data_mut(),
        );
        for oc in 0..c_out {
            grad_b.data_mut()[oc] += go[oc * lanes..(oc + 1) * lanes].iter().sum::<f64>();
        }
    }
    Ok((grad_w, grad_b))
}

/// Gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [n, c_in, h, w] = [input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]];
    let [c_out, _, kh, kw] = [
        weights.dims()[0],
        weights.dims()[1],
        weights.dims()[2],
        weights.dims()[3],
    ];
    let out_h = grad_out.dims()[2];
    let out_w = grad_out.dims()[3];
    let lanes = out_h * out_w;
    let patch = c_in * kh * kw;

    let mut grad_in = Tensor::zeros(input.dims());
    let mut grad_w = Tensor::zeros(weights.dims());
    let mut grad_b = Tensor::zeros(&[c_out]);
    let mut dcols = vec![0.0; patch * lanes];

    for b in 0..n {
        let go = &grad_out.data()[b * c_out * lanes..(b + 1) * c_out * lanes];
        let cols = im2col(
            &input.data()[b * c_in * h * w..(b + 1) * c_in * h * w],
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        );
        // dW += dOut * cols^T
        gemm_strided(
            c_out,
            lanes,
            patch,
            go,
            lanes as isize,
            1,
            &cols,
            1,
            lanes as isize,
            1.0,
            grad_w.data_mut(),
        );
        for oc in 0..c_out {
            grad_b.data_mut()[oc] += go[oc * lanes..(oc + 1) * lanes].iter().sum::<f64>();
        }
        // dcols = W^T * dOut, then scatter back onto the input grid.
        gemm_strided(
            patch,
            c_out,
            lanes,
            weights.data(),
            1,
            patch as isize,
            go,
            lanes as isize,
            1,
            0.0,
            &mut dcols,
        );
        col2im(
            &dcols,
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
            &mut grad_in.data_mut()[b * c_in * h * w..(b + 1) * c_in * h * w],
        );
    }
    Ok((grad_in, grad_w, grad_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_1x1_kernel() {
        let input = Tensor::from_vec(&[1, 2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        // per-channel identity: w[oc][ic] = 1 iff oc == ic
        let weights = Tensor::from_vec(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let bias = Tensor::zeros(&[2]);
        let out = conv2d_forward(&input, &weights, &bias, 1, 0).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn zero_weights_give_bias() {
        let input = Tensor::filled(&[1, 1, 3, 3], 5.0);
        let weights = Tensor::zeros(&[2, 1, 3, 3]);
        let bias = Tensor::from_vec(&[2], vec![0.5, -1.5]).unwrap();
        let out = conv2d_forward(&input, &weights, &bias, 1, 1).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(out.at4(0, 0, y, x), 0.5);
                assert_eq!(out.at4(0, 1, y, x), -1.5);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_error() {
        let input = Tensor::zeros(&[1, 3, 4, 4]);
        let weights = Tensor::zeros(&[2, 2, 3, 3]);
        let bias = Tensor::zeros(&[2]);
        assert!(conv2d_forward(&input, &weights, &bias, 1, 1).is_err());
    }

    #[test]
    fn kernel_larger_than_input_is_error() {
        let input = Tensor::zeros(&[1, 1, 2, 2]);
        let weights = Tensor::zeros(&[1, 1, 5, 5]);
        let bias = Tensor::zeros(&[1]);
        assert!(conv2d_forward(&input, &weights, &bias, 1, 0).is_err());
    }

    /// Direct six-loop cross-correlation, kept deliberately naive.
    fn conv_oracle(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (n, c_in, h, w) = (
            input.dims()[0],
            input.dims()[1],
            input.dims()[2],
            input.dims()[3],
        );
        let (c_out, kh, kw) = (weights.dims()[0], weights.dims()[2], weights.dims()[3]);
        let out_h = (h + 2 * pad - kh) / stride + 1;
        let out_w = (w + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[n, c_out, out_h, out_w]);
        for b in 0..n {
            for oc in 0..c_out {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut acc = bias.data()[oc];
                        for ic in 0..c_in {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                        acc += input.at4(b, ic, iy as usize, ix as usize)
                                            * weights.at4(oc, ic, ki, kj);
                                    }
                                }
                            }
                        }
                        let idx = Tensor::idx4(out.dims(), b, oc, oy, ox);
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn random_case_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(stride, pad) in &[(1usize, 1usize), (2, 0), (2, 1)] {
            let input = Tensor::from_vec(
                &[2, 3, 7, 6],
                (0..2 * 3 * 7 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let weights = Tensor::from_vec(
                &[4, 3, 3, 3],
                (0..4 * 3 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let bias =
                Tensor::from_vec(&[4], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let fast = conv2d_forward(&input, &weights, &bias, stride, pad).unwrap();
            let slow = conv_oracle(&input, &weights, &bias, stride, pad);
            assert_eq!(fast.dims(), slow.dims());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-10, "conv mismatch: {a} vs {b}");
            }
        }
    }
}
