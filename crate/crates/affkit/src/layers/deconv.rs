//! Transposed convolution. The forward pass is exactly the adjoint of the
//! matching convolution's input gradient, which the tests pin down via the
//! inner-product identity <conv(x), y> == <x, deconv(y)>.

use super::gemm::{col2im, gemm, gemm_strided, im2col};
use super::DeconvSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_deconv_args(input: &Tensor, spec: &DeconvSpec, weights: &Tensor, bias: &Tensor) -> Result<()> {
    if input.dims().len() != 4 {
        return Err(Error::Shape("deconv expects a rank-4 input".into()));
    }
    // weight layout: (in_channels, out_channels, k, k)
    let expect = [spec.in_channels, spec.out_channels, spec.kernel, spec.kernel];
    if weights.dims() != expect {
        return Err(Error::Shape(format!(
            "deconv weights {:?} do not match spec {:?}",
            weights.dims(),
            expect
        )));
    }
    if input.dims()[1] != spec.in_channels {
        return Err(Error::Shape(format!(
            "deconv: input channels {} != spec in_channels {}",
            input.dims()[1],
            spec.in_channels
        )));
    }
    if bias.dims() != [spec.out_channels] {
        return Err(Error::Shape(format!(
            "deconv: bias length {} != out_channels {}",
            bias.numel(),
            spec.out_channels
        )));
    }
    Ok(())
}

/// input (N, C_in, H_i, W_i) -> (N, C_out, H_o, W_o) with
/// H_o = stride*(H_i - 1) + kernel - 2*padding.
pub fn deconv2d_forward(
    input: &Tensor,
    spec: &DeconvSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    check_deconv_args(input, spec, weights, bias)?;
    let [n, c_in, h_i, w_i] = [input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]];
    let h_o = spec.output_size(h_i)?;
    let w_o = spec.output_size(w_i)?;
    let k = spec.kernel;
    let c_out = spec.out_channels;
    let lanes = h_i * w_i;
    let patch = c_out * k * k;

    let mut out = Tensor::zeros(&[n, c_out, h_o, w_o]);
    let mut cols = vec![0.0; patch * lanes];
    for b in 0..n {
        let x = &input.data()[b * c_in * lanes..(b + 1) * c_in * lanes];
        // cols = W^T(C_out*k*k, C_in) * x(C_in, H_i*W_i)
        gemm_strided(
            patch,
            c_in,
            lanes,
            weights.data(),
            1,
            patch as isize,
            x,
            lanes as isize,
            1,
            0.0,
            &mut cols,
        );
        let dst = &mut out.data_mut()[b * c_out * h_o * w_o..(b + 1) * c_out * h_o * w_o];
        col2im(&cols, c_out, h_o, w_o, k, k, spec.stride, spec.padding, h_i, w_i, dst);
        for oc in 0..c_out {
            let bv = bias.data()[oc];
            for v in dst[oc * h_o * w_o..(oc + 1) * h_o * w_o].iter_mut() {
                *v += bv;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`deconv2d_forward`] with respect to input, weights and bias.
pub fn deconv2d_backward(
    input: &Tensor,
    spec: &DeconvSpec,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [n, c_in, h_i, w_i] = [input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]];
    let [h_o, w_o] = [grad_out.dims()[2], grad_out.dims()[3]];
    let k = spec.kernel;
    let c_out = spec.out_channels;
    let lanes = h_i * w_i;
    let patch = c_out * k * k;

    let mut grad_in = Tensor::zeros(input.dims());
    let mut grad_w = Tensor::zeros(weights.dims());
    let mut grad_b = Tensor::zeros(&[c_out]);

    for b in 0..n {
        let go = &grad_out.data()[b * c_out * h_o * w_o..(b + 1) * c_out * h_o * w_o];
        for oc in 0..c_out {
            grad_b.data_mut()[oc] += go[oc * h_o * w_o..(oc + 1) * h_o * w_o].iter().sum::<f64>();
        }
        // Gathering grad_out patches inverts the forward scatter.
        let dcols = im2col(go, c_out, h_o, w_o, k, k, spec.stride, spec.padding, h_i, w_i);
        // dX = W(C_in, C_out*k*k) * dcols
        gemm(
            c_in,
            patch,
            lanes,
            weights.data(),
            &dcols,
            0.0,
            &mut grad_in.data_mut()[b * c_in * lanes..(b + 1) * c_in * lanes],
        );
        // dW += x * dcols^T
        gemm_strided(
            c_in,
            lanes,
            patch,
            &input.data()[b * c_in * lanes..(b + 1) * c_in * lanes],
            lanes as isize,
            1,
            &dcols,
            1,
            lanes as isize,
            1.0,
            grad_w.data_mut(),
        );
    }
    Ok((grad_in, grad_w, grad_b))
}
