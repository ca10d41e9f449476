//! ReLU and max-pooling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    debug_assert_eq!(input.dims(), grad_out.dims());
    let mut grad_in = grad_out.clone();
    for (g, x) in grad_in.data_mut().iter_mut().zip(input.data()) {
        if *x <= 0.0 {
            *g = 0.0;
        }
    }
    grad_in
}

/// Flat input indices of each output element's window maximum.
#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    pub input_dims: Vec<usize>,
    argmax: Vec<u32>,
}

/// Per-window maximum over (kernel x kernel) windows with the given stride and
/// no padding. Ties take the first (row-major) element, which keeps backward
/// deterministic.
pub fn maxpool2d_forward(
    input: &Tensor,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor, MaxPoolCache)> {
    if input.dims().len() != 4 {
        return Err(Error::Shape("maxpool expects a rank-4 input".into()));
    }
    let [n, c, h, w] = [input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]];
    if h < kernel || w < kernel {
        return Err(Error::Shape(format!(
            "maxpool: input {h}x{w} smaller than kernel {kernel}"
        )));
    }
    let out_h = (h - kernel) / stride + 1;
    let out_w = (w - kernel) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    let mut argmax = vec![0u32; n * c * out_h * out_w];
    let mut pos = 0usize;
    for b in 0..n {
        for ch in 0..c {
            let plane_base = (b * c + ch) * h * w;
            let plane = &input.data()[plane_base..plane_base + h * w];
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..kernel {
                        let iy = oy * stride + ky;
                        for kx in 0..kernel {
                            let ix = ox * stride + kx;
                            let v = plane[iy * w + ix];
                            if v > best {
                                best = v;
                                best_idx = iy * w + ix;
                            }
                        }
                    }
                    out.data_mut()[pos] = best;
                    argmax[pos] = (plane_base + best_idx) as u32;
                    pos += 1;
                }
            }
        }
    }
    Ok((
        out,
        MaxPoolCache {
            input_dims: input.dims().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2d_backward(cache: &MaxPoolCache, grad_out: &Tensor) -> Tensor {
    let mut grad_in = Tensor::zeros(&cache.input_dims);
    for (g, &idx) in grad_out.data().iter().zip(&cache.argmax) {
        grad_in.data_mut()[idx as usize] += g;
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn maxpool_picks_window_max() {
        let x = Tensor::from_vec(
            &[1, 1, 2, 4],
            vec![1.0, 5.0, 2.0, 0.0, 3.0, -1.0, 9.0, 4.0],
        )
        .unwrap();
        let (y, cache) = maxpool2d_forward(&x, 2, 2).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[5.0, 9.0]);
        let grad = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let gx = maxpool2d_backward(&cache, &grad);
        assert_eq!(gx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn maxpool_too_small_is_error() {
        let x = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(maxpool2d_forward(&x, 2, 2).is_err());
    }
}
