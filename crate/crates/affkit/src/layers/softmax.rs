//! Softmax over a chosen axis, evaluated with the max-shift for stability.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// Gradient of a softmax lane: dx = y * (dy - <dy, y>).
pub fn softmax_slice_backward(y: &[f64], grad_y: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(grad_y).map(|(a, b)| a * b).sum();
    y.iter().zip(grad_y).map(|(yi, gi)| yi * (gi - dot)).collect()
}

/// Softmax along `axis`; every lane sums to 1 and stays strictly positive.
pub fn softmax(input: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= input.dims().len() {
        return Err(Error::Shape(format!(
            "softmax axis {axis} out of range for dims {:?}",
            input.dims()
        )));
    }
    let mut out = input.clone();
    for_each_lane(input.dims(), axis, |lane| {
        let vals: Vec<f64> = lane.iter().map(|&i| input.data()[i]).collect();
        let sm = softmax_slice(&vals);
        for (&i, v) in lane.iter().zip(sm) {
            out.data_mut()[i] = v;
        }
    });
    Ok(out)
}

pub fn softmax_backward(output: &Tensor, grad_out: &Tensor, axis: usize) -> Result<Tensor> {
    if output.dims() != grad_out.dims() {
        return Err(Error::Shape("softmax backward: dims mismatch".into()));
    }
    let mut grad_in = Tensor::zeros(output.dims());
    for_each_lane(output.dims(), axis, |lane| {
        let y: Vec<f64> = lane.iter().map(|&i| output.data()[i]).collect();
        let gy: Vec<f64> = lane.iter().map(|&i| grad_out.data()[i]).collect();
        let gx = softmax_slice_backward(&y, &gy);
        for (&i, v) in lane.iter().zip(gx) {
            grad_in.data_mut()[i] = v;
        }
    });
    Ok(grad_in)
}

/// Visit every 1-D lane along `axis`, passing flat element indices.
fn for_each_lane<F: FnMut(&[usize])>(dims: &[usize], axis: usize, mut f: F) {
    let axis_len = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut lane = vec![0usize; axis_len];
    for o in 0..outer {
        for i in 0..inner {
            for (a, slot) in lane.iter_mut().enumerate() {
                *slot = (o * axis_len + a) * inner + i;
            }
            f(&lane);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let x = Tensor::filled(&[5], 3.2);
        let y = softmax(&x, 0).unwrap();
        for v in y.data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn two_class_closed_form() {
        let x = Tensor::from_vec(&[2], vec![0.0, 3.0_f64.ln()]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-12);
        assert!((y.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn class_axis_of_rank3() {
        let x = Tensor::from_vec(&[2, 1, 2], vec![1.0, -2.0, 1.0, 4.0]).unwrap();
        let y = softmax(&x, 0).unwrap();
        // lane (.,0,0): logits [1,1] -> [0.5,0.5]
        assert!((y.data()[0] - 0.5).abs() < 1e-12);
        assert!((y.data()[2] - 0.5).abs() < 1e-12);
        // lane (.,0,1): logits [-2,4]
        let e = ((-2.0f64) - 4.0).exp();
        assert!((y.data()[1] - e / (1.0 + e)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn lanes_sum_to_one_and_positive(vals in proptest::collection::vec(-30.0..30.0f64, 12)) {
            let x = Tensor::from_vec(&[3, 4], vals).unwrap();
            for axis in 0..2 {
                let y = softmax(&x, axis).unwrap();
                prop_assert!(y.data().iter().all(|v| *v > 0.0));
                let (outer, lane_len) = if axis == 1 { (3, 4) } else { (4, 3) };
                for o in 0..outer {
                    let sum: f64 = if axis == 1 {
                        y.data()[o * 4..(o + 1) * 4].iter().sum()
                    } else {
                        (0..lane_len).map(|r| y.data()[r * 4 + o]).sum()
                    };
                    prop_assert!((sum - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
