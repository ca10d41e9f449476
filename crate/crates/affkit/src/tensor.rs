//! Dense row-major tensor with an optional gradient buffer.
//!
//! Rank-4 tensors are ordered (batch, channel, height, width). Every layer in
//! this crate implements an explicit backward pass; the finite-difference
//! gradient here is the independent oracle those backwards are tested against.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {:?} imply {} elements, got {}",
                dims,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Gradient buffer, if one has been allocated.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self.grad.as_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Flat index for a rank-4 (n, c, y, x) position.
    #[inline]
    pub fn idx4(dims: &[usize], n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * dims[1] + c) * dims[2] + y) * dims[3] + x
    }

    #[inline]
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[Self::idx4(&self.dims, n, c, y, x)]
    }

    pub fn assert_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{context}: element {i} is {v}"
                )));
            }
        }
        Ok(())
    }

    /// Round every element to the nearest f32. Checkpoints store 32-bit
    /// values; keeping parameters on the f32 grid makes save/load round
    /// trips bit-exact.
    pub fn quantize_f32(&mut self) {
        for v in self.data.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
}

/// Central-difference gradient of a scalar function: the test oracle for
/// every analytic backward pass in this crate.
///
/// g[i] = (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps)
pub fn finite_diff_gradient<F>(f: F, x: &Tensor, epsilon: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> f64,
{
    if epsilon <= 0.0 {
        return Err(Error::InvalidArg("epsilon must be positive".into()));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.dims());
    for i in 0..x.numel() {
        let orig = probe.data[i];
        probe.data[i] = orig + epsilon;
        let plus = f(&probe);
        probe.data[i] = orig - epsilon;
        let minus = f(&probe);
        probe.data[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite-difference evaluation at perturbed index {i}: f+ = {plus}, f- = {minus}"
            )));
        }
        grad.data[i] = (plus - minus) / (2.0 * epsilon);
    }
    Ok(grad)
}

/// One SGD-with-momentum update:
///   v <- momentum*v - lr*(grad + weight_decay*param)
///   param <- param + v
pub fn sgd_momentum_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.dims() != grad.dims() || param.dims() != velocity.dims() {
        return Err(Error::Shape(format!(
            "sgd step: param {:?}, grad {:?}, velocity {:?}",
            param.dims(),
            grad.dims(),
            velocity.dims()
        )));
    }
    if lr <= 0.0 {
        return Err(Error::InvalidArg("learning rate must be positive".into()));
    }
    for i in 0..param.data.len() {
        let g = grad.data[i] + weight_decay * param.data[i];
        velocity.data[i] = momentum * velocity.data[i] - lr * g;
        param.data[i] += velocity.data[i];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn finite_diff_quadratic() {
        // f(x) = sum(x^2) has gradient 2x.
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let g = finite_diff_gradient(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-6).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_linear_is_input_independent() {
        let f = |t: &Tensor| t.data().iter().sum::<f64>();
        for seed_val in [0.0, 3.5, -7.25] {
            let x = Tensor::filled(&[4], seed_val);
            let g = finite_diff_gradient(f, &x, 1e-6).unwrap();
            for v in g.data() {
                assert!((v - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn finite_diff_constant_is_zero() {
        let x = Tensor::filled(&[3], 2.0);
        let g = finite_diff_gradient(|_| 42.0, &x, 1e-6).unwrap();
        assert!(g.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn finite_diff_reports_nonfinite_index() {
        // sqrt is finite at x but NaN once index 1 is nudged negative
        let x = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let err = finite_diff_gradient(|t| t.data().iter().map(|v| v.sqrt()).sum(), &x, 1e-6)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("index 1"), "unexpected message: {msg}");
    }

    #[test]
    fn sgd_zero_grad_keeps_param() {
        let mut p = Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        let g = Tensor::zeros(&[2]);
        let mut v = Tensor::zeros(&[2]);
        sgd_momentum_step(&mut p, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn sgd_single_step_hand_values() {
        let mut p = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let g = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let mut v = Tensor::zeros(&[1]);
        sgd_momentum_step(&mut p, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-15);
        assert!((v.data()[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn sgd_dimension_mismatch() {
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut v = Tensor::zeros(&[2]);
        assert!(sgd_momentum_step(&mut p, &g, &mut v, 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn quantize_is_idempotent() {
        let mut t = Tensor::from_vec(&[3], vec![0.1, std::f64::consts::PI, -7.3e-5]).unwrap();
        t.quantize_f32();
        let once = t.clone();
        t.quantize_f32();
        assert_eq!(once, t);
    }
}
