//! Forward and backward passes for every layer in the network: convolution,
//! deconvolution, ReLU, max-pool, fully-connected, softmax, and RoIAlign.
//!
//! All layer functions are pure: backwards return fresh gradient tensors and
//! never touch shared state, so concurrent calls on distinct tensors are safe.

mod conv;
mod deconv;
mod fc;
mod gemm;
mod pool;
mod roi_align;
mod softmax;

pub use conv::{conv2d_backward, conv2d_forward, conv2d_param_grads};
pub use deconv::{deconv2d_backward, deconv2d_forward};
pub use fc::{fully_connected_backward, fully_connected_forward};
pub use pool::{maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward, MaxPoolCache};
pub use roi_align::{roi_align_backward, roi_align_forward, RoiAlignCache};
pub use softmax::{softmax, softmax_backward, softmax_slice, softmax_slice_backward};

use crate::boxes::BBox;
use crate::error::{Error, Result};

/// Sizing parameters of one deconvolution (transposed convolution) layer.
///
/// The output spatial size is `stride*(S_i - 1) + kernel - 2*padding`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeconvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl DeconvSpec {
    pub fn new(
        kernel: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        if kernel < 1 || stride < 1 {
            return Err(Error::InvalidArg(
                "deconv kernel and stride must be at least 1".into(),
            ));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidArg("deconv channel counts must be positive".into()));
        }
        Ok(DeconvSpec {
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
        })
    }

    /// Output size for an input of spatial size `input_size`.
    pub fn output_size(&self, input_size: usize) -> Result<usize> {
        if input_size == 0 {
            return Err(Error::InvalidArg("deconv input size must be at least 1".into()));
        }
        let grown = self.stride * (input_size - 1) + self.kernel;
        if grown <= 2 * self.padding {
            return Err(Error::InvalidArg(format!(
                "deconv output size {} - 2*{} is not positive",
                grown, self.padding
            )));
        }
        Ok(grown - 2 * self.padding)
    }
}

/// A region of interest in input-image pixel coordinates (never quantized).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub rect: BBox,
    pub batch_index: usize,
}

impl Roi {
    pub fn new(rect: BBox, batch_index: usize) -> Self {
        Roi { rect, batch_index }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deconv_sizes_match_stated_chain() {
        let d1 = DeconvSpec::new(8, 4, 1, 1, 1).unwrap();
        assert_eq!(d1.output_size(7).unwrap(), 30);
        assert_eq!(d1.output_size(30).unwrap(), 122);
        let d3 = DeconvSpec::new(4, 2, 1, 1, 1).unwrap();
        assert_eq!(d3.output_size(122).unwrap(), 244);
    }

    #[test]
    fn deconv_rejects_nonpositive_output() {
        let spec = DeconvSpec::new(2, 1, 3, 1, 1).unwrap();
        assert!(spec.output_size(1).is_err());
    }
}
