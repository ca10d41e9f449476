//! RoIAlign: feature extraction for a region of interest without any
//! coordinate rounding.
//!
//! The RoI is mapped to feature coordinates with the real-valued spatial
//! scale, divided into `output_size` bins, and each bin is sampled at its
//! four quarter points (a 2x2 grid). Samples are bilinear interpolations in
//! the center-at-integer convention — the value of pixel (r, c) lives at
//! coordinate (r, c) — with out-of-bounds coordinates clamped to the border.
//! The bin value is the max of its four samples.

use super::Roi;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct RoiAlignCache {
    feat_dims: Vec<usize>,
    roi: Roi,
    output_size: (usize, usize),
    spatial_scale: f64,
    /// winning sample (0..4) per (channel, bin_y, bin_x)
    argmax: Vec<u8>,
}

#[inline]
fn clamp(v: f64, hi: f64) -> f64 {
    v.clamp(0.0, hi)
}

/// Bilinear interpolation at clamped continuous coordinates. Returns the four
/// corner flat offsets (within one channel plane) and their weights.
fn bilinear_taps(h: usize, w: usize, y: f64, x: f64) -> [(usize, f64); 4] {
    let y = clamp(y, (h - 1) as f64);
    let x = clamp(x, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let wy = y - y0 as f64;
    let wx = x - x0 as f64;
    [
        (y0 * w + x0, (1.0 - wy) * (1.0 - wx)),
        (y0 * w + x1, (1.0 - wy) * wx),
        (y1 * w + x0, wy * (1.0 - wx)),
        (y1 * w + x1, wy * wx),
    ]
}

/// feature_map (N, C, H, W) -> (C, out_h, out_w) for one RoI.
pub fn roi_align_forward(
    feature_map: &Tensor,
    roi: &Roi,
    output_size: (usize, usize),
    spatial_scale: f64,
) -> Result<(Tensor, RoiAlignCache)> {
    if feature_map.dims().len() != 4 {
        return Err(Error::Shape("roi_align expects a rank-4 feature map".into()));
    }
    let [n, c, h, w] = [
        feature_map.dims()[0],
        feature_map.dims()[1],
        feature_map.dims()[2],
        feature_map.dims()[3],
    ];
    if roi.batch_index >= n {
        return Err(Error::InvalidArg(format!(
            "roi batch index {} out of range (batch {})",
            roi.batch_index, n
        )));
    }
    let (out_h, out_w) = output_size;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArg("roi_align output size must be positive".into()));
    }
    let fx1 = roi.rect.x1 * spatial_scale;
    let fy1 = roi.rect.y1 * spatial_scale;
    let fw = (roi.rect.x2 - roi.rect.x1) * spatial_scale;
    let fh = (roi.rect.y2 - roi.rect.y1) * spatial_scale;
    if fw <= 0.0 || fh <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "degenerate RoI: {:?} at scale {}",
            roi.rect, spatial_scale
        )));
    }
    let bin_w = fw / out_w as f64;
    let bin_h = fh / out_h as f64;

    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let mut argmax = vec![0u8; c * out_h * out_w];
    let plane_len = h * w;
    let base = roi.batch_index * c * plane_len;

    for by in 0..out_h {
        for bx in 0..out_w {
            // quarter-point 2x2 sampling grid of this bin
            let mut taps = [[(0usize, 0.0f64); 4]; 4];
            let mut s = 0;
            for iy in 0..2 {
                let sy = fy1 + (by as f64 + 0.25 + 0.5 * iy as f64) * bin_h;
                for ix in 0..2 {
                    let sx = fx1 + (bx as f64 + 0.25 + 0.5 * ix as f64) * bin_w;
                    taps[s] = bilinear_taps(h, w, sy, sx);
                    s += 1;
                }
            }
            for ch in 0..c {
                let plane = &feature_map.data()[base + ch * plane_len..base + (ch + 1) * plane_len];
                let mut best = f64::NEG_INFINITY;
                let mut best_s = 0u8;
                for (s, tap) in taps.iter().enumerate() {
                    let v: f64 = tap.iter().map(|&(i, wgt)| plane[i] * wgt).sum();
                    if v > best {
                        best = v;
                        best_s = s as u8;
                    }
                }
                let o = (ch * out_h + by) * out_w + bx;
                out.data_mut()[o] = best;
                argmax[o] = best_s;
            }
        }
    }
    Ok((
        out,
        RoiAlignCache {
            feat_dims: feature_map.dims().to_vec(),
            roi: *roi,
            output_size,
            spatial_scale,
            argmax,
        },
    ))
}

/// Scatter `grad_out` (C, out_h, out_w) through the bilinear weights of each
/// bin's winning sample, accumulating into `grad_feat` (N, C, H, W).
pub fn roi_align_backward(cache: &RoiAlignCache, grad_out: &Tensor, grad_feat: &mut Tensor) -> Result<()> {
    if grad_feat.dims() != cache.feat_dims.as_slice() {
        return Err(Error::Shape("roi_align backward: feature grad dims mismatch".into()));
    }
    let [c, h, w] = [cache.feat_dims[1], cache.feat_dims[2], cache.feat_dims[3]];
    let (out_h, out_w) = cache.output_size;
    if grad_out.dims() != [c, out_h, out_w] {
        return Err(Error::Shape("roi_align backward: grad_out dims mismatch".into()));
    }
    let fx1 = cache.roi.rect.x1 * cache.spatial_scale;
    let fy1 = cache.roi.rect.y1 * cache.spatial_scale;
    let bin_w = (cache.roi.rect.x2 - cache.roi.rect.x1) * cache.spatial_scale / out_w as f64;
    let bin_h = (cache.roi.rect.y2 - cache.roi.rect.y1) * cache.spatial_scale / out_h as f64;
    let plane_len = h * w;
    let base = cache.roi.batch_index * c * plane_len;

    for by in 0..out_h {
        for bx in 0..out_w {
            let mut taps = [[(0usize, 0.0f64); 4]; 4];
            let mut s = 0;
            for iy in 0..2 {
                let sy = fy1 + (by as f64 + 0.25 + 0.5 * iy as f64) * bin_h;
                for ix in 0..2 {
                    let sx = fx1 + (bx as f64 + 0.25 + 0.5 * ix as f64) * bin_w;
                    taps[s] = bilinear_taps(h, w, sy, sx);
                    s += 1;
                }
            }
            for ch in 0..c {
                let o = (ch * out_h + by) * out_w + bx;
                let g = grad_out.data()[o];
                if g == 0.0 {
                    continue;
                }
                let tap = &taps[cache.argmax[o] as usize];
                let plane = &mut grad_feat.data_mut()[base + ch * plane_len..base + (ch + 1) * plane_len];
                for &(i, wgt) in tap {
                    plane[i] += g * wgt;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::BBox;

    #[test]
    fn constant_map_gives_constant_output() {
        let feat = Tensor::filled(&[1, 3, 8, 8], 2.5);
        let roi = Roi::new(BBox::new(1.3, 0.7, 6.9, 7.1), 0);
        let (out, _) = roi_align_forward(&feat, &roi, (4, 4), 1.0).unwrap();
        assert!(out.data().iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn aligned_two_pixel_bins_hit_centers_exactly() {
        // With pixel edges at half-integers, an RoI spanning [a-0.5, a-0.5+2n]
        // puts the four quarter-point samples of each bin exactly on pixel
        // centers, so every sampled value is exact and the bin reduces to the
        // max of its 2x2 pixel block.
        let vals: Vec<f64> = (0..36).map(|v| (v * 7 % 13) as f64).collect();
        let feat = Tensor::from_vec(&[1, 1, 6, 6], vals.clone()).unwrap();
        let roi = Roi::new(BBox::new(-0.5, -0.5, 5.5, 5.5), 0);
        let (out, _) = roi_align_forward(&feat, &roi, (3, 3), 1.0).unwrap();
        for by in 0..3 {
            for bx in 0..3 {
                let expect = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(dy, dx)| vals[(2 * by + dy) * 6 + (2 * bx + dx)])
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(out.data()[by * 3 + bx], expect);
            }
        }
    }

    #[test]
    fn degenerate_roi_is_error() {
        let feat = Tensor::zeros(&[1, 1, 8, 8]);
        let roi = Roi::new(BBox::new(3.0, 2.0, 3.0, 6.0), 0);
        assert!(roi_align_forward(&feat, &roi, (2, 2), 1.0).is_err());
    }

    #[test]
    fn output_ignores_values_outside_bilinear_support() {
        let mut vals = vec![1.0; 100];
        let feat_a = Tensor::from_vec(&[1, 1, 10, 10], vals.clone()).unwrap();
        // perturb a far corner pixel, well outside the RoI support
        vals[99] = 500.0;
        vals[90] = -500.0;
        let feat_b = Tensor::from_vec(&[1, 1, 10, 10], vals).unwrap();
        let roi = Roi::new(BBox::new(1.0, 1.0, 5.0, 5.0), 0);
        let (a, _) = roi_align_forward(&feat_a, &roi, (3, 3), 1.0).unwrap();
        let (b, _) = roi_align_forward(&feat_b, &roi, (3, 3), 1.0).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
