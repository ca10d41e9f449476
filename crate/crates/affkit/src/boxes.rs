//! Box geometry: IoU, anchor generation, offset encode/decode, clipping, NMS.
//!
//! Boxes are continuous corner coordinates relative to the image top-left;
//! area is `max(0, x2-x1) * max(0, y2-y1)` with no +1 pixel convention.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Center/size form: (cx, cy, w, h).
    pub fn cxcywh(&self) -> (f64, f64, f64, f64) {
        (
            (self.x1 + self.x2) / 2.0,
            (self.y1 + self.y2) / 2.0,
            self.width(),
            self.height(),
        )
    }

    pub fn from_cxcywh(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox {
            x1: cx - w / 2.0,
            y1: cy - h / 2.0,
            x2: cx + w / 2.0,
            y2: cy + h / 2.0,
        }
    }
}

/// Intersection area over union area; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Scale-invariant translation plus log-space size shift of `box_` relative
/// to `anchor`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxOffset {
    pub t_x: f64,
    pub t_y: f64,
    pub t_w: f64,
    pub t_h: f64,
}

pub fn encode_offsets(box_: &BBox, anchor: &BBox) -> Result<BoxOffset> {
    let (cx, cy, w, h) = box_.cxcywh();
    let (ax, ay, aw, ah) = anchor.cxcywh();
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "encode_offsets: box has non-positive size {w}x{h}"
        )));
    }
    if aw <= 0.0 || ah <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "encode_offsets: anchor has non-positive size {aw}x{ah}"
        )));
    }
    Ok(BoxOffset {
        t_x: (cx - ax) / aw,
        t_y: (cy - ay) / ah,
        t_w: (w / aw).ln(),
        t_h: (h / ah).ln(),
    })
}

/// Exact inverse of [`encode_offsets`]. The anchor must have positive size.
pub fn decode_offsets(offset: &BoxOffset, anchor: &BBox) -> BBox {
    let (ax, ay, aw, ah) = anchor.cxcywh();
    let cx = offset.t_x * aw + ax;
    let cy = offset.t_y * ah + ay;
    let w = offset.t_w.exp() * aw;
    let h = offset.t_h.exp() * ah;
    BBox::from_cxcywh(cx, cy, w, h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    /// Anchor side lengths in image pixels.
    pub scales: Vec<f64>,
    /// Height/width ratios.
    pub ratios: Vec<f64>,
    /// Feature-map stride in image pixels.
    pub stride: f64,
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.ratios.is_empty() {
            return Err(Error::InvalidArg(
                "anchor config needs at least one scale and one ratio".into(),
            ));
        }
        if self
            .scales
            .iter()
            .chain(self.ratios.iter())
            .any(|v| *v <= 0.0)
            || self.stride <= 0.0
        {
            return Err(Error::InvalidArg(
                "anchor scales, ratios and stride must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }
}

/// One anchor per (cell, scale, ratio), centered on the cell mapped back to
/// image coordinates. For scale s and ratio r = h/w the sides are w = s/sqrt(r),
/// h = s*sqrt(r), so every anchor of one scale has area s^2.
pub fn generate_anchors(config: &AnchorConfig, feature_h: usize, feature_w: usize) -> Vec<BBox> {
    let mut anchors = Vec::with_capacity(feature_h * feature_w * config.anchors_per_cell());
    for cy in 0..feature_h {
        for cx in 0..feature_w {
            let icx = (cx as f64 + 0.5) * config.stride;
            let icy = (cy as f64 + 0.5) * config.stride;
            for &scale in &config.scales {
                for &ratio in &config.ratios {
                    let w = scale / ratio.sqrt();
                    let h = scale * ratio.sqrt();
                    anchors.push(BBox::from_cxcywh(icx, icy, w, h));
                }
            }
        }
    }
    anchors
}

/// Greedy non-maximum suppression. Returns kept indices sorted by descending
/// score; score ties break toward the lower index. A box is suppressed when
/// its IoU with a kept box exceeds `iou_threshold`.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "nms: boxes/scores length mismatch");
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for &i in &order {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order {
            if !suppressed[j] && j != i && iou(&boxes[i], &boxes[j]) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Clamp box coordinates to [0, image_w] x [0, image_h].
pub fn clip_box(box_: &BBox, image_w: f64, image_h: f64) -> BBox {
    BBox {
        x1: box_.x1.clamp(0.0, image_w),
        y1: box_.y1.clamp(0.0, image_h),
        x2: box_.x2.clamp(0.0, image_w),
        y2: box_.y2.clamp(0.0, image_h),
    }
}
