//! Inference: top-k proposals, detection head, NMS, the 0.9 score gate with
//! highest-score fallback, and mask projection with priority merging.

use super::Model;
use crate::boxes::{clip_box, decode_offsets, generate_anchors, nms, AnchorConfig, BBox, BoxOffset};
use crate::data::{image_to_tensor, RgbImage};
use crate::error::Result;
use crate::layers::{softmax_slice, Roi};
use crate::maskops::{merge_overlaps_by_priority, project_mask_to_box, AffordancePriority, LabelMask, MaskResizeSpec};
use crate::proposals::select_inference_rois;

#[derive(Debug, Clone)]
pub struct Detection {
    pub bbox: BBox,
    pub class: usize,
    pub score: f64,
    /// Affordance labels at the rounded box size.
    pub mask: LabelMask,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub detections: Vec<Detection>,
    /// Full-image affordance mask after priority merging.
    pub merged: LabelMask,
}

/// Keep detections scoring above the gate; when none qualify, fall back to
/// the single highest-scoring one. `candidates` must be sorted by descending
/// score.
pub fn apply_score_gate<T: Clone>(candidates: &[(f64, T)], gate: f64) -> Vec<T> {
    let passed: Vec<T> = candidates
        .iter()
        .filter(|(s, _)| *s > gate)
        .map(|(_, d)| d.clone())
        .collect();
    if passed.is_empty() {
        candidates.first().map(|(_, d)| vec![d.clone()]).unwrap_or_default()
    } else {
        passed
    }
}

impl Model {
    /// Detect objects and their affordance masks in one image. Pure function
    /// of (weights, image, config).
    pub fn infer(&self, image: &RgbImage) -> Result<Inference> {
        let tensor = image_to_tensor(image);
        let (img_h, img_w) = (tensor.dims()[2], tensor.dims()[3]);
        let (feature, _) = self.backbone_forward(&tensor)?;
        let (rpn_out, _) = self.rpn_forward(&feature)?;
        let [hf, wf] = [feature.dims()[2], feature.dims()[3]];
        let spatial_scale = hf as f64 / img_h as f64;
        let anchor_cfg = AnchorConfig {
            stride: img_h as f64 / hf as f64,
            ..self.config.anchors.clone()
        };
        let anchors = generate_anchors(&anchor_cfg, hf, wf);
        let proposals = self.decode_proposals(&rpn_out, &anchors, img_w as f64, img_h as f64);
        let rois = select_inference_rois(&proposals, self.config.infer.k_infer);
        if rois.is_empty() {
            return Ok(Inference {
                detections: Vec::new(),
                merged: LabelMask::new(img_w, img_h),
            });
        }

        // detection branch on every surviving RoI
        let k1 = self.config.num_object_classes + 1;
        let (det, _) = self.det_head_forward(&feature, &rois, spatial_scale)?;
        let mut boxes = Vec::new();
        let mut scores = Vec::new();
        let mut classes = Vec::new();
        for (i, roi) in rois.iter().enumerate() {
            let p = softmax_slice(&det.cls_logits.data()[i * k1..(i + 1) * k1]);
            // best non-background class
            let (mut best_c, mut best_p) = (1usize, p[1]);
            for (c, &pc) in p.iter().enumerate().skip(2) {
                if pc > best_p {
                    best_p = pc;
                    best_c = c;
                }
            }
            let base = i * 4 * k1 + 4 * best_c;
            let offset = BoxOffset {
                t_x: det.reg.data()[base],
                t_y: det.reg.data()[base + 1],
                t_w: det.reg.data()[base + 2],
                t_h: det.reg.data()[base + 3],
            };
            let refined = clip_box(&decode_offsets(&offset, &roi.rect), img_w as f64, img_h as f64);
            if refined.width() >= 1.0 && refined.height() >= 1.0 {
                boxes.push(refined);
                scores.push(best_p);
                classes.push(best_c);
            }
        }

        let keep = nms(&boxes, &scores, self.config.infer.nms_iou);
        let gated: Vec<(f64, usize)> = keep.iter().map(|&i| (scores[i], i)).collect();
        let survivors = apply_score_gate(&gated, self.config.infer.score_gate);

        // affordance branch on the detected objects
        let priority = AffordancePriority::new(self.config.affordance_priority.clone())
            .expect("validated config");
        let side = self.config.mask_output_size()?;
        let resize = MaskResizeSpec::new(side, side, self.config.mask_alpha)?;
        let mut detections = Vec::with_capacity(survivors.len());
        for i in survivors {
            let roi = Roi::new(boxes[i], 0);
            let cache = self.mask_head_forward(&feature, &roi, spatial_scale)?;
            let mask = project_mask_to_box(&cache.probs, &boxes[i], &resize)?;
            detections.push(Detection {
                bbox: boxes[i],
                class: classes[i],
                score: scores[i],
                mask,
            });
        }
        let entries: Vec<(BBox, LabelMask)> = detections
            .iter()
            .map(|d| (d.bbox, d.mask.clone()))
            .collect();
        let merged = merge_overlaps_by_priority(&entries, &priority, img_w, img_h);
        Ok(Inference { detections, merged })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_keeps_all_above_threshold() {
        let cands = vec![(0.95, "a"), (0.92, "b"), (0.3, "c")];
        assert_eq!(apply_score_gate(&cands, 0.9), vec!["a", "b"]);
    }

    #[test]
    fn gate_falls_back_to_single_best() {
        let cands = vec![(0.8, "a"), (0.6, "b")];
        assert_eq!(apply_score_gate(&cands, 0.9), vec!["a"]);
    }

    #[test]
    fn gate_is_strict() {
        let cands = vec![(0.9, "a"), (0.5, "b")];
        // exactly 0.9 does not pass a "higher than 0.9" gate
        assert_eq!(apply_score_gate(&cands, 0.9), vec!["a"]);
    }

    #[test]
    fn gate_empty_input() {
        let cands: Vec<(f64, u8)> = vec![];
        assert!(apply_score_gate(&cands, 0.9).is_empty());
    }
}
