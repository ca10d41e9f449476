//! RPN target assignment and RoI sampling.

use crate::boxes::{encode_offsets, iou, BBox, BoxOffset};
use crate::error::{Error, Result};
use crate::layers::Roi;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone)]
pub struct RpnTargets {
    /// One label per anchor after subsampling; anchors outside the sampled
    /// minibatch are `Ignore`.
    pub labels: Vec<AnchorLabel>,
    /// Regression target for each sampled positive anchor.
    pub offsets: Vec<Option<BoxOffset>>,
    pub num_positive: usize,
    pub num_negative: usize,
}

/// Label anchors against groundtruth boxes and subsample a training batch.
///
/// An anchor is positive when its IoU with some groundtruth box reaches
/// `pos_iou`, or when it is the best-matching anchor of a groundtruth box;
/// negative when its best IoU stays below `neg_iou`; ignored otherwise.
/// At most `batch_size * pos_fraction` positives are kept and negatives fill
/// the rest of the batch, both chosen deterministically under `rng_seed`.
#[allow(clippy::too_many_arguments)]
pub fn assign_rpn_targets(
    anchors: &[BBox],
    gt_boxes: &[BBox],
    pos_iou: f64,
    neg_iou: f64,
    batch_size: usize,
    pos_fraction: f64,
    rng_seed: u64,
) -> Result<RpnTargets> {
    if !(0.0..=1.0).contains(&neg_iou) || !(0.0..=1.0).contains(&pos_iou) || neg_iou > pos_iou {
        return Err(Error::InvalidArg(format!(
            "rpn thresholds must satisfy 0 <= neg ({neg_iou}) <= pos ({pos_iou}) <= 1"
        )));
    }
    let n = anchors.len();
    let mut best_iou = vec![0.0f64; n];
    let mut best_gt = vec![usize::MAX; n];
    let mut gt_best_iou = vec![0.0f64; gt_boxes.len()];
    for (ai, anchor) in anchors.iter().enumerate() {
        for (gi, gt) in gt_boxes.iter().enumerate() {
            let v = iou(anchor, gt);
            if v > best_iou[ai] {
                best_iou[ai] = v;
                best_gt[ai] = gi;
            }
            if v > gt_best_iou[gi] {
                gt_best_iou[gi] = v;
            }
        }
    }

    let mut positive: Vec<usize> = Vec::new();
    let mut negative: Vec<usize> = Vec::new();
    let mut raw = vec![AnchorLabel::Ignore; n];
    for ai in 0..n {
        let is_gt_best = best_gt[ai] != usize::MAX
            && best_iou[ai] > 0.0
            && (best_iou[ai] - gt_best_iou[best_gt[ai]]).abs() < 1e-12;
        if best_iou[ai] >= pos_iou || is_gt_best {
            raw[ai] = AnchorLabel::Positive;
            positive.push(ai);
        } else if best_iou[ai] < neg_iou {
            raw[ai] = AnchorLabel::Negative;
            negative.push(ai);
        }
    }

    let mut rng = rng::seeded(rng_seed);
    let max_pos = ((batch_size as f64) * pos_fraction).round() as usize;
    let keep_pos = rng::choose(&positive, max_pos.min(batch_size), &mut rng);
    let keep_neg = rng::choose(&negative, batch_size - keep_pos.len(), &mut rng);

    let mut labels = vec![AnchorLabel::Ignore; n];
    let mut offsets = vec![None; n];
    for &ai in &keep_pos {
        labels[ai] = AnchorLabel::Positive;
        offsets[ai] = Some(encode_offsets(&gt_boxes[best_gt[ai]], &anchors[ai])?);
    }
    for &ai in &keep_neg {
        labels[ai] = AnchorLabel::Negative;
    }
    Ok(RpnTargets {
        labels,
        offsets,
        num_positive: keep_pos.len(),
        num_negative: keep_neg.len(),
    })
}

/// A groundtruth object as the RoI head sees it.
#[derive(Debug, Clone, Copy)]
pub struct GtBox {
    pub bbox: BBox,
    pub class: usize,
}

/// A sampled RoI with its assigned class (0 = background) and, for positives,
/// the index of the matched groundtruth object.
#[derive(Debug, Clone, Copy)]
pub struct RoiSample {
    pub roi: Roi,
    pub label: usize,
    pub matched_gt: Option<usize>,
}

/// Keep the top `k_train` proposals by score, then subsample a head minibatch
/// at a 1:3 positive:negative ratio. A proposal is positive when its best IoU
/// with a groundtruth box reaches `iou_threshold`; scarce positives are
/// padded with negatives.
pub fn sample_rois(
    proposals: &[(Roi, f64)],
    gts: &[GtBox],
    k_train: usize,
    minibatch: usize,
    iou_threshold: f64,
    rng_seed: u64,
) -> Vec<RoiSample> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| {
        proposals[b]
            .1
            .partial_cmp(&proposals[a].1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k_train);

    let mut positive: Vec<(usize, usize)> = Vec::new(); // (proposal idx, gt idx)
    let mut negative: Vec<usize> = Vec::new();
    for &pi in &order {
        let roi = &proposals[pi].0;
        let mut best = 0.0;
        let mut best_gt = usize::MAX;
        for (gi, gt) in gts.iter().enumerate() {
            let v = iou(&roi.rect, &gt.bbox);
            if v > best {
                best = v;
                best_gt = gi;
            }
        }
        if best >= iou_threshold && best_gt != usize::MAX {
            positive.push((pi, best_gt));
        } else {
            negative.push(pi);
        }
    }

    let mut rng = rng::seeded(rng_seed);
    let max_pos = minibatch / 4; // 1:3 positive:negative
    let pos_idx: Vec<usize> = (0..positive.len()).collect();
    let keep_pos = rng::choose(&pos_idx, max_pos, &mut rng);
    let keep_neg = rng::choose(&negative, minibatch - keep_pos.len(), &mut rng);

    let mut out = Vec::with_capacity(keep_pos.len() + keep_neg.len());
    for &i in &keep_pos {
        let (pi, gi) = positive[i];
        out.push(RoiSample {
            roi: proposals[pi].0,
            label: gts[gi].class,
            matched_gt: Some(gi),
        });
    }
    for &pi in &keep_neg {
        out.push(RoiSample {
            roi: proposals[pi].0,
            label: 0,
            matched_gt: None,
        });
    }
    out
}

/// Top `k_infer` proposals by objectness score (all of them when fewer).
pub fn select_inference_rois(proposals: &[(Roi, f64)], k_infer: usize) -> Vec<Roi> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| {
        proposals[b]
            .1
            .partial_cmp(&proposals[a].1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k_infer);
    order.into_iter().map(|i| proposals[i].0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roi(x1: f64, y1: f64, x2: f64, y2: f64) -> Roi {
        Roi::new(BBox::new(x1, y1, x2, y2), 0)
    }

    #[test]
    fn anchor_identical_to_gt_is_positive() {
        let gt = BBox::new(10.0, 10.0, 30.0, 30.0);
        let anchors = vec![gt, BBox::new(50.0, 50.0, 60.0, 60.0)];
        let t = assign_rpn_targets(&anchors, &[gt], 0.7, 0.3, 4, 0.5, 0).unwrap();
        assert_eq!(t.labels[0], AnchorLabel::Positive);
        assert_eq!(t.labels[1], AnchorLabel::Negative);
        assert!(t.offsets[0].is_some());
    }

    #[test]
    fn crafted_three_anchor_case() {
        // IoUs with the single GT: 1.0, 0.6, 0.1 -> positive / ignore / negative
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        let a0 = gt;
        let a1 = BBox::new(0.0, 0.0, 10.0, 6.0); // IoU 0.6
        let a2 = BBox::new(0.0, 9.0, 10.0, 19.0); // IoU 1/19 ~ 0.05
        let t = assign_rpn_targets(&[a0, a1, a2], &[gt], 0.7, 0.3, 16, 0.5, 0).unwrap();
        assert_eq!(t.labels[0], AnchorLabel::Positive);
        assert_eq!(t.labels[1], AnchorLabel::Ignore);
        assert_eq!(t.labels[2], AnchorLabel::Negative);
    }

    #[test]
    fn no_gt_means_all_negatives() {
        let anchors = vec![BBox::new(0.0, 0.0, 4.0, 4.0); 10];
        let t = assign_rpn_targets(&anchors, &[], 0.7, 0.3, 6, 0.5, 1).unwrap();
        assert_eq!(t.num_positive, 0);
        assert_eq!(t.num_negative, 6);
    }

    #[test]
    fn assignment_is_deterministic_under_seed() {
        let anchors: Vec<BBox> = (0..100)
            .map(|i| BBox::new(i as f64, 0.0, i as f64 + 8.0, 8.0))
            .collect();
        let gt = vec![BBox::new(20.0, 0.0, 28.0, 8.0)];
        let a = assign_rpn_targets(&anchors, &gt, 0.7, 0.3, 8, 0.5, 99).unwrap();
        let b = assign_rpn_targets(&anchors, &gt, 0.7, 0.3, 8, 0.5, 99).unwrap();
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn proposal_equal_to_gt_gets_its_class() {
        let gt = GtBox {
            bbox: BBox::new(5.0, 5.0, 20.0, 20.0),
            class: 2,
        };
        let proposals = vec![(roi(5.0, 5.0, 20.0, 20.0), 0.9), (roi(40.0, 40.0, 60.0, 60.0), 0.8)];
        let samples = sample_rois(&proposals, &[gt], 10, 8, 0.5, 0);
        let pos: Vec<_> = samples.iter().filter(|s| s.label > 0).collect();
        assert_eq!(pos.len(), 1);
        assert_eq!(pos[0].label, 2);
        assert_eq!(pos[0].matched_gt, Some(0));
    }

    #[test]
    fn ratio_one_to_three() {
        let gt = GtBox {
            bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
            class: 1,
        };
        let mut proposals = vec![
            (roi(0.0, 0.0, 10.0, 10.0), 0.99),
            (roi(1.0, 0.0, 11.0, 10.0), 0.98),
        ];
        for i in 0..8 {
            proposals.push((roi(40.0 + i as f64, 40.0, 55.0 + i as f64, 55.0), 0.5));
        }
        let samples = sample_rois(&proposals, &[gt], 2000, 8, 0.5, 7);
        let pos = samples.iter().filter(|s| s.label > 0).count();
        let neg = samples.iter().filter(|s| s.label == 0).count();
        assert_eq!(pos, 2);
        assert_eq!(neg, 6);
    }

    #[test]
    fn zero_positives_gives_all_negative_sample() {
        let gt = GtBox {
            bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
            class: 1,
        };
        let proposals: Vec<(Roi, f64)> = (0..12)
            .map(|i| (roi(50.0 + i as f64, 50.0, 60.0 + i as f64, 60.0), 0.5))
            .collect();
        let samples = sample_rois(&proposals, &[gt], 2000, 8, 0.5, 3);
        assert_eq!(samples.len(), 8);
        assert!(samples.iter().all(|s| s.label == 0));
    }

    #[test]
    fn positives_respect_iou_threshold() {
        let gt = GtBox {
            bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
            class: 1,
        };
        let proposals = vec![
            (roi(0.0, 0.0, 10.0, 10.0), 0.9),
            (roi(0.0, 0.0, 10.0, 30.0), 0.8), // IoU 1/3
        ];
        let samples = sample_rois(&proposals, &[gt], 10, 8, 0.5, 0);
        for s in &samples {
            let best = iou(&s.roi.rect, &gt.bbox);
            if s.label > 0 {
                assert!(best >= 0.5);
            } else {
                assert!(best < 0.5);
            }
        }
    }

    #[test]
    fn inference_selection_is_top_k() {
        let proposals = vec![
            (roi(0.0, 0.0, 1.0, 1.0), 0.1),
            (roi(1.0, 0.0, 2.0, 1.0), 0.9),
            (roi(2.0, 0.0, 3.0, 1.0), 0.5),
        ];
        let top = select_inference_rois(&proposals, 2);
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].rect.x1, 1.0);
        assert_eq!(top[1].rect.x1, 2.0);
        let all = select_inference_rois(&proposals, 10);
        assert_eq!(all.len(), 3);
    }
}
