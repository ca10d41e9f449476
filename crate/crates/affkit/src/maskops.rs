//! Multiclass affordance-mask machinery: robust resizing with
//! multi-thresholding, training-target construction, inference-time
//! projection to box size, and priority-based overlap merging.
//!
//! The resizing strategy is the reason this module exists: naive
//! interpolation of a multiclass label grid invents labels that are absent
//! from the source. Remapping the present labels to 0..n-1, resizing as real
//! values, and keeping only pixels within +-alpha of an integer level makes
//! interiors survive while blended boundary pixels drop out.

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::layers::Roi;
use crate::tensor::Tensor;

/// A 2-D grid of small-integer affordance labels; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize) -> Self {
        LabelMask {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Shape(format!(
                "label mask {}x{} needs {} values, got {}",
                width,
                height,
                width * height,
                labels.len()
            )));
        }
        Ok(LabelMask {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.labels[y * self.width + x] = v;
    }

    /// Sorted unique labels present in the mask.
    pub fn unique_labels(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.labels {
            seen[v as usize] = true;
        }
        (0u16..256).filter(|&v| seen[v as usize]).map(|v| v as u8).collect()
    }

    /// Largest label value that may appear given C affordance classes.
    pub fn validate_max_label(&self, num_affordances: usize) -> Result<()> {
        for (i, &v) in self.labels.iter().enumerate() {
            if v as usize > num_affordances {
                return Err(Error::InvalidArg(format!(
                    "mask label {} at pixel {} exceeds affordance count {}",
                    v, i, num_affordances
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskResizeSpec {
    pub target_w: usize,
    pub target_h: usize,
    pub alpha: f64,
}

impl MaskResizeSpec {
    pub const DEFAULT_ALPHA: f64 = 0.005;

    pub fn new(target_w: usize, target_h: usize, alpha: f64) -> Result<Self> {
        if target_w == 0 || target_h == 0 {
            return Err(Error::InvalidArg("mask resize target must be positive".into()));
        }
        if alpha <= 0.0 || alpha >= 0.5 {
            return Err(Error::InvalidArg(format!(
                "alpha must lie in (0, 0.5), got {alpha}"
            )));
        }
        Ok(MaskResizeSpec {
            target_w,
            target_h,
            alpha,
        })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side, Self::DEFAULT_ALPHA)
    }
}

/// Resolves label collisions between overlapping objects: earlier entries win.
/// Labels absent from the list rank below all listed ones, ordered among
/// themselves by numeric value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffordancePriority {
    order: Vec<u8>,
}

impl AffordancePriority {
    pub fn new(order: Vec<u8>) -> Result<Self> {
        let mut seen = [false; 256];
        for &l in &order {
            if l == 0 {
                return Err(Error::InvalidArg(
                    "background (0) cannot appear in the affordance priority".into(),
                ));
            }
            if seen[l as usize] {
                return Err(Error::InvalidArg(format!(
                    "label {l} listed twice in affordance priority"
                )));
            }
            seen[l as usize] = true;
        }
        Ok(AffordancePriority { order })
    }

    pub fn order(&self) -> &[u8] {
        &self.order
    }

    /// Smaller rank wins a collision.
    pub fn rank(&self, label: u8) -> usize {
        self.order
            .iter()
            .position(|&l| l == label)
            .unwrap_or(self.order.len() + label as usize)
    }
}

/// Bilinear sample of a real-valued grid at target-pixel centers:
/// src = (dst + 0.5) * src_size / dst_size - 0.5, clamped. Resizing a grid to
/// its own size is exactly the identity.
fn bilinear_resize_grid(src: &[f64], sw: usize, sh: usize, tw: usize, th: usize) -> Vec<f64> {
    let mut out = vec![0.0; tw * th];
    let sx_ratio = sw as f64 / tw as f64;
    let sy_ratio = sh as f64 / th as f64;
    for ty in 0..th {
        let sy = ((ty as f64 + 0.5) * sy_ratio - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = sy - y0 as f64;
        for tx in 0..tw {
            let sx = ((tx as f64 + 0.5) * sx_ratio - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = sx - x0 as f64;
            out[ty * tw + tx] = (1.0 - wy) * ((1.0 - wx) * src[y0 * sw + x0] + wx * src[y0 * sw + x1])
                + wy * ((1.0 - wx) * src[y1 * sw + x0] + wx * src[y1 * sw + x1]);
        }
    }
    out
}

/// Robust multiclass resize:
/// 1. collect the unique labels P and map them order-preservingly to 0..n-1;
/// 2. resize the converted integer grid bilinearly as real values;
/// 3. a pixel keeps level p iff its value lies within +-alpha of p, else 0;
/// 4. map the levels back through the inverse bijection.
///
/// The output can therefore only contain labels present in the input.
pub fn resize_multiclass_mask(mask: &LabelMask, spec: &MaskResizeSpec) -> Result<LabelMask> {
    if mask.is_empty() {
        return Err(Error::InvalidArg("cannot resize an empty mask".into()));
    }
    let present = mask.unique_labels();
    let mut level_of = [0u8; 256];
    for (lvl, &lab) in present.iter().enumerate() {
        level_of[lab as usize] = lvl as u8;
    }
    let converted: Vec<f64> = mask.labels.iter().map(|&l| level_of[l as usize] as f64).collect();
    let resized = bilinear_resize_grid(&converted, mask.width, mask.height, spec.target_w, spec.target_h);
    let n_levels = present.len() as f64;
    let labels: Vec<u8> = resized
        .iter()
        .map(|&v| {
            let nearest = v.round();
            let level = if (v - nearest).abs() <= spec.alpha && nearest >= 0.0 && nearest < n_levels
            {
                nearest as usize
            } else {
                0
            };
            present[level]
        })
        .collect();
    LabelMask::from_labels(spec.target_w, spec.target_h, labels)
}

/// Training target for one RoI: pixels inside the RoI copy the matched
/// object's groundtruth labels, everything else is background, and the crop
/// is resized to the head resolution with the robust strategy.
pub fn build_target_mask(roi: &Roi, gt_mask: &LabelMask, spec: &MaskResizeSpec) -> Result<LabelMask> {
    let x1 = roi.rect.x1.floor().max(0.0) as usize;
    let y1 = roi.rect.y1.floor().max(0.0) as usize;
    let x2 = (roi.rect.x2.ceil() as isize).clamp(0, gt_mask.width as isize) as usize;
    let y2 = (roi.rect.y2.ceil() as isize).clamp(0, gt_mask.height as isize) as usize;
    if x2 <= x1 || y2 <= y1 {
        return Ok(LabelMask::new(spec.target_w, spec.target_h));
    }
    let (cw, ch) = (x2 - x1, y2 - y1);
    let mut crop = LabelMask::new(cw, ch);
    for y in 0..ch {
        for x in 0..cw {
            crop.set(x, y, gt_mask.get(x1 + x, y1 + y));
        }
    }
    resize_multiclass_mask(&crop, spec)
}

fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor().max(0.0) as usize
}

/// Inference-time projection of a per-pixel class-probability tensor
/// (C+1, H, W) onto the detected box: per-pixel argmax (ties take the lowest
/// class), then robust resize to the rounded box size.
pub fn project_mask_to_box(pred: &Tensor, box_: &BBox, spec: &MaskResizeSpec) -> Result<LabelMask> {
    if pred.dims().len() != 3 {
        return Err(Error::Shape("project_mask_to_box expects (C+1, H, W)".into()));
    }
    let [classes, h, w] = [pred.dims()[0], pred.dims()[1], pred.dims()[2]];
    if classes == 0 || classes > 256 {
        return Err(Error::Shape(format!("unsupported class count {classes}")));
    }
    if box_.width() <= 0.0 || box_.height() <= 0.0 {
        return Ok(LabelMask::new(0, 0));
    }
    let bw = round_half_up(box_.width()).max(1);
    let bh = round_half_up(box_.height()).max(1);

    let mut argmax = LabelMask::new(w, h);
    let plane = h * w;
    for i in 0..plane {
        let mut best_c = 0usize;
        let mut best_v = pred.data()[i];
        for c in 1..classes {
            let v = pred.data()[c * plane + i];
            if v > best_v {
                best_v = v;
                best_c = c;
            }
        }
        argmax.labels[i] = best_c as u8;
    }
    let spec = MaskResizeSpec::new(bw, bh, spec.alpha)?;
    resize_multiclass_mask(&argmax, &spec)
}

/// Paste per-object masks onto a full-image canvas. Where two objects claim a
/// pixel with different non-background labels, the higher-priority label
/// wins; background never overwrites anything. The result is independent of
/// input order.
pub fn merge_overlaps_by_priority(
    masks: &[(BBox, LabelMask)],
    priority: &AffordancePriority,
    image_w: usize,
    image_h: usize,
) -> LabelMask {
    let mut canvas = LabelMask::new(image_w, image_h);
    let mut ranks = vec![usize::MAX; image_w * image_h];
    for (box_, mask) in masks {
        let ox = (box_.x1 + 0.5).floor() as isize;
        let oy = (box_.y1 + 0.5).floor() as isize;
        for my in 0..mask.height {
            let cy = oy + my as isize;
            if cy < 0 || cy >= image_h as isize {
                continue;
            }
            for mx in 0..mask.width {
                let cx = ox + mx as isize;
                if cx < 0 || cx >= image_w as isize {
                    continue;
                }
                let label = mask.get(mx, my);
                if label == 0 {
                    continue;
                }
                let idx = cy as usize * image_w + cx as usize;
                let rank = priority.rank(label);
                if rank < ranks[idx] {
                    ranks[idx] = rank;
                    canvas.labels[idx] = label;
                }
            }
        }
    }
    canvas
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, labels: &[u8]) -> LabelMask {
        let data: Vec<u8> = (0..w * h).map(|_| labels[rng.gen_range(0..labels.len())]).collect();
        LabelMask::from_labels(w, h, data).unwrap()
    }

    #[test]
    fn uniform_mask_survives_any_resize() {
        let mask = LabelMask::from_labels(3, 3, vec![7; 9]).unwrap();
        let spec = MaskResizeSpec::new(11, 5, MaskResizeSpec::DEFAULT_ALPHA).unwrap();
        let out = resize_multiclass_mask(&mask, &spec).unwrap();
        assert!(out.labels().iter().all(|&v| v == 7));
    }

    #[test]
    fn resize_is_idempotent_at_fixed_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mask = random_mask(&mut rng, 13, 9, &[0, 3, 5]);
            let spec = MaskResizeSpec::new(13, 9, MaskResizeSpec::DEFAULT_ALPHA).unwrap();
            assert_eq!(resize_multiclass_mask(&mask, &spec).unwrap(), mask);
        }
    }

    /// The one-vs-rest route the strategy replaces: resize each label's
    /// indicator separately, recombine by linearity, then threshold.
    fn one_vs_rest_oracle(mask: &LabelMask, spec: &MaskResizeSpec) -> LabelMask {
        let present = mask.unique_labels();
        let mut combined = vec![0.0; spec.target_w * spec.target_h];
        for (level, &lab) in present.iter().enumerate() {
            if level == 0 {
                continue;
            }
            let indicator: Vec<f64> = mask
                .labels()
                .iter()
                .map(|&v| if v == lab { 1.0 } else { 0.0 })
                .collect();
            let resized = bilinear_resize_grid(
                &indicator,
                mask.width(),
                mask.height(),
                spec.target_w,
                spec.target_h,
            );
            for (acc, v) in combined.iter_mut().zip(resized) {
                *acc += level as f64 * v;
            }
        }
        let labels: Vec<u8> = combined
            .iter()
            .map(|&v| {
                let nearest = v.round();
                if (v - nearest).abs() <= spec.alpha && nearest >= 0.0 && (nearest as usize) < present.len() {
                    present[nearest as usize]
                } else {
                    present[0]
                }
            })
            .collect();
        LabelMask::from_labels(spec.target_w, spec.target_h, labels).unwrap()
    }

    #[test]
    fn label_closure_and_oracle_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let mask = random_mask(&mut rng, 17, 11, &[0, 3, 5]);
            let spec = MaskResizeSpec::new(
                rng.gen_range(4..40),
                rng.gen_range(4..40),
                MaskResizeSpec::DEFAULT_ALPHA,
            )
            .unwrap();
            let out = resize_multiclass_mask(&mask, &spec).unwrap();
            for &v in out.labels() {
                assert!([0u8, 3, 5].contains(&v), "label {v} invented by resize");
            }
            let oracle = one_vs_rest_oracle(&mask, &spec);
            assert_eq!(out, oracle);
        }
    }

    #[test]
    fn target_mask_copies_covered_region() {
        // 8x8 image, object labels occupy x in [2,6), y in [2,6)
        let mut gt = LabelMask::new(8, 8);
        for y in 2..6 {
            for x in 2..6 {
                gt.set(x, y, 4);
            }
        }
        let spec = MaskResizeSpec::new(4, 4, MaskResizeSpec::DEFAULT_ALPHA).unwrap();
        let roi = Roi::new(BBox::new(2.0, 2.0, 6.0, 6.0), 0);
        let target = build_target_mask(&roi, &gt, &spec).unwrap();
        assert!(target.labels().iter().all(|&v| v == 4));

        let disjoint = Roi::new(BBox::new(6.5, 6.5, 7.5, 7.5), 0);
        let target = build_target_mask(&disjoint, &gt, &spec).unwrap();
        assert!(target.labels().iter().all(|&v| v == 0));
    }

    #[test]
    fn target_mask_half_overlap_keeps_other_half_background() {
        let mut gt = LabelMask::new(8, 8);
        for y in 0..8 {
            for x in 0..4 {
                gt.set(x, y, 2);
            }
        }
        // RoI covers x in [0,8): left half labeled, right half background.
        let spec = MaskResizeSpec::new(8, 8, MaskResizeSpec::DEFAULT_ALPHA).unwrap();
        let roi = Roi::new(BBox::new(0.0, 0.0, 8.0, 8.0), 0);
        let target = build_target_mask(&roi, &gt, &spec).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(target.get(x, y), if x < 4 { 2 } else { 0 });
            }
        }
    }

    #[test]
    fn projection_uniform_favourite_class() {
        let mut pred = Tensor::zeros(&[3, 4, 4]);
        for i in 0..16 {
            pred.data_mut()[0 * 16 + i] = 0.2;
            pred.data_mut()[16 + i] = 0.1;
            pred.data_mut()[2 * 16 + i] = 0.7;
        }
        let spec = MaskResizeSpec::square(4).unwrap();
        let out = project_mask_to_box(&pred, &BBox::new(0.0, 0.0, 6.3, 3.2), &spec).unwrap();
        assert_eq!(out.width(), 6);
        assert_eq!(out.height(), 3);
        assert!(out.labels().iter().all(|&v| v == 2));
    }

    #[test]
    fn projection_tie_takes_lowest_class() {
        let pred = Tensor::filled(&[4, 3, 3], 0.25);
        let spec = MaskResizeSpec::square(3).unwrap();
        let out = project_mask_to_box(&pred, &BBox::new(0.0, 0.0, 3.0, 3.0), &spec).unwrap();
        assert!(out.labels().iter().all(|&v| v == 0));
    }

    #[test]
    fn projection_degenerate_box_is_empty() {
        let pred = Tensor::filled(&[2, 2, 2], 0.5);
        let spec = MaskResizeSpec::square(2).unwrap();
        let out = project_mask_to_box(&pred, &BBox::new(1.0, 1.0, 1.0, 4.0), &spec).unwrap();
        assert_eq!((out.width(), out.height()), (0, 0));
    }

    #[test]
    fn projection_invariant_under_monotone_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let mut pred = Tensor::zeros(&[5, 6, 6]);
            for v in pred.data_mut() {
                *v = rng.gen_range(0.0..1.0);
            }
            let spec = MaskResizeSpec::square(6).unwrap();
            let b = BBox::new(0.0, 0.0, 9.0, 7.0);
            let base = project_mask_to_box(&pred, &b, &spec).unwrap();
            let mut scaled = pred.clone();
            for v in scaled.data_mut() {
                *v = (*v * 3.0).exp();
            }
            let out = project_mask_to_box(&scaled, &b, &spec).unwrap();
            assert_eq!(base, out);
        }
    }

    #[test]
    fn merge_disjoint_union() {
        let mut m1 = LabelMask::new(2, 2);
        m1.set(0, 0, 1);
        m1.set(1, 1, 1);
        let mut m2 = LabelMask::new(2, 2);
        m2.set(0, 0, 3);
        let priority = AffordancePriority::new(vec![1, 2, 3, 4]).unwrap();
        let merged = merge_overlaps_by_priority(
            &[
                (BBox::new(0.0, 0.0, 2.0, 2.0), m1),
                (BBox::new(4.0, 4.0, 6.0, 6.0), m2),
            ],
            &priority,
            8,
            8,
        );
        assert_eq!(merged.get(0, 0), 1);
        assert_eq!(merged.get(1, 1), 1);
        assert_eq!(merged.get(4, 4), 3);
    }

    #[test]
    fn low_priority_contain_loses_collisions() {
        // label 4 ("contain") is configured last and must lose to any other.
        let priority = AffordancePriority::new(vec![1, 2, 3, 4]).unwrap();
        let mut contain = LabelMask::new(2, 2);
        for y in 0..2 {
            for x in 0..2 {
                contain.set(x, y, 4);
            }
        }
        let mut grasp = LabelMask::new(2, 2);
        grasp.set(0, 0, 1);
        let merged = merge_overlaps_by_priority(
            &[
                (BBox::new(0.0, 0.0, 2.0, 2.0), contain),
                (BBox::new(0.0, 0.0, 2.0, 2.0), grasp),
            ],
            &priority,
            2,
            2,
        );
        assert_eq!(merged.get(0, 0), 1);
        assert_eq!(merged.get(1, 0), 4);
    }

    #[test]
    fn merge_is_order_invariant() {
        let priority = AffordancePriority::new(vec![2, 1, 3]).unwrap();
        let mut a = LabelMask::new(2, 2);
        a.set(0, 0, 1);
        a.set(1, 0, 1);
        let mut b = LabelMask::new(2, 2);
        b.set(0, 0, 2);
        let mut c = LabelMask::new(2, 2);
        c.set(0, 0, 3);
        c.set(0, 1, 3);
        let entries = [
            (BBox::new(0.0, 0.0, 2.0, 2.0), a),
            (BBox::new(0.0, 0.0, 2.0, 2.0), b),
            (BBox::new(0.0, 0.0, 2.0, 2.0), c),
        ];
        let orders: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let reference = merge_overlaps_by_priority(&entries, &priority, 2, 2);
        for order in orders {
            let perm: Vec<(BBox, LabelMask)> = order.iter().map(|&i| entries[i].clone()).collect();
            assert_eq!(merge_overlaps_by_priority(&perm, &priority, 2, 2), reference);
        }
        // winner at the triple collision is the highest-priority label (2)
        assert_eq!(reference.get(0, 0), 2);
    }

    #[test]
    fn unlisted_labels_rank_below_listed() {
        let priority = AffordancePriority::new(vec![5]).unwrap();
        assert!(priority.rank(5) < priority.rank(1));
        assert!(priority.rank(1) < priority.rank(2));
    }
}
