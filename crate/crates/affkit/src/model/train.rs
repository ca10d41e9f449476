//! One end-to-end training step: forward both branches, multi-task losses,
//! explicit backward, and an SGD-with-momentum update.

use super::{GradStore, Model};
use crate::boxes::{encode_offsets, generate_anchors, AnchorConfig, BoxOffset};
use crate::data::{image_to_tensor, Scene};
use crate::error::{Error, Result};
use crate::layers::{softmax_slice, softmax_slice_backward, Roi};
use crate::losses::{
    affordance_loss, affordance_loss_grad, box_regression_loss, box_regression_loss_grad,
    classification_loss, classification_loss_grad,
};
use crate::maskops::build_target_mask;
use crate::proposals::{assign_rpn_targets, sample_rois, AnchorLabel, GtBox};
use crate::rng;
use crate::tensor::Tensor;

/// Loss breakdown for one step. `total` is the optimized objective:
/// head classification + gated box regression + gated affordance + RPN.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossReport {
    pub total: f64,
    pub cls: f64,
    pub loc: f64,
    pub aff: f64,
    pub rpn: f64,
    pub lr: f64,
    pub num_samples: usize,
    pub num_positive: usize,
    /// No proposal overlapped a groundtruth box this step.
    pub zero_positive: bool,
}

impl Model {
    /// Run one forward/backward/update cycle on a single annotated scene.
    /// Deterministic for fixed (weights, scene, rng_seed).
    pub fn train_step(&mut self, scene: &Scene, rng_seed: u64) -> Result<LossReport> {
        let lr = self.lr_for(self.iteration);
        let image = image_to_tensor(&scene.image);
        let (img_h, img_w) = (image.dims()[2], image.dims()[3]);

        let (feature, bb_cache) = self.backbone_forward(&image)?;
        let (rpn_out, rpn_cache) = self.rpn_forward(&feature)?;
        let [hf, wf] = [feature.dims()[2], feature.dims()[3]];
        let stride = img_h as f64 / hf as f64;
        let spatial_scale = hf as f64 / img_h as f64;
        let anchor_cfg = AnchorConfig {
            stride,
            ..self.config.anchors.clone()
        };
        let anchors = generate_anchors(&anchor_cfg, hf, wf);
        let gt_boxes: Vec<_> = scene.objects.iter().map(|o| o.bbox).collect();

        // --- RPN losses ------------------------------------------------
        let tc = self.config.train.clone();
        let targets = assign_rpn_targets(
            &anchors,
            &gt_boxes,
            tc.rpn_pos_iou,
            tc.rpn_neg_iou,
            tc.rpn_batch,
            tc.rpn_pos_fraction,
            rng::substream(rng_seed, 1),
        )?;
        let sampled = targets.num_positive + targets.num_negative;
        let a_per_cell = self.config.anchors.anchors_per_cell();
        let plane = hf * wf;
        let mut grad_rpn_cls = Tensor::zeros(rpn_out.cls.dims());
        let mut grad_rpn_reg = Tensor::zeros(rpn_out.reg.dims());
        let mut rpn_cls_loss = 0.0;
        let mut rpn_reg_loss = 0.0;
        for (ai, label) in targets.labels.iter().enumerate() {
            let truth = match label {
                AnchorLabel::Positive => 1usize,
                AnchorLabel::Negative => 0usize,
                AnchorLabel::Ignore => continue,
            };
            let cell = ai / a_per_cell;
            let slot = ai % a_per_cell;
            let pix = cell; // anchors are generated cell-major
            let logits = [
                rpn_out.cls.data()[(2 * slot) * plane + pix],
                rpn_out.cls.data()[(2 * slot + 1) * plane + pix],
            ];
            let p = softmax_slice(&logits);
            rpn_cls_loss += classification_loss(&p, truth)?;
            let gp = classification_loss_grad(&p, truth);
            let gl = softmax_slice_backward(&p, &gp);
            let scale = 1.0 / sampled.max(1) as f64;
            grad_rpn_cls.data_mut()[(2 * slot) * plane + pix] += gl[0] * scale;
            grad_rpn_cls.data_mut()[(2 * slot + 1) * plane + pix] += gl[1] * scale;

            if *label == AnchorLabel::Positive {
                let t = BoxOffset {
                    t_x: rpn_out.reg.data()[(4 * slot) * plane + pix],
                    t_y: rpn_out.reg.data()[(4 * slot + 1) * plane + pix],
                    t_w: rpn_out.reg.data()[(4 * slot + 2) * plane + pix],
                    t_h: rpn_out.reg.data()[(4 * slot + 3) * plane + pix],
                };
                let v = targets.offsets[ai].expect("positive anchor carries a target");
                rpn_reg_loss += box_regression_loss(&t, &v);
                let g = box_regression_loss_grad(&t, &v);
                let rs = 1.0 / targets.num_positive.max(1) as f64;
                grad_rpn_reg.data_mut()[(4 * slot) * plane + pix] += g.t_x * rs;
                grad_rpn_reg.data_mut()[(4 * slot + 1) * plane + pix] += g.t_y * rs;
                grad_rpn_reg.data_mut()[(4 * slot + 2) * plane + pix] += g.t_w * rs;
                grad_rpn_reg.data_mut()[(4 * slot + 3) * plane + pix] += g.t_h * rs;
            }
        }
        rpn_cls_loss /= sampled.max(1) as f64;
        rpn_reg_loss /= targets.num_positive.max(1) as f64;
        let rpn_loss = rpn_cls_loss + rpn_reg_loss;

        // --- RoI sampling ----------------------------------------------
        let mut proposals = self.decode_proposals(&rpn_out, &anchors, img_w as f64, img_h as f64);
        if tc.add_gt_proposals {
            for gt in &gt_boxes {
                proposals.push((Roi::new(*gt, 0), 2.0));
            }
        }
        let gts: Vec<GtBox> = scene
            .objects
            .iter()
            .map(|o| GtBox {
                bbox: o.bbox,
                class: o.class,
            })
            .collect();
        let samples = sample_rois(
            &proposals,
            &gts,
            tc.k_train,
            tc.head_batch,
            tc.head_pos_iou,
            rng::substream(rng_seed, 2),
        );
        let n_samples = samples.len().max(1);
        let num_positive = samples.iter().filter(|s| s.label > 0).count();

        // --- detection head ----------------------------------------------
        let rois: Vec<Roi> = samples.iter().map(|s| s.roi).collect();
        let k1 = self.config.num_object_classes + 1;
        let mut head_cls = 0.0;
        let mut head_loc = 0.0;
        let mut head_aff = 0.0;
        let mut grads = GradStore::default();
        let mut grad_feature = Tensor::zeros(feature.dims());

        if !samples.is_empty() {
            let (det, det_cache) = self.det_head_forward(&feature, &rois, spatial_scale)?;
            let mut grad_cls = Tensor::zeros(det.cls_logits.dims());
            let mut grad_reg = Tensor::zeros(det.reg.dims());
            let inv_n = tc.w_cls / n_samples as f64;
            let inv_pos = tc.w_loc / num_positive.max(1) as f64;
            let inv_aff = tc.w_aff / num_positive.max(1) as f64;
            for (i, sample) in samples.iter().enumerate() {
                let logits = &det.cls_logits.data()[i * k1..(i + 1) * k1];
                let p = softmax_slice(logits);
                head_cls += classification_loss(&p, sample.label)?;
                let gp = classification_loss_grad(&p, sample.label);
                let gl = softmax_slice_backward(&p, &gp);
                for (j, g) in gl.iter().enumerate() {
                    grad_cls.data_mut()[i * k1 + j] = g * inv_n;
                }
                if let Some(gi) = sample.matched_gt {
                    let u = sample.label;
                    let base = i * 4 * k1 + 4 * u;
                    let t = BoxOffset {
                        t_x: det.reg.data()[base],
                        t_y: det.reg.data()[base + 1],
                        t_w: det.reg.data()[base + 2],
                        t_h: det.reg.data()[base + 3],
                    };
                    let v = encode_offsets(&gts[gi].bbox, &sample.roi.rect)?;
                    head_loc += box_regression_loss(&t, &v);
                    let g = box_regression_loss_grad(&t, &v);
                    grad_reg.data_mut()[base] = g.t_x * inv_pos;
                    grad_reg.data_mut()[base + 1] = g.t_y * inv_pos;
                    grad_reg.data_mut()[base + 2] = g.t_w * inv_pos;
                    grad_reg.data_mut()[base + 3] = g.t_h * inv_pos;
                }
            }
            head_cls *= inv_n;
            head_loc *= inv_pos;
            self.det_head_backward(&det_cache, &grad_cls, &grad_reg, &mut grad_feature, &mut grads)?;

            // --- affordance head on positives, one at a time ---------------
            let resize = self.config.resize_spec()?;
            for sample in samples.iter().filter(|s| s.matched_gt.is_some()) {
                let gt = &scene.objects[sample.matched_gt.unwrap()];
                let target = build_target_mask(&sample.roi, &gt.mask, &resize)?;
                let cache = self.mask_head_forward(&feature, &sample.roi, spatial_scale)?;
                head_aff += affordance_loss(&cache.probs, &target)? * inv_aff;
                let mut grad_probs = affordance_loss_grad(&cache.probs, &target)?;
                for v in grad_probs.data_mut() {
                    *v *= inv_aff;
                }
                self.mask_head_backward(&cache, &grad_probs, &mut grad_feature, &mut grads)?;
            }
        }

        // --- combine, check, update ------------------------------------
        let total = head_cls + head_loc + head_aff + rpn_loss;
        for (name, value) in [
            ("classification", head_cls),
            ("box regression", head_loc),
            ("affordance", head_aff),
            ("rpn", rpn_loss),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training aborted: {name} loss is {value} at iteration {}",
                    self.iteration
                )));
            }
        }

        let g_feat_rpn = self.rpn_backward(&rpn_cache, &grad_rpn_cls, &grad_rpn_reg, &mut grads)?;
        for (a, b) in grad_feature.data_mut().iter_mut().zip(g_feat_rpn.data()) {
            *a += b;
        }
        self.backbone_backward(&bb_cache, &grad_feature, &mut grads)?;

        if lr > 0.0 {
            self.sgd_apply(&grads, lr)?;
        }
        self.iteration += 1;

        Ok(LossReport {
            total,
            cls: head_cls,
            loc: head_loc,
            aff: head_aff,
            rpn: rpn_loss,
            lr,
            num_samples: samples.len(),
            num_positive,
            zero_positive: num_positive == 0,
        })
    }
}
