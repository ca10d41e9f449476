//! Architecture and run hyperparameters.

use crate::boxes::AnchorConfig;
use crate::error::{Error, Result};
use crate::layers::DeconvSpec;
use crate::maskops::MaskResizeSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Iteration at which the learning rate divides by 10; `None` keeps it
    /// constant. The CLI defaults this to 80% of the planned iterations.
    pub lr_decay_at: Option<u64>,
    pub rpn_batch: usize,
    pub rpn_pos_fraction: f64,
    pub rpn_pos_iou: f64,
    pub rpn_neg_iou: f64,
    pub k_train: usize,
    pub head_batch: usize,
    pub head_pos_iou: f64,
    /// Multi-task term weights (classification, box regression, affordance);
    /// the objective uses unit weights by default.
    pub w_cls: f64,
    pub w_loc: f64,
    pub w_aff: f64,
    /// Append groundtruth boxes to the proposal pool during training so the
    /// heads see positives before the RPN warms up.
    pub add_gt_proposals: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_decay_at: None,
            rpn_batch: 256,
            rpn_pos_fraction: 0.5,
            rpn_pos_iou: 0.7,
            rpn_neg_iou: 0.3,
            k_train: 2000,
            head_batch: 8,
            head_pos_iou: 0.5,
            w_cls: 1.0,
            w_loc: 1.0,
            w_aff: 1.0,
            add_gt_proposals: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferConfig {
    pub k_infer: usize,
    pub score_gate: f64,
    pub nms_iou: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            k_infer: 1000,
            score_gate: 0.9,
            nms_iou: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Object classes K (labels 1..=K; 0 is background).
    pub num_object_classes: usize,
    /// Affordance classes C (labels 1..=C; 0 is background).
    pub num_affordances: usize,
    pub backbone_width: usize,
    pub fc_width: usize,
    pub mask_width: usize,
    /// Deconvolution stages growing the RoIAlign map to the mask resolution.
    pub mask_head: Vec<DeconvSpec>,
    pub roialign_size: usize,
    pub anchors: AnchorConfig,
    pub mask_alpha: f64,
    /// Conflict-resolution order for overlapping detections, best first.
    pub affordance_priority: Vec<u8>,
    pub train: TrainConfig,
    pub infer: InferConfig,
}

/// The backbone downsamples by 4 (two 2x2 max-pools).
pub const BACKBONE_STRIDE: usize = 4;

impl Default for ModelConfig {
    fn default() -> Self {
        let mask_width = 8;
        ModelConfig {
            num_object_classes: 2,
            num_affordances: 4,
            backbone_width: 32,
            fc_width: 256,
            mask_width,
            mask_head: mask_head_chain(244, mask_width).unwrap(),
            roialign_size: 7,
            anchors: AnchorConfig {
                scales: vec![16.0, 24.0, 32.0, 48.0, 64.0],
                ratios: vec![0.5, 1.0, 2.0],
                stride: BACKBONE_STRIDE as f64,
            },
            mask_alpha: MaskResizeSpec::DEFAULT_ALPHA,
            affordance_priority: vec![1, 2, 3, 4],
            train: TrainConfig::default(),
            infer: InferConfig::default(),
        }
    }
}

/// Deconvolution chains for the supported mask resolutions, starting from the
/// 7x7 RoIAlign map. 244 is the default three-stage chain (7 -> 30 -> 122 ->
/// 244); the smaller sizes mirror the ablation variants.
pub fn mask_head_chain(mask_size: usize, width: usize) -> Result<Vec<DeconvSpec>> {
    let stages: &[(usize, usize, usize)] = match mask_size {
        14 => &[(4, 2, 1)],
        28 => &[(6, 4, 1)],
        56 => &[(6, 4, 1), (4, 2, 1)],
        112 => &[(6, 4, 1), (4, 2, 1), (4, 2, 1)],
        244 => &[(8, 4, 1), (8, 4, 1), (4, 2, 1)],
        other => {
            return Err(Error::Config(format!(
                "unsupported mask size {other}; expected one of 14, 28, 56, 112, 244"
            )))
        }
    };
    stages
        .iter()
        .map(|&(k, s, d)| DeconvSpec::new(k, s, d, width, width))
        .collect()
}

impl ModelConfig {
    /// Realized mask resolution: the deconvolution sizing formula folded over
    /// the chain, starting from the RoIAlign output.
    pub fn mask_output_size(&self) -> Result<usize> {
        let mut size = self.roialign_size;
        for spec in &self.mask_head {
            size = spec.output_size(size)?;
        }
        Ok(size)
    }

    /// Stage-by-stage sizes including the 7x7 input, e.g. [7, 30, 122, 244].
    pub fn mask_size_chain(&self) -> Result<Vec<usize>> {
        let mut sizes = vec![self.roialign_size];
        for spec in &self.mask_head {
            sizes.push(spec.output_size(*sizes.last().unwrap())?);
        }
        Ok(sizes)
    }

    pub fn resize_spec(&self) -> Result<MaskResizeSpec> {
        let side = self.mask_output_size()?;
        MaskResizeSpec::new(side, side, self.mask_alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_object_classes == 0 {
            return Err(Error::Config("need at least one object class".into()));
        }
        if self.num_affordances == 0 || self.num_affordances > 255 {
            return Err(Error::Config("affordance count must be in 1..=255".into()));
        }
        if self.backbone_width == 0 || self.fc_width == 0 || self.mask_width == 0 {
            return Err(Error::Config("widths must be positive".into()));
        }
        if self.roialign_size == 0 {
            return Err(Error::Config("roialign size must be positive".into()));
        }
        if self.mask_head.is_empty() {
            return Err(Error::Config("mask head needs at least one stage".into()));
        }
        for spec in &self.mask_head {
            if spec.in_channels != self.mask_width || spec.out_channels != self.mask_width {
                return Err(Error::Config(
                    "mask head stages must use the configured mask width".into(),
                ));
            }
        }
        self.mask_output_size()?;
        self.anchors.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0 < self.infer.score_gate && self.infer.score_gate < 1.0) {
            return Err(Error::Config(format!(
                "score gate must lie in (0,1), got {}",
                self.infer.score_gate
            )));
        }
        if self.mask_alpha <= 0.0 || self.mask_alpha >= 0.5 {
            return Err(Error::Config("mask alpha must lie in (0, 0.5)".into()));
        }
        for &l in &self.affordance_priority {
            if l == 0 || l as usize > self.num_affordances {
                return Err(Error::Config(format!(
                    "priority label {l} outside 1..={}",
                    self.num_affordances
                )));
            }
        }
        if self.train.lr < 0.0 || self.train.momentum < 0.0 || self.train.weight_decay < 0.0 {
            return Err(Error::Config("training hyperparameters must be non-negative".into()));
        }
        if self.train.w_cls < 0.0 || self.train.w_loc < 0.0 || self.train.w_aff < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.train.head_batch == 0 || self.train.rpn_batch == 0 || self.train.k_train == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.infer.k_infer == 0 {
            return Err(Error::Config("k_infer must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_chain_realizes_stated_sizes() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.mask_size_chain().unwrap(), vec![7, 30, 122, 244]);
    }

    #[test]
    fn ablation_chains() {
        for (size, expect) in [
            (14, vec![7, 14]),
            (28, vec![7, 28]),
            (56, vec![7, 28, 56]),
            (112, vec![7, 28, 56, 112]),
        ] {
            let mut cfg = ModelConfig::default();
            cfg.mask_head = mask_head_chain(size, cfg.mask_width).unwrap();
            assert_eq!(cfg.mask_size_chain().unwrap(), expect);
        }
        assert!(mask_head_chain(99, 8).is_err());
    }

    #[test]
    fn default_config_validates() {
        ModelConfig::default().validate().unwrap();
    }
}
