//! Run configuration: a flat `key = value` text format with `#` comments and
//! dotted keys. Unknown keys are rejected, every value is validated before
//! any work starts.

use crate::data::SceneSpec;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::model::{mask_head_chain, ModelConfig};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub scene: SceneSpec,
    pub mask_size: usize,
    pub train_iters: u64,
    /// 0 means "80% of the planned iterations".
    pub lr_decay_at: u64,
    pub beta_squared: f64,
    pub affordance_names: Vec<String>,
    pub object_names: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            model: ModelConfig::default(),
            scene: SceneSpec::default(),
            mask_size: 244,
            train_iters: 2000,
            lr_decay_at: 0,
            beta_squared: 0.3,
            affordance_names: crate::data::AFFORDANCE_NAMES.iter().map(|s| s.to_string()).collect(),
            object_names: crate::data::OBJECT_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl RunConfig {
    /// Parse a config file over the defaults.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self> {
        let mut pairs: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if pairs.insert(key.clone(), (lineno + 1, value.trim().to_string())).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
        }
        Self::from_pairs(&pairs)
    }

    fn from_pairs(pairs: &BTreeMap<String, (usize, String)>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut mask_size_set = false;
        for (key, (lineno, value)) in pairs {
            let fail = |msg: &str| Error::Config(format!("line {lineno}: key '{key}': {msg}"));
            let vu = || value.parse::<usize>().map_err(|_| fail("expected an unsigned integer"));
            let vu64 = || value.parse::<u64>().map_err(|_| fail("expected an unsigned integer"));
            let vf = || value.parse::<f64>().map_err(|_| fail("expected a number"));
            let vb = || match value.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(fail("expected true or false")),
            };
            let vlist = || -> Result<Vec<f64>> {
                value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|_| fail("expected a comma-separated number list")))
                    .collect()
            };
            let vnames = || -> Vec<String> {
                value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
            };
            match key.as_str() {
                "seed" => cfg.seed = vu64()?,
                "model.num_object_classes" => cfg.model.num_object_classes = vu()?,
                "model.num_affordance_classes" => cfg.model.num_affordances = vu()?,
                "model.backbone_width" => cfg.model.backbone_width = vu()?,
                "model.fc_width" => cfg.model.fc_width = vu()?,
                "model.mask_width" => cfg.model.mask_width = vu()?,
                "model.mask_size" => {
                    cfg.mask_size = vu()?;
                    mask_size_set = true;
                }
                "model.roialign" => cfg.model.roialign_size = vu()?,
                "model.mask_alpha" => cfg.model.mask_alpha = vf()?,
                "anchors.scales" => cfg.model.anchors.scales = vlist()?,
                "anchors.ratios" => cfg.model.anchors.ratios = vlist()?,
                "train.lr" => cfg.model.train.lr = vf()?,
                "train.momentum" => cfg.model.train.momentum = vf()?,
                "train.weight_decay" => cfg.model.train.weight_decay = vf()?,
                "train.lr_decay_at" => cfg.lr_decay_at = vu64()?,
                "train.iters" => cfg.train_iters = vu64()?,
                "train.k_train" => cfg.model.train.k_train = vu()?,
                "train.head_batch" => cfg.model.train.head_batch = vu()?,
                "train.head_pos_iou" => cfg.model.train.head_pos_iou = vf()?,
                "train.rpn_batch" => cfg.model.train.rpn_batch = vu()?,
                "train.rpn_pos_fraction" => cfg.model.train.rpn_pos_fraction = vf()?,
                "train.rpn_pos_iou" => cfg.model.train.rpn_pos_iou = vf()?,
                "train.rpn_neg_iou" => cfg.model.train.rpn_neg_iou = vf()?,
                "train.add_gt_proposals" => cfg.model.train.add_gt_proposals = vb()?,
                "train.w_cls" => cfg.model.train.w_cls = vf()?,
                "train.w_loc" => cfg.model.train.w_loc = vf()?,
                "train.w_aff" => cfg.model.train.w_aff = vf()?,
                "infer.k_infer" => cfg.model.infer.k_infer = vu()?,
                "infer.score_gate" => cfg.model.infer.score_gate = vf()?,
                "infer.nms_iou" => cfg.model.infer.nms_iou = vf()?,
                "eval.beta_squared" => cfg.beta_squared = vf()?,
                "data.image_size" => {
                    cfg.scene.width = vu()?;
                    cfg.scene.height = cfg.scene.width;
                }
                "data.objects_min" => cfg.scene.objects_min = vu()?,
                "data.objects_max" => cfg.scene.objects_max = vu()?,
                "labels.affordances" => cfg.affordance_names = vnames(),
                "labels.objects" => cfg.object_names = vnames(),
                "priority.order" => {
                    // resolved against labels.affordances in finish()
                    cfg.model.affordance_priority = Vec::new();
                    let _ = value;
                }
                _ => return Err(Error::Config(format!("line {lineno}: unknown key '{key}'"))),
            }
        }
        // second pass: priority needs the final affordance name list
        if let Some((lineno, value)) = pairs.get("priority.order") {
            let mut order = Vec::new();
            for name in value.split(',').map(|s| s.trim()).filter(|s| !s.is_empty()) {
                let label = cfg
                    .affordance_names
                    .iter()
                    .position(|n| n == name)
                    .map(|i| (i + 1) as u8)
                    .or_else(|| name.parse::<u8>().ok())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "line {lineno}: priority.order entry '{name}' is not a known affordance"
                        ))
                    })?;
                order.push(label);
            }
            cfg.model.affordance_priority = order;
        }
        cfg.finish(mask_size_set)?;
        Ok(cfg)
    }

    fn finish(&mut self, mask_size_set: bool) -> Result<()> {
        if self.affordance_names.len() != self.model.num_affordances {
            // keep names and count in sync; names win when explicitly given
            if self.affordance_names.len() == RunConfig::default().affordance_names.len()
                && self.model.num_affordances != RunConfig::default().model.num_affordances
            {
                self.affordance_names = (1..=self.model.num_affordances)
                    .map(|i| format!("aff{i}"))
                    .collect();
            } else {
                self.model.num_affordances = self.affordance_names.len();
            }
        }
        if self.object_names.len() != self.model.num_object_classes {
            if self.object_names.len() == RunConfig::default().object_names.len()
                && self.model.num_object_classes != RunConfig::default().model.num_object_classes
            {
                self.object_names = (1..=self.model.num_object_classes)
                    .map(|i| format!("class{i}"))
                    .collect();
            } else {
                self.model.num_object_classes = self.object_names.len();
            }
        }
        if self.model.affordance_priority.is_empty()
            || self.model.affordance_priority.len() != self.model.num_affordances
        {
            if self.model.affordance_priority.is_empty()
                && self.model.num_affordances == RunConfig::default().model.num_affordances
            {
                self.model.affordance_priority = RunConfig::default().model.affordance_priority;
            } else if self.model.affordance_priority.is_empty() {
                return Err(Error::Config(
                    "priority.order is required when the affordance set is customized".into(),
                ));
            } else {
                return Err(Error::Config(format!(
                    "priority.order lists {} labels but there are {} affordances",
                    self.model.affordance_priority.len(),
                    self.model.num_affordances
                )));
            }
        }
        let _ = mask_size_set;
        self.model.mask_head = mask_head_chain(self.mask_size, self.model.mask_width)?;
        if self.beta_squared <= 0.0 {
            return Err(Error::Config("eval.beta_squared must be positive".into()));
        }
        self.scene.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model.validate()
    }

    /// Learning-rate decay boundary for a planned iteration budget.
    pub fn decay_boundary(&self, iters: u64) -> u64 {
        if self.lr_decay_at > 0 {
            self.lr_decay_at
        } else {
            iters * 4 / 5
        }
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        EvalConfig::new(self.beta_squared, self.affordance_names.clone(), 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_validate() {
        let cfg = RunConfig::from_str("").unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.model.mask_head.len(), 3);
        assert_eq!(cfg.mask_size, 244);
    }

    #[test]
    fn values_comments_and_dots() {
        let text = "\n# comment\nseed = 7\nmodel.mask_size = 112  # ablation\ntrain.lr = 0.01\npriority.order = contain,grasp,pound,w-grasp\n";
        let cfg = RunConfig::from_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mask_size, 112);
        assert_eq!(cfg.model.train.lr, 0.01);
        assert_eq!(cfg.model.affordance_priority, vec![4, 1, 2, 3]);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::from_str("model.depth = 3").unwrap_err().to_string();
        assert!(err.contains("unknown key"), "got: {err}");
    }

    #[test]
    fn bad_value_is_rejected() {
        assert!(RunConfig::from_str("seed = banana").is_err());
        assert!(RunConfig::from_str("infer.score_gate = 1.5").is_err());
        assert!(RunConfig::from_str("model.mask_size = 99").is_err());
    }

    #[test]
    fn duplicate_key_is_rejected() {
        assert!(RunConfig::from_str("seed = 1\nseed = 2").is_err());
    }

    #[test]
    fn custom_labels_require_priority() {
        let err = RunConfig::from_str("labels.affordances = cut,scoop")
            .unwrap_err()
            .to_string();
        assert!(err.contains("priority.order"), "got: {err}");
        let cfg =
            RunConfig::from_str("labels.affordances = cut,scoop\npriority.order = cut,scoop").unwrap();
        assert_eq!(cfg.model.num_affordances, 2);
        assert_eq!(cfg.model.affordance_priority, vec![1, 2]);
    }
}
