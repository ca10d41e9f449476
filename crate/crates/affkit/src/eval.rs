//! Pixelwise F-beta segmentation metrics and detection recall, with CSV and
//! aligned-table reports.
//!
//! The per-class score is the plain pixelwise F-beta (beta^2 = 0.3 by
//! default), not a distance-weighted variant; reports label it as such.

use crate::boxes::{iou, BBox};
use crate::error::{Error, Result};
use crate::maskops::LabelMask;
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub beta_squared: f64,
    /// Names indexed by affordance label - 1.
    pub class_names: Vec<String>,
    pub detection_iou: f64,
}

impl EvalConfig {
    pub fn new(beta_squared: f64, class_names: Vec<String>, detection_iou: f64) -> Result<Self> {
        if beta_squared <= 0.0 {
            return Err(Error::InvalidArg("beta_squared must be positive".into()));
        }
        Ok(EvalConfig {
            beta_squared,
            class_names,
            detection_iou,
        })
    }

    pub fn name_of(&self, label: u8) -> String {
        self.class_names
            .get(label as usize - 1)
            .cloned()
            .unwrap_or_else(|| format!("class{label}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
}

/// Pixelwise precision/recall/F-beta for every class label ≥ 1 present in
/// either mask. Conventions: both masks empty for a class -> (1, 1, 1);
/// exactly one empty -> (0, 0, 0).
pub fn f_beta_per_class(
    pred: &LabelMask,
    gt: &LabelMask,
    config: &EvalConfig,
) -> Result<BTreeMap<u8, ClassScore>> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::Eval(format!(
            "mask sizes differ: pred {}x{}, gt {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut labels: Vec<u8> = pred
        .unique_labels()
        .into_iter()
        .chain(gt.unique_labels())
        .filter(|&l| l != 0)
        .collect();
    labels.sort_unstable();
    labels.dedup();

    let mut out = BTreeMap::new();
    for label in labels {
        let mut tp = 0usize;
        let mut pred_n = 0usize;
        let mut gt_n = 0usize;
        for (p, g) in pred.labels().iter().zip(gt.labels()) {
            let pm = *p == label;
            let gm = *g == label;
            pred_n += pm as usize;
            gt_n += gm as usize;
            tp += (pm && gm) as usize;
        }
        out.insert(label, score_from_counts(tp, pred_n, gt_n, config.beta_squared));
    }
    Ok(out)
}

pub fn score_from_counts(tp: usize, pred_n: usize, gt_n: usize, beta_squared: f64) -> ClassScore {
    if pred_n == 0 && gt_n == 0 {
        return ClassScore {
            precision: 1.0,
            recall: 1.0,
            f_beta: 1.0,
        };
    }
    if pred_n == 0 || gt_n == 0 {
        return ClassScore {
            precision: 0.0,
            recall: 0.0,
            f_beta: 0.0,
        };
    }
    let precision = tp as f64 / pred_n as f64;
    let recall = tp as f64 / gt_n as f64;
    let denom = beta_squared * precision + recall;
    let f_beta = if denom == 0.0 {
        0.0
    } else {
        (1.0 + beta_squared) * precision * recall / denom
    };
    ClassScore {
        precision,
        recall,
        f_beta,
    }
}

/// One image's prediction or groundtruth for dataset evaluation.
#[derive(Debug, Clone)]
pub struct ImageMasks {
    pub id: String,
    pub merged: LabelMask,
    /// (box, class, score); score is 1.0 for groundtruth.
    pub boxes: Vec<(BBox, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct ClassRow {
    pub label: u8,
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    pub images: usize,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<ClassRow>,
    pub macro_f_beta: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Fraction of groundtruth boxes matched by a detection at the IoU
    /// threshold; `None` when either side carries no boxes.
    pub detection_recall: Option<f64>,
    pub beta_squared: f64,
}

/// Average per-class scores over the images whose groundtruth contains the
/// class; macro scores average the per-class column. Detection recall counts
/// each groundtruth box as found when some detection (best score first,
/// matched at most once) reaches the IoU threshold.
pub fn evaluate_dataset(
    predictions: &[ImageMasks],
    groundtruth: &[ImageMasks],
    config: &EvalConfig,
) -> Result<EvalReport> {
    let pred_by_id: BTreeMap<&str, &ImageMasks> =
        predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let missing: Vec<&str> = groundtruth
        .iter()
        .filter(|g| !pred_by_id.contains_key(g.id.as_str()))
        .map(|g| g.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Eval(format!(
            "missing predictions for images: {}",
            missing.join(", ")
        )));
    }

    #[derive(Default)]
    struct Acc {
        precision: f64,
        recall: f64,
        f_beta: f64,
        images: usize,
    }
    let mut acc: BTreeMap<u8, Acc> = BTreeMap::new();
    let mut gt_boxes_total = 0usize;
    let mut gt_boxes_found = 0usize;
    let mut any_pred_boxes = false;

    for gt in groundtruth {
        let pred = pred_by_id[gt.id.as_str()];
        let scores = f_beta_per_class(&pred.merged, &gt.merged, config)?;
        for label in gt.merged.unique_labels() {
            if label == 0 {
                continue;
            }
            let s = scores.get(&label).copied().unwrap_or(ClassScore {
                precision: 0.0,
                recall: 0.0,
                f_beta: 0.0,
            });
            let e = acc.entry(label).or_default();
            e.precision += s.precision;
            e.recall += s.recall;
            e.f_beta += s.f_beta;
            e.images += 1;
        }

        gt_boxes_total += gt.boxes.len();
        any_pred_boxes |= !pred.boxes.is_empty();
        let mut order: Vec<usize> = (0..pred.boxes.len()).collect();
        order.sort_by(|&a, &b| {
            pred.boxes[b]
                .2
                .partial_cmp(&pred.boxes[a].2)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut taken = vec![false; gt.boxes.len()];
        for pi in order {
            let mut best = config.detection_iou;
            let mut best_gi = None;
            for (gi, gb) in gt.boxes.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let v = iou(&pred.boxes[pi].0, &gb.0);
                if v >= best {
                    best = v;
                    best_gi = Some(gi);
                }
            }
            if let Some(gi) = best_gi {
                taken[gi] = true;
                gt_boxes_found += 1;
            }
        }
    }

    let mut rows = Vec::new();
    for (label, a) in &acc {
        let n = a.images.max(1) as f64;
        rows.push(ClassRow {
            label: *label,
            name: config.name_of(*label),
            precision: a.precision / n,
            recall: a.recall / n,
            f_beta: a.f_beta / n,
            images: a.images,
        });
    }
    let k = rows.len().max(1) as f64;
    let report = EvalReport {
        macro_f_beta: rows.iter().map(|r| r.f_beta).sum::<f64>() / k,
        macro_precision: rows.iter().map(|r| r.precision).sum::<f64>() / k,
        macro_recall: rows.iter().map(|r| r.recall).sum::<f64>() / k,
        detection_recall: if gt_boxes_total > 0 && any_pred_boxes {
            Some(gt_boxes_found as f64 / gt_boxes_total as f64)
        } else {
            None
        },
        rows,
        beta_squared: config.beta_squared,
    };
    Ok(report)
}

impl EvalReport {
    /// CSV with one row per class and a terminal `average` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,f_beta\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", r.name, r.precision, r.recall, r.f_beta);
        }
        let _ = writeln!(
            s,
            "average,{:.6},{:.6},{:.6}",
            self.macro_precision, self.macro_recall, self.macro_f_beta
        );
        s
    }

    /// Human-readable aligned table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "pixelwise F-beta (beta^2 = {:.2}), per-class averages over images containing the class",
            self.beta_squared
        );
        let _ = writeln!(s, "{:<12} {:>10} {:>10} {:>10} {:>8}", "class", "precision", "recall", "f_beta", "images");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<12} {:>10.4} {:>10.4} {:>10.4} {:>8}",
                r.name, r.precision, r.recall, r.f_beta, r.images
            );
        }
        let _ = writeln!(
            s,
            "{:<12} {:>10.4} {:>10.4} {:>10.4}",
            "average", self.macro_precision, self.macro_recall, self.macro_f_beta
        );
        if let Some(dr) = self.detection_recall {
            let _ = writeln!(s, "detection recall @ IoU 0.5: {dr:.4}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EvalConfig {
        EvalConfig::new(
            0.3,
            vec!["grasp".into(), "pound".into(), "w-grasp".into(), "contain".into()],
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn perfect_match_scores_one() {
        let mut m = LabelMask::new(4, 4);
        m.set(0, 0, 1);
        m.set(1, 0, 2);
        let scores = f_beta_per_class(&m, &m, &cfg()).unwrap();
        for (_, s) in scores {
            assert_eq!(s.f_beta, 1.0);
        }
    }

    #[test]
    fn all_background_prediction_scores_zero() {
        let pred = LabelMask::new(4, 4);
        let mut gt = LabelMask::new(4, 4);
        gt.set(2, 2, 3);
        let scores = f_beta_per_class(&pred, &gt, &cfg()).unwrap();
        assert_eq!(scores[&3].f_beta, 0.0);
    }

    #[test]
    fn half_overlap_forces_f_equal_p() {
        // pred and gt both 8 pixels of class 1, overlapping in 4:
        // P = R = 0.5 forces F = 0.5 for any beta.
        let mut pred = LabelMask::new(4, 4);
        let mut gt = LabelMask::new(4, 4);
        for i in 0..8 {
            pred.set(i % 4, i / 4, 1);
            gt.set(i % 4, i / 4 + 1, 1);
        }
        for beta_sq in [0.3, 1.0, 2.0] {
            let cfg = EvalConfig::new(beta_sq, vec![], 0.5).unwrap();
            let s = f_beta_per_class(&pred, &gt, &cfg).unwrap()[&1];
            assert!((s.precision - 0.5).abs() < 1e-12);
            assert!((s.recall - 0.5).abs() < 1e-12);
            assert!((s.f_beta - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn size_mismatch_is_error() {
        let a = LabelMask::new(4, 4);
        let b = LabelMask::new(5, 4);
        assert!(f_beta_per_class(&a, &b, &cfg()).is_err());
    }

    fn image(id: &str, mask: LabelMask, boxes: Vec<(BBox, usize, f64)>) -> ImageMasks {
        ImageMasks {
            id: id.into(),
            merged: mask,
            boxes,
        }
    }

    #[test]
    fn dataset_perfect_predictions() {
        let mut m = LabelMask::new(4, 4);
        m.set(0, 0, 1);
        m.set(3, 3, 4);
        let b = vec![(BBox::new(0.0, 0.0, 2.0, 2.0), 1, 1.0)];
        let gt = vec![image("a", m.clone(), b.clone())];
        let pred = vec![image("a", m, b)];
        let report = evaluate_dataset(&pred, &gt, &cfg()).unwrap();
        assert_eq!(report.macro_f_beta, 1.0);
        assert_eq!(report.detection_recall, Some(1.0));
        // macro average equals the mean of the per-class column
        let mean: f64 = report.rows.iter().map(|r| r.f_beta).sum::<f64>() / report.rows.len() as f64;
        assert!((report.macro_f_beta - mean).abs() < 1e-12);
    }

    #[test]
    fn missing_prediction_lists_ids() {
        let gt = vec![
            image("a", LabelMask::new(2, 2), vec![]),
            image("b", LabelMask::new(2, 2), vec![]),
        ];
        let pred = vec![image("a", LabelMask::new(2, 2), vec![])];
        let err = evaluate_dataset(&pred, &gt, &cfg()).unwrap_err().to_string();
        assert!(err.contains('b'), "got: {err}");
    }

    #[test]
    fn csv_shape() {
        let mut m = LabelMask::new(2, 2);
        m.set(0, 0, 2);
        let gt = vec![image("a", m.clone(), vec![])];
        let pred = vec![image("a", m, vec![])];
        let report = evaluate_dataset(&pred, &gt, &cfg()).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "class,precision,recall,f_beta");
        assert!(lines.last().unwrap().starts_with("average,"));
    }
}
