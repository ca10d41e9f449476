//! The multi-task objective: classification, box regression (Smooth L1), and
//! per-pixel multiclass affordance loss, with the regression and affordance
//! terms gated by the positive-RoI indicator.

use crate::boxes::BoxOffset;
use crate::error::{Error, Result};
use crate::maskops::LabelMask;
use crate::tensor::Tensor;

/// Probabilities are floored here before the log so losses stay finite.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-RoI supervision bundle. For u = 0 (background) the offset and mask are
/// unused by the loss.
#[derive(Debug, Clone)]
pub struct DetectionTarget {
    pub class: usize,
    pub offset: BoxOffset,
    pub mask: Option<LabelMask>,
}

/// Per-RoI head outputs: a class distribution, one box offset per class, and
/// an optional per-pixel class-probability tensor (C+1, H, W).
#[derive(Debug, Clone)]
pub struct HeadPrediction {
    pub class_probs: Vec<f64>,
    pub offsets: Vec<BoxOffset>,
    pub mask_probs: Option<Tensor>,
}

/// -log(p_u), floored so a zero probability cannot produce infinity.
pub fn classification_loss(p: &[f64], u: usize) -> Result<f64> {
    if u >= p.len() {
        return Err(Error::InvalidArg(format!(
            "class {} out of range for {}-way distribution",
            u,
            p.len()
        )));
    }
    Ok(-p[u].max(PROB_FLOOR).ln())
}

/// d classification_loss / d p
pub fn classification_loss_grad(p: &[f64], u: usize) -> Vec<f64> {
    let mut g = vec![0.0; p.len()];
    if p[u] > PROB_FLOOR {
        g[u] = -1.0 / p[u];
    }
    g
}

/// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise. Both branches meet at |x| = 1
/// with value 0.5 and slope +-1, so the function is C1.
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Sum of Smooth L1 over the four offset components t - v.
pub fn box_regression_loss(t: &BoxOffset, v: &BoxOffset) -> f64 {
    smooth_l1(t.t_x - v.t_x) + smooth_l1(t.t_y - v.t_y) + smooth_l1(t.t_w - v.t_w) + smooth_l1(t.t_h - v.t_h)
}

/// d box_regression_loss / d t
pub fn box_regression_loss_grad(t: &BoxOffset, v: &BoxOffset) -> BoxOffset {
    BoxOffset {
        t_x: smooth_l1_grad(t.t_x - v.t_x),
        t_y: smooth_l1_grad(t.t_y - v.t_y),
        t_w: smooth_l1_grad(t.t_w - v.t_w),
        t_h: smooth_l1_grad(t.t_h - v.t_h),
    }
}

/// Mean over all mask pixels of -log(m_i[s_i]); m is (C+1, H, W) class
/// probabilities and s the target labels at the same spatial size.
pub fn affordance_loss(m: &Tensor, s: &LabelMask) -> Result<f64> {
    let [classes, h, w] = check_mask_pair(m, s)?;
    let plane = h * w;
    let mut total = 0.0;
    for i in 0..plane {
        let label = s.labels()[i] as usize;
        if label >= classes {
            return Err(Error::InvalidArg(format!(
                "target label {label} out of range for {classes} classes"
            )));
        }
        total -= m.data()[label * plane + i].max(PROB_FLOOR).ln();
    }
    Ok(total / plane as f64)
}

/// d affordance_loss / d m
pub fn affordance_loss_grad(m: &Tensor, s: &LabelMask) -> Result<Tensor> {
    let [_, h, w] = check_mask_pair(m, s)?;
    let plane = h * w;
    let inv_n = 1.0 / plane as f64;
    let mut grad = Tensor::zeros(m.dims());
    for i in 0..plane {
        let label = s.labels()[i] as usize;
        let p = m.data()[label * plane + i];
        if p > PROB_FLOOR {
            grad.data_mut()[label * plane + i] = -inv_n / p;
        }
    }
    Ok(grad)
}

fn check_mask_pair(m: &Tensor, s: &LabelMask) -> Result<[usize; 3]> {
    if m.dims().len() != 3 {
        return Err(Error::Shape("affordance loss expects (C+1, H, W) probabilities".into()));
    }
    let [classes, h, w] = [m.dims()[0], m.dims()[1], m.dims()[2]];
    if s.height() != h || s.width() != w {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match probabilities {}x{}",
            s.width(),
            s.height(),
            w,
            h
        )));
    }
    Ok([classes, h, w])
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub cls: f64,
    pub loc: f64,
    pub aff: f64,
}

/// Indicator-gated gradients of [`multi_task_loss`]: gradient of the class
/// distribution, of the predicted offsets, and (for positive targets with a
/// mask prediction) of the mask probabilities.
#[derive(Debug, Clone)]
pub struct MultiTaskGrad {
    pub class_probs: Vec<f64>,
    pub offsets: Vec<BoxOffset>,
    pub mask_probs: Option<Tensor>,
}

/// total = L_cls + I[u>=1]*L_loc + I[u>=1]*L_aff, where L_loc compares the
/// offset predicted for the true class against the target offset.
pub fn multi_task_loss(pred: &HeadPrediction, target: &DetectionTarget) -> Result<LossParts> {
    let u = target.class;
    if u >= pred.class_probs.len() || pred.offsets.len() != pred.class_probs.len() {
        return Err(Error::Shape(format!(
            "multi_task_loss: class {u}, probs {}, offsets {}",
            pred.class_probs.len(),
            pred.offsets.len()
        )));
    }
    let cls = classification_loss(&pred.class_probs, u)?;
    let (loc, aff) = if u >= 1 {
        let loc = box_regression_loss(&pred.offsets[u], &target.offset);
        let m = pred
            .mask_probs
            .as_ref()
            .ok_or_else(|| Error::InvalidArg("positive target needs a mask prediction".into()))?;
        let s = target
            .mask
            .as_ref()
            .ok_or_else(|| Error::InvalidArg("positive target needs a target mask".into()))?;
        (loc, affordance_loss(m, s)?)
    } else {
        (0.0, 0.0)
    };
    Ok(LossParts {
        total: cls + loc + aff,
        cls,
        loc,
        aff,
    })
}

pub fn multi_task_loss_grad(pred: &HeadPrediction, target: &DetectionTarget) -> Result<MultiTaskGrad> {
    let u = target.class;
    let class_probs = classification_loss_grad(&pred.class_probs, u);
    let mut offsets = vec![BoxOffset::default(); pred.offsets.len()];
    let mut mask_probs = None;
    if u >= 1 {
        offsets[u] = box_regression_loss_grad(&pred.offsets[u], &target.offset);
        if let (Some(m), Some(s)) = (pred.mask_probs.as_ref(), target.mask.as_ref()) {
            mask_probs = Some(affordance_loss_grad(m, s)?);
        }
    }
    Ok(MultiTaskGrad {
        class_probs,
        offsets,
        mask_probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn classification_closed_forms() {
        let mut p = vec![0.0; 10];
        p[3] = 1.0;
        assert_eq!(classification_loss(&p, 3).unwrap(), 0.0);
        let p = vec![0.5, 0.5];
        assert!((classification_loss(&p, 0).unwrap() - LN2).abs() < 1e-15);
        let p = vec![0.1; 10];
        assert!((classification_loss(&p, 7).unwrap() - 10.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn classification_zero_probability_is_finite() {
        let p = vec![0.0, 1.0];
        let loss = classification_loss(&p, 0).unwrap();
        assert!(loss.is_finite());
        assert!((loss - (-PROB_FLOOR.ln())).abs() < 1e-6);
    }

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert!((smooth_l1(0.5) - 0.125).abs() < 1e-15);
        assert!((smooth_l1(2.0) - 1.5).abs() < 1e-15);
        assert!((smooth_l1(-2.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn smooth_l1_is_c1_at_one() {
        let eps = 1e-9;
        assert!((smooth_l1(1.0 - eps) - smooth_l1(1.0 + eps)).abs() < 1e-8);
        assert!((smooth_l1_grad(1.0 - eps) - smooth_l1_grad(1.0 + eps)).abs() < 1e-8);
        assert!((smooth_l1(1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn box_regression_values() {
        let v = BoxOffset::default();
        assert_eq!(box_regression_loss(&v, &v), 0.0);
        let t = BoxOffset { t_x: 0.5, ..v };
        assert!((box_regression_loss(&t, &v) - 0.125).abs() < 1e-15);
        let t = BoxOffset {
            t_x: 2.0,
            t_y: 2.0,
            t_w: 2.0,
            t_h: 2.0,
        };
        assert!((box_regression_loss(&t, &v) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn affordance_closed_forms() {
        // probability 1 on the true label everywhere -> 0
        let mut m = Tensor::zeros(&[3, 2, 2]);
        let s = LabelMask::from_labels(2, 2, vec![1, 1, 2, 0]).unwrap();
        for (i, &label) in s.labels().iter().enumerate() {
            m.data_mut()[label as usize * 4 + i] = 1.0;
        }
        assert_eq!(affordance_loss(&m, &s).unwrap(), 0.0);

        // uniform over 5 labels -> ln 5 regardless of target
        let m = Tensor::filled(&[5, 3, 3], 0.2);
        let s = LabelMask::from_labels(3, 3, vec![0, 1, 2, 3, 4, 0, 1, 2, 3]).unwrap();
        assert!((affordance_loss(&m, &s).unwrap() - 5.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn affordance_hand_case() {
        // 2x2, 2 classes, hand-set probabilities
        let m = Tensor::from_vec(
            &[2, 2, 2],
            vec![0.9, 0.4, 0.25, 0.5, 0.1, 0.6, 0.75, 0.5],
        )
        .unwrap();
        let s = LabelMask::from_labels(2, 2, vec![0, 1, 1, 0]).unwrap();
        let expect = -(0.9_f64.ln() + 0.6_f64.ln() + 0.75_f64.ln() + 0.5_f64.ln()) / 4.0;
        assert!((affordance_loss(&m, &s).unwrap() - expect).abs() < 1e-15);
    }

    fn perfect_prediction(u: usize, k: usize) -> (HeadPrediction, DetectionTarget) {
        let mut p = vec![0.0; k + 1];
        p[u] = 1.0;
        let m = {
            let mut t = Tensor::zeros(&[5, 2, 2]);
            for i in 0..4 {
                t.data_mut()[2 * 4 + i] = 1.0;
            }
            t
        };
        let s = LabelMask::from_labels(2, 2, vec![2; 4]).unwrap();
        (
            HeadPrediction {
                class_probs: p,
                offsets: vec![BoxOffset::default(); k + 1],
                mask_probs: Some(m),
            },
            DetectionTarget {
                class: u,
                offset: BoxOffset::default(),
                mask: Some(s),
            },
        )
    }

    #[test]
    fn background_target_reduces_to_classification() {
        let (mut pred, mut target) = perfect_prediction(0, 2);
        target.class = 0;
        pred.class_probs = vec![0.5, 0.25, 0.25];
        // garbage in the gated branches must not matter
        pred.offsets[1].t_x = 100.0;
        let parts = multi_task_loss(&pred, &target).unwrap();
        assert_eq!(parts.loc, 0.0);
        assert_eq!(parts.aff, 0.0);
        assert_eq!(parts.total, parts.cls);
        assert!((parts.cls - LN2).abs() < 1e-15);

        let grad = multi_task_loss_grad(&pred, &target).unwrap();
        assert!(grad.offsets.iter().all(|o| *o == BoxOffset::default()));
        assert!(grad.mask_probs.is_none());
    }

    #[test]
    fn perfect_positive_prediction_is_zero() {
        let (pred, target) = perfect_prediction(1, 2);
        let parts = multi_task_loss(&pred, &target).unwrap();
        assert_eq!(parts.total, 0.0);
    }

    #[test]
    fn positive_sum_of_parts() {
        // u = 2, p_u = 0.5, offsets differ by (0.5, 0, 0, 0), uniform mask over 5 labels
        let mut p = vec![0.125; 4];
        p[2] = 0.5;
        p[3] = 0.25;
        let mut offsets = vec![BoxOffset::default(); 4];
        offsets[2].t_x = 0.5;
        let pred = HeadPrediction {
            class_probs: p,
            offsets,
            mask_probs: Some(Tensor::filled(&[5, 2, 2], 0.2)),
        };
        let target = DetectionTarget {
            class: 2,
            offset: BoxOffset::default(),
            mask: Some(LabelMask::from_labels(2, 2, vec![0, 1, 2, 3]).unwrap()),
        };
        let parts = multi_task_loss(&pred, &target).unwrap();
        let expect = LN2 + 0.125 + 5.0_f64.ln();
        assert!((parts.total - expect).abs() < 1e-12);
    }
}
