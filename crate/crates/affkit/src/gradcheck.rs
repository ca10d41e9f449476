//! Finite-difference verification of every analytic backward pass.
//!
//! Each op check builds seeded random inputs, projects the op output onto a
//! fixed random direction to get a scalar, and compares the analytic gradient
//! against [`finite_diff_gradient`]. Inputs are nudged away from ReLU/max
//! kinks so the central difference stays valid.

use crate::boxes::{BBox, BoxOffset};
use crate::error::Result;
use crate::layers::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, fully_connected_backward,
    fully_connected_forward, maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward,
    roi_align_backward, roi_align_forward, softmax, softmax_backward, DeconvSpec, Roi,
};
use crate::losses::{
    affordance_loss, affordance_loss_grad, box_regression_loss, box_regression_loss_grad,
    classification_loss, classification_loss_grad, multi_task_loss, multi_task_loss_grad,
    DetectionTarget, HeadPrediction,
};
use crate::maskops::LabelMask;
use crate::rng;
use crate::tensor::{finite_diff_gradient, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: u64 = 20;
const EPS: f64 = 1e-6;

pub const ALL_OPS: [&str; 12] = [
    "conv",
    "deconv",
    "relu",
    "maxpool",
    "fc",
    "softmax",
    "roi_align",
    "classification_loss",
    "smooth_l1",
    "box_regression_loss",
    "affordance_loss",
    "multi_task_loss",
];

#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: String,
    pub max_rel_err: f64,
    pub seeds: u64,
    pub pass: bool,
}

/// max |a-b| / max(max|a|, max|b|, 1)
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric.iter())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

fn rand_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Uniform values kept at least `margin` away from zero (ReLU kink).
fn rand_tensor_off_kink(dims: &[usize], margin: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(margin..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(dims, data).unwrap()
}

fn projection(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    rand_tensor(dims, rng)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Verify one op over `seeds` seeded trials; returns the worst relative error.
pub fn check_op(op: &str, base_seed: u64, seeds: u64) -> Result<OpReport> {
    let mut worst = 0.0f64;
    for s in 0..seeds {
        let mut rng = rng::seeded(rng::substream(base_seed, (s + 1) * 1000 + op_tag(op)));
        let err = match op {
            "conv" => check_conv(&mut rng)?,
            "deconv" => check_deconv(&mut rng)?,
            "relu" => check_relu(&mut rng)?,
            "maxpool" => check_maxpool(&mut rng)?,
            "fc" => check_fc(&mut rng)?,
            "softmax" => check_softmax(&mut rng)?,
            "roi_align" => check_roi_align(&mut rng)?,
            "classification_loss" => check_classification(&mut rng)?,
            "smooth_l1" => check_smooth_l1(&mut rng)?,
            "box_regression_loss" => check_box_regression(&mut rng)?,
            "affordance_loss" => check_affordance(&mut rng)?,
            "multi_task_loss" => check_multi_task(&mut rng)?,
            other => {
                return Err(crate::error::Error::InvalidArg(format!(
                    "unknown gradcheck op '{other}'; expected one of {}",
                    ALL_OPS.join(", ")
                )))
            }
        };
        worst = worst.max(err);
    }
    Ok(OpReport {
        op: op.to_string(),
        max_rel_err: worst,
        seeds,
        pass: worst < DEFAULT_TOLERANCE,
    })
}

pub fn check_all(base_seed: u64, seeds: u64) -> Result<Vec<OpReport>> {
    ALL_OPS.iter().map(|op| check_op(op, base_seed, seeds)).collect()
}

fn op_tag(op: &str) -> u64 {
    op.bytes().fold(17u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64))
}

fn check_conv(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = rand_tensor(&[1, 2, 6, 6], rng);
    let w = rand_tensor(&[3, 2, 3, 3], rng);
    let b = rand_tensor(&[3], rng);
    let y = conv2d_forward(&x, &w, &b, 1, 1)?;
    let proj = projection(y.dims(), rng);
    let (gx, gw, gb) = conv2d_backward(&x, &w, &proj, 1, 1)?;
    let mut worst: f64 = 0.0;
    let nx = finite_diff_gradient(|t| dot(&conv2d_forward(t, &w, &b, 1, 1).unwrap(), &proj), &x, EPS)?;
    worst = worst.max(rel_err(gx.data(), nx.data()));
    let nw = finite_diff_gradient(|t| dot(&conv2d_forward(&x, t, &b, 1, 1).unwrap(), &proj), &w, EPS)?;
    worst = worst.max(rel_err(gw.data(), nw.data()));
    let nb = finite_diff_gradient(|t| dot(&conv2d_forward(&x, &w, t, 1, 1).unwrap(), &proj), &b, EPS)?;
    worst = worst.max(rel_err(gb.data(), nb.data()));
    Ok(worst)
}

fn check_deconv(rng: &mut ChaCha8Rng) -> Result<f64> {
    let spec = DeconvSpec::new(4, 2, 1, 3, 2)?;
    let x = rand_tensor(&[1, 3, 5, 5], rng);
    let w = rand_tensor(&[3, 2, 4, 4], rng);
    let b = rand_tensor(&[2], rng);
    let y = deconv2d_forward(&x, &spec, &w, &b)?;
    let proj = projection(y.dims(), rng);
    let (gx, gw, gb) = deconv2d_backward(&x, &spec, &w, &proj)?;
    let mut worst: f64 = 0.0;
    let nx = finite_diff_gradient(|t| dot(&deconv2d_forward(t, &spec, &w, &b).unwrap(), &proj), &x, EPS)?;
    worst = worst.max(rel_err(gx.data(), nx.data()));
    let nw = finite_diff_gradient(|t| dot(&deconv2d_forward(&x, &spec, t, &b).unwrap(), &proj), &w, EPS)?;
    worst = worst.max(rel_err(gw.data(), nw.data()));
    let nb = finite_diff_gradient(|t| dot(&deconv2d_forward(&x, &spec, &w, t).unwrap(), &proj), &b, EPS)?;
    worst = worst.max(rel_err(gb.data(), nb.data()));
    Ok(worst)
}

fn check_relu(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = rand_tensor_off_kink(&[40], 1e-3, rng);
    let proj = projection(&[40], rng);
    let gx = relu_backward(&x, &proj);
    let nx = finite_diff_gradient(|t| dot(&relu_forward(t), &proj), &x, EPS)?;
    Ok(rel_err(gx.data(), nx.data()))
}

fn check_maxpool(rng: &mut ChaCha8Rng) -> Result<f64> {
    // well-separated values keep the argmax stable under perturbation
    let n = 2 * 8 * 8;
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        vals.swap(i, j);
    }
    let x = Tensor::from_vec(&[1, 2, 8, 8], vals).unwrap();
    let (y, cache) = maxpool2d_forward(&x, 2, 2)?;
    let proj = projection(y.dims(), rng);
    let gx = maxpool2d_backward(&cache, &proj);
    let nx = finite_diff_gradient(
        |t| dot(&maxpool2d_forward(t, 2, 2).unwrap().0, &proj),
        &x,
        EPS,
    )?;
    Ok(rel_err(gx.data(), nx.data()))
}

fn check_fc(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = rand_tensor(&[3, 10], rng);
    let w = rand_tensor(&[7, 10], rng);
    let b = rand_tensor(&[7], rng);
    let y = fully_connected_forward(&x, &w, &b)?;
    let proj = projection(y.dims(), rng);
    let (gx, gw, gb) = fully_connected_backward(&x, &w, &proj)?;
    let mut worst: f64 = 0.0;
    let nx = finite_diff_gradient(|t| dot(&fully_connected_forward(t, &w, &b).unwrap(), &proj), &x, EPS)?;
    worst = worst.max(rel_err(gx.data(), nx.data()));
    let nw = finite_diff_gradient(|t| dot(&fully_connected_forward(&x, t, &b).unwrap(), &proj), &w, EPS)?;
    worst = worst.max(rel_err(gw.data(), nw.data()));
    let nb = finite_diff_gradient(|t| dot(&fully_connected_forward(&x, &w, t).unwrap(), &proj), &b, EPS)?;
    worst = worst.max(rel_err(gb.data(), nb.data()));
    Ok(worst)
}

fn check_softmax(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = rand_tensor(&[4, 5, 5], rng);
    let y = softmax(&x, 0)?;
    let proj = projection(y.dims(), rng);
    let gx = softmax_backward(&y, &proj, 0)?;
    let nx = finite_diff_gradient(|t| dot(&softmax(t, 0).unwrap(), &proj), &x, EPS)?;
    Ok(rel_err(gx.data(), nx.data()))
}

fn check_roi_align(rng: &mut ChaCha8Rng) -> Result<f64> {
    // retry sub-cases until all bins separate their top two samples; near-ties
    // would flip the argmax under perturbation
    for attempt in 0..20 {
        let feat = rand_tensor(&[1, 2, 9, 9], rng);
        let x1 = rng.gen_range(0.0..8.0);
        let y1 = rng.gen_range(0.0..8.0);
        let roi = Roi::new(
            BBox::new(x1, y1, x1 + rng.gen_range(3.0..9.0), y1 + rng.gen_range(3.0..9.0)),
            0,
        );
        let scale = 0.5;
        let (y, cache) = roi_align_forward(&feat, &roi, (3, 3), scale)?;
        if attempt < 19 && !bins_separated(&feat, &roi, scale, 1e-3) {
            continue;
        }
        let proj = projection(y.dims(), rng);
        let mut gx = Tensor::zeros(feat.dims());
        roi_align_backward(&cache, &proj, &mut gx)?;
        let nx = finite_diff_gradient(
            |t| dot(&roi_align_forward(t, &roi, (3, 3), scale).unwrap().0, &proj),
            &feat,
            EPS,
        )?;
        return Ok(rel_err(gx.data(), nx.data()));
    }
    unreachable!("attempt loop always returns");
}

/// True when every bin's best sample beats its runner-up by `margin`.
fn bins_separated(feat: &Tensor, roi: &Roi, scale: f64, margin: f64) -> bool {
    let [c, h, w] = [feat.dims()[1], feat.dims()[2], feat.dims()[3]];
    let fx1 = roi.rect.x1 * scale;
    let fy1 = roi.rect.y1 * scale;
    let bw = (roi.rect.x2 - roi.rect.x1) * scale / 3.0;
    let bh = (roi.rect.y2 - roi.rect.y1) * scale / 3.0;
    let sample = |ch: usize, y: f64, x: f64| -> f64 {
        let y = y.clamp(0.0, (h - 1) as f64);
        let x = x.clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (wy, wx) = (y - y0 as f64, x - x0 as f64);
        let at = |yy: usize, xx: usize| feat.data()[(ch * h + yy) * w + xx];
        (1.0 - wy) * ((1.0 - wx) * at(y0, x0) + wx * at(y0, x1))
            + wy * ((1.0 - wx) * at(y1, x0) + wx * at(y1, x1))
    };
    for ch in 0..c {
        for by in 0..3 {
            for bx in 0..3 {
                let mut vals = [0.0f64; 4];
                let mut i = 0;
                for iy in 0..2 {
                    for ix in 0..2 {
                        let sy = fy1 + (by as f64 + 0.25 + 0.5 * iy as f64) * bh;
                        let sx = fx1 + (bx as f64 + 0.25 + 0.5 * ix as f64) * bw;
                        vals[i] = sample(ch, sy, sx);
                        i += 1;
                    }
                }
                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if vals[0] - vals[1] < margin {
                    return false;
                }
            }
        }
    }
    true
}

fn check_classification(rng: &mut ChaCha8Rng) -> Result<f64> {
    // gradient through the softmax producing p
    let logits = rand_tensor(&[6], rng);
    let u = rng.gen_range(0..6);
    let p = softmax(&logits, 0)?;
    let gp = Tensor::from_vec(&[6], classification_loss_grad(p.data(), u))?;
    let gl = softmax_backward(&p, &gp, 0)?;
    let nl = finite_diff_gradient(
        |t| classification_loss(softmax(t, 0).unwrap().data(), u).unwrap(),
        &logits,
        EPS,
    )?;
    Ok(rel_err(gl.data(), nl.data()))
}

fn check_smooth_l1(rng: &mut ChaCha8Rng) -> Result<f64> {
    // spread across both branches, away from |x| = 1 where f'' jumps
    let data: Vec<f64> = (0..9)
        .map(|_| {
            let mut v: f64 = rng.gen_range(-2.5..2.5);
            while (v.abs() - 1.0).abs() < 1e-3 {
                v = rng.gen_range(-2.5..2.5);
            }
            v
        })
        .collect();
    let x = Tensor::from_vec(&[9], data)?;
    let analytic: Vec<f64> = x.data().iter().map(|&v| crate::losses::smooth_l1_grad(v)).collect();
    let numeric = finite_diff_gradient(
        |t| t.data().iter().map(|&v| crate::losses::smooth_l1(v)).sum(),
        &x,
        EPS,
    )?;
    Ok(rel_err(&analytic, numeric.data()))
}

fn check_box_regression(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut comp = || -> f64 {
        let mut v: f64 = rng.gen_range(-2.0..2.0);
        while (v.abs() - 1.0).abs() < 1e-3 {
            v = rng.gen_range(-2.0..2.0);
        }
        v
    };
    let t = Tensor::from_vec(&[4], (0..4).map(|_| comp()).collect())?;
    let v = BoxOffset::default();
    let to_offset = |t: &Tensor| BoxOffset {
        t_x: t.data()[0],
        t_y: t.data()[1],
        t_w: t.data()[2],
        t_h: t.data()[3],
    };
    let g = box_regression_loss_grad(&to_offset(&t), &v);
    let analytic = [g.t_x, g.t_y, g.t_w, g.t_h];
    let numeric = finite_diff_gradient(|x| box_regression_loss(&to_offset(x), &v), &t, EPS)?;
    Ok(rel_err(&analytic, numeric.data()))
}

fn check_affordance(rng: &mut ChaCha8Rng) -> Result<f64> {
    let logits = rand_tensor(&[4, 3, 3], rng);
    let labels: Vec<u8> = (0..9).map(|_| rng.gen_range(0..4u8)).collect();
    let s = LabelMask::from_labels(3, 3, labels).unwrap();
    let m = softmax(&logits, 0)?;
    let gm = affordance_loss_grad(&m, &s)?;
    let gl = softmax_backward(&m, &gm, 0)?;
    let nl = finite_diff_gradient(
        |t| affordance_loss(&softmax(t, 0).unwrap(), &s).unwrap(),
        &logits,
        EPS,
    )?;
    Ok(rel_err(gl.data(), nl.data()))
}

/// Packs (cls logits | offsets | mask logits) into one tensor and checks the
/// full gated objective through both softmaxes.
fn check_multi_task(rng: &mut ChaCha8Rng) -> Result<f64> {
    let k1 = 4usize; // 3 object classes + bg
    let c1 = 3usize; // 2 affordances + bg
    let (mh, mw) = (2usize, 2usize);
    let n_off = 4 * k1;
    let n_mask = c1 * mh * mw;
    let u = rng.gen_range(1..k1);
    let v = BoxOffset {
        t_x: rng.gen_range(-0.4..0.4),
        t_y: rng.gen_range(-0.4..0.4),
        t_w: rng.gen_range(-0.4..0.4),
        t_h: rng.gen_range(-0.4..0.4),
    };
    let s = LabelMask::from_labels(mw, mh, (0..mh * mw).map(|_| rng.gen_range(0..c1 as u8)).collect()).unwrap();
    let target = DetectionTarget {
        class: u,
        offset: v,
        mask: Some(s),
    };

    let unpack = |x: &Tensor| -> Result<HeadPrediction> {
        let cls_logits = Tensor::from_vec(&[k1], x.data()[..k1].to_vec())?;
        let p = softmax(&cls_logits, 0)?;
        let offsets: Vec<BoxOffset> = (0..k1)
            .map(|k| BoxOffset {
                t_x: x.data()[k1 + 4 * k],
                t_y: x.data()[k1 + 4 * k + 1],
                t_w: x.data()[k1 + 4 * k + 2],
                t_h: x.data()[k1 + 4 * k + 3],
            })
            .collect();
        let mask_logits = Tensor::from_vec(&[c1, mh, mw], x.data()[k1 + n_off..].to_vec())?;
        let m = softmax(&mask_logits, 0)?;
        Ok(HeadPrediction {
            class_probs: p.data().to_vec(),
            offsets,
            mask_probs: Some(m),
        })
    };

    let x = rand_tensor(&[k1 + n_off + n_mask], rng);
    let pred = unpack(&x)?;
    let g = multi_task_loss_grad(&pred, &target)?;

    // chain analytic grads back to the packed logits
    let mut analytic = vec![0.0; x.numel()];
    let p = Tensor::from_vec(&[k1], pred.class_probs.clone())?;
    let gp = Tensor::from_vec(&[k1], g.class_probs.clone())?;
    let gcls = softmax_backward(&p, &gp, 0)?;
    analytic[..k1].copy_from_slice(gcls.data());
    for (k, go) in g.offsets.iter().enumerate() {
        analytic[k1 + 4 * k] = go.t_x;
        analytic[k1 + 4 * k + 1] = go.t_y;
        analytic[k1 + 4 * k + 2] = go.t_w;
        analytic[k1 + 4 * k + 3] = go.t_h;
    }
    if let Some(gm) = &g.mask_probs {
        let m = pred.mask_probs.as_ref().unwrap();
        let gl = softmax_backward(m, gm, 0)?;
        analytic[k1 + n_off..].copy_from_slice(gl.data());
    }
    let numeric = finite_diff_gradient(
        |t| multi_task_loss(&unpack(t).unwrap(), &target).unwrap().total,
        &x,
        EPS,
    )?;
    Ok(rel_err(&analytic, numeric.data()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_on_a_few_seeds() {
        for report in check_all(7, 3).unwrap() {
            assert!(
                report.pass,
                "{} failed with max rel err {:.3e}",
                report.op, report.max_rel_err
            );
        }
    }

    #[test]
    fn unknown_op_is_an_error() {
        assert!(check_op("no_such_op", 0, 1).is_err());
    }
}
