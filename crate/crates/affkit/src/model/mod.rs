//! The assembled network: shared convolutional backbone, RPN, detection head,
//! and deconvolutional affordance head, plus the training step, the full
//! inference procedure, and checkpoint persistence.

mod checkpoint;
mod config;
mod infer;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{mask_head_chain, InferConfig, ModelConfig, TrainConfig, BACKBONE_STRIDE};
pub use infer::{apply_score_gate, Detection, Inference};
pub use train::LossReport;

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, conv2d_param_grads, deconv2d_backward, deconv2d_forward,
    fully_connected_backward, fully_connected_forward, maxpool2d_backward, maxpool2d_forward,
    relu_backward, relu_forward, roi_align_backward, roi_align_forward, softmax, softmax_backward,
    MaxPoolCache, Roi, RoiAlignCache,
};
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub(crate) struct Param {
    pub value: Tensor,
    pub velocity: Tensor,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let velocity = Tensor::zeros(value.dims());
        Param { value, velocity }
    }
}

/// Per-step gradient accumulator keyed by parameter name.
#[derive(Debug, Default)]
pub(crate) struct GradStore {
    map: BTreeMap<String, Tensor>,
}

impl GradStore {
    pub fn add(&mut self, name: &str, grad: &Tensor) {
        match self.map.get_mut(name) {
            Some(t) => {
                debug_assert_eq!(t.dims(), grad.dims());
                for (a, b) in t.data_mut().iter_mut().zip(grad.data()) {
                    *a += b;
                }
            }
            None => {
                self.map.insert(name.to_string(), grad.clone());
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub(crate) params: BTreeMap<String, Param>,
    pub iteration: u64,
    pub base_seed: u64,
}

impl Model {
    /// Fresh model with seeded He-uniform initialization. Output layers start
    /// near zero so early class distributions stay close to uniform.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(rng::substream(seed, 0xA11C));
        let mut params = BTreeMap::new();
        let wb = config.backbone_width;
        let wm = config.mask_width;
        let fc = config.fc_width;
        let k1 = config.num_object_classes + 1;
        let c1 = config.num_affordances + 1;
        let a = config.anchors.anchors_per_cell();
        let r = config.roialign_size;

        // layers feeding a ReLU start with a small positive bias so no unit
        // is born dead at the kink
        const RELU_BIAS: f64 = 0.1;
        let add_conv = |params: &mut BTreeMap<String, Param>,
                            rng: &mut ChaCha8Rng,
                            name: &str,
                            c_out: usize,
                            c_in: usize,
                            k: usize,
                            out_layer: bool| {
            let fan_in = (c_in * k * k) as f64;
            let limit = if out_layer { 0.01 } else { (6.0 / fan_in).sqrt() };
            let bias = if out_layer { 0.0 } else { RELU_BIAS };
            params.insert(
                format!("{name}.w"),
                Param::new(he_uniform(&[c_out, c_in, k, k], limit, rng)),
            );
            params.insert(format!("{name}.b"), Param::new(Tensor::filled(&[c_out], bias)));
        };

        add_conv(&mut params, &mut rng, "backbone.conv1", wb, 3, 3, false);
        add_conv(&mut params, &mut rng, "backbone.conv2", wb, wb, 3, false);
        add_conv(&mut params, &mut rng, "backbone.conv3", wb, wb, 3, false);
        add_conv(&mut params, &mut rng, "backbone.conv4", wb, wb, 3, false);
        add_conv(&mut params, &mut rng, "rpn.conv", wb, wb, 3, false);
        add_conv(&mut params, &mut rng, "rpn.cls", 2 * a, wb, 1, true);
        add_conv(&mut params, &mut rng, "rpn.reg", 4 * a, wb, 1, true);

        let add_fc = |params: &mut BTreeMap<String, Param>,
                          rng: &mut ChaCha8Rng,
                          name: &str,
                          d_out: usize,
                          d_in: usize,
                          out_layer: bool| {
            let limit = if out_layer { 0.01 } else { (6.0 / d_in as f64).sqrt() };
            let bias = if out_layer { 0.0 } else { RELU_BIAS };
            params.insert(
                format!("{name}.w"),
                Param::new(he_uniform(&[d_out, d_in], limit, rng)),
            );
            params.insert(format!("{name}.b"), Param::new(Tensor::filled(&[d_out], bias)));
        };
        add_fc(&mut params, &mut rng, "det.fc1", fc, wb * r * r, false);
        add_fc(&mut params, &mut rng, "det.fc2", fc, fc, false);
        add_fc(&mut params, &mut rng, "det.cls", k1, fc, true);
        add_fc(&mut params, &mut rng, "det.reg", 4 * k1, fc, true);

        for (i, spec) in config.mask_head.iter().enumerate() {
            let c_in = if i == 0 { wb } else { wm };
            add_conv(&mut params, &mut rng, &format!("mask.stage{i}.conv"), wm, c_in, 3, false);
            // deconv weights live as (in, out, k, k); contributions per output
            // pixel scale with (k/stride)^2
            let fan_in = (wm * spec.kernel * spec.kernel) as f64 / (spec.stride * spec.stride) as f64;
            let limit = (6.0 / fan_in).sqrt();
            params.insert(
                format!("mask.stage{i}.deconv.w"),
                Param::new(he_uniform(&[wm, wm, spec.kernel, spec.kernel], limit, &mut rng)),
            );
            let stage_bias = if i + 1 < config.mask_head.len() { RELU_BIAS } else { 0.0 };
            params.insert(
                format!("mask.stage{i}.deconv.b"),
                Param::new(Tensor::filled(&[wm], stage_bias)),
            );
        }
        add_conv(&mut params, &mut rng, "mask.cls", c1, wm, 1, true);

        for p in params.values_mut() {
            p.value.quantize_f32();
        }
        Ok(Model {
            config,
            params,
            iteration: 0,
            base_seed: seed,
        })
    }

    pub(crate) fn p(&self, name: &str) -> &Tensor {
        &self.params.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Learning rate at an iteration: constant, divided by 10 past the
    /// configured boundary.
    pub fn lr_for(&self, iteration: u64) -> f64 {
        match self.config.train.lr_decay_at {
            Some(boundary) if iteration >= boundary => self.config.train.lr / 10.0,
            _ => self.config.train.lr,
        }
    }

    pub(crate) fn sgd_apply(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        let tc = &self.config.train;
        let (momentum, weight_decay) = (tc.momentum, tc.weight_decay);
        for (name, param) in self.params.iter_mut() {
            let zero;
            let grad = match grads.get(name) {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(param.value.dims());
                    &zero
                }
            };
            crate::tensor::sgd_momentum_step(
                &mut param.value,
                grad,
                &mut param.velocity,
                lr,
                momentum,
                weight_decay,
            )?;
            param.value.quantize_f32();
        }
        Ok(())
    }
}

fn he_uniform(dims: &[usize], limit: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = dims.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec(dims, data).unwrap()
}

// ---------------------------------------------------------------------------
// backbone
// ---------------------------------------------------------------------------

pub(crate) struct BackboneCache {
    input: Tensor,
    z1: Tensor,
    pool1: MaxPoolCache,
    p1: Tensor,
    z2: Tensor,
    pool2: MaxPoolCache,
    p2: Tensor,
    z3: Tensor,
    a3: Tensor,
    z4: Tensor,
}

impl Model {
    /// conv1 -> pool -> conv2 -> pool -> conv3 -> conv4, ReLU after every
    /// conv; overall stride 4. Image dims must be multiples of 4.
    pub(crate) fn backbone_forward(&self, image: &Tensor) -> Result<(Tensor, BackboneCache)> {
        let [h, w] = [image.dims()[2], image.dims()[3]];
        if h < 2 * BACKBONE_STRIDE || w < 2 * BACKBONE_STRIDE {
            return Err(Error::InvalidArg(format!(
                "image {w}x{h} smaller than twice the backbone stride"
            )));
        }
        if h % BACKBONE_STRIDE != 0 || w % BACKBONE_STRIDE != 0 {
            return Err(Error::InvalidArg(format!(
                "image dims {w}x{h} must be multiples of the backbone stride {BACKBONE_STRIDE}"
            )));
        }
        let z1 = conv2d_forward(image, self.p("backbone.conv1.w"), self.p("backbone.conv1.b"), 1, 1)?;
        let a1 = relu_forward(&z1);
        let (p1, pool1) = maxpool2d_forward(&a1, 2, 2)?;
        let z2 = conv2d_forward(&p1, self.p("backbone.conv2.w"), self.p("backbone.conv2.b"), 1, 1)?;
        let a2 = relu_forward(&z2);
        let (p2, pool2) = maxpool2d_forward(&a2, 2, 2)?;
        let z3 = conv2d_forward(&p2, self.p("backbone.conv3.w"), self.p("backbone.conv3.b"), 1, 1)?;
        let a3 = relu_forward(&z3);
        let z4 = conv2d_forward(&a3, self.p("backbone.conv4.w"), self.p("backbone.conv4.b"), 1, 1)?;
        let feature = relu_forward(&z4);
        Ok((
            feature,
            BackboneCache {
                input: image.clone(),
                z1,
                pool1,
                p1,
                z2,
                pool2,
                p2,
                z3,
                a3,
                z4,
            },
        ))
    }

    pub(crate) fn backbone_backward(
        &self,
        cache: &BackboneCache,
        grad_feature: &Tensor,
        grads: &mut GradStore,
    ) -> Result<()> {
        let g = relu_backward(&cache.z4, grad_feature);
        let (g, gw, gb) = conv2d_backward(&cache.a3, self.p("backbone.conv4.w"), &g, 1, 1)?;
        grads.add("backbone.conv4.w", &gw);
        grads.add("backbone.conv4.b", &gb);
        let g = relu_backward(&cache.z3, &g);
        let (g, gw, gb) = conv2d_backward(&cache.p2, self.p("backbone.conv3.w"), &g, 1, 1)?;
        grads.add("backbone.conv3.w", &gw);
        grads.add("backbone.conv3.b", &gb);
        let g = maxpool2d_backward(&cache.pool2, &g);
        let g = relu_backward(&cache.z2, &g);
        let (g, gw, gb) = conv2d_backward(&cache.p1, self.p("backbone.conv2.w"), &g, 1, 1)?;
        grads.add("backbone.conv2.w", &gw);
        grads.add("backbone.conv2.b", &gb);
        let g = maxpool2d_backward(&cache.pool1, &g);
        let g = relu_backward(&cache.z1, &g);
        let (gw, gb) = conv2d_param_grads(&cache.input, self.p("backbone.conv1.w"), &g, 1, 1)?;
        grads.add("backbone.conv1.w", &gw);
        grads.add("backbone.conv1.b", &gb);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// RPN
// ---------------------------------------------------------------------------

pub(crate) struct RpnOutputs {
    /// (1, 2A, Hf, Wf): per-anchor background/foreground logits.
    pub cls: Tensor,
    /// (1, 4A, Hf, Wf): per-anchor box offsets.
    pub reg: Tensor,
}

pub(crate) struct RpnCache {
    feature: Tensor,
    z: Tensor,
    a: Tensor,
}

impl Model {
    pub(crate) fn rpn_forward(&self, feature: &Tensor) -> Result<(RpnOutputs, RpnCache)> {
        let z = conv2d_forward(feature, self.p("rpn.conv.w"), self.p("rpn.conv.b"), 1, 1)?;
        let a = relu_forward(&z);
        let cls = conv2d_forward(&a, self.p("rpn.cls.w"), self.p("rpn.cls.b"), 1, 0)?;
        let reg = conv2d_forward(&a, self.p("rpn.reg.w"), self.p("rpn.reg.b"), 1, 0)?;
        Ok((
            RpnOutputs { cls, reg },
            RpnCache {
                feature: feature.clone(),
                z,
                a,
            },
        ))
    }

    /// Returns the gradient with respect to the shared feature map.
    pub(crate) fn rpn_backward(
        &self,
        cache: &RpnCache,
        grad_cls: &Tensor,
        grad_reg: &Tensor,
        grads: &mut GradStore,
    ) -> Result<Tensor> {
        let (g_a_cls, gw, gb) = conv2d_backward(&cache.a, self.p("rpn.cls.w"), grad_cls, 1, 0)?;
        grads.add("rpn.cls.w", &gw);
        grads.add("rpn.cls.b", &gb);
        let (g_a_reg, gw, gb) = conv2d_backward(&cache.a, self.p("rpn.reg.w"), grad_reg, 1, 0)?;
        grads.add("rpn.reg.w", &gw);
        grads.add("rpn.reg.b", &gb);
        let mut g_a = g_a_cls;
        for (a, b) in g_a.data_mut().iter_mut().zip(g_a_reg.data()) {
            *a += b;
        }
        let g_z = relu_backward(&cache.z, &g_a);
        let (g_feat, gw, gb) = conv2d_backward(&cache.feature, self.p("rpn.conv.w"), &g_z, 1, 1)?;
        grads.add("rpn.conv.w", &gw);
        grads.add("rpn.conv.b", &gb);
        Ok(g_feat)
    }
}

// ---------------------------------------------------------------------------
// detection head
// ---------------------------------------------------------------------------

pub(crate) struct DetHeadOutputs {
    /// (N_roi, K+1) logits
    pub cls_logits: Tensor,
    /// (N_roi, 4(K+1)) offsets
    pub reg: Tensor,
}

pub(crate) struct DetHeadCache {
    align: Vec<RoiAlignCache>,
    x: Tensor,
    z1: Tensor,
    a1: Tensor,
    z2: Tensor,
    a2: Tensor,
}

impl Model {
    pub(crate) fn det_head_forward(
        &self,
        feature: &Tensor,
        rois: &[Roi],
        spatial_scale: f64,
    ) -> Result<(DetHeadOutputs, DetHeadCache)> {
        let r = self.config.roialign_size;
        let wb = self.config.backbone_width;
        let n = rois.len();
        let mut x = Tensor::zeros(&[n, wb * r * r]);
        let mut align = Vec::with_capacity(n);
        for (i, roi) in rois.iter().enumerate() {
            let (feat, cache) = roi_align_forward(feature, roi, (r, r), spatial_scale)?;
            x.data_mut()[i * wb * r * r..(i + 1) * wb * r * r].copy_from_slice(feat.data());
            align.push(cache);
        }
        let z1 = fully_connected_forward(&x, self.p("det.fc1.w"), self.p("det.fc1.b"))?;
        let a1 = relu_forward(&z1);
        let z2 = fully_connected_forward(&a1, self.p("det.fc2.w"), self.p("det.fc2.b"))?;
        let a2 = relu_forward(&z2);
        let cls_logits = fully_connected_forward(&a2, self.p("det.cls.w"), self.p("det.cls.b"))?;
        let reg = fully_connected_forward(&a2, self.p("det.reg.w"), self.p("det.reg.b"))?;
        Ok((
            DetHeadOutputs { cls_logits, reg },
            DetHeadCache {
                align,
                x,
                z1,
                a1,
                z2,
                a2,
            },
        ))
    }

    pub(crate) fn det_head_backward(
        &self,
        cache: &DetHeadCache,
        grad_cls: &Tensor,
        grad_reg: &Tensor,
        grad_feature: &mut Tensor,
        grads: &mut GradStore,
    ) -> Result<()> {
        let (g_a2_cls, gw, gb) = fully_connected_backward(&cache.a2, self.p("det.cls.w"), grad_cls)?;
        grads.add("det.cls.w", &gw);
        grads.add("det.cls.b", &gb);
        let (g_a2_reg, gw, gb) = fully_connected_backward(&cache.a2, self.p("det.reg.w"), grad_reg)?;
        grads.add("det.reg.w", &gw);
        grads.add("det.reg.b", &gb);
        let mut g_a2 = g_a2_cls;
        for (a, b) in g_a2.data_mut().iter_mut().zip(g_a2_reg.data()) {
            *a += b;
        }
        let g_z2 = relu_backward(&cache.z2, &g_a2);
        let (g_a1, gw, gb) = fully_connected_backward(&cache.a1, self.p("det.fc2.w"), &g_z2)?;
        grads.add("det.fc2.w", &gw);
        grads.add("det.fc2.b", &gb);
        let g_z1 = relu_backward(&cache.z1, &g_a1);
        let (g_x, gw, gb) = fully_connected_backward(&cache.x, self.p("det.fc1.w"), &g_z1)?;
        grads.add("det.fc1.w", &gw);
        grads.add("det.fc1.b", &gb);

        let r = self.config.roialign_size;
        let wb = self.config.backbone_width;
        for (i, align) in cache.align.iter().enumerate() {
            let slice = &g_x.data()[i * wb * r * r..(i + 1) * wb * r * r];
            let g = Tensor::from_vec(&[wb, r, r], slice.to_vec())?;
            roi_align_backward(align, &g, grad_feature)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// affordance (mask) head
// ---------------------------------------------------------------------------

pub(crate) struct MaskStageCache {
    conv_in: Tensor,
    zc: Tensor,
    ac: Tensor,
    /// pre-ReLU deconv output; ReLU applies only between stages, so the last
    /// stage's `zd` feeds the classifier directly
    zd: Tensor,
}

#[doc(hidden)]
pub struct MaskHeadCache {
    align: RoiAlignCache,
    stages: Vec<MaskStageCache>,
    last: Tensor,
    /// (C+1, S, S) softmax output
    pub probs: Tensor,
}

impl Model {
    /// Run the affordance branch for one RoI: RoIAlign, then per stage a 3x3
    /// conv + ReLU feeding a deconvolution, with ReLU between consecutive
    /// deconvolutions, then a 1x1 conv to C+1 logits and a per-pixel softmax.
    pub(crate) fn mask_head_forward(
        &self,
        feature: &Tensor,
        roi: &Roi,
        spatial_scale: f64,
    ) -> Result<MaskHeadCache> {
        let r = self.config.roialign_size;
        let (aligned, align) = roi_align_forward(feature, roi, (r, r), spatial_scale)?;
        let mut x = Tensor::from_vec(
            &[1, self.config.backbone_width, r, r],
            aligned.data().to_vec(),
        )?;
        let n_stages = self.config.mask_head.len();
        let mut stages = Vec::with_capacity(n_stages);
        for (i, spec) in self.config.mask_head.iter().enumerate() {
            let zc = conv2d_forward(
                &x,
                self.p(&format!("mask.stage{i}.conv.w")),
                self.p(&format!("mask.stage{i}.conv.b")),
                1,
                1,
            )?;
            let ac = relu_forward(&zc);
            let zd = deconv2d_forward(
                &ac,
                spec,
                self.p(&format!("mask.stage{i}.deconv.w")),
                self.p(&format!("mask.stage{i}.deconv.b")),
            )?;
            let out = if i + 1 < n_stages { relu_forward(&zd) } else { zd.clone() };
            stages.push(MaskStageCache {
                conv_in: x,
                zc,
                ac,
                zd,
            });
            x = out;
        }
        let logits4 = conv2d_forward(&x, self.p("mask.cls.w"), self.p("mask.cls.b"), 1, 0)?;
        let [c1, s_h, s_w] = [logits4.dims()[1], logits4.dims()[2], logits4.dims()[3]];
        let logits = Tensor::from_vec(&[c1, s_h, s_w], logits4.data().to_vec())?;
        let probs = softmax(&logits, 0)?;
        Ok(MaskHeadCache {
            align,
            stages,
            last: x,
            probs,
        })
    }

    /// Backward from a gradient on the (C+1, S, S) probabilities.
    pub(crate) fn mask_head_backward(
        &self,
        cache: &MaskHeadCache,
        grad_probs: &Tensor,
        grad_feature: &mut Tensor,
        grads: &mut GradStore,
    ) -> Result<()> {
        let g_logits = softmax_backward(&cache.probs, grad_probs, 0)?;
        let [c1, s_h, s_w] = [g_logits.dims()[0], g_logits.dims()[1], g_logits.dims()[2]];
        let g_logits4 = Tensor::from_vec(&[1, c1, s_h, s_w], g_logits.data().to_vec())?;
        let (mut g, gw, gb) = conv2d_backward(&cache.last, self.p("mask.cls.w"), &g_logits4, 1, 0)?;
        grads.add("mask.cls.w", &gw);
        grads.add("mask.cls.b", &gb);

        let n_stages = self.config.mask_head.len();
        for (i, stage) in self.config.mask_head.iter().enumerate().rev() {
            let sc = &cache.stages[i];
            let g_zd = if i + 1 < n_stages { relu_backward(&sc.zd, &g) } else { g.clone() };
            let (g_ac, gw, gb) = deconv2d_backward(
                &sc.ac,
                stage,
                self.p(&format!("mask.stage{i}.deconv.w")),
                &g_zd,
            )?;
            grads.add(&format!("mask.stage{i}.deconv.w"), &gw);
            grads.add(&format!("mask.stage{i}.deconv.b"), &gb);
            let g_zc = relu_backward(&sc.zc, &g_ac);
            let (g_in, gw, gb) = conv2d_backward(
                &sc.conv_in,
                self.p(&format!("mask.stage{i}.conv.w")),
                &g_zc,
                1,
                1,
            )?;
            grads.add(&format!("mask.stage{i}.conv.w"), &gw);
            grads.add(&format!("mask.stage{i}.conv.b"), &gb);
            g = g_in;
        }
        let r = self.config.roialign_size;
        let g_align = Tensor::from_vec(&[self.config.backbone_width, r, r], g.data().to_vec())?;
        roi_align_backward(&cache.align, &g_align, grad_feature)?;
        Ok(())
    }
}

#[doc(hidden)]
impl Model {
    /// Test/diagnostic access to the shared feature map.
    pub fn backbone_probe(&self, image: &Tensor) -> Result<(Tensor, ())> {
        let (f, _) = self.backbone_forward(image)?;
        Ok((f, ()))
    }

    /// Test/diagnostic access to the affordance-branch probabilities.
    pub fn mask_probe(&self, feature: &Tensor, roi: &Roi, spatial_scale: f64) -> Result<Tensor> {
        Ok(self.mask_head_forward(feature, roi, spatial_scale)?.probs)
    }

    /// Diagnostic: mask forward returning (opaque cache, probabilities).
    pub fn mask_head_probe(
        &self,
        feature: &Tensor,
        roi: &Roi,
        spatial_scale: f64,
    ) -> Result<(MaskHeadCache, Tensor)> {
        let cache = self.mask_head_forward(feature, roi, spatial_scale)?;
        let probs = cache.probs.clone();
        Ok((cache, probs))
    }

    /// Diagnostic: mask backward returning per-parameter gradients.
    pub fn mask_head_backward_probe(
        &self,
        cache: &MaskHeadCache,
        grad_probs: &Tensor,
        grad_feature: &mut Tensor,
    ) -> Result<BTreeMap<String, Tensor>> {
        let mut grads = GradStore::default();
        self.mask_head_backward(cache, grad_probs, grad_feature, &mut grads)?;
        Ok(grads.map)
    }

    /// Diagnostic: add `delta` to one parameter element.
    pub fn nudge_param(&mut self, name: &str, index: usize, delta: f64) {
        let p = self.params.get_mut(name).expect("parameter exists");
        let n = p.value.numel();
        p.value.data_mut()[index % n] += delta;
    }
}

// ---------------------------------------------------------------------------
// proposal decoding shared by training and inference
// ---------------------------------------------------------------------------

impl Model {
    /// Turn raw RPN maps into scored, clipped, non-degenerate proposals.
    pub(crate) fn decode_proposals(
        &self,
        rpn: &RpnOutputs,
        anchors: &[crate::boxes::BBox],
        image_w: f64,
        image_h: f64,
    ) -> Vec<(Roi, f64)> {
        let a = self.config.anchors.anchors_per_cell();
        let [hf, wf] = [rpn.cls.dims()[2], rpn.cls.dims()[3]];
        let plane = hf * wf;
        let mut out = Vec::with_capacity(anchors.len());
        for (ai, anchor) in anchors.iter().enumerate() {
            let cell = ai / a;
            let slot = ai % a;
            let (cy, cx) = (cell / wf, cell % wf);
            let pix = cy * wf + cx;
            let z0 = rpn.cls.data()[(2 * slot) * plane + pix];
            let z1 = rpn.cls.data()[(2 * slot + 1) * plane + pix];
            let m = z0.max(z1);
            let e0 = (z0 - m).exp();
            let e1 = (z1 - m).exp();
            let score = e1 / (e0 + e1);
            let offset = crate::boxes::BoxOffset {
                t_x: rpn.reg.data()[(4 * slot) * plane + pix],
                t_y: rpn.reg.data()[(4 * slot + 1) * plane + pix],
                t_w: rpn.reg.data()[(4 * slot + 2) * plane + pix],
                t_h: rpn.reg.data()[(4 * slot + 3) * plane + pix],
            };
            let decoded = crate::boxes::decode_offsets(&offset, anchor);
            let clipped = crate::boxes::clip_box(&decoded, image_w, image_h);
            if clipped.width() >= 1.0 && clipped.height() >= 1.0 {
                out.push((Roi::new(clipped, 0), score));
            }
        }
        out
    }
}
