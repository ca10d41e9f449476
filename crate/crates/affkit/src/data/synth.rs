//! Deterministic synthetic scenes: axis-aligned multi-part objects with
//! per-pixel affordance annotations.
//!
//! Two object templates are built in. A "tool" is a handle rectangle
//! (`grasp`) with a head block (`pound`) attached at one end; a "cup" is a
//! rectangular ring (`w-grasp`) around an interior (`contain`). Parts are
//! disjoint pixel regions and each part is 4-connected by construction.

use super::netpbm::{write_image, write_mask, RgbImage};
use super::{save_annotations, save_detection_records, tight_box, Annotation, DetectionEntry,
    DetectionRecord, ObjectAnnotation};
use crate::error::{Error, Result};
use crate::maskops::{merge_overlaps_by_priority, AffordancePriority, LabelMask};
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub const GRASP: u8 = 1;
pub const POUND: u8 = 2;
pub const W_GRASP: u8 = 3;
pub const CONTAIN: u8 = 4;

pub const AFFORDANCE_NAMES: [&str; 4] = ["grasp", "pound", "w-grasp", "contain"];
pub const OBJECT_NAMES: [&str; 2] = ["tool", "cup"];

// template dimension ranges, inclusive (pixels)
pub(crate) const HANDLE_LEN: (usize, usize) = (16, 30);
pub(crate) const HANDLE_TH: (usize, usize) = (4, 7);
pub(crate) const HEAD_W: (usize, usize) = (9, 14);
pub(crate) const HEAD_H: (usize, usize) = (10, 16);
pub(crate) const CUP_OUTER: (usize, usize) = (16, 28);
pub(crate) const CUP_WALL: (usize, usize) = (3, 5);

const PLACEMENT_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub objects_min: usize,
    pub objects_max: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 96,
            height: 96,
            objects_min: 1,
            objects_max: 3,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 48 || self.height < 48 {
            return Err(Error::InvalidArg("scene size must be at least 48x48".into()));
        }
        if self.objects_min == 0 || self.objects_min > self.objects_max {
            return Err(Error::InvalidArg(format!(
                "object count range {}..={} is invalid",
                self.objects_min, self.objects_max
            )));
        }
        Ok(())
    }
}

struct Part {
    // rectangle in object-local pixels
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    label: u8,
    color: [u8; 3],
    /// carve-out for the cup ring
    hole: Option<(usize, usize, usize, usize)>,
}

struct ObjectDraft {
    class: usize,
    w: usize,
    h: usize,
    parts: Vec<Part>,
}

fn jitter(rng: &mut ChaCha8Rng, base: [u8; 3], amount: i16) -> [u8; 3] {
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = base[c] as i16 + rng.gen_range(-amount..=amount);
        out[c] = v.clamp(0, 255) as u8;
    }
    out
}

fn draft_tool(rng: &mut ChaCha8Rng) -> ObjectDraft {
    let len = rng.gen_range(HANDLE_LEN.0..=HANDLE_LEN.1);
    let th = rng.gen_range(HANDLE_TH.0..=HANDLE_TH.1);
    let head_w = rng.gen_range(HEAD_W.0..=HEAD_W.1);
    let head_h = rng.gen_range(HEAD_H.0..=HEAD_H.1);
    let handle_color = jitter(rng, [152, 104, 60], 12);
    let head_color = jitter(rng, [94, 94, 116], 12);
    let horizontal = rng.gen_bool(0.5);
    let (w, h) = (len + head_w, th.max(head_h));
    let handle = Part {
        x: 0,
        y: (h - th) / 2,
        w: len,
        h: th,
        label: GRASP,
        color: handle_color,
        hole: None,
    };
    let head = Part {
        x: len,
        y: (h - head_h) / 2,
        w: head_w,
        h: head_h,
        label: POUND,
        color: head_color,
        hole: None,
    };
    let mut draft = ObjectDraft {
        class: 1,
        w,
        h,
        parts: vec![handle, head],
    };
    if !horizontal {
        // rotate 90 degrees: (x, y, w, h) -> (y, x, h, w)
        for p in &mut draft.parts {
            std::mem::swap(&mut p.x, &mut p.y);
            std::mem::swap(&mut p.w, &mut p.h);
        }
        std::mem::swap(&mut draft.w, &mut draft.h);
    }
    draft
}

fn draft_cup(rng: &mut ChaCha8Rng) -> ObjectDraft {
    let outer = rng.gen_range(CUP_OUTER.0..=CUP_OUTER.1);
    let wall = rng.gen_range(CUP_WALL.0..=CUP_WALL.1);
    let ring_color = jitter(rng, [72, 112, 182], 12);
    let inner_color = jitter(rng, [46, 50, 56], 10);
    let inner = outer - 2 * wall;
    let ring = Part {
        x: 0,
        y: 0,
        w: outer,
        h: outer,
        label: W_GRASP,
        color: ring_color,
        hole: Some((wall, wall, inner, inner)),
    };
    let interior = Part {
        x: wall,
        y: wall,
        w: inner,
        h: inner,
        label: CONTAIN,
        color: inner_color,
        hole: None,
    };
    ObjectDraft {
        class: 2,
        w: outer,
        h: outer,
        parts: vec![ring, interior],
    }
}

/// Pixels of one generated scene, before any file goes to disk.
pub(crate) struct GeneratedScene {
    pub image: RgbImage,
    pub objects: Vec<(usize, LabelMask)>, // (class, full-image mask)
}

pub(crate) fn generate_scene(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<GeneratedScene> {
    let (w, h) = (spec.width, spec.height);
    let mut image = RgbImage::new(w, h);
    let base = rng.gen_range(192..=214) as i16;
    for y in 0..h {
        for x in 0..w {
            let n = rng.gen_range(-6..=6);
            let v = (base + n).clamp(0, 255) as u8;
            image.put(x, y, [v, v, v]);
        }
    }

    let count = rng.gen_range(spec.objects_min..=spec.objects_max);
    let mut placed: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut objects = Vec::new();
    for _ in 0..count {
        let draft = if rng.gen_bool(0.5) {
            draft_tool(rng)
        } else {
            draft_cup(rng)
        };
        let mut home = None;
        for _ in 0..PLACEMENT_RETRIES {
            if draft.w + 2 >= w || draft.h + 2 >= h {
                break;
            }
            let x0 = rng.gen_range(1..w - draft.w - 1);
            let y0 = rng.gen_range(1..h - draft.h - 1);
            let margin = 2usize;
            let clear = placed.iter().all(|&(px, py, pw, ph)| {
                x0 + draft.w + margin <= px
                    || px + pw + margin <= x0
                    || y0 + draft.h + margin <= py
                    || py + ph + margin <= y0
            });
            if clear {
                home = Some((x0, y0));
                break;
            }
        }
        let (x0, y0) = home.ok_or_else(|| {
            Error::InvalidArg(format!(
                "could not place a {}x{} object after {} retries",
                draft.w, draft.h, PLACEMENT_RETRIES
            ))
        })?;
        placed.push((x0, y0, draft.w, draft.h));

        let mut mask = LabelMask::new(w, h);
        for part in &draft.parts {
            for py in 0..part.h {
                for px in 0..part.w {
                    if let Some((hx, hy, hw, hh)) = part.hole {
                        let lx = part.x + px;
                        let ly = part.y + py;
                        if lx >= hx && lx < hx + hw && ly >= hy && ly < hy + hh {
                            continue;
                        }
                    }
                    let ix = x0 + part.x + px;
                    let iy = y0 + part.y + py;
                    mask.set(ix, iy, part.label);
                    let noise = rng.gen_range(-4..=4);
                    let mut rgb = part.color;
                    for c in rgb.iter_mut() {
                        *c = (*c as i16 + noise).clamp(0, 255) as u8;
                    }
                    image.put(ix, iy, rgb);
                }
            }
        }
        debug_assert!(labels_are_4connected(&mask));
        objects.push((draft.class, mask));
    }
    Ok(GeneratedScene { image, objects })
}

/// Every non-background label of an object mask forms one 4-connected region.
pub(crate) fn labels_are_4connected(mask: &LabelMask) -> bool {
    for &label in mask.unique_labels().iter().filter(|&&l| l != 0) {
        let mut seen = vec![false; mask.width() * mask.height()];
        let mut stack = Vec::new();
        let mut total = 0usize;
        'seek: for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) == label {
                    stack.push((x, y));
                    seen[y * mask.width() + x] = true;
                    break 'seek;
                }
            }
        }
        let mut reached = 0usize;
        while let Some((x, y)) = stack.pop() {
            reached += 1;
            let mut push = |nx: usize, ny: usize, stack: &mut Vec<(usize, usize)>| {
                let i = ny * mask.width() + nx;
                if !seen[i] && mask.get(nx, ny) == label {
                    seen[i] = true;
                    stack.push((nx, ny));
                }
            };
            if x > 0 {
                push(x - 1, y, &mut stack);
            }
            if x + 1 < mask.width() {
                push(x + 1, y, &mut stack);
            }
            if y > 0 {
                push(x, y - 1, &mut stack);
            }
            if y + 1 < mask.height() {
                push(x, y + 1, &mut stack);
            }
        }
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) == label {
                    total += 1;
                }
            }
        }
        if reached != total {
            return false;
        }
    }
    true
}

/// Output locations produced by [`generate_synthetic_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub manifest: PathBuf,
    pub truth_dir: PathBuf,
}

/// Generate `count` scenes under `out_dir`:
///   images/scene_NNNNN.ppm        color images
///   masks/scene_NNNNN_objK.pgm    per-object affordance masks
///   truth/scene_NNNNN.pgm         merged groundtruth masks
///   truth/detections.jsonl        groundtruth boxes (score 1.0)
///   manifest.jsonl                one annotation line per scene
///
/// The same (spec, count, seed) always produces byte-identical files.
pub fn generate_synthetic_dataset(
    spec: &SceneSpec,
    count: usize,
    out_dir: impl AsRef<Path>,
    seed: u64,
) -> Result<DatasetPaths> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let images = super::ensure_dir(out_dir.join("images"))?;
    let masks = super::ensure_dir(out_dir.join("masks"))?;
    let truth = super::ensure_dir(out_dir.join("truth"))?;

    // priority is irrelevant for groundtruth merging (objects are disjoint)
    let priority = AffordancePriority::new(vec![GRASP, POUND, W_GRASP, CONTAIN]).unwrap();

    let mut annotations = Vec::with_capacity(count);
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = rng::seeded(rng::substream(seed, i as u64));
        let scene = generate_scene(spec, &mut rng)?;
        let id = format!("scene_{i:05}");
        let image_rel = format!("images/{id}.ppm");
        write_image(images.join(format!("{id}.ppm")), &scene.image)?;

        let mut objects = Vec::with_capacity(scene.objects.len());
        let mut dets = Vec::with_capacity(scene.objects.len());
        for (k, (class, mask)) in scene.objects.iter().enumerate() {
            let mask_rel = format!("masks/{id}_obj{k}.pgm");
            write_mask(masks.join(format!("{id}_obj{k}.pgm")), mask)?;
            let bbox = tight_box(mask).expect("generated object has pixels");
            objects.push(ObjectAnnotation {
                bbox: [bbox.x1, bbox.y1, bbox.x2, bbox.y2],
                class: *class,
                mask: mask_rel,
            });
            dets.push(DetectionEntry {
                bbox: [bbox.x1, bbox.y1, bbox.x2, bbox.y2],
                class: *class,
                score: 1.0,
            });
        }
        // per-object masks are full-image; paste them via a zero-origin box
        let merged = {
            let full: Vec<_> = scene
                .objects
                .iter()
                .map(|(_, m)| (crate::boxes::BBox::new(0.0, 0.0, 0.0, 0.0), m.clone()))
                .collect();
            merge_overlaps_by_priority(&full, &priority, spec.width, spec.height)
        };
        write_mask(truth.join(format!("{id}.pgm")), &merged)?;
        records.push(DetectionRecord {
            image: id.clone(),
            detections: dets,
        });
        annotations.push(Annotation {
            image: image_rel,
            objects,
        });
    }
    let manifest = out_dir.join("manifest.jsonl");
    save_annotations(&manifest, &annotations)?;
    save_detection_records(&truth, &records)?;
    Ok(DatasetPaths {
        manifest,
        truth_dir: truth,
    })
}
