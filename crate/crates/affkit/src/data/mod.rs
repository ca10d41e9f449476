//! Synthetic scene generation, annotation manifests, image I/O, and the
//! shorter-edge/longer-cap input resize rule.

mod netpbm;
mod synth;

pub use netpbm::{read_image, read_mask, write_image, write_mask, RgbImage};
pub use synth::{
    generate_synthetic_dataset, DatasetPaths, SceneSpec, AFFORDANCE_NAMES, CONTAIN, GRASP,
    OBJECT_NAMES, POUND, W_GRASP,
};

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::maskops::LabelMask;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

/// One object entry of a manifest line. `bbox` is the tight bounding box of
/// the mask's non-background pixels, \[x1, y1, x2, y2\].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub bbox: [f64; 4],
    pub class: usize,
    pub mask: String,
}

/// One manifest line: an image plus its annotated objects. Paths are
/// relative to the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Annotation {
    pub image: String,
    pub objects: Vec<ObjectAnnotation>,
}

impl Annotation {
    /// Image id: the file stem of the image path.
    pub fn id(&self) -> String {
        Path::new(&self.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.image.clone())
    }
}

/// Parse a JSONL manifest and verify that every referenced file exists.
pub fn load_annotations(manifest_path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let manifest_path = manifest_path.as_ref();
    let file = fs::File::open(manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ann: Annotation = serde_json::from_str(&line).map_err(|e| Error::FileFormat {
            path: format!("{}:{}", manifest_path.display(), lineno + 1),
            msg: e.to_string(),
        })?;
        for rel in std::iter::once(&ann.image).chain(ann.objects.iter().map(|o| &o.mask)) {
            let p = dir.join(rel);
            if !p.exists() {
                return Err(Error::FileFormat {
                    path: format!("{}:{}", manifest_path.display(), lineno + 1),
                    msg: format!("referenced file missing: {}", p.display()),
                });
            }
        }
        out.push(ann);
    }
    Ok(out)
}

pub fn save_annotations(manifest_path: impl AsRef<Path>, annotations: &[Annotation]) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let io_err = |e| Error::io(manifest_path.display().to_string(), e);
    let tmp = manifest_path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        for ann in annotations {
            let line = serde_json::to_string(ann).expect("annotation serializes");
            writeln!(f, "{line}").map_err(io_err)?;
        }
    }
    fs::rename(&tmp, manifest_path).map_err(io_err)
}

/// A groundtruth object with its pixels loaded.
#[derive(Debug, Clone)]
pub struct GtObject {
    pub bbox: BBox,
    pub class: usize,
    pub mask: LabelMask,
}

/// A fully loaded training/eval scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub image: RgbImage,
    pub objects: Vec<GtObject>,
}

/// Load every scene referenced by a manifest, validating mask labels against
/// the affordance count, object classes against K, and each bbox against the
/// tight box of its mask.
pub fn load_scenes(
    manifest_path: impl AsRef<Path>,
    num_object_classes: usize,
    num_affordances: usize,
) -> Result<Vec<Scene>> {
    let manifest_path = manifest_path.as_ref();
    let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let annotations = load_annotations(manifest_path)?;
    let mut scenes = Vec::with_capacity(annotations.len());
    for ann in &annotations {
        let image = read_image(dir.join(&ann.image))?;
        let mut objects = Vec::with_capacity(ann.objects.len());
        for obj in &ann.objects {
            let mask_path = dir.join(&obj.mask);
            let mask = read_mask(&mask_path)?;
            mask.validate_max_label(num_affordances).map_err(|e| Error::FileFormat {
                path: mask_path.display().to_string(),
                msg: e.to_string(),
            })?;
            if obj.class == 0 || obj.class > num_object_classes {
                return Err(Error::FileFormat {
                    path: manifest_path.display().to_string(),
                    msg: format!("object class {} outside 1..={}", obj.class, num_object_classes),
                });
            }
            let bbox = BBox::new(obj.bbox[0], obj.bbox[1], obj.bbox[2], obj.bbox[3]);
            let tight = tight_box(&mask).ok_or_else(|| Error::FileFormat {
                path: mask_path.display().to_string(),
                msg: "mask has no foreground pixels".into(),
            })?;
            if (bbox.x1 - tight.x1).abs() > 1e-9
                || (bbox.y1 - tight.y1).abs() > 1e-9
                || (bbox.x2 - tight.x2).abs() > 1e-9
                || (bbox.y2 - tight.y2).abs() > 1e-9
            {
                return Err(Error::FileFormat {
                    path: mask_path.display().to_string(),
                    msg: format!("bbox {bbox:?} is not the tight box {tight:?} of the mask"),
                });
            }
            objects.push(GtObject { bbox, class: obj.class, mask });
        }
        scenes.push(Scene {
            id: ann.id(),
            image,
            objects,
        });
    }
    Ok(scenes)
}

/// Tight bounding box of the non-background pixels, exclusive right/bottom.
pub fn tight_box(mask: &LabelMask) -> Option<BBox> {
    let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) != 0 {
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x + 1);
                y2 = y2.max(y + 1);
            }
        }
    }
    if x1 == usize::MAX {
        None
    } else {
        Some(BBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64))
    }
}

/// Image tensor layout used by the network: (1, 3, H, W), values scaled to
/// [-0.5, 0.5].
pub fn image_to_tensor(image: &RgbImage) -> Tensor {
    let (w, h) = (image.width, image.height);
    let mut t = Tensor::zeros(&[1, 3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let px = image.get(x, y);
            for c in 0..3 {
                t.data_mut()[(c * h + y) * w + x] = px[c] as f64 / 255.0 - 0.5;
            }
        }
    }
    t
}

/// Scale so the shorter edge hits `shorter_target`, unless that would push
/// the longer edge past `longer_cap`, in which case the longer edge is pinned
/// to the cap. Returns the resized image and the applied scale.
pub fn resize_for_network(
    image: &RgbImage,
    shorter_target: usize,
    longer_cap: usize,
) -> (RgbImage, f64) {
    let (w, h) = (image.width as f64, image.height as f64);
    let shorter = w.min(h);
    let longer = w.max(h);
    let mut scale = shorter_target as f64 / shorter;
    if longer * scale > longer_cap as f64 {
        scale = longer_cap as f64 / longer;
    }
    let tw = (w * scale).round().max(1.0) as usize;
    let th = (h * scale).round().max(1.0) as usize;
    (resize_rgb(image, tw, th), scale)
}

/// Bilinear RGB resize at target-pixel centers.
pub fn resize_rgb(image: &RgbImage, tw: usize, th: usize) -> RgbImage {
    let (sw, sh) = (image.width, image.height);
    let mut out = RgbImage::new(tw, th);
    let rx = sw as f64 / tw as f64;
    let ry = sh as f64 / th as f64;
    for ty in 0..th {
        let sy = ((ty as f64 + 0.5) * ry - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = sy - y0 as f64;
        for tx in 0..tw {
            let sx = ((tx as f64 + 0.5) * rx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = sx - x0 as f64;
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let v00 = image.data[(y0 * sw + x0) * 3 + c] as f64;
                let v01 = image.data[(y0 * sw + x1) * 3 + c] as f64;
                let v10 = image.data[(y1 * sw + x0) * 3 + c] as f64;
                let v11 = image.data[(y1 * sw + x1) * 3 + c] as f64;
                let v = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11);
                rgb[c] = v.round().clamp(0.0, 255.0) as u8;
            }
            out.put(tx, ty, rgb);
        }
    }
    out
}

/// Directory layout shared by groundtruth and prediction outputs: one merged
/// mask `<id>.pgm` per image plus a `detections.jsonl` listing boxes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image: String,
    pub detections: Vec<DetectionEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionEntry {
    pub bbox: [f64; 4],
    pub class: usize,
    pub score: f64,
}

pub fn save_detection_records(dir: impl AsRef<Path>, records: &[DetectionRecord]) -> Result<()> {
    let path = dir.as_ref().join("detections.jsonl");
    let io_err = |e| Error::io(path.display().to_string(), e);
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        for r in records {
            writeln!(f, "{}", serde_json::to_string(r).expect("record serializes")).map_err(io_err)?;
        }
    }
    fs::rename(&tmp, &path).map_err(io_err)
}

pub fn load_detection_records(dir: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = dir.as_ref().join("detections.jsonl");
    let file = fs::File::open(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::FileFormat {
            path: format!("{}:{}", path.display(), lineno + 1),
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn ensure_dir(dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    Ok(dir.to_path_buf())
}
