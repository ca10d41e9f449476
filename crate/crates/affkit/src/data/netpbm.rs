//! Binary NetPBM readers/writers: P6 (PPM) for color images, P5 (PGM) for
//! label masks where the pixel value is the affordance label.
//!
//! Writes are atomic (temp file + rename) so a crash never leaves a partial
//! artifact behind.

use crate::error::{Error, Result};
use crate::maskops::LabelMask;
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::FileFormat {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Read one whitespace-separated header token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(format_err(path, "truncated header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| format_err(path, format!("bad header token at byte {start}")))
}

fn read_raster<'a>(bytes: &'a [u8], pos: &mut usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    // exactly one whitespace byte separates maxval from the raster
    if *pos >= bytes.len() || !bytes[*pos].is_ascii_whitespace() {
        return Err(format_err(path, "missing whitespace before raster"));
    }
    *pos += 1;
    if bytes.len() < *pos + len {
        return Err(format_err(
            path,
            format!("raster truncated: need {} bytes, have {}", len, bytes.len() - *pos),
        ));
    }
    Ok(&bytes[*pos..*pos + len])
}

fn read_header(bytes: &[u8], magic: &[u8; 2], path: &Path) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format_err(
            path,
            format!("expected {} magic", std::str::from_utf8(magic).unwrap()),
        ));
    }
    let mut pos = 2usize;
    let w = next_token(bytes, &mut pos, path)?;
    let h = next_token(bytes, &mut pos, path)?;
    let maxval = next_token(bytes, &mut pos, path)?;
    if w == 0 || h == 0 {
        return Err(format_err(path, format!("degenerate size {w}x{h}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format_err(path, format!("unsupported maxval {maxval}")));
    }
    Ok((w, h, pos))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let (w, h, mut pos) = read_header(&bytes, b"P6", path)?;
    let raster = read_raster(&bytes, &mut pos, w * h * 3, path)?;
    Ok(RgbImage {
        width: w,
        height: h,
        data: raster.to_vec(),
    })
}

pub fn write_image(path: impl AsRef<Path>, image: &RgbImage) -> Result<()> {
    let header = format!("P6\n{} {}\n255\n", image.width, image.height);
    write_atomic(path.as_ref(), header.as_bytes(), &image.data)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let (w, h, mut pos) = read_header(&bytes, b"P5", path)?;
    let raster = read_raster(&bytes, &mut pos, w * h, path)?;
    LabelMask::from_labels(w, h, raster.to_vec())
}

pub fn write_mask(path: impl AsRef<Path>, mask: &LabelMask) -> Result<()> {
    let header = format!("P5\n{} {}\n255\n", mask.width(), mask.height());
    write_atomic(path.as_ref(), header.as_bytes(), mask.labels())
}

fn write_atomic(path: &Path, header: &[u8], raster: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    let io_err = |e| Error::io(path.display().to_string(), e);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(header).map_err(io_err)?;
        f.write_all(raster).map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn image_roundtrip_is_lossless() {
        let dir = tempdir().unwrap();
        let mut img = RgbImage::new(5, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i * 37 % 256) as u8;
        }
        let p = dir.path().join("img.ppm");
        write_image(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }

    #[test]
    fn mask_roundtrip_is_lossless() {
        let dir = tempdir().unwrap();
        let mask = LabelMask::from_labels(4, 2, vec![0, 1, 2, 3, 4, 0, 1, 2]).unwrap();
        let p = dir.path().join("m.pgm");
        write_mask(&p, &mask).unwrap();
        assert_eq!(read_mask(&p).unwrap(), mask);
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        fs::write(&p, b"P5\n# made by hand\n2 2\n255\n\x01\x02\x03\x04").unwrap();
        let m = read_mask(&p).unwrap();
        assert_eq!(m.labels(), &[1, 2, 3, 4]);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let dir = tempdir().unwrap();
        let bad_magic = dir.path().join("a.pgm");
        fs::write(&bad_magic, b"P3\n2 2\n255\n....").unwrap();
        assert!(read_mask(&bad_magic).is_err());

        let truncated = dir.path().join("b.pgm");
        fs::write(&truncated, b"P5\n4 4\n255\n\x00\x00").unwrap();
        let err = read_mask(&truncated).unwrap_err().to_string();
        assert!(err.contains("truncated"), "got: {err}");

        let bad_token = dir.path().join("c.pgm");
        fs::write(&bad_token, b"P5\nx 2\n255\n\x00\x00").unwrap();
        assert!(read_mask(&bad_token).is_err());
    }
}
