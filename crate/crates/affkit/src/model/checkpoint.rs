//! Checkpoint persistence.
//!
//! Wire format (little-endian throughout):
//!   magic  "AFNC" (4 bytes)
//!   version u32 (currently 1)
//!   count   u32 (number of tensors)
//!   per tensor: name_len u16, UTF-8 name, rank u8, dims u32 each, f32 values
//!   footer: iteration u64, base rng seed u64
//!
//! Parameters are kept on the f32 grid in memory, so a save/load round trip
//! reproduces them bit-exactly.

use super::{Model, ModelConfig, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"AFNC";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, param) in &model.params {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(param.value.dims().len() as u8);
        for &d in param.value.dims() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in param.value.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf.extend_from_slice(&model.iteration.to_le_bytes());
    buf.extend_from_slice(&model.base_seed.to_le_bytes());

    let io_err = |e| Error::io(path.display().to_string(), e);
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(&buf).map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint {
                path: self.path.clone(),
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: self.path.clone(),
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }
}

/// Load a checkpoint into a model with the given architecture. Every tensor
/// must match the config-built skeleton by name and shape.
pub fn load_checkpoint(path: impl AsRef<Path>, config: ModelConfig) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint {
            path: r.path.clone(),
            offset: 0,
            msg: "bad magic, expected AFNC".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint {
            path: r.path.clone(),
            offset: 4,
            msg: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let count = r.u32("tensor count")? as usize;

    let mut model = Model::new(config, 0)?;
    if count != model.params.len() {
        return Err(r.err(format!(
            "checkpoint has {} tensors, architecture expects {}",
            count,
            model.params.len()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| r.err("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * 4, &format!("values of {name}"))?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let param = model
            .params
            .get_mut(&name)
            .ok_or_else(|| r.err(format!("unknown tensor {name} for this architecture")))?;
        if param.value.dims() != dims.as_slice() {
            return Err(r.err(format!(
                "tensor {name} has dims {:?}, architecture expects {:?}",
                dims,
                param.value.dims()
            )));
        }
        if !seen.insert(name.clone()) {
            return Err(r.err(format!("tensor {name} appears twice")));
        }
        *param = Param::new(Tensor::from_vec(&dims, data)?);
    }
    model.iteration = r.u64("iteration")?;
    model.base_seed = r.u64("rng seed")?;
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} unexpected trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mask_head_chain;
    use tempfile::tempdir;

    fn small_config() -> ModelConfig {
        let mut cfg = ModelConfig::default();
        cfg.backbone_width = 4;
        cfg.fc_width = 8;
        cfg.mask_width = 4;
        cfg.mask_head = mask_head_chain(14, 4).unwrap();
        cfg
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.afnc");
        let mut model = Model::new(small_config(), 77).unwrap();
        model.iteration = 1234;
        save_checkpoint(&model, &p).unwrap();
        let loaded = load_checkpoint(&p, small_config()).unwrap();
        assert_eq!(loaded.iteration, 1234);
        assert_eq!(loaded.base_seed, 77);
        for (name, param) in &model.params {
            assert_eq!(param.value.data(), loaded.params[name].value.data(), "{name}");
        }
        // a second save must produce identical bytes
        let p2 = dir.path().join("m2.afnc");
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.afnc");
        std::fs::write(&p, b"NOPE rest of file").unwrap();
        let err = load_checkpoint(&p, small_config()).unwrap_err().to_string();
        assert!(err.contains("magic"), "got: {err}");
    }

    #[test]
    fn truncation_reports_offset() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.afnc");
        let model = Model::new(small_config(), 1).unwrap();
        save_checkpoint(&model, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let cut = bytes.len() / 2;
        let p2 = dir.path().join("cut.afnc");
        std::fs::write(&p2, &bytes[..cut]).unwrap();
        let err = load_checkpoint(&p2, small_config()).unwrap_err().to_string();
        assert!(err.contains("truncated"), "got: {err}");
        assert!(err.contains("offset"), "got: {err}");
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.afnc");
        let model = Model::new(small_config(), 1).unwrap();
        save_checkpoint(&model, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.extend_from_slice(b"junk");
        std::fs::write(&p, &bytes).unwrap();
        let err = load_checkpoint(&p, small_config()).unwrap_err().to_string();
        assert!(err.contains("trailing"), "got: {err}");
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.afnc");
        let model = Model::new(small_config(), 1).unwrap();
        save_checkpoint(&model, &p).unwrap();
        let mut other = small_config();
        other.fc_width = 16;
        assert!(load_checkpoint(&p, other).is_err());
    }
}
