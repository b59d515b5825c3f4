//! Binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! "SEGATTN1"
//! u32 config_len, config text (canonical ModelConfig)
//! repeated until EOF:
//!   u32 name_len, name, u32 rank, rank x u64 extents, numel x f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelConfig, Param, SegModel};
use crate::error::{Error, Result};
use crate::nn::InitSpec;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEGATTN1";

pub fn write_checkpoint<W: Write>(model: &SegModel, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    let cfg = model.config().to_text();
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    for p in model.params() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.numel() * 8);
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                what: "checkpoint",
                offset: self.pos,
                msg: format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn fail(&self, msg: String) -> Error {
        Error::Format {
            what: "checkpoint",
            offset: self.pos,
            msg,
        }
    }
}

/// Reads a checkpoint, rebuilding the model from its embedded config and
/// checking every stored tensor against the expected name and shape.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<SegModel> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            what: "checkpoint",
            offset: 0,
            msg: "bad magic".into(),
        });
    }
    let len = c.u32("config length")? as usize;
    let text = std::str::from_utf8(c.take(len, "config")?).map_err(|e| c.fail(format!("config is not UTF-8: {e}")))?;
    let cfg = ModelConfig::parse(text)?;
    let mut model = SegModel::build(&cfg, InitSpec::new(0))?;
    let mut loaded: Vec<Param> = Vec::with_capacity(model.params().len());
    while c.pos < buf.len() {
        let n = c.u32("name length")? as usize;
        let name = String::from_utf8(c.take(n, "name")?.to_vec()).map_err(|e| c.fail(format!("bad name: {e}")))?;
        let rank = c.u32("rank")? as usize;
        if rank > 8 {
            return Err(c.fail(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64("extent")? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| c.fail("extent overflow".into()))?;
        let bytes = c.take(numel.checked_mul(8).ok_or_else(|| c.fail("size overflow".into()))?, "tensor data")?;
        let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        loaded.push(Param {
            name,
            value: Tensor::new(&shape, data)?,
        });
    }
    let expected = model.params_mut();
    if loaded.len() != expected.len() {
        return Err(c.fail(format!("expected {} tensors, found {}", expected.len(), loaded.len())));
    }
    for (slot, p) in expected.iter_mut().zip(loaded) {
        if slot.name != p.name || slot.value.shape() != p.value.shape() {
            return Err(c.fail(format!(
                "tensor `{}` {:?} does not match expected `{}` {:?}",
                p.name,
                p.value.shape(),
                slot.name,
                slot.value.shape()
            )));
        }
        slot.value = p.value;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &SegModel, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(model, std::io::BufWriter::new(f))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SegModel> {
    read_checkpoint(std::fs::File::open(path)?)
}
