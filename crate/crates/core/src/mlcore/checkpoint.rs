//! Checkpoint file.
//!
//! Layout (little-endian): magic `M2DC`, u8 architecture tag, u32 channels,
//! u32 window length, u32 classes, u32 parameter count, f32 parameters,
//! f64 validation Macro-F1, u32 epoch.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Arch, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::kinlab::NUM_CLASSES;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"M2DC";

/// Best model seen during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    /// 1-based epoch the parameters were taken from.
    pub epoch: usize,
    pub val_macro_f1: f64,
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let io = |e: std::io::Error| Error::file(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let spec = &ck.model.spec;
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&[spec.arch.tag()]).map_err(io)?;
    for v in [spec.channels, spec.window, NUM_CLASSES, ck.model.params.len()] {
        w.write_all(&(v as u32).to_le_bytes()).map_err(io)?;
    }
    for p in &ck.model.params {
        w.write_all(&p.to_le_bytes()).map_err(io)?;
    }
    w.write_all(&ck.val_macro_f1.to_le_bytes()).map_err(io)?;
    w.write_all(&(ck.epoch as u32).to_le_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::file(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::file(path, e))?;
    let bad = |msg: &str| Error::file(path, msg);
    if bytes.len() < 21 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let arch = Arch::from_tag(bytes[4]).ok_or_else(|| bad("unknown architecture tag"))?;
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (channels, window, classes, count) = (u32_at(5), u32_at(9), u32_at(13), u32_at(17));
    if classes != NUM_CLASSES {
        return Err(bad("unsupported class count"));
    }
    let body = 21;
    if bytes.len() != body + 4 * count + 8 + 4 {
        return Err(bad("truncated or oversized checkpoint"));
    }
    let params = bytes[body..body + 4 * count]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let tail = body + 4 * count;
    let val_macro_f1 = f64::from_le_bytes(bytes[tail..tail + 8].try_into().unwrap());
    let epoch = u32_at(tail + 8);
    let spec = ModelSpec::new(arch, channels, window)?;
    Ok(Checkpoint {
        model: Model::from_params(spec, params)?,
        epoch,
        val_macro_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for arch in [Arch::CompactConv, Arch::RecurrentNet] {
            let spec = ModelSpec::new(arch, 8, 125).unwrap();
            let ck = Checkpoint {
                model: Model::new(spec, 4).unwrap(),
                epoch: 17,
                val_macro_f1: 0.8125,
            };
            let path = dir.path().join(format!("{arch}.ckpt"));
            write_checkpoint(&path, &ck).unwrap();
            assert_eq!(read_checkpoint(&path).unwrap(), ck);
        }
        let path = dir.path().join("junk");
        std::fs::write(&path, b"M2DCxxxx").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
