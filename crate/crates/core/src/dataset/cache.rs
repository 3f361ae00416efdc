//! Binary dataset cache.
//!
//! Layout (little-endian): magic `M2D1`, u32 channels, u32 window length,
//! u32 example count, then per example: u8 class index, u16 horizon_ms,
//! u32 session id, f64 start time, `C * W` f32 values row-major by channel.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, Example};
use crate::error::{Error, Result};
use crate::kinlab::ActionLabel;

pub const CACHE_MAGIC: &[u8; 4] = b"M2D1";

pub fn write_cache(path: &Path, ds: &Dataset) -> Result<()> {
    let io = |e: std::io::Error| Error::file(path, e);
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    let per_example = ds.n_channels * ds.window_len;
    w.write_all(CACHE_MAGIC).map_err(io)?;
    for v in [ds.n_channels, ds.window_len, ds.examples.len()] {
        let v = u32::try_from(v).map_err(|_| Error::file(path, "dimension exceeds u32"))?;
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for e in &ds.examples {
        let class = e.label.class_index().ok_or_else(|| {
            Error::file(path, format!("label {} is outside the modelled classes", e.label))
        })?;
        if e.window.len() != per_example {
            return Err(Error::Shape {
                expected: format!("{per_example} window values"),
                actual: e.window.len().to_string(),
            });
        }
        let horizon = u16::try_from(e.horizon_ms).map_err(|_| Error::file(path, "horizon exceeds u16"))?;
        w.write_all(&[class as u8]).map_err(io)?;
        w.write_all(&horizon.to_le_bytes()).map_err(io)?;
        w.write_all(&e.session_id.to_le_bytes()).map_err(io)?;
        w.write_all(&e.start_time.to_le_bytes()).map_err(io)?;
        for x in &e.window {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn take<const N: usize>(r: &mut impl Read, path: &Path) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::file(path, format!("truncated cache: {e}")))?;
    Ok(buf)
}

/// Reads a cache file; channel names are not stored and come back empty.
pub fn read_cache(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = BufReader::new(file);
    if &take::<4>(&mut r, path)? != CACHE_MAGIC {
        return Err(Error::file(path, "not a dataset cache (bad magic)"));
    }
    let c = u32::from_le_bytes(take(&mut r, path)?) as usize;
    let w = u32::from_le_bytes(take(&mut r, path)?) as usize;
    let count = u32::from_le_bytes(take(&mut r, path)?) as usize;
    let mut examples = Vec::with_capacity(count.min(1 << 20));
    let mut raw = vec![0u8; c * w * 4];
    for _ in 0..count {
        let [class] = take::<1>(&mut r, path)?;
        let label = ActionLabel::from_class_index(class as usize).ok_or(Error::InvalidLabel(class as usize))?;
        let horizon_ms = u16::from_le_bytes(take(&mut r, path)?) as u32;
        let session_id = u32::from_le_bytes(take(&mut r, path)?);
        let start_time = f64::from_le_bytes(take(&mut r, path)?);
        r.read_exact(&mut raw)
            .map_err(|e| Error::file(path, format!("truncated cache: {e}")))?;
        let window = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        examples.push(Example {
            window,
            label,
            horizon_ms,
            session_id,
            start_time,
        });
    }
    if r.read(&mut [0u8; 1]).map_err(|e| Error::file(path, e))? != 0 {
        return Err(Error::file(path, "trailing bytes after last example"));
    }
    Ok(Dataset {
        channel_names: Vec::new(),
        n_channels: c,
        window_len: w,
        examples,
    })
}
