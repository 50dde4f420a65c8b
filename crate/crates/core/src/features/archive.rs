//! Binary feature archive: "MSPKFEAT", u32 version, u32 T, u32 F,
//! f64 frame_shift, f64 frame_width, then T×F f32 row-major (little-endian).

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::FeatureMatrix;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"MSPKFEAT";
pub const FEATURE_VERSION: u32 = 1;

pub fn write_features(path: impl AsRef<Path>, f: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(40 + 4 * f.frames.len());
    encode(&mut buf, f).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn encode(w: &mut impl Write, f: &FeatureMatrix) -> std::io::Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_u32::<LittleEndian>(FEATURE_VERSION)?;
    w.write_u32::<LittleEndian>(f.num_frames() as u32)?;
    w.write_u32::<LittleEndian>(f.dim() as u32)?;
    w.write_f64::<LittleEndian>(f.frame_shift)?;
    w.write_f64::<LittleEndian>(f.frame_width)?;
    for v in f.frames.iter() {
        w.write_f32::<LittleEndian>(*v as f32)?;
    }
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&mut bytes.as_slice())
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn decode(r: &mut &[u8]) -> std::result::Result<FeatureMatrix, String> {
    let short = |_| "truncated feature archive".to_string();
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(short)?;
    if &magic != FEATURE_MAGIC {
        return Err("bad magic".into());
    }
    let version = r.read_u32::<LittleEndian>().map_err(short)?;
    if version != FEATURE_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let t = r.read_u32::<LittleEndian>().map_err(short)? as usize;
    let d = r.read_u32::<LittleEndian>().map_err(short)? as usize;
    let shift = r.read_f64::<LittleEndian>().map_err(short)?;
    let width = r.read_f64::<LittleEndian>().map_err(short)?;
    if r.len() != t * d * 4 {
        return Err(format!("expected {} data bytes, found {}", t * d * 4, r.len()));
    }
    let mut data = Vec::with_capacity(t * d);
    for _ in 0..t * d {
        data.push(r.read_f32::<LittleEndian>().map_err(short)? as f64);
    }
    let frames = Array2::from_shape_vec((t, d), data).map_err(|e| e.to_string())?;
    Ok(FeatureMatrix::new(frames, shift, width))
}
