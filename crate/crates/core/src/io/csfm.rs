//! CSFM feature container: magic `CSFM`, four little-endian u32 fields
//! (grid_h, grid_w, dim, patch_size), then `grid_h·grid_w·dim` little-endian
//! f32 values in row-major cell order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, write_file, ByteReader};
use crate::scene::FeatureMap;

pub const MAGIC: &[u8; 4] = b"CSFM";

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    decode_feature_map(&read_file(path)?, &path.display().to_string())
}

pub fn save_feature_map(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_feature_map(map)?)
}

pub fn encode_feature_map(map: &FeatureMap) -> Result<Vec<u8>> {
    let field = |v: usize| {
        u32::try_from(v).map_err(|_| Error::InvalidFeatureMap(format!("{v} does not fit in a u32 header field")))
    };
    let mut out = Vec::with_capacity(20 + map.data.len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [map.grid_h, map.grid_w, map.dim, map.patch_size] {
        out.extend_from_slice(&field(v)?.to_le_bytes());
    }
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_feature_map(bytes: &[u8], name: &str) -> Result<FeatureMap> {
    let mut r = ByteReader::new(bytes, name);
    if r.take(4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let grid_h = r.u32()? as usize;
    let grid_w = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let patch_size = r.u32()? as usize;
    let expected = grid_h
        .checked_mul(grid_w)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| Error::InvalidFeatureMap(format!("grid {grid_h}x{grid_w}x{dim} overflows")))?;
    let found = r.remaining() / 4;
    if found != expected || r.remaining() % 4 != 0 {
        return Err(Error::LengthMismatch { expected, found });
    }
    let mut data = Vec::with_capacity(found);
    for _ in 0..found {
        data.push(r.f32()?);
    }
    FeatureMap::new(grid_h, grid_w, dim, patch_size, data)
}
