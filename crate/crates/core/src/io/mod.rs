//! File formats: COLMAP sparse models, splat PLY files, CSFM feature maps and
//! PNG images/masks.

pub mod colmap;
pub mod csfm;
pub mod image;
pub mod ply;

use std::path::Path;

use crate::error::{Error, Result};

pub use colmap::{
    parse_colmap_model, write_colmap_model, ColmapCamera, ColmapFormat, ColmapImage, ColmapModel, ColmapPoint, PinholeModel,
};
pub use csfm::{load_feature_map, save_feature_map};
pub use image::{read_image, read_mask, write_image, write_mask};
pub use ply::{read_splat_ply, write_splat_ply};

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::file(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

/// Little-endian cursor that reports truncation with the byte offset.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: String,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], file: impl Into<String>) -> Self {
        Self {
            bytes,
            pos: 0,
            file: file.into(),
        }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                file: self.file.clone(),
                offset: self.pos,
                needed: n - self.remaining(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice length"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        self.array().map(i32::from_le_bytes)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }

    /// Number of records announced by a count field, capped so that a
    /// corrupted count cannot trigger a huge allocation.
    pub(crate) fn capacity_for(&self, count: u64, min_record_bytes: usize) -> usize {
        let fit = self.remaining() / min_record_bytes.max(1);
        usize::try_from(count).unwrap_or(usize::MAX).min(fit)
    }
}
