//! 8-bit PNG reading and writing for images and masks.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, write_file};
use crate::scene::{ChangeMask, ImageBuffer};

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Decode a PNG into a 3-channel image (gray is replicated, alpha dropped,
/// 16-bit samples reduced to 8 bits).
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let (w, h, ch, bytes) = decode(path)?;
    let mut data = Vec::with_capacity(w * h * 3);
    for px in bytes.chunks_exact(ch) {
        let rgb = if ch >= 3 { [px[0], px[1], px[2]] } else { [px[0]; 3] };
        data.extend(rgb.iter().map(|v| *v as f64 / 255.0));
    }
    ImageBuffer::new(w, h, 3, data)
}

/// Decode a PNG mask; color masks are reduced to luma. Values are `v / 255`.
pub fn read_mask(path: impl AsRef<Path>) -> Result<ChangeMask> {
    let path = path.as_ref();
    let (w, h, ch, bytes) = decode(path)?;
    let values = bytes
        .chunks_exact(ch)
        .map(|px| {
            if ch >= 3 {
                (0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64) / 255.0
            } else {
                px[0] as f64 / 255.0
            }
        })
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    ChangeMask::new(w, h, values)
}

fn decode(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_file(path)?;
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    let ch = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h * ch);
    for row in buf.chunks(info.line_size).take(h) {
        data.extend_from_slice(&row[..w * ch]);
    }
    Ok((w, h, ch, data))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(path: &Path, w: usize, h: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
        writer.write_image_data(data).map_err(|e| png_err(path, e))?;
    }
    write_file(path, &out)
}

pub fn write_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let color = if img.channels == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    };
    let data: Vec<u8> = img.data.iter().map(|v| to_u8(*v)).collect();
    encode(path.as_ref(), img.width, img.height, color, &data)
}

/// 8-bit grayscale, `round(v · 255)`.
pub fn write_mask(mask: &ChangeMask, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<u8> = mask.values.iter().map(|v| to_u8(*v)).collect();
    encode(path.as_ref(), mask.width, mask.height, png::ColorType::Grayscale, &data)
}
