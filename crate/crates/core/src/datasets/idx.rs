//! Reader and writer for the IDX container used by the MNIST digit files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images with pixels scaled to `[0, 1]`, one image per row.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Matrix,
    pub labels: Option<Vec<u8>>,
}

impl IdxImages {
    pub fn image_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    let chunk = bytes.get(offset..end).ok_or_else(|| Error::Parse {
        offset: bytes.len(),
        message: format!("truncated header, needed bytes {offset}..{end}"),
    })?;
    Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, dims: &[u32]) -> Result<&'a [u8]> {
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::Parse {
            offset: 4,
            message: format!("dimensions {dims:?} overflow the address space"),
        })?;
    let end = header.checked_add(len).ok_or_else(|| Error::Parse {
        offset: 4,
        message: "payload size overflows".into(),
    })?;
    if bytes.len() < end {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!(
                "truncated payload: header declares {len} bytes, found {}",
                bytes.len() - header
            ),
        });
    }
    if bytes.len() > end {
        return Err(Error::Parse {
            offset: end,
            message: format!("{} trailing bytes after payload", bytes.len() - end),
        });
    }
    Ok(&bytes[header..end])
}

/// Parses an image file (`0x00000803`, count × rows × cols bytes).
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)?;
    let rows = read_u32(bytes, 8)?;
    let cols = read_u32(bytes, 12)?;
    let raw = payload(bytes, 16, &[count, rows, cols])?;
    let (count, rows, cols) = (count as usize, rows as usize, cols as usize);
    let data = raw.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: Matrix::from_vec(count, rows * cols, data)?,
        labels: None,
    })
}

/// Parses a label file (`0x00000801`, one byte per item).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)?;
    Ok(payload(bytes, 8, &[count])?.to_vec())
}

pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<IdxImages> {
    let mut images = parse_idx_images(&fs::read(images_path)?)?;
    if let Some(p) = labels_path {
        let labels = parse_idx_labels(&fs::read(p)?)?;
        if labels.len() != images.count {
            return Err(Error::Shape(format!(
                "{} labels for {} images",
                labels.len(),
                images.count
            )));
        }
        images.labels = Some(labels);
    }
    Ok(images)
}

/// Encodes raw bytes as an IDX image file.
pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != count * rows * cols {
        return Err(Error::Shape(format!(
            "{} pixels for {count}x{rows}x{cols}",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
