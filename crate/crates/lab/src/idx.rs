//! Big-endian IDX image/label files (the MNIST container format).
//!
//! Images: magic `0x00000803`, then `u32` count, rows, cols, then
//! `count·rows·cols` unsigned bytes. Labels: magic `0x00000801`, `u32`
//! count, then `count` bytes.

use std::fs;
use std::path::{Path, PathBuf};

use osc_core::datasets::Dataset;
use osc_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw decoded image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> LabError {
        LabError::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        if end > self.bytes.len() {
            return Err(self.err(self.bytes.len(), format!("file ends inside {what}")));
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..end].try_into().expect("4 bytes"));
        self.pos = end;
        Ok(v)
    }

    fn body(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(self.err(
                self.bytes.len(),
                format!("{what} truncated: expected {len} bytes from offset {}", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<IdxImages> {
    let mut r = Reader { path, bytes, pos: 0 };
    let magic = r.u32("magic number")?;
    if magic != IMAGES_MAGIC {
        return Err(r.err(0, format!("image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let count = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(r.err(8, "zero image dimension"));
    }
    let pixels = r.body(count * rows * cols, "pixel data")?.to_vec();
    r.finish()?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { path, bytes, pos: 0 };
    let magic = r.u32("magic number")?;
    if magic != LABELS_MAGIC {
        return Err(r.err(0, format!("label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let count = r.u32("label count")? as usize;
    let labels = r.body(count, "label data")?.to_vec();
    r.finish()?;
    Ok(labels)
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx(images_path: &Path, labels_path: &Path, images: &IdxImages, labels: &[u8]) -> Result<()> {
    fs::write(images_path, encode_images(images)).map_err(|e| LabError::io(images_path, e))?;
    fs::write(labels_path, encode_labels(labels)).map_err(|e| LabError::io(labels_path, e))?;
    Ok(())
}

/// Reads both files, scales pixels to `[0, 1]`, flattens each image to one
/// row, and assigns a 70/15/15 split from `split_seed`.
pub fn load_idx_with_split(images_path: &Path, labels_path: &Path, split_seed: u64) -> Result<Dataset> {
    let ib = fs::read(images_path).map_err(|e| LabError::io(images_path, e))?;
    let lb = fs::read(labels_path).map_err(|e| LabError::io(labels_path, e))?;
    let images = parse_images(images_path, &ib)?;
    let labels = parse_labels(labels_path, &lb)?;
    if labels.len() != images.count {
        return Err(LabError::Format {
            path: labels_path.to_path_buf(),
            offset: 4,
            message: format!("{} labels for {} images", labels.len(), images.count),
        });
    }
    if images.count == 0 {
        return Err(LabError::Format {
            path: images_path.to_path_buf(),
            offset: 4,
            message: "no images".into(),
        });
    }
    let dims = images.rows * images.cols;
    let data = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let features = Matrix::from_vec(images.count, dims, data)?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    Ok(Dataset::with_random_split(features, labels, num_classes, split_seed)?)
}

/// [`load_idx_with_split`] with split seed 0.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    load_idx_with_split(images_path, labels_path, 0)
}

/// Dataset manifest document. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub images: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub split_seed: u64,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }

    pub fn open(path: &Path) -> Result<Dataset> {
        let (m, base) = Self::load(path)?;
        load_idx_with_split(&base.join(&m.images), &base.join(&m.labels), m.split_seed)
    }
}
