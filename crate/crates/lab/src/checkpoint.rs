//! Binary model checkpoints.
//!
//! Layout: magic `OSCL`, `u32` format version, `u32` layer count, then per
//! layer `u32` in/out dims, `u8` activation tag (0 identity, 1 relu), `u8`
//! quantized flag, row-major `f64` weights, then biases. All integers and
//! floats are little-endian.

use std::fs;
use std::path::Path;

use osc_core::network::{Activation, LayerSpec, Model};
use osc_core::Matrix;

use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 4] = b"OSCL";
pub const FORMAT_VERSION: u32 = 1;

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
    }
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for ((spec, w), b) in model.layers().iter().zip(model.weights()).zip(model.biases()) {
        out.extend_from_slice(&(spec.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(spec.out_dim as u32).to_le_bytes());
        out.push(activation_tag(spec.activation));
        out.push(spec.quantized as u8);
        for v in w.data().iter().chain(b.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> LabError {
        LabError::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err(self.bytes.len(), format!("file ends inside {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Model> {
    let mut c = Cursor { path, bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(c.err(0, "bad magic, expected \"OSCL\""));
    }
    let version = c.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(c.err(4, format!("unsupported format version {version}")));
    }
    let n = c.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut biases = Vec::with_capacity(n);
    for i in 0..n {
        let in_dim = c.u32("layer dims")? as usize;
        let out_dim = c.u32("layer dims")? as usize;
        let tag_at = c.pos;
        let activation = match c.u8("activation tag")? {
            0 => Activation::Identity,
            1 => Activation::Relu,
            t => return Err(c.err(tag_at, format!("layer {i}: unknown activation tag {t}"))),
        };
        let quantized = match c.u8("quantized flag")? {
            0 => false,
            1 => true,
            f => return Err(c.err(tag_at + 1, format!("layer {i}: quantized flag {f}"))),
        };
        let w = c.f64s(in_dim * out_dim, "weights")?;
        let b = c.f64s(out_dim, "biases")?;
        layers.push(LayerSpec {
            in_dim,
            out_dim,
            activation,
            quantized,
        });
        weights.push(Matrix::from_vec(in_dim, out_dim, w)?);
        biases.push(Matrix::from_vec(1, out_dim, b)?);
    }
    if c.pos != bytes.len() {
        return Err(c.err(c.pos, "trailing bytes after last layer"));
    }
    Ok(Model::new(layers, weights, biases)?)
}

pub fn save(path: &Path, model: &Model) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| LabError::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    decode(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let m = Model::mlp(5, 7, 2, 3, Activation::Relu, 11).unwrap();
        let back = decode(Path::new("m"), &encode(&m)).unwrap();
        assert_eq!(back.layers(), m.layers());
        assert_eq!(back.weights(), m.weights());
        assert_eq!(back.biases(), m.biases());
    }

    #[test]
    fn header_layout() {
        let m = Model::mlp(2, 3, 1, 2, Activation::Relu, 0).unwrap();
        let bytes = encode(&m);
        assert_eq!(&bytes[..4], b"OSCL");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(&bytes[12..20], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes[20], 1);
        assert_eq!(bytes[21], 1);
        assert_eq!(&bytes[22..30], &m.weights()[0].data()[0].to_le_bytes());
    }

    #[test]
    fn corrupt_inputs() {
        let m = Model::mlp(2, 3, 1, 2, Activation::Relu, 0).unwrap();
        let bytes = encode(&m);
        let p = Path::new("c");
        assert!(matches!(decode(p, &bytes[..30]), Err(LabError::Format { offset: 30, .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(p, &bad), Err(LabError::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[20] = 7;
        assert!(matches!(decode(p, &bad), Err(LabError::Format { offset: 20, .. })));
        let mut bad = bytes;
        bad.push(0);
        assert!(decode(p, &bad).is_err());
    }
}
