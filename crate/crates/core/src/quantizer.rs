//! Uniform symmetric per-tensor weight quantizer.
//!
//! `q(w) = s · round(w / s)` with `s = max|w| / (2^(b-1) - 1)`. The scale
//! always covers the tensor's range, so no clamping is applied. Rounding is
//! round-half-to-even.

use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Scale used for an all-zero tensor, where the max-abs rule would give 0.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Quantizer width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BitWidth {
    /// Levels {-s, 0, s}; arithmetically the same as `Bits(2)`.
    Ternary,
    Bits(u32),
}

/// Bit-width descriptor. The rounding rule is fixed to half-to-even.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantSpec {
    width: BitWidth,
}

impl QuantSpec {
    pub const fn ternary() -> Self {
        Self {
            width: BitWidth::Ternary,
        }
    }

    /// `b`-bit quantizer, `2 <= b <= 32`.
    pub fn bits(b: u32) -> Result<Self> {
        if !(2..=32).contains(&b) {
            return Err(Error::InvalidArgument(alloc::format!(
                "bit width must be in 2..=32, got {b}"
            )));
        }
        Ok(Self {
            width: BitWidth::Bits(b),
        })
    }

    pub fn width(&self) -> BitWidth {
        self.width
    }

    /// Effective bit count (ternary counts as 2).
    pub fn bit_count(&self) -> u32 {
        match self.width {
            BitWidth::Ternary => 2,
            BitWidth::Bits(b) => b,
        }
    }

    /// Number of positive levels, `2^(b-1) - 1`.
    pub fn level_count(&self) -> u64 {
        (1u64 << (self.bit_count() - 1)) - 1
    }

    /// Short label: `ternary` or e.g. `3bit`.
    pub fn label(&self) -> alloc::string::String {
        alloc::format!("{self}")
    }
}

impl fmt::Display for QuantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.width {
            BitWidth::Ternary => f.write_str("ternary"),
            BitWidth::Bits(b) => write!(f, "{b}bit"),
        }
    }
}

/// Round half to even.
#[inline]
pub fn round_half_even(x: f64) -> f64 {
    libm::rint(x)
}

/// Per-tensor scale factor `max|w| / (2^(b-1) - 1)`, floored at
/// [`SCALE_FLOOR`] for an all-zero tensor.
pub fn scale_factor(w: &Matrix, spec: QuantSpec) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::Empty("scale_factor input"));
    }
    let s = w.max_abs() / spec.level_count() as f64;
    Ok(if s > 0.0 { s } else { SCALE_FLOOR })
}

/// Integer bin index `round(w / s)`.
#[inline]
pub fn bin_index(w: f64, scale: f64) -> i64 {
    round_half_even(w / scale) as i64
}

/// `q(w)` for a scalar at a given scale.
#[inline]
pub fn quantize_scalar(w: f64, scale: f64) -> f64 {
    scale * round_half_even(w / scale)
}

/// Quantized view of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantView {
    pub scale: f64,
    pub bin_indices: Vec<i64>,
    pub values: Matrix,
}

impl QuantView {
    /// `(d_low, d_up)` for element `i` of the source tensor `w`.
    pub fn threshold_distances(&self, w: &Matrix, i: usize) -> (f64, f64) {
        threshold_distances(w.data()[i], self.scale)
    }
}

/// Quantizes with the tensor's own max-abs scale.
pub fn quantize(w: &Matrix, spec: QuantSpec) -> Result<QuantView> {
    let scale = scale_factor(w, spec)?;
    quantize_with_scale(w, scale)
}

/// Quantizes with an externally fixed scale.
pub fn quantize_with_scale(w: &Matrix, scale: f64) -> Result<QuantView> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!(
            "scale must be positive and finite, got {scale}"
        )));
    }
    let mut bin_indices = Vec::with_capacity(w.len());
    let mut values = Matrix::zeros(w.rows(), w.cols());
    for (v, &x) in values.data_mut().iter_mut().zip(w.data()) {
        let k = round_half_even(x / scale);
        bin_indices.push(k as i64);
        *v = scale * k;
    }
    Ok(QuantView {
        scale,
        bin_indices,
        values,
    })
}

/// Elementwise quantization error `w - q(w)`.
pub fn quant_error(w: &Matrix, spec: QuantSpec) -> Result<Matrix> {
    let view = quantize(w, spec)?;
    w.sub(&view.values)
}

/// Elementwise `w - q(w)` at a fixed scale.
pub fn quant_error_with_scale(w: &Matrix, scale: f64) -> Result<Matrix> {
    let view = quantize_with_scale(w, scale)?;
    w.sub(&view.values)
}

/// Distances from `w` to the lower and upper thresholds of its bin:
/// `d_low = w - (q(w) - s/2)` and `d_up = (q(w) + s/2) - w`.
pub fn threshold_distances(w: f64, scale: f64) -> (f64, f64) {
    let q = quantize_scalar(w, scale);
    let d_low = w - (q - scale / 2.0);
    let d_up = (q + scale / 2.0) - w;
    (d_low, d_up)
}
