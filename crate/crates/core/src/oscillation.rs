//! Oscillation detection and weight-clustering metrics.
//!
//! A weight oscillates at observation `t` when its quantized position
//! changes and the direction of that change is opposite to the direction
//! of its previous change. Positions are integer bin indices by default, so
//! scale drift alone never registers as a change. [`TrackingMode::Value`]
//! compares the real quantized values instead.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::quantizer::{self, QuantSpec};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TrackingMode {
    #[default]
    BinIndex,
    Value,
}

/// Per-weight oscillation state.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillationTracker {
    last: Vec<f64>,
    /// -1, +1, or 0 before the first change.
    direction: Vec<i8>,
    counts: Vec<u32>,
    samples: u32,
}

impl OscillationTracker {
    pub fn new() -> Self {
        Self {
            last: Vec::new(),
            direction: Vec::new(),
            counts: Vec::new(),
            samples: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn samples(&self) -> u32 {
        self.samples
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Last observed position of each weight.
    pub fn positions(&self) -> &[f64] {
        &self.last
    }

    /// Records one observation of integer bin indices.
    pub fn observe(&mut self, bin_indices: &[i64]) -> Result<()> {
        self.observe_iter(bin_indices.len(), bin_indices.iter().map(|&k| k as f64))
    }

    /// Records one observation of quantized values (value-based mode).
    pub fn observe_values(&mut self, values: &[f64]) -> Result<()> {
        self.observe_iter(values.len(), values.iter().copied())
    }

    fn observe_iter(&mut self, len: usize, positions: impl Iterator<Item = f64>) -> Result<()> {
        if self.samples == 0 {
            self.last = positions.collect();
            self.direction = vec![0; len];
            self.counts = vec![0; len];
            self.samples = 1;
            return Ok(());
        }
        if len != self.last.len() {
            return Err(Error::Contract(alloc::format!(
                "tracker holds {} weights but observation has {len}",
                self.last.len()
            )));
        }
        for (i, p) in positions.enumerate() {
            let prev = self.last[i];
            if p != prev {
                let dir: i8 = if p > prev { 1 } else { -1 };
                if self.direction[i] != 0 && dir != self.direction[i] {
                    self.counts[i] += 1;
                }
                self.direction[i] = dir;
                self.last[i] = p;
            }
        }
        self.samples += 1;
        Ok(())
    }

    /// Observes the weights of one tensor quantized at `scale`.
    pub fn observe_weights(&mut self, w: &Matrix, scale: f64, mode: TrackingMode) -> Result<()> {
        let view = quantizer::quantize_with_scale(w, scale)?;
        match mode {
            TrackingMode::BinIndex => self.observe(&view.bin_indices),
            TrackingMode::Value => self.observe_values(view.values.data()),
        }
    }

    /// Share of weights with at least one oscillation.
    pub fn fraction_oscillating(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.iter().filter(|&&c| c > 0).count() as f64 / self.counts.len() as f64
    }
}

impl Default for OscillationTracker {
    fn default() -> Self {
        Self::new()
    }
}

/// Histogram of per-weight oscillation counts, restricted to counts > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillationHistogram {
    /// count value -> number of weights with that count.
    pub buckets: BTreeMap<u32, usize>,
    pub fraction_oscillating: f64,
    pub total_weights: usize,
}

impl OscillationHistogram {
    /// `(count, share of all weights)` pairs.
    pub fn masses(&self) -> Vec<(u32, f64)> {
        let n = self.total_weights.max(1) as f64;
        self.buckets.iter().map(|(&k, &v)| (k, v as f64 / n)).collect()
    }
}

pub fn oscillation_histogram(tracker: &OscillationTracker) -> Result<OscillationHistogram> {
    if tracker.samples() < 2 {
        return Err(Error::Degenerate("oscillation histogram needs at least two observations"));
    }
    Ok(histogram_of_counts(tracker.counts()))
}

/// Histogram over an arbitrary count sample.
pub fn histogram_of_counts(counts: &[u32]) -> OscillationHistogram {
    let mut buckets = BTreeMap::new();
    for &c in counts.iter().filter(|&&c| c > 0) {
        *buckets.entry(c).or_insert(0) += 1;
    }
    let oscillating: usize = buckets.values().sum();
    OscillationHistogram {
        buckets,
        fraction_oscillating: if counts.is_empty() {
            0.0
        } else {
            oscillating as f64 / counts.len() as f64
        },
        total_weights: counts.len(),
    }
}

pub const CLUSTER_BUCKETS: usize = 64;

/// Position-within-bin histogram and near-threshold share.
///
/// Bucket position `u = w/s - round(w/s) + 1/2`: 0 and 1 are the lower and
/// upper thresholds, 1/2 is the quantization level.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub scale: f64,
    pub histogram: [f64; CLUSTER_BUCKETS],
    /// Share of weights with `min(d_low, d_up) < s / 10`.
    pub near_threshold_fraction: f64,
}

pub fn cluster_stats(weights: &Matrix, spec: QuantSpec) -> Result<ClusterStats> {
    let scale = quantizer::scale_factor(weights, spec)?;
    cluster_stats_with_scale(weights, scale)
}

pub fn cluster_stats_with_scale(weights: &Matrix, scale: f64) -> Result<ClusterStats> {
    if weights.is_empty() {
        return Err(Error::Empty("cluster_stats weights"));
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("scale must be positive, got {scale}")));
    }
    let mut counts = [0usize; CLUSTER_BUCKETS];
    let mut near = 0usize;
    for &w in weights.data() {
        let r = w / scale;
        let u = r - quantizer::round_half_even(r) + 0.5;
        let b = ((u * CLUSTER_BUCKETS as f64) as usize).min(CLUSTER_BUCKETS - 1);
        counts[b] += 1;
        let (lo, up) = quantizer::threshold_distances(w, scale);
        if lo.min(up) < scale / 10.0 {
            near += 1;
        }
    }
    let n = weights.len() as f64;
    let mut histogram = [0.0; CLUSTER_BUCKETS];
    for (h, &c) in histogram.iter_mut().zip(&counts) {
        *h = c as f64 / n;
    }
    Ok(ClusterStats {
        scale,
        histogram,
        near_threshold_fraction: near as f64 / n,
    })
}
