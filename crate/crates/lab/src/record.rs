//! Run records and the CSV tables the harness writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};

pub const RECORD_FILE: &str = "record.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const CHECKPOINT_FILE: &str = "model.oscl";
pub const OSCILLATION_LOG_FILE: &str = "oscillations.csv";
pub const OSC_HISTOGRAM_FILE: &str = "oscillation_histogram.csv";
pub const CLUSTER_HISTOGRAM_FILE: &str = "cluster_histogram.csv";

pub const ACTIVATION_NOTE: &str =
    "hidden layers use the configured activation (ReLU by default); the output layer is linear; weights only are quantized";

/// Per-epoch metrics stored column-wise.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochSeries {
    pub epoch: Vec<usize>,
    pub train_loss: Vec<f64>,
    pub reg_loss: Vec<f64>,
    pub val_acc_fp: Vec<f64>,
    pub val_acc_target: Vec<Option<f64>>,
    /// Target-width scale of each quantized layer, per epoch.
    pub scales: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossBitCell {
    pub eval_width: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOscillation {
    pub layer: usize,
    pub fraction_oscillating: f64,
    pub mean_count: f64,
    pub near_threshold_fraction: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub prng: String,
    pub activation_note: String,
    pub epochs: EpochSeries,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_metric: f64,
    pub test_acc_fp: f64,
    pub test_acc_target: Option<f64>,
    /// Width whose bins the oscillation statistics follow, if any.
    pub tracking_width: Option<String>,
    /// Per tracked layer: oscillation counts over the whole run and clustering
    /// of the final weights.
    pub oscillation: Vec<LayerOscillation>,
    pub cross_bit: Vec<CrossBitCell>,
    /// Paths relative to the record's directory.
    pub checkpoint: PathBuf,
    pub oscillation_log: Option<PathBuf>,
}

impl RunRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| LabError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn accuracy_at(&self, label: &str) -> Option<f64> {
        self.cross_bit.iter().find(|c| c.eval_width == label).map(|c| c.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub config_id: String,
    pub seed: u64,
    pub eval_width: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub reg_loss: f64,
    pub val_acc_fp: f64,
    pub val_acc_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationRow {
    pub epoch: usize,
    pub layer: usize,
    pub weight_index: usize,
    pub bin_index: i64,
    pub cumulative_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bucket: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub w: f64,
    pub q_w: f64,
    pub grad_fp: f64,
    pub grad_delta: f64,
    pub oscillation_flag: u8,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(LabError::from)).collect()
}

/// Streaming writer for the oscillation log, which can run to millions of
/// rows.
pub struct OscillationLogWriter {
    path: PathBuf,
    inner: csv::Writer<std::io::BufWriter<fs::File>>,
}

impl OscillationLogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(std::io::BufWriter::new(file));
        inner.write_record(["epoch", "layer", "weight_index", "bin_index", "cumulative_count"])?;
        Ok(Self {
            path: path.to_path_buf(),
            inner,
        })
    }

    pub fn write_layer(&mut self, epoch: usize, layer: usize, bins: &[i64], counts: &[u32]) -> Result<()> {
        for (i, (b, c)) in bins.iter().zip(counts).enumerate() {
            self.inner.serialize((epoch, layer, i, *b, *c))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| LabError::io(&self.path, e))?;
        let mut file = self
            .inner
            .into_inner()
            .map_err(|e| LabError::io(&self.path, e.into_error()))?;
        file.flush().map_err(|e| LabError::io(&self.path, e))
    }
}

/// Final cumulative count of every weight of `layer` in an oscillation log,
/// ordered by weight index.
pub fn final_counts(path: &Path, layer: usize) -> Result<Vec<u32>> {
    let rows: Vec<OscillationRow> = read_csv(path)?;
    let last = rows
        .iter()
        .filter(|r| r.layer == layer)
        .map(|r| r.epoch)
        .max()
        .ok_or_else(|| LabError::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("no rows for layer {layer}"),
        })?;
    let mut out: Vec<(usize, u32)> = rows
        .into_iter()
        .filter(|r| r.layer == layer && r.epoch == last)
        .map(|r| (r.weight_index, r.cumulative_count))
        .collect();
    out.sort_unstable();
    Ok(out.into_iter().map(|(_, c)| c).collect())
}
