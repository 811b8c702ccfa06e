//! Single runs, seed sweeps and their aggregation.

use std::fs;
use std::path::{Path, PathBuf};

use osc_core::datasets::{gen_blobs, Dataset, Split};
use osc_core::network::{Model, Precision};
use osc_core::oscillation::{cluster_stats_with_scale, OscillationTracker, CLUSTER_BUCKETS};
use osc_core::quantizer::{bin_index, QuantSpec};
use osc_core::stats::{mean, sample_std, welch_t_counts};
use osc_core::tensor::PRNG_DESCRIPTION;
use osc_core::train::{self, accuracy, cross_bit_eval, EpochMetrics, EvalWidth, TrainObserver};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{DatasetConfig, ExperimentConfig, SweepConfig, SCHEMA_VERSION};
use crate::error::{LabError, Result};
use crate::idx::DatasetManifest;
use crate::record::*;

pub fn load_dataset(cfg: &DatasetConfig, base_dir: &Path) -> Result<Dataset> {
    match cfg {
        DatasetConfig::Blobs {
            seed,
            classes,
            dims,
            per_class,
            spread,
        } => Ok(gen_blobs(*seed, *classes, *dims, *per_class, *spread)?),
        DatasetConfig::Idx { manifest } => DatasetManifest::open(&base_dir.join(manifest)),
    }
}

pub fn build_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<Model> {
    Ok(Model::mlp(
        data.dims(),
        cfg.model.hidden,
        cfg.model.depth,
        data.num_classes,
        cfg.model.activation,
        cfg.seed,
    )?)
}

/// Writes the oscillation log while training runs.
struct LogObserver {
    writer: Option<OscillationLogWriter>,
    layers: Vec<usize>,
    every: usize,
    spec: QuantSpec,
    frozen: Option<Vec<Option<f64>>>,
    /// Rows of the latest epoch when it was skipped by `every`, so the
    /// final epoch can still be written.
    pending: Option<(usize, Vec<(usize, Vec<i64>, Vec<u32>)>)>,
    error: Option<LabError>,
}

impl LogObserver {
    fn snapshot(&self, model: &Model, counts: impl Fn(usize) -> Option<Vec<u32>>) -> Vec<(usize, Vec<i64>, Vec<u32>)> {
        let scales = match &self.frozen {
            Some(f) => f.clone(),
            None => model.layer_scales(self.spec).unwrap_or_default(),
        };
        let mut out = Vec::new();
        for &layer in &self.layers {
            let (Some(c), Some(Some(s))) = (counts(layer), scales.get(layer)) else {
                continue;
            };
            let bins = model.weights()[layer].data().iter().map(|&w| bin_index(w, *s)).collect();
            out.push((layer, bins, c));
        }
        out
    }

    fn write(&mut self, epoch: usize, rows: &[(usize, Vec<i64>, Vec<u32>)]) {
        if self.error.is_some() {
            return;
        }
        if let Some(w) = self.writer.as_mut() {
            for (layer, bins, counts) in rows {
                if let Err(e) = w.write_layer(epoch, *layer, bins, counts) {
                    self.error = Some(e);
                    return;
                }
            }
        }
    }

    fn finish(mut self) -> Result<()> {
        if let Some((epoch, rows)) = self.pending.take() {
            self.write(epoch, &rows);
        }
        if let Some(e) = self.error {
            return Err(e);
        }
        match self.writer {
            Some(w) => w.finish(),
            None => Ok(()),
        }
    }
}

impl TrainObserver for LogObserver {
    fn on_epoch(&mut self, metrics: &EpochMetrics, model: &Model, trackers: &[Option<OscillationTracker>]) {
        if self.writer.is_none() {
            return;
        }
        let rows = self.snapshot(model, |l| trackers.get(l)?.as_ref().map(|t| t.counts().to_vec()));
        if metrics.epoch % self.every == 0 {
            self.pending = None;
            self.write(metrics.epoch, &rows);
        } else {
            self.pending = Some((metrics.epoch, rows));
        }
    }
}

/// A completed run: its record plus the final per-weight oscillation
/// counts of every tracked layer.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub final_counts: Vec<Option<Vec<u32>>>,
    pub dir: PathBuf,
}

/// Trains one configuration, evaluates it at every configured width and
/// persists the record, checkpoint and CSV tables under `out_dir`.
///
/// `base_dir` resolves relative dataset paths.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path, out_dir: &Path) -> Result<RunOutput> {
    let data = load_dataset(&cfg.dataset, base_dir)?;
    run_on(cfg, &data, out_dir)
}

pub fn run_on(cfg: &ExperimentConfig, data: &Dataset, out_dir: &Path) -> Result<RunOutput> {
    fs::create_dir_all(out_dir).map_err(|e| LabError::io(out_dir, e))?;
    let tc = cfg.train_config();
    let model = build_model(cfg, data)?;

    let tracking = tc.effective_tracking_spec();
    let target = tc.regime.target_spec();
    let frozen = match (tc.scale_frozen, tracking) {
        (true, Some(spec)) if Some(spec) == target => Some(model.layer_scales(spec)?),
        _ => None,
    };
    let log_path = out_dir.join(OSCILLATION_LOG_FILE);
    let logging = tracking.is_some() && !cfg.oscillation_log_layers.is_empty();
    let mut observer = LogObserver {
        writer: if logging {
            Some(OscillationLogWriter::create(&log_path)?)
        } else {
            None
        },
        layers: cfg.oscillation_log_layers.clone(),
        every: cfg.oscillation_log_every,
        spec: tracking.unwrap_or(QuantSpec::ternary()),
        frozen,
        pending: None,
        error: None,
    };
    if logging {
        let rows = observer.snapshot(&model, |l| {
            let spec = model.layers().get(l)?;
            spec.quantized.then(|| vec![0; spec.in_dim * spec.out_dim])
        });
        observer.write(0, &rows);
    }

    let outcome = train::train_with(model, data, &tc, &mut observer)?;
    observer.finish()?;

    let test = data.subset(Split::Test);
    let widths = cfg.eval_widths();
    let cross = cross_bit_eval(&outcome.best_model, &widths, &test)?;
    let test_acc_fp = accuracy(&outcome.best_model, &test, &Precision::Full)?;
    let test_acc_target = match target {
        Some(spec) => Some(accuracy(
            &outcome.best_model,
            &test,
            &Precision::FakeQuant {
                spec,
                fixed_scales: outcome
                    .frozen_scales
                    .as_ref()
                    .map(|f| f.iter().map(|s| s.unwrap_or(1.0)).collect()),
            },
        )?),
        None => None,
    };

    let mut oscillation = Vec::new();
    let mut final_counts = Vec::new();
    for (layer, t) in outcome.trackers.iter().enumerate() {
        let (Some(t), Some(spec)) = (t, tracking) else {
            final_counts.push(None);
            continue;
        };
        let w = &outcome.final_model.weights()[layer];
        let scale = match &outcome.frozen_scales {
            Some(f) if Some(spec) == target => f[layer].unwrap_or(1.0),
            _ => osc_core::quantizer::scale_factor(w, spec)?,
        };
        let cl = cluster_stats_with_scale(w, scale)?;
        let counts = t.counts();
        oscillation.push(LayerOscillation {
            layer,
            fraction_oscillating: t.fraction_oscillating(),
            mean_count: counts.iter().map(|&c| c as f64).sum::<f64>() / counts.len().max(1) as f64,
            near_threshold_fraction: cl.near_threshold_fraction,
            scale,
        });
        if layer == cfg.oscillation_log_layers.first().copied().unwrap_or(0) {
            let hist: Vec<HistogramRow> = osc_core::oscillation::histogram_of_counts(counts)
                .masses()
                .into_iter()
                .map(|(b, m)| HistogramRow {
                    bucket: b as f64,
                    mass: m,
                })
                .collect();
            write_csv(&out_dir.join(OSC_HISTOGRAM_FILE), &hist)?;
            let cluster: Vec<HistogramRow> = (0..CLUSTER_BUCKETS)
                .map(|i| HistogramRow {
                    bucket: (i as f64 + 0.5) / CLUSTER_BUCKETS as f64,
                    mass: cl.histogram[i],
                })
                .collect();
            write_csv(&out_dir.join(CLUSTER_HISTOGRAM_FILE), &cluster)?;
        }
        final_counts.push(Some(counts.to_vec()));
    }

    checkpoint::save(&out_dir.join(CHECKPOINT_FILE), &outcome.best_model)?;

    let mut epochs = EpochSeries::default();
    for e in &outcome.epochs {
        epochs.epoch.push(e.epoch);
        epochs.train_loss.push(e.train_loss);
        epochs.reg_loss.push(e.reg_loss);
        epochs.val_acc_fp.push(e.val_acc_fp);
        epochs.val_acc_target.push(e.val_acc_target);
        epochs.scales.push(e.scales.clone());
    }
    let epoch_rows: Vec<EpochRow> = outcome
        .epochs
        .iter()
        .map(|e| EpochRow {
            epoch: e.epoch,
            train_loss: e.train_loss,
            reg_loss: e.reg_loss,
            val_acc_fp: e.val_acc_fp,
            val_acc_target: e.val_acc_target,
        })
        .collect();
    write_csv(&out_dir.join(EPOCHS_FILE), &epoch_rows)?;

    let cross_bit: Vec<CrossBitCell> = cross
        .iter()
        .map(|c| CrossBitCell {
            eval_width: c.width.label(),
            accuracy: c.accuracy,
        })
        .collect();
    let metric_rows: Vec<MetricRow> = cross_bit
        .iter()
        .map(|c| MetricRow {
            config_id: cfg.id.clone(),
            seed: cfg.seed,
            eval_width: c.eval_width.clone(),
            accuracy: c.accuracy,
        })
        .collect();
    write_csv(&out_dir.join(METRICS_FILE), &metric_rows)?;

    let record = RunRecord {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        prng: PRNG_DESCRIPTION.to_string(),
        activation_note: ACTIVATION_NOTE.to_string(),
        epochs,
        best_epoch: outcome.best_epoch,
        best_metric: outcome.best_metric,
        test_acc_fp,
        test_acc_target,
        tracking_width: tracking.map(|s| s.label()),
        oscillation,
        cross_bit,
        checkpoint: PathBuf::from(CHECKPOINT_FILE),
        oscillation_log: logging.then(|| PathBuf::from(OSCILLATION_LOG_FILE)),
    };
    record.save(&out_dir.join(RECORD_FILE))?;
    Ok(RunOutput {
        record,
        final_counts,
        dir: out_dir.to_path_buf(),
    })
}

/// Evaluates a saved checkpoint on the test split at each width.
pub fn crossbit_checkpoint(path: &Path, data: &Dataset, widths: &[EvalWidth]) -> Result<Vec<CrossBitCell>> {
    let model = checkpoint::load(path)?;
    let test = data.subset(Split::Test);
    Ok(cross_bit_eval(&model, widths, &test)?
        .into_iter()
        .map(|c| CrossBitCell {
            eval_width: c.width.label(),
            accuracy: c.accuracy,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; absent with fewer than two runs.
    pub std: Option<f64>,
    pub n: usize,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            std: (xs.len() >= 2).then(|| sample_std(xs)),
            n: xs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSummary {
    pub eval_width: String,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config_id: String,
    pub seeds: Vec<u64>,
    pub cross_bit: Vec<WidthSummary>,
    pub test_acc_target: Option<Summary>,
    /// Over seeds, for the comparison layer.
    pub fraction_oscillating: Option<Summary>,
    pub near_threshold_fraction: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub layer: usize,
    /// Per-weight counts pooled over seeds.
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub configs: Vec<ConfigSummary>,
    pub comparisons: Vec<Comparison>,
}

impl SweepReport {
    pub fn config(&self, id: &str) -> Option<&ConfigSummary> {
        self.configs.iter().find(|c| c.config_id == id)
    }

    pub fn comparison(&self, a: &str, b: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.a == a && c.b == b)
    }
}

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const COMPARISONS_FILE: &str = "comparisons.csv";

pub fn run_dir(out_dir: &Path, config_id: &str, seed: u64) -> PathBuf {
    out_dir.join(config_id).join(format!("seed-{seed}"))
}

/// Runs every config × seed (in parallel when `threads` allows), then
/// aggregates with [`report`].
pub fn sweep(sweep: &SweepConfig, base_dir: &Path, out_dir: &Path) -> Result<SweepReport> {
    let jobs: Vec<ExperimentConfig> = sweep
        .configs
        .iter()
        .flat_map(|c| {
            sweep.seeds.iter().map(move |&s| {
                let mut c = c.clone();
                c.seed = s;
                c
            })
        })
        .collect();
    let mut data_cache: Vec<(DatasetConfig, Dataset)> = Vec::new();
    for j in &jobs {
        if !data_cache.iter().any(|(d, _)| d == &j.dataset) {
            data_cache.push((j.dataset.clone(), load_dataset(&j.dataset, base_dir)?));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sweep.threads)
        .build()
        .map_err(|e| LabError::Config(vec![format!("threads: {e}")]))?;
    let results: Vec<Result<()>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let data = &data_cache.iter().find(|(d, _)| d == &job.dataset).expect("cached").1;
                run_on(job, data, &run_dir(out_dir, &job.id, job.seed)).map(|_| ())
            })
            .collect()
    });
    for r in results {
        r?;
    }
    report(sweep, out_dir)
}

/// Aggregates the run directories of a sweep. Fails listing every missing
/// run when any config × seed record is absent.
pub fn report(sweep: &SweepConfig, out_dir: &Path) -> Result<SweepReport> {
    let mut missing = Vec::new();
    let mut records: Vec<(String, u64, RunRecord)> = Vec::new();
    for c in &sweep.configs {
        for &seed in &sweep.seeds {
            let path = run_dir(out_dir, &c.id, seed).join(RECORD_FILE);
            if !path.exists() {
                missing.push(format!("{}/seed-{seed}", c.id));
                continue;
            }
            records.push((c.id.clone(), seed, RunRecord::load(&path)?));
        }
    }
    if !missing.is_empty() {
        return Err(LabError::MissingRuns(missing));
    }

    let mut metric_rows = Vec::new();
    let mut configs = Vec::new();
    for c in &sweep.configs {
        let runs: Vec<&RunRecord> = records.iter().filter(|(id, _, _)| id == &c.id).map(|(_, _, r)| r).collect();
        let mut cross_bit = Vec::new();
        for w in &c.eval_widths {
            let label = w.label();
            let xs: Vec<f64> = runs.iter().filter_map(|r| r.accuracy_at(&label)).collect();
            cross_bit.push(WidthSummary {
                eval_width: label,
                summary: Summary::of(&xs),
            });
        }
        for (r, &seed) in runs.iter().zip(&sweep.seeds) {
            for cell in &r.cross_bit {
                metric_rows.push(MetricRow {
                    config_id: c.id.clone(),
                    seed,
                    eval_width: cell.eval_width.clone(),
                    accuracy: cell.accuracy,
                });
            }
        }
        let target: Vec<f64> = runs.iter().filter_map(|r| r.test_acc_target).collect();
        let layer_stat = |f: fn(&LayerOscillation) -> f64| {
            let xs: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.oscillation.iter().find(|o| o.layer == sweep.compare_layer).map(f))
                .collect();
            (!xs.is_empty()).then(|| Summary::of(&xs))
        };
        configs.push(ConfigSummary {
            config_id: c.id.clone(),
            seeds: sweep.seeds.clone(),
            cross_bit,
            test_acc_target: (!target.is_empty()).then(|| Summary::of(&target)),
            fraction_oscillating: layer_stat(|o| o.fraction_oscillating),
            near_threshold_fraction: layer_stat(|o| o.near_threshold_fraction),
        });
    }

    let mut comparisons = Vec::new();
    for (a, b) in &sweep.compare {
        let pooled = |id: &str| -> Result<Vec<u32>> {
            let mut out = Vec::new();
            for &seed in &sweep.seeds {
                let dir = run_dir(out_dir, id, seed);
                out.extend(final_counts(&dir.join(OSCILLATION_LOG_FILE), sweep.compare_layer)?);
            }
            Ok(out)
        };
        let (ca, cb) = (pooled(a)?, pooled(b)?);
        let m = |v: &[u32]| v.iter().map(|&c| c as f64).sum::<f64>() / v.len().max(1) as f64;
        let mut cmp = Comparison {
            a: a.clone(),
            b: b.clone(),
            layer: sweep.compare_layer,
            n_a: ca.len(),
            n_b: cb.len(),
            mean_a: m(&ca),
            mean_b: m(&cb),
            t: None,
            df: None,
            p: None,
            error: None,
        };
        match welch_t_counts(&ca, &cb) {
            Ok(w) => {
                cmp.t = Some(w.t);
                cmp.df = Some(w.df);
                cmp.p = Some(w.p);
            }
            Err(e) => cmp.error = Some(e.to_string()),
        }
        comparisons.push(cmp);
    }

    let report = SweepReport {
        schema_version: SCHEMA_VERSION,
        configs,
        comparisons,
    };
    write_report(&report, &metric_rows, out_dir)?;
    Ok(report)
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    config_id: &'a str,
    eval_width: &'a str,
    mean: f64,
    std: Option<f64>,
    n: usize,
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    a: &'a str,
    b: &'a str,
    layer: usize,
    t: Option<f64>,
    df: Option<f64>,
    p: Option<f64>,
}

fn write_report(report: &SweepReport, metrics: &[MetricRow], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| LabError::io(out_dir, e))?;
    let path = out_dir.join(REPORT_FILE);
    fs::write(&path, serde_json::to_string_pretty(report)? + "\n").map_err(|e| LabError::io(&path, e))?;
    write_csv(&out_dir.join(METRICS_FILE), metrics)?;
    let rows: Vec<SummaryRow> = report
        .configs
        .iter()
        .flat_map(|c| {
            c.cross_bit.iter().map(move |w| SummaryRow {
                config_id: &c.config_id,
                eval_width: &w.eval_width,
                mean: w.summary.mean,
                std: w.summary.std,
                n: w.summary.n,
            })
        })
        .collect();
    write_csv(&out_dir.join(SUMMARY_FILE), &rows)?;
    let rows: Vec<ComparisonRow> = report
        .comparisons
        .iter()
        .map(|c| ComparisonRow {
            a: &c.a,
            b: &c.b,
            layer: c.layer,
            t: c.t,
            df: c.df,
            p: c.p,
        })
        .collect();
    write_csv(&out_dir.join(COMPARISONS_FILE), &rows)
}
