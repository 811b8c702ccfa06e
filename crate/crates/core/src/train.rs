//! Training regimes, the oscillation regularizer, PTQ and cross-bit evaluation.
//!
//! * `Baseline` minimises the full-precision loss.
//! * `Qat` runs the forward pass on `q(w)` and applies the STE gradient to
//!   the latent weights.
//! * `OscReg` minimises `L(w) + R_λ(w)` with
//!   `R_λ(w) = λ/2 · Σ_ℓ 1/n_ℓ · Σ_i (q(w_i)² − w_i²)`,
//!   whose STE gradient is `−(λ/n_ℓ)·ε(w_i)`. The data loss stays full
//!   precision.

use alloc::format;
use alloc::vec::Vec;

use crate::datasets::{Dataset, Split, Subset};
use crate::error::{Error, Result};
use crate::network::{self, AdamConfig, AdamState, Gradients, Model, Precision};
use crate::oscillation::{OscillationTracker, TrackingMode};
use crate::quantizer::{self, QuantSpec};
use crate::tensor::{Matrix, Rng};

/// Default regularization strength for MLPs.
pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    Baseline,
    Qat(QuantSpec),
    OscReg { spec: QuantSpec, lambda: f64 },
}

impl Regime {
    /// Width used inside training; `None` for the baseline.
    pub fn target_spec(&self) -> Option<QuantSpec> {
        match self {
            Regime::Baseline => None,
            Regime::Qat(spec) | Regime::OscReg { spec, .. } => Some(*spec),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::Baseline => "baseline",
            Regime::Qat(_) => "qat",
            Regime::OscReg { .. } => "osc_reg",
        }
    }
}

/// When oscillation trackers sample the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Cadence {
    #[default]
    Epoch,
    Step,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Hold every layer's scale at its value for the initial weights.
    pub scale_frozen: bool,
    /// Width whose bins the oscillation trackers follow. Defaults to the
    /// regime's target width; the baseline tracks nothing unless set.
    pub tracking_spec: Option<QuantSpec>,
    pub tracking_mode: TrackingMode,
    pub cadence: Cadence,
}

impl TrainConfig {
    pub fn new(regime: Regime, seed: u64) -> Self {
        Self {
            regime,
            adam: AdamConfig::default(),
            max_epochs: 100,
            early_stop_patience: 10,
            batch_size: 64,
            seed,
            scale_frozen: false,
            tracking_spec: None,
            tracking_mode: TrackingMode::BinIndex,
            cadence: Cadence::Epoch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Regime::OscReg { lambda, .. } = self.regime {
            if !(lambda >= 0.0) || !lambda.is_finite() {
                return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
            }
        }
        if !(self.adam.lr > 0.0) || !self.adam.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {}", self.adam.lr)));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn effective_tracking_spec(&self) -> Option<QuantSpec> {
        self.tracking_spec.or(self.regime.target_spec())
    }
}

/// Scale of each quantized layer: frozen values or the current max-abs scale.
fn current_scales(model: &Model, spec: QuantSpec, frozen: Option<&[Option<f64>]>) -> Result<Vec<Option<f64>>> {
    match frozen {
        Some(f) => Ok(f.to_vec()),
        None => model.layer_scales(spec),
    }
}

fn fixed(scales: &[Option<f64>]) -> Vec<f64> {
    // Unquantized layers ignore their entry.
    scales.iter().map(|s| s.unwrap_or(1.0)).collect()
}

/// `R_λ` at the given per-layer scales (`None` = layer not quantized).
pub fn reg_value_with_scales(model: &Model, scales: &[Option<f64>], lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for (w, s) in model.weights().iter().zip(scales) {
        let Some(s) = *s else { continue };
        let view = quantizer::quantize_with_scale(w, s)?;
        let sum = w
            .data()
            .iter()
            .zip(view.values.data())
            .fold(0.0, |a, (&wi, &qi)| a + (qi * qi - wi * wi));
        total += sum / w.len() as f64;
    }
    Ok(0.5 * lambda * total)
}

/// `R_λ` with each layer's current max-abs scale.
pub fn reg_value(model: &Model, spec: QuantSpec, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    reg_value_with_scales(model, &model.layer_scales(spec)?, lambda)
}

/// STE gradient of `R_λ`: `−(λ/n_ℓ)·ε(w)` per quantized layer, zeros elsewhere.
pub fn reg_grad_with_scales(model: &Model, scales: &[Option<f64>], lambda: f64) -> Result<Vec<Matrix>> {
    model
        .weights()
        .iter()
        .zip(scales)
        .map(|(w, s)| match *s {
            None => Ok(Matrix::zeros(w.rows(), w.cols())),
            Some(s) => {
                let err = quantizer::quant_error_with_scale(w, s)?;
                Ok(err.scale(-lambda / w.len() as f64))
            }
        })
        .collect()
}

pub fn reg_grad(model: &Model, spec: QuantSpec, lambda: f64) -> Result<Vec<Matrix>> {
    check_lambda(lambda)?;
    reg_grad_with_scales(model, &model.layer_scales(spec)?, lambda)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

/// Post-training quantization: each quantized layer's weights replaced by
/// `q(w)` at its own max-abs scale. Biases are kept.
pub fn ptq(model: &Model, spec: QuantSpec) -> Result<Model> {
    let mut out = model.clone();
    for (i, layer) in model.layers().iter().enumerate() {
        if layer.quantized {
            let view = quantizer::quantize(&model.weights()[i], spec)?;
            out.set_weights(i, view.values)?;
        }
    }
    Ok(out)
}

const EVAL_CHUNK: usize = 512;

/// Classification accuracy of `model` on `subset`.
pub fn accuracy(model: &Model, subset: &Subset, precision: &Precision) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::Empty("evaluation subset"));
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..subset.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let x = subset.features.select_rows(chunk);
        let logits = network::predict(model, &x, precision)?;
        for (pred, &i) in logits.argmax_rows().into_iter().zip(chunk) {
            if pred == subset.labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / subset.len() as f64)
}

/// Evaluation width for cross-bit tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalWidth {
    /// Latent weights used directly.
    Fp32,
    Quant(QuantSpec),
}

impl EvalWidth {
    /// The widths of the cross-bit tables: ternary, 3, 4, 8 bit and FP32.
    pub fn defaults() -> Vec<EvalWidth> {
        let mut v = Vec::with_capacity(5);
        v.push(EvalWidth::Quant(QuantSpec::ternary()));
        for b in [3, 4, 8] {
            v.push(EvalWidth::Quant(QuantSpec::bits(b).expect("valid width")));
        }
        v.push(EvalWidth::Fp32);
        v
    }

    pub fn label(&self) -> alloc::string::String {
        match self {
            EvalWidth::Fp32 => "fp32".into(),
            EvalWidth::Quant(s) => s.label(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossBitEntry {
    pub width: EvalWidth,
    pub accuracy: f64,
}

/// Accuracy after PTQ at every width (latent weights for `Fp32`).
pub fn cross_bit_eval(model: &Model, widths: &[EvalWidth], subset: &Subset) -> Result<Vec<CrossBitEntry>> {
    widths
        .iter()
        .map(|&width| {
            let accuracy = match width {
                EvalWidth::Fp32 => accuracy(model, subset, &Precision::Full)?,
                EvalWidth::Quant(spec) => accuracy(&ptq(model, spec)?, subset, &Precision::Full)?,
            };
            Ok(CrossBitEntry { width, accuracy })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean data loss over the epoch's mini-batches.
    pub train_loss: f64,
    /// `R_λ` at the end of the epoch (0 outside `OscReg`).
    pub reg_loss: f64,
    pub val_acc_fp: f64,
    /// Validation accuracy at the target width (`None` for the baseline).
    pub val_acc_target: Option<f64>,
    /// End-of-epoch scale of each quantized layer at the target width.
    pub scales: Vec<f64>,
}

/// Hook invoked after each epoch's tracker update.
pub trait TrainObserver {
    fn on_epoch(&mut self, _metrics: &EpochMetrics, _model: &Model, _trackers: &[Option<OscillationTracker>]) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best epoch by the early-stopping metric.
    pub best_model: Model,
    /// Parameters after the last epoch that ran.
    pub final_model: Model,
    pub epochs: Vec<EpochMetrics>,
    /// 1-based index of the best epoch.
    pub best_epoch: usize,
    pub best_metric: f64,
    /// One tracker per quantized layer when tracking is enabled.
    pub trackers: Vec<Option<OscillationTracker>>,
    pub frozen_scales: Option<Vec<Option<f64>>>,
}

const SHUFFLE_STREAM: u64 = 0x5e_ed01;

fn observe_all(
    trackers: &mut [Option<OscillationTracker>],
    model: &Model,
    spec: QuantSpec,
    frozen: Option<&[Option<f64>]>,
    mode: TrackingMode,
) -> Result<()> {
    let scales = current_scales(model, spec, frozen)?;
    for ((t, w), s) in trackers.iter_mut().zip(model.weights()).zip(&scales) {
        if let (Some(t), Some(s)) = (t.as_mut(), s) {
            t.observe_weights(w, *s, mode)?;
        }
    }
    Ok(())
}

pub fn train(model: Model, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, config, &mut ())
}

/// Mini-batch Adam training with per-epoch validation, early stopping,
/// best-checkpoint restoration and oscillation tracking.
pub fn train_with(
    mut model: Model,
    data: &Dataset,
    config: &TrainConfig,
    observer: &mut impl TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_idx = data.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::Empty("train split"));
    }
    let val = data.subset(Split::Val);
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    if data.dims() != model.input_dim() {
        return Err(Error::Shape {
            op: "train",
            left: data.features.shape(),
            right: (model.input_dim(), model.output_dim()),
        });
    }

    let target = config.regime.target_spec();
    let frozen: Option<Vec<Option<f64>>> = match (config.scale_frozen, target) {
        (true, Some(spec)) => Some(model.layer_scales(spec)?),
        _ => None,
    };
    let target_precision = |frozen: &Option<Vec<Option<f64>>>, spec: QuantSpec| Precision::FakeQuant {
        spec,
        fixed_scales: frozen.as_deref().map(fixed),
    };
    let train_precision = match config.regime {
        Regime::Qat(spec) => target_precision(&frozen, spec),
        _ => Precision::Full,
    };

    let tracking_spec = config.effective_tracking_spec();
    let tracking_frozen = if tracking_spec == target { frozen.as_deref() } else { None };
    let mut trackers: Vec<Option<OscillationTracker>> = model
        .layers()
        .iter()
        .map(|l| (tracking_spec.is_some() && l.quantized).then(OscillationTracker::new))
        .collect();
    if let Some(spec) = tracking_spec {
        observe_all(&mut trackers, &model, spec, tracking_frozen, config.tracking_mode)?;
    }

    let mut adam = AdamState::new(&model, config.adam);
    let mut rng = Rng::stream(config.seed, SHUFFLE_STREAM);
    let mut order = train_idx;
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let x = data.features.select_rows(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let (logits, cache) = network::forward(&model, &x, &train_precision)?;
            let (loss, grad_logits) = network::loss_softmax_ce(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss at epoch {epoch}, batch {b}"),
                });
            }
            let mut grads = network::backward(&model, &cache, &grad_logits)?;
            if let Regime::OscReg { spec, lambda } = config.regime {
                let scales = current_scales(&model, spec, frozen.as_deref())?;
                let reg = reg_grad_with_scales(&model, &scales, lambda)?;
                for (g, r) in grads.weights.iter_mut().zip(&reg) {
                    g.add_scaled_in_place(r, 1.0)?;
                }
            }
            if !grads.all_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradients at epoch {epoch}, batch {b}"),
                });
            }
            network::adam_step(&mut model, &grads, &mut adam)?;
            if config.cadence == Cadence::Step {
                if let Some(spec) = tracking_spec {
                    observe_all(&mut trackers, &model, spec, tracking_frozen, config.tracking_mode)?;
                }
            }
            loss_sum += loss;
            batches += 1;
        }

        if config.cadence == Cadence::Epoch {
            if let Some(spec) = tracking_spec {
                observe_all(&mut trackers, &model, spec, tracking_frozen, config.tracking_mode)?;
            }
        }

        let val_acc_fp = accuracy(&model, &val, &Precision::Full)?;
        let (val_acc_target, scales, reg_loss) = match target {
            Some(spec) => {
                let acc = accuracy(&model, &val, &target_precision(&frozen, spec))?;
                let scales = current_scales(&model, spec, frozen.as_deref())?;
                let reg = match config.regime {
                    Regime::OscReg { lambda, .. } => reg_value_with_scales(&model, &scales, lambda)?,
                    _ => 0.0,
                };
                (Some(acc), scales.into_iter().flatten().collect(), reg)
            }
            None => (None, Vec::new(), 0.0),
        };
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / batches as f64,
            reg_loss,
            val_acc_fp,
            val_acc_target,
            scales,
        };
        observer.on_epoch(&metrics, &model, &trackers);
        let score = val_acc_target.unwrap_or(val_acc_fp);
        epochs.push(metrics);

        let improved = best.as_ref().map_or(true, |(b, _, _)| score > *b);
        if improved {
            best = Some((score, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if config.early_stop_patience > 0 && since_best >= config.early_stop_patience {
                break;
            }
        }
    }

    let (best_metric, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best_model,
        final_model: model,
        epochs,
        best_epoch,
        best_metric,
        trackers,
        frozen_scales: frozen,
    })
}

/// Sum of two gradient sets, used when composing loss and regularizer.
pub fn add_gradients(a: &Gradients, reg: &[Matrix]) -> Result<Gradients> {
    let mut out = a.clone();
    for (g, r) in out.weights.iter_mut().zip(reg) {
        g.add_scaled_in_place(r, 1.0)?;
    }
    Ok(out)
}
