//! Toy-model trajectories driven from configs.

use std::path::Path;

use osc_core::toy::{simulate, simulate_two_weight, ToyState, TwoWeightState};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::SCHEMA_VERSION;
use crate::error::{LabError, Result};
use crate::record::{write_csv, TrajectoryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyModel {
    OneWeight,
    TwoWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub schema_version: u32,
    #[serde(default = "one_weight")]
    pub model: ToyModel,
    #[serde(default = "default_w")]
    pub w: f64,
    /// Second weight of the two-weight model.
    #[serde(default = "default_w2")]
    pub w2: f64,
    #[serde(default = "one")]
    pub x: f64,
    #[serde(default = "default_y")]
    pub y: f64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Points averaged for the reported tail mean of `q(w)`.
    #[serde(default = "default_tail")]
    pub tail: usize,
}

fn one_weight() -> ToyModel {
    ToyModel::OneWeight
}
fn default_w() -> f64 {
    0.3
}
fn default_w2() -> f64 {
    1.0
}
fn one() -> f64 {
    1.0
}
fn default_y() -> f64 {
    0.75
}
fn default_lr() -> f64 {
    0.05
}
fn default_steps() -> usize {
    2000
}
fn default_tail() -> usize {
    1000
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: one_weight(),
            w: default_w(),
            w2: default_w2(),
            x: one(),
            y: default_y(),
            scale: one(),
            lr: default_lr(),
            steps: default_steps(),
            tail: default_tail(),
        }
    }
}

impl ToyConfig {
    pub fn from_value(value: &Value) -> Result<Self> {
        let c: ToyConfig = serde_json::from_value(value.clone()).map_err(|e| LabError::Config(vec![e.to_string()]))?;
        let mut errors = Vec::new();
        if c.schema_version != SCHEMA_VERSION {
            errors.push(format!("schema_version: unsupported version {}", c.schema_version));
        }
        if c.steps == 0 {
            errors.push("steps: must be >= 1".into());
        }
        if c.tail == 0 {
            errors.push("tail: must be >= 1".into());
        }
        for (key, v) in [("w", c.w), ("w2", c.w2), ("x", c.x), ("y", c.y), ("lr", c.lr)] {
            if !v.is_finite() {
                errors.push(format!("{key}: must be finite"));
            }
        }
        if !(c.scale > 0.0) || !c.scale.is_finite() {
            errors.push(format!("scale: must be > 0, got {}", c.scale));
        }
        if c.lr < 0.0 {
            errors.push(format!("lr: must be >= 0, got {}", c.lr));
        }
        if !errors.is_empty() {
            return Err(LabError::Config(errors));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub model: ToyModel,
    pub steps: usize,
    pub oscillations: u32,
    /// Mean of `q(w)` (of `q(w2)·q(w1)` for two weights) over the tail.
    pub tail_mean_q: f64,
    pub final_w: Vec<f64>,
    /// Distinct quantized values visited over the tail.
    pub tail_levels: Vec<f64>,
}

#[derive(Serialize)]
struct TwoWeightRow {
    step: usize,
    w1: f64,
    w2: f64,
    q_w1: f64,
    q_w2: f64,
    oscillator_1: f64,
    dampener_1: f64,
    oscillator_2: f64,
    dampener_2: f64,
}

fn levels(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Simulates the configured toy model and, when `csv` is given, writes its
/// trajectory.
pub fn run_toy(cfg: &ToyConfig, csv: Option<&Path>) -> Result<ToySummary> {
    match cfg.model {
        ToyModel::OneWeight => {
            let state = ToyState::new(cfg.w, cfg.x, cfg.y, cfg.scale, cfg.lr)?;
            let traj = simulate(&state, cfg.steps)?;
            if let Some(path) = csv {
                let rows: Vec<TrajectoryRow> = traj
                    .points
                    .iter()
                    .map(|p| TrajectoryRow {
                        step: p.step,
                        w: p.w,
                        q_w: p.q_w,
                        grad_fp: p.grad_fp,
                        grad_delta: p.grad_delta,
                        oscillation_flag: p.oscillation as u8,
                    })
                    .collect();
                write_csv(path, &rows)?;
            }
            let n = cfg.tail.min(traj.points.len());
            let tail = &traj.points[traj.points.len() - n..];
            Ok(ToySummary {
                model: cfg.model,
                steps: cfg.steps,
                oscillations: traj.oscillations,
                tail_mean_q: traj.tail_mean_q(cfg.tail),
                final_w: vec![traj.points.last().expect("non-empty").w],
                tail_levels: levels(tail.iter().map(|p| p.q_w)),
            })
        }
        ToyModel::TwoWeight => {
            let state = TwoWeightState::new(cfg.w, cfg.w2, cfg.x, cfg.y, cfg.scale, cfg.lr)?;
            let points = simulate_two_weight(&state, cfg.steps)?;
            if let Some(path) = csv {
                let rows: Vec<TwoWeightRow> = points
                    .iter()
                    .map(|p| TwoWeightRow {
                        step: p.step,
                        w1: p.w1,
                        w2: p.w2,
                        q_w1: p.q1,
                        q_w2: p.q2,
                        oscillator_1: p.grad.g1.oscillator,
                        dampener_1: p.grad.g1.dampener,
                        oscillator_2: p.grad.g2.oscillator,
                        dampener_2: p.grad.g2.dampener,
                    })
                    .collect();
                write_csv(path, &rows)?;
            }
            let mut tracker = osc_core::oscillation::OscillationTracker::new();
            for p in &points {
                tracker.observe(&[
                    osc_core::quantizer::bin_index(p.w1, cfg.scale),
                    osc_core::quantizer::bin_index(p.w2, cfg.scale),
                ])?;
            }
            let n = cfg.tail.min(points.len());
            let tail = &points[points.len() - n..];
            let last = points.last().expect("non-empty");
            Ok(ToySummary {
                model: cfg.model,
                steps: cfg.steps,
                oscillations: tracker.counts().iter().sum(),
                tail_mean_q: tail.iter().map(|p| p.q1 * p.q2).sum::<f64>() / n as f64,
                final_w: vec![last.w1, last.w2],
                tail_levels: levels(tail.iter().map(|p| p.q1 * p.q2)),
            })
        }
    }
}
