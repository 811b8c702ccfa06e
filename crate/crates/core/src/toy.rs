//! One-weight and two-weight linear toy models under QAT.
//!
//! The one-weight model predicts `q(w)·x`; its quantization loss gap
//! `δ_L = L(q(w)) − L(w)` splits into a quadratic part `½x²(q(w)² − w²)`
//! and a linear part `yx(w − q(w))`. Under the straight-through estimator
//! only the quadratic part has a gradient, `x²(q(w) − w) = −x²ε(w)`, which
//! pushes `w` towards the nearest bin threshold.
//!
//! The two-weight model predicts `q(w2)·q(w1)·x`; there the linear part of
//! `δ_L` keeps a nonzero STE gradient that pulls weights back towards
//! their levels.
//!
//! Toy quantizers use an explicit fixed scale.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::oscillation::OscillationTracker;
use crate::quantizer::{bin_index, quantize_scalar};

/// `|w|` beyond which a trajectory is considered divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

/// One-weight model `ŷ = q(w)·x` trained by plain gradient descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyState {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub lr: f64,
    pub step: usize,
}

impl ToyState {
    pub fn new(w: f64, x: f64, y: f64, scale: f64, lr: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("toy scale must be positive, got {scale}")));
        }
        if !(lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {lr}")));
        }
        Ok(Self {
            w,
            x,
            y,
            scale,
            lr,
            step: 0,
        })
    }

    pub fn q(&self) -> f64 {
        quantize_scalar(self.w, self.scale)
    }

    /// `w − q(w)`.
    pub fn quant_error(&self) -> f64 {
        self.w - self.q()
    }

    /// `½(w·x − y)²`.
    pub fn loss_fp(&self) -> f64 {
        let r = self.w * self.x - self.y;
        0.5 * r * r
    }

    /// `½(q(w)·x − y)²`.
    pub fn loss_quantized(&self) -> f64 {
        let r = self.q() * self.x - self.y;
        0.5 * r * r
    }

    /// `∂L(w)/∂w = x(wx − y)`.
    pub fn grad_fp(&self) -> f64 {
        self.x * (self.w * self.x - self.y)
    }
}

/// The two parts of `δ_L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaLoss {
    pub quadratic: f64,
    pub linear: f64,
}

impl DeltaLoss {
    pub fn total(&self) -> f64 {
        self.quadratic + self.linear
    }
}

pub fn delta_loss(state: &ToyState) -> DeltaLoss {
    let q = state.q();
    let (w, x, y) = (state.w, state.x, state.y);
    DeltaLoss {
        quadratic: 0.5 * (x * x * (q * q - w * w)),
        linear: y * x * (w - q),
    }
}

/// STE gradient of `δ_L`: `−x²·ε(w)`.
pub fn ste_grad_delta_1w(state: &ToyState) -> f64 {
    -(state.x * state.x) * state.quant_error()
}

/// One row of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub w: f64,
    pub q_w: f64,
    pub grad_fp: f64,
    pub grad_delta: f64,
    /// The bin change leading into this point was an oscillation.
    pub oscillation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub oscillations: u32,
}

impl Trajectory {
    /// Mean of `q(w)` over the last `n` points.
    pub fn tail_mean_q(&self, n: usize) -> f64 {
        let n = n.min(self.points.len());
        let tail = &self.points[self.points.len() - n..];
        tail.iter().fold(0.0, |a, p| a + p.q_w) / n as f64
    }
}

/// Gradient descent on `L(q(w))` with the STE gradient
/// `∂L(w)/∂w + ste_grad_delta_1w`. Point 0 is the initial state; each of
/// the `steps` updates appends one point.
pub fn simulate(state: &ToyState, steps: usize) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidArgument("simulate needs at least one step".into()));
    }
    let mut s = *state;
    let mut tracker = OscillationTracker::new();
    let mut points = Vec::with_capacity(steps + 1);
    let mut last_count = 0;
    for i in 0..=steps {
        if !s.w.is_finite() || s.w.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { step: s.step, value: s.w });
        }
        tracker.observe(&[bin_index(s.w, s.scale)])?;
        let count = tracker.counts()[0];
        let grad_fp = s.grad_fp();
        let grad_delta = ste_grad_delta_1w(&s);
        points.push(TrajectoryPoint {
            step: s.step,
            w: s.w,
            q_w: s.q(),
            grad_fp,
            grad_delta,
            oscillation: count > last_count,
        });
        last_count = count;
        if i < steps {
            s.w -= s.lr * (grad_fp + grad_delta);
            s.step += 1;
        }
    }
    Ok(Trajectory {
        points,
        oscillations: last_count,
    })
}

/// Two-weight model `ŷ = q(w2)·q(w1)·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoWeightState {
    pub w1: f64,
    pub w2: f64,
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub lr: f64,
    pub step: usize,
}

impl TwoWeightState {
    pub fn new(w1: f64, w2: f64, x: f64, y: f64, scale: f64, lr: f64) -> Result<Self> {
        ToyState::new(w1, x, y, scale, lr)?;
        Ok(Self {
            w1,
            w2,
            x,
            y,
            scale,
            lr,
            step: 0,
        })
    }

    pub fn q1(&self) -> f64 {
        quantize_scalar(self.w1, self.scale)
    }

    pub fn q2(&self) -> f64 {
        quantize_scalar(self.w2, self.scale)
    }

    /// Full-precision gradient `(∂L/∂w1, ∂L/∂w2)` of `½(w2·w1·x − y)²`.
    pub fn grad_fp(&self) -> (f64, f64) {
        let r = self.w2 * self.w1 * self.x - self.y;
        (r * self.w2 * self.x, r * self.w1 * self.x)
    }

    /// Quantized prediction `q(w2)·q(w1)·x`.
    pub fn prediction_quantized(&self) -> f64 {
        self.q2() * self.q1() * self.x
    }
}

/// STE gradient of `δ_L` for one weight, split into its two sources.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitGradient {
    /// From `½x²(q(w2)²q(w1)² − w2²w1²)`; pushes towards thresholds.
    pub oscillator: f64,
    /// From `yx(w2w1 − q(w2)q(w1))`; pulls towards levels.
    pub dampener: f64,
}

impl SplitGradient {
    pub fn total(&self) -> f64 {
        self.oscillator + self.dampener
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoWeightGradient {
    pub g1: SplitGradient,
    pub g2: SplitGradient,
}

/// STE gradients of `δ_L` with respect to `w1` and `w2`:
/// `x²[q(w2)²q(w1) − w2²w1] + yx[w2 − q(w2)]` and the mirror image for `w2`.
pub fn ste_grad_delta_2w(state: &TwoWeightState) -> TwoWeightGradient {
    let (w1, w2, x, y) = (state.w1, state.w2, state.x, state.y);
    let (q1, q2) = (state.q1(), state.q2());
    let x2 = x * x;
    TwoWeightGradient {
        g1: SplitGradient {
            oscillator: x2 * (q2 * q2 * q1 - w2 * w2 * w1),
            dampener: y * x * (w2 - q2),
        },
        g2: SplitGradient {
            oscillator: x2 * (q1 * q1 * q2 - w1 * w1 * w2),
            dampener: y * x * (w1 - q1),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoWeightPoint {
    pub step: usize,
    pub w1: f64,
    pub w2: f64,
    pub q1: f64,
    pub q2: f64,
    pub grad: TwoWeightGradient,
}

/// Gradient descent on the two-weight model with the STE QAT gradient
/// (full-precision gradient plus `ste_grad_delta_2w`).
pub fn simulate_two_weight(state: &TwoWeightState, steps: usize) -> Result<Vec<TwoWeightPoint>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("simulate needs at least one step".into()));
    }
    let mut s = *state;
    let mut points = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        for w in [s.w1, s.w2] {
            if !w.is_finite() || w.abs() > DIVERGENCE_LIMIT {
                return Err(Error::Diverged { step: s.step, value: w });
            }
        }
        let grad = ste_grad_delta_2w(&s);
        points.push(TwoWeightPoint {
            step: s.step,
            w1: s.w1,
            w2: s.w2,
            q1: s.q1(),
            q2: s.q2(),
            grad,
        });
        if i < steps {
            let (f1, f2) = s.grad_fp();
            s.w1 -= s.lr * (f1 + grad.g1.total());
            s.w2 -= s.lr * (f2 + grad.g2.total());
            s.step += 1;
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fig1(w: f64) -> ToyState {
        ToyState::new(w, 1.0, 0.75, 1.0, 0.05).unwrap()
    }

    #[test]
    fn delta_loss_on_level_is_zero() {
        let d = delta_loss(&fig1(1.0));
        assert_eq!((d.quadratic, d.linear), (0.0, 0.0));
    }

    #[test]
    fn delta_loss_example() {
        let d = delta_loss(&fig1(0.6));
        assert_abs_diff_eq!(d.quadratic, 0.32, epsilon = 1e-15);
        assert_abs_diff_eq!(d.linear, -0.3, epsilon = 1e-15);
        let s = fig1(0.6);
        assert_abs_diff_eq!(d.total(), s.loss_quantized() - s.loss_fp(), epsilon = 1e-15);
    }

    #[test]
    fn ste_gradient_example() {
        assert_abs_diff_eq!(ste_grad_delta_1w(&fig1(0.6)), 0.4, epsilon = 1e-15);
        assert_eq!(ste_grad_delta_1w(&fig1(2.0)), 0.0);
    }

    #[test]
    fn two_weight_example() {
        let s = TwoWeightState::new(0.6, 1.0, 1.0, 0.0, 1.0, 0.1).unwrap();
        let g = ste_grad_delta_2w(&s);
        assert_abs_diff_eq!(g.g1.oscillator, 0.4, epsilon = 1e-15);
        assert_eq!(g.g1.dampener, 0.0);
        let on = TwoWeightState::new(1.0, -2.0, 0.7, 0.3, 1.0, 0.1).unwrap();
        let g = ste_grad_delta_2w(&on);
        assert_eq!((g.g1.total(), g.g2.total()), (0.0, 0.0));
    }

    #[test]
    fn oscillates_around_target() {
        let t = simulate(&fig1(0.3), 2000).unwrap();
        let mean = t.tail_mean_q(1000);
        assert!((mean - 0.75).abs() <= 0.05, "tail mean {mean}");
        assert!(t.oscillations > 100);
    }

    #[test]
    fn target_on_level_converges() {
        let s = ToyState::new(0.3, 1.0, 1.0, 1.0, 0.05).unwrap();
        let t = simulate(&s, 2000).unwrap();
        assert!(t.oscillations <= 1);
        let last = t.points.last().unwrap();
        assert_eq!(last.q_w, 1.0);
        let prev = t.points[t.points.len() - 2];
        assert_eq!(prev.w, last.w);
    }

    #[test]
    fn zero_lr_is_stationary() {
        let s = ToyState::new(0.3, 1.0, 0.75, 1.0, 0.0).unwrap();
        let t = simulate(&s, 50).unwrap();
        assert!(t.points.iter().all(|p| p.w == 0.3));
    }

    #[test]
    fn divergence_aborts() {
        let s = ToyState::new(0.3, 10.0, 0.75, 1.0, 1.0).unwrap();
        assert!(matches!(simulate(&s, 100), Err(Error::Diverged { .. })));
    }

    #[test]
    fn invalid_states() {
        assert!(ToyState::new(0.0, 1.0, 1.0, 0.0, 0.1).is_err());
        assert!(ToyState::new(0.0, 1.0, 1.0, 1.0, -0.1).is_err());
        assert!(simulate(&fig1(0.3), 0).is_err());
    }
}
