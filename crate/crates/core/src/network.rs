//! Multi-layer perceptron with hand-written reverse mode and Adam.
//!
//! Latent weights are always full precision. Under [`Precision::FakeQuant`]
//! the forward pass multiplies by `q(w)` for every layer flagged
//! `quantized`, and the backward pass hands the gradient with respect to
//! `q(w)` to the latent `w` unchanged (straight-through estimator).

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::quantizer::{self, QuantSpec};
use crate::tensor::{matmul, matmul_nt, matmul_tn, rand_normal, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub quantized: bool,
}

/// Ordered dense layers. Weights are `in_dim × out_dim`, biases `1 × out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<LayerSpec>,
    weights: Vec<Matrix>,
    biases: Vec<Matrix>,
    generation: u64,
}

fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Empty("model layer list"));
    }
    for (i, l) in layers.iter().enumerate() {
        if l.in_dim == 0 || l.out_dim == 0 {
            return Err(Error::InvalidArgument(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::InvalidArgument(format!(
                "layer {i} outputs {} but layer {} expects {}",
                pair[0].out_dim,
                i + 1,
                pair[1].in_dim
            )));
        }
    }
    Ok(())
}

impl Model {
    /// Assembles a model from explicit parameters.
    pub fn new(layers: Vec<LayerSpec>, weights: Vec<Matrix>, biases: Vec<Matrix>) -> Result<Self> {
        validate_layers(&layers)?;
        if weights.len() != layers.len() || biases.len() != layers.len() {
            return Err(Error::InvalidArgument(format!(
                "{} layers but {} weight and {} bias tensors",
                layers.len(),
                weights.len(),
                biases.len()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if weights[i].shape() != (l.in_dim, l.out_dim) {
                return Err(Error::Shape {
                    op: "Model::new weights",
                    left: (l.in_dim, l.out_dim),
                    right: weights[i].shape(),
                });
            }
            if biases[i].shape() != (1, l.out_dim) {
                return Err(Error::Shape {
                    op: "Model::new biases",
                    left: (1, l.out_dim),
                    right: biases[i].shape(),
                });
            }
        }
        Ok(Self {
            layers,
            weights,
            biases,
            generation: 0,
        })
    }

    /// He-normal weights (`std = sqrt(2 / in_dim)`) and zero biases. Layer
    /// `i` draws from sub-stream `i + 1` of `seed`.
    pub fn init(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        validate_layers(&layers)?;
        let mut weights = Vec::with_capacity(layers.len());
        let mut biases = Vec::with_capacity(layers.len());
        for (i, l) in layers.iter().enumerate() {
            let mut rng = Rng::stream(seed, i as u64 + 1);
            let std = libm::sqrt(2.0 / l.in_dim as f64);
            weights.push(rand_normal(&mut rng, l.in_dim, l.out_dim, 0.0, std)?);
            biases.push(Matrix::zeros(1, l.out_dim));
        }
        Self::new(layers, weights, biases)
    }

    /// `depth` hidden layers of width `hidden` followed by a linear output
    /// layer. Every layer is flagged as quantized.
    pub fn mlp(
        input: usize,
        hidden: usize,
        depth: usize,
        outputs: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        Self::init(mlp_layers(input, hidden, depth, outputs, activation), seed)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Matrix] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Matrix::len).sum::<usize>()
            + self.biases.iter().map(Matrix::len).sum::<usize>()
    }

    /// Incremented on every parameter mutation; forward caches record it.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Replaces one layer's weights, keeping the shape.
    pub fn set_weights(&mut self, layer: usize, w: Matrix) -> Result<()> {
        self.weights[layer].check_same_shape(&w, "set_weights")?;
        self.weights[layer] = w;
        self.generation += 1;
        Ok(())
    }

    pub fn set_biases(&mut self, layer: usize, b: Matrix) -> Result<()> {
        self.biases[layer].check_same_shape(&b, "set_biases")?;
        self.biases[layer] = b;
        self.generation += 1;
        Ok(())
    }

    /// Per-layer max-abs scales at `spec`; `None` for layers not quantized.
    pub fn layer_scales(&self, spec: QuantSpec) -> Result<Vec<Option<f64>>> {
        self.layers
            .iter()
            .zip(&self.weights)
            .map(|(l, w)| {
                if l.quantized {
                    quantizer::scale_factor(w, spec).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect()
    }
}

pub fn mlp_layers(
    input: usize,
    hidden: usize,
    depth: usize,
    outputs: usize,
    activation: Activation,
) -> Vec<LayerSpec> {
    let mut layers = Vec::with_capacity(depth + 1);
    let mut in_dim = input;
    for _ in 0..depth {
        layers.push(LayerSpec {
            in_dim,
            out_dim: hidden,
            activation,
            quantized: true,
        });
        in_dim = hidden;
    }
    layers.push(LayerSpec {
        in_dim,
        out_dim: outputs,
        activation: Activation::Identity,
        quantized: true,
    });
    layers
}

/// Arithmetic used for the weight products of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Precision {
    Full,
    /// Quantize every `quantized` layer. With `fixed_scales` the listed
    /// per-layer scales are used; otherwise each layer's scale is recomputed
    /// from its current latent weights.
    FakeQuant {
        spec: QuantSpec,
        fixed_scales: Option<Vec<f64>>,
    },
}

impl Precision {
    pub fn fake_quant(spec: QuantSpec) -> Self {
        Precision::FakeQuant {
            spec,
            fixed_scales: None,
        }
    }
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    precision: Precision,
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    /// Weights actually multiplied, when they differ from the latent ones.
    effective: Vec<Option<Matrix>>,
    scales: Vec<Option<f64>>,
}

impl ForwardCache {
    pub fn precision(&self) -> &Precision {
        &self.precision
    }

    /// Scale used per layer; `None` for full-precision products.
    pub fn scales(&self) -> &[Option<f64>] {
        &self.scales
    }
}

fn effective_weights(model: &Model, precision: &Precision) -> Result<(Vec<Option<Matrix>>, Vec<Option<f64>>)> {
    let mut effective = Vec::with_capacity(model.layers.len());
    let mut scales = Vec::with_capacity(model.layers.len());
    match precision {
        Precision::Full => {
            for _ in &model.layers {
                effective.push(None);
                scales.push(None);
            }
        }
        Precision::FakeQuant { spec, fixed_scales } => {
            if let Some(fixed) = fixed_scales {
                if fixed.len() != model.layers.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{} fixed scales for {} layers",
                        fixed.len(),
                        model.layers.len()
                    )));
                }
            }
            for (i, (l, w)) in model.layers.iter().zip(&model.weights).enumerate() {
                if !l.quantized {
                    effective.push(None);
                    scales.push(None);
                    continue;
                }
                let s = match fixed_scales {
                    Some(fixed) => fixed[i],
                    None => quantizer::scale_factor(w, *spec)?,
                };
                let view = quantizer::quantize_with_scale(w, s)?;
                effective.push(Some(view.values));
                scales.push(Some(s));
            }
        }
    }
    Ok((effective, scales))
}

fn check_input(model: &Model, x: &Matrix) -> Result<()> {
    if x.cols() != model.input_dim() {
        return Err(Error::Shape {
            op: "forward",
            left: x.shape(),
            right: (model.input_dim(), model.layers[0].out_dim),
        });
    }
    Ok(())
}

fn layer_forward(input: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul(input, w)?.add_row_broadcast(b)
}

/// Forward pass returning logits and the cache for [`backward`].
pub fn forward(model: &Model, x: &Matrix, precision: &Precision) -> Result<(Matrix, ForwardCache)> {
    check_input(model, x)?;
    let (effective, scales) = effective_weights(model, precision)?;
    let n = model.layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut pre_activations = Vec::with_capacity(n);
    let mut current = x.clone();
    for i in 0..n {
        let w = effective[i].as_ref().unwrap_or(&model.weights[i]);
        let z = layer_forward(&current, w, &model.biases[i])?;
        let act = model.layers[i].activation;
        let a = z.map(|v| act.apply(v));
        inputs.push(current);
        pre_activations.push(z);
        current = a;
    }
    let cache = ForwardCache {
        generation: model.generation,
        precision: precision.clone(),
        inputs,
        pre_activations,
        effective,
        scales,
    };
    Ok((current, cache))
}

/// Forward pass without keeping intermediates.
pub fn predict(model: &Model, x: &Matrix, precision: &Precision) -> Result<Matrix> {
    check_input(model, x)?;
    let (effective, _) = effective_weights(model, precision)?;
    let mut current = x.clone();
    for (i, layer) in model.layers.iter().enumerate() {
        let w = effective[i].as_ref().unwrap_or(&model.weights[i]);
        let act = layer.activation;
        current = layer_forward(&current, w, &model.biases[i])?.map(|v| act.apply(v));
    }
    Ok(current)
}

/// Parameter gradients, laid out like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            weights: model.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            biases: model.biases.iter().map(|b| Matrix::zeros(b.rows(), b.cols())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(Matrix::all_finite)
    }
}

/// Reverse pass. Under fake quantization the gradient with respect to the
/// quantized weights is returned as the latent-weight gradient, and the
/// signal propagated to earlier layers goes through the quantized weights.
pub fn backward(model: &Model, cache: &ForwardCache, grad_logits: &Matrix) -> Result<Gradients> {
    if cache.generation != model.generation || cache.inputs.len() != model.layers.len() {
        return Err(Error::Contract(format!(
            "forward cache is from model generation {} but the model is at {}",
            cache.generation, model.generation
        )));
    }
    let n = model.layers.len();
    let last = &cache.pre_activations[n - 1];
    if grad_logits.shape() != last.shape() {
        return Err(Error::Shape {
            op: "backward",
            left: grad_logits.shape(),
            right: last.shape(),
        });
    }
    let mut weights = Vec::with_capacity(n);
    let mut biases = Vec::with_capacity(n);
    let mut upstream = grad_logits.clone();
    for i in (0..n).rev() {
        let act = model.layers[i].activation;
        let z = &cache.pre_activations[i];
        let mut delta = upstream;
        if act != Activation::Identity {
            for (d, &zv) in delta.data_mut().iter_mut().zip(z.data()) {
                *d *= act.derivative(zv);
            }
        }
        weights.push(matmul_tn(&cache.inputs[i], &delta)?);
        biases.push(delta.column_sums());
        if i > 0 {
            let w = cache.effective[i].as_ref().unwrap_or(&model.weights[i]);
            upstream = matmul_nt(&delta, w)?;
        } else {
            upstream = Matrix::zeros(0, 0);
        }
    }
    weights.reverse();
    biases.reverse();
    Ok(Gradients { weights, biases })
}

/// `½ · mean over rows of Σ (pred − target)²` and its gradient.
pub fn loss_mse(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    pred.check_same_shape(target, "loss_mse")?;
    if pred.is_empty() {
        return Err(Error::Empty("loss_mse input"));
    }
    let n = pred.rows() as f64;
    let diff = pred.sub(target)?;
    let value = diff.data().iter().fold(0.0, |acc, &d| acc + d * d) / (2.0 * n);
    Ok((value, diff.scale(1.0 / n)))
}

/// Mean softmax cross-entropy over rows and its gradient w.r.t. logits.
pub fn loss_softmax_ce(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape {
            op: "loss_softmax_ce",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    if logits.is_empty() {
        return Err(Error::Empty("loss_softmax_ce input"));
    }
    let n = logits.rows() as f64;
    let classes = logits.cols();
    let mut grad = Matrix::zeros(logits.rows(), classes);
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut denom = 0.0;
        let g = grad.row_mut(r);
        for (gi, &v) in g.iter_mut().zip(row) {
            let e = libm::exp(v - max);
            *gi = e;
            denom += e;
        }
        total += libm::log(denom) + max - row[label];
        for gi in g.iter_mut() {
            *gi /= denom * n;
        }
        g[label] -= 1.0 / n;
    }
    Ok((total / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment accumulators, shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Gradients,
    second: Gradients,
}

impl AdamState {
    pub fn new(model: &Model, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Gradients::zeros_like(model),
            second: Gradients::zeros_like(model),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

fn adam_update(param: &mut Matrix, grad: &Matrix, m: &mut Matrix, v: &mut Matrix, cfg: &AdamConfig, c1: f64, c2: f64) {
    let p = param.data_mut().iter_mut();
    let it = p.zip(grad.data()).zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
    for ((p, &g), (m, v)) in it {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(model: &mut Model, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.weights.len() != model.weights.len() || grads.biases.len() != model.biases.len() {
        return Err(Error::InvalidArgument("gradient layer count does not match model".into()));
    }
    for (i, (gw, gb)) in grads.weights.iter().zip(&grads.biases).enumerate() {
        model.weights[i].check_same_shape(gw, "adam_step weights")?;
        model.biases[i].check_same_shape(gb, "adam_step biases")?;
    }
    state.step += 1;
    let cfg = state.config;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(cfg.beta1, t);
    let c2 = 1.0 - libm::pow(cfg.beta2, t);
    for i in 0..model.weights.len() {
        adam_update(
            &mut model.weights[i],
            &grads.weights[i],
            &mut state.first.weights[i],
            &mut state.second.weights[i],
            &cfg,
            c1,
            c2,
        );
        adam_update(
            &mut model.biases[i],
            &grads.biases[i],
            &mut state.first.biases[i],
            &mut state.second.biases[i],
            &cfg,
            c1,
            c2,
        );
    }
    model.generation += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn scalar_model(w: f64, b: f64) -> Model {
        Model::new(
            vec![LayerSpec {
                in_dim: 1,
                out_dim: 1,
                activation: Activation::Identity,
                quantized: true,
            }],
            vec![Matrix::from_vec(1, 1, vec![w]).unwrap()],
            vec![Matrix::from_vec(1, 1, vec![b]).unwrap()],
        )
        .unwrap()
    }

    fn unit_scale() -> Precision {
        Precision::FakeQuant {
            spec: QuantSpec::bits(8).unwrap(),
            fixed_scales: Some(vec![1.0]),
        }
    }

    #[test]
    fn fake_quant_forward_uses_quantized_weight() {
        let model = scalar_model(0.6, 0.0);
        let x = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let (out, _) = forward(&model, &x, &unit_scale()).unwrap();
        assert_eq!(out.data(), &[1.0]);
        let (fp, _) = forward(&model, &x, &Precision::Full).unwrap();
        assert_eq!(fp.data(), &[0.6]);
    }

    #[test]
    fn zero_input_leaves_bias_path() {
        let model = Model::mlp(3, 4, 2, 2, Activation::Identity, 5).unwrap();
        let mut model = model;
        model.set_biases(2, Matrix::row_vector(&[0.25, -1.5]).unwrap()).unwrap();
        let x = Matrix::zeros(2, 3);
        let out = predict(&model, &x, &Precision::Full).unwrap();
        assert_eq!(out.data(), &[0.25, -1.5, 0.25, -1.5]);
    }

    #[test]
    fn ste_gradient_one_weight() {
        let model = scalar_model(0.6, 0.0);
        let x = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let y = Matrix::from_vec(1, 1, vec![0.75]).unwrap();
        let (out, cache) = forward(&model, &x, &unit_scale()).unwrap();
        let (loss, g) = loss_mse(&out, &y).unwrap();
        assert_abs_diff_eq!(loss, 0.03125, epsilon = 1e-15);
        let grads = backward(&model, &cache, &g).unwrap();
        assert_abs_diff_eq!(grads.weights[0].data()[0], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let model = Model::mlp(3, 5, 2, 2, Activation::Relu, 9).unwrap();
        let x = Matrix::filled(4, 3, 0.3);
        let (out, cache) = forward(&model, &x, &Precision::Full).unwrap();
        let g = backward(&model, &cache, &Matrix::zeros(out.rows(), out.cols())).unwrap();
        assert_eq!(g, Gradients::zeros_like(&model));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut model = scalar_model(0.6, 0.0);
        let x = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let (out, cache) = forward(&model, &x, &Precision::Full).unwrap();
        model.set_weights(0, Matrix::from_vec(1, 1, vec![0.1]).unwrap()).unwrap();
        assert!(matches!(backward(&model, &cache, &out), Err(Error::Contract(_))));
    }

    #[test]
    fn forward_shape_error() {
        let model = scalar_model(0.6, 0.0);
        assert!(forward(&model, &Matrix::zeros(1, 2), &Precision::Full).is_err());
    }

    #[test]
    fn mse_examples() {
        let p = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let t = Matrix::from_vec(1, 1, vec![0.75]).unwrap();
        assert_eq!(loss_mse(&p, &t).unwrap().0, 0.03125);
        assert_eq!(loss_mse(&p, &p).unwrap().0, 0.0);
    }

    #[test]
    fn softmax_ce_uniform_logits() {
        let logits = Matrix::zeros(1, 2);
        let (v, g) = loss_softmax_ce(&logits, &[0]).unwrap();
        assert_abs_diff_eq!(v, core::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(g.data(), &[-0.5, 0.5]);
        assert!(loss_softmax_ce(&logits, &[2]).is_err());
        assert!(loss_softmax_ce(&logits, &[0, 1]).is_err());
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut model = scalar_model(0.0, 0.0);
        let mut state = AdamState::new(&model, AdamConfig::with_lr(0.1));
        let mut g = Gradients::zeros_like(&model);
        g.weights[0] = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        adam_step(&mut model, &g, &mut state).unwrap();
        assert_abs_diff_eq!(model.weights()[0].data()[0], -0.1, epsilon = 1e-8);
        assert_eq!(model.biases()[0].data()[0], 0.0);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut model = Model::mlp(2, 3, 1, 2, Activation::Relu, 1).unwrap();
        let before = model.clone();
        let mut state = AdamState::new(&model, AdamConfig::default());
        let zero = Gradients::zeros_like(&model);
        adam_step(&mut model, &zero, &mut state).unwrap();
        assert_eq!(model.weights(), before.weights());
        assert_eq!(model.biases(), before.biases());
    }

    #[test]
    fn adam_is_deterministic() {
        let mut a = Model::mlp(2, 3, 1, 2, Activation::Relu, 1).unwrap();
        let mut b = a.clone();
        let x = Matrix::from_rows(&[&[0.5, -1.0], &[1.5, 0.2]]).unwrap();
        let (out, cache) = forward(&a, &x, &Precision::Full).unwrap();
        let (_, g) = loss_softmax_ce(&out, &[0, 1]).unwrap();
        let grads = backward(&a, &cache, &g).unwrap();
        let mut sa = AdamState::new(&a, AdamConfig::default());
        let mut sb = AdamState::new(&b, AdamConfig::default());
        adam_step(&mut a, &grads, &mut sa).unwrap();
        adam_step(&mut b, &grads, &mut sb).unwrap();
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn model_validation() {
        let bad = vec![
            LayerSpec { in_dim: 2, out_dim: 3, activation: Activation::Relu, quantized: true },
            LayerSpec { in_dim: 4, out_dim: 1, activation: Activation::Identity, quantized: true },
        ];
        assert!(Model::init(bad, 0).is_err());
        assert!(Model::init(vec![], 0).is_err());
    }

    #[test]
    fn forward_leaves_latent_weights() {
        let model = Model::mlp(3, 4, 2, 2, Activation::Relu, 2).unwrap();
        let before = model.clone();
        let x = Matrix::filled(2, 3, 0.7);
        let _ = forward(&model, &x, &Precision::fake_quant(QuantSpec::ternary())).unwrap();
        assert_eq!(model, before);
    }
}
