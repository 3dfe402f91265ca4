//! Tiny fully-connected classifiers over flat f32 parameter vectors.
//!
//! Parameters live in the same checkpoint containers the pruning pipeline
//! manipulates: per layer, `layer{i}.weight` of shape `[fan_in, fan_out]`
//! (row per input unit) followed by `layer{i}.bias`. All arithmetic runs in
//! f64 on top of the stored f32 values, which keeps losses and gradients
//! stable enough for finite-difference verification.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, TensorLayout};
use crate::error::{Error, Result};
use crate::harness::data::Dataset;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    // Derivative expressed through the post-activation value.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Architecture of one classifier: unit counts per layer, input first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TinyModelSpec {
    layer_widths: Vec<usize>,
    activation: Activation,
}

/// Hidden width used by the default benchmark model.
pub const DEFAULT_HIDDEN_WIDTH: usize = 112;

impl TinyModelSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::InvalidArgument(
                "a model needs at least an input and an output layer".into(),
            ));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument("zero-width layer".into()));
        }
        Ok(Self {
            layer_widths,
            activation,
        })
    }

    /// The default benchmark architecture: two tanh hidden layers.
    pub fn default_for(input_dim: usize, class_count: usize) -> Result<Self> {
        Self::new(
            vec![
                input_dim,
                DEFAULT_HIDDEN_WIDTH,
                DEFAULT_HIDDEN_WIDTH,
                class_count,
            ],
            Activation::Tanh,
        )
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn layout(&self) -> Result<Arc<TensorLayout>> {
        let mut tensors = Vec::new();
        for (i, w) in self.layer_widths.windows(2).enumerate() {
            tensors.push((format!("layer{i}.weight"), vec![w[0], w[1]]));
            tensors.push((format!("layer{i}.bias"), vec![w[1]]));
        }
        TensorLayout::new(tensors)
    }

    /// Recovers the architecture from a checkpoint layout produced by
    /// [`TinyModelSpec::layout`]. The activation is not encoded in the
    /// layout, so the default tanh is assumed.
    pub fn from_layout(layout: &TensorLayout) -> Result<Self> {
        let specs = layout.specs();
        if specs.len() < 2 || specs.len() % 2 != 0 {
            return Err(Error::Parse(format!(
                "layout with {} tensors is not a dense classifier",
                specs.len()
            )));
        }
        let mut widths = Vec::new();
        for (i, pair) in specs.chunks(2).enumerate() {
            let (weight, bias) = (&pair[0], &pair[1]);
            if weight.name != format!("layer{i}.weight")
                || bias.name != format!("layer{i}.bias")
                || weight.shape.len() != 2
                || bias.shape.len() != 1
                || weight.shape[1] != bias.shape[0]
            {
                return Err(Error::Parse(format!(
                    "tensors `{}`/`{}` do not form dense layer {i}",
                    weight.name, bias.name
                )));
            }
            if i == 0 {
                widths.push(weight.shape[0]);
            } else if widths[i] != weight.shape[0] {
                return Err(Error::Parse(format!(
                    "layer {i} expects {} inputs but the previous layer has {} outputs",
                    weight.shape[0], widths[i]
                )));
            }
            widths.push(weight.shape[1]);
        }
        Self::new(widths, Activation::Tanh)
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))` per layer,
    /// deterministic per seed. Biases start at zero.
    pub fn init(&self, seed: u64) -> Result<Checkpoint> {
        let layout = self.layout()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(self.param_count());
        for w in self.layer_widths.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                values.push(rng.gen_range(-bound..bound) as f32);
            }
            values.extend(std::iter::repeat(0.0f32).take(w[1]));
        }
        Checkpoint::new(layout, values)
    }

    fn check_params(&self, params: &[f32]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Mismatch(format!(
                "model expects {} parameters, checkpoint holds {}",
                self.param_count(),
                params.len()
            )));
        }
        Ok(())
    }

    fn check_input(&self, input: &[f32]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Mismatch(format!(
                "model expects {}-dimensional inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(())
    }
}

// Flat offsets of layer `l`'s weight matrix and bias within the parameter
// vector.
fn layer_offsets(spec: &TinyModelSpec, layer: usize) -> (usize, usize) {
    let mut offset = 0;
    for w in spec.layer_widths().windows(2).take(layer) {
        offset += w[0] * w[1] + w[1];
    }
    let w = &spec.layer_widths()[layer..layer + 2];
    (offset, offset + w[0] * w[1])
}

/// Runs the network, returning raw output logits in f64.
pub fn forward_logits(spec: &TinyModelSpec, params: &[f32], input: &[f32]) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    spec.check_input(input)?;
    let mut activations: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    for layer in 0..spec.layer_count() {
        activations = layer_forward(spec, params, layer, &activations);
    }
    Ok(activations)
}

fn layer_forward(spec: &TinyModelSpec, params: &[f32], layer: usize, input: &[f64]) -> Vec<f64> {
    let (w_off, b_off) = layer_offsets(spec, layer);
    let fan_out = spec.layer_widths()[layer + 1];
    let last = layer + 1 == spec.layer_count();
    let mut out = vec![0.0f64; fan_out];
    for (j, o) in out.iter_mut().enumerate() {
        *o = params[b_off + j] as f64;
    }
    for (i, &a) in input.iter().enumerate() {
        let row = w_off + i * fan_out;
        for (j, o) in out.iter_mut().enumerate() {
            *o += a * params[row + j] as f64;
        }
    }
    if !last {
        for o in &mut out {
            *o = spec.activation().apply(*o);
        }
    }
    out
}

/// Class prediction: argmax over logits, lowest index on ties.
pub fn predict(spec: &TinyModelSpec, params: &[f32], input: &[f32]) -> Result<usize> {
    let logits = forward_logits(spec, params, input)?;
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

fn softmax_loss(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() - (logits[label] - max);
    let mut dlogits: Vec<f64> = exps.iter().map(|&e| e / total).collect();
    dlogits[label] -= 1.0;
    (loss, dlogits)
}

/// Mean cross-entropy of the model over the given sample indices.
pub fn batch_loss(
    spec: &TinyModelSpec,
    params: &[f32],
    data: &Dataset,
    indices: &[usize],
) -> Result<f64> {
    batch_pass(spec, params, data, indices, None)
}

/// Mean cross-entropy plus its full parameter gradient, written into `grad`.
pub fn batch_loss_and_gradient(
    spec: &TinyModelSpec,
    params: &[f32],
    data: &Dataset,
    indices: &[usize],
    grad: &mut [f64],
) -> Result<f64> {
    if grad.len() != spec.param_count() {
        return Err(Error::Mismatch(format!(
            "gradient buffer holds {} entries, model has {} parameters",
            grad.len(),
            spec.param_count()
        )));
    }
    grad.fill(0.0);
    batch_pass(spec, params, data, indices, Some(grad))
}

fn batch_pass(
    spec: &TinyModelSpec,
    params: &[f32],
    data: &Dataset,
    indices: &[usize],
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    spec.check_params(params)?;
    if data.input_dim() != spec.input_dim() || data.class_count() != spec.class_count() {
        return Err(Error::Mismatch(format!(
            "dataset is {}-dimensional with {} classes, model wants {}/{}",
            data.input_dim(),
            data.class_count(),
            spec.input_dim(),
            spec.class_count()
        )));
    }
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }

    let layers = spec.layer_count();
    let mut total_loss = 0.0f64;
    for &sample in indices {
        if sample >= data.len() {
            return Err(Error::InvalidArgument(format!(
                "sample index {sample} out of range for {} rows",
                data.len()
            )));
        }
        // Forward, keeping every post-activation for the backward sweep.
        let mut activations: Vec<Vec<f64>> =
            vec![data.input(sample).iter().map(|&v| v as f64).collect()];
        for layer in 0..layers {
            let next = layer_forward(spec, params, layer, activations.last().unwrap());
            activations.push(next);
        }
        let (loss, dlogits) = softmax_loss(activations.last().unwrap(), data.label(sample));
        total_loss += loss;

        let Some(grad) = grad.as_deref_mut() else {
            continue;
        };
        // Backward: delta holds dLoss/dz of the current layer.
        let mut delta = dlogits;
        for layer in (0..layers).rev() {
            let (w_off, b_off) = layer_offsets(spec, layer);
            let fan_out = spec.layer_widths()[layer + 1];
            let input = &activations[layer];
            for (j, &d) in delta.iter().enumerate() {
                grad[b_off + j] += d;
            }
            for (i, &a) in input.iter().enumerate() {
                let row = w_off + i * fan_out;
                for (j, &d) in delta.iter().enumerate() {
                    grad[row + j] += a * d;
                }
            }
            if layer > 0 {
                let mut prev = vec![0.0f64; input.len()];
                for (i, p) in prev.iter_mut().enumerate() {
                    let row = w_off + i * fan_out;
                    let mut sum = 0.0;
                    for (j, &d) in delta.iter().enumerate() {
                        sum += params[row + j] as f64 * d;
                    }
                    *p = sum * spec.activation().derivative_from_output(input[i]);
                }
                delta = prev;
            }
        }
    }

    let scale = 1.0 / indices.len() as f64;
    if let Some(grad) = grad {
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    Ok(total_loss * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::make_tasks;
    use crate::harness::data::Split;
    use nalgebra::{DMatrix, DVector};
    use rand::rngs::StdRng;

    fn spec() -> TinyModelSpec {
        TinyModelSpec::default_for(64, 4).unwrap()
    }

    #[test]
    fn default_architecture_size() {
        let s = spec();
        assert_eq!(
            s.param_count(),
            64 * 112 + 112 + 112 * 112 + 112 + 112 * 4 + 4
        );
        assert_eq!(s.param_count(), 20_388);
        let layout = s.layout().unwrap();
        assert_eq!(layout.total_len(), s.param_count());
    }

    #[test]
    fn layout_round_trips_through_from_layout() {
        let s = spec();
        let layout = s.layout().unwrap();
        let recovered = TinyModelSpec::from_layout(&layout).unwrap();
        assert_eq!(recovered, s);

        let foreign = TensorLayout::new(vec![("embedding", vec![10, 10])]).unwrap();
        assert!(TinyModelSpec::from_layout(&foreign).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let s = spec();
        let a = s.init(3).unwrap();
        let b = s.init(3).unwrap();
        assert_eq!(a.values(), b.values());
        let c = s.init(4).unwrap();
        assert_ne!(a.values(), c.values());
        let bound = (6.0f64 / (64 + 112) as f64).sqrt() as f32;
        for &v in &a.values()[..64 * 112] {
            assert!(v.abs() <= bound);
        }
        // Biases start at zero.
        let bias = &a.values()[64 * 112..64 * 112 + 112];
        assert!(bias.iter().all(|&b| b == 0.0));
    }

    // Independent oracle: the same network expressed through generic matrix
    // algebra instead of the handwritten loops.
    fn oracle_logits(s: &TinyModelSpec, params: &[f32], input: &[f32]) -> Vec<f64> {
        let mut a = DVector::from_iterator(input.len(), input.iter().map(|&v| v as f64));
        for layer in 0..s.layer_count() {
            let (w_off, b_off) = layer_offsets(s, layer);
            let fan_in = s.layer_widths()[layer];
            let fan_out = s.layer_widths()[layer + 1];
            // Row-major [fan_in, fan_out] means transposing into nalgebra's
            // column-major W^T of shape [fan_out, fan_in].
            let wt = DMatrix::from_iterator(
                fan_out,
                fan_in,
                (0..fan_in * fan_out).map(|k| params[w_off + k] as f64),
            );
            let b = DVector::from_iterator(fan_out, (0..fan_out).map(|j| params[b_off + j] as f64));
            a = wt * a + b;
            if layer + 1 != s.layer_count() {
                a.apply(|v| *v = s.activation().apply(*v));
            }
        }
        a.iter().cloned().collect()
    }

    #[test]
    fn forward_matches_matrix_algebra_oracle() {
        let mut rng = StdRng::seed_from_u64(5);
        for activation in [Activation::Tanh, Activation::Relu] {
            let s = TinyModelSpec::new(vec![9, 14, 11, 3], activation).unwrap();
            let params: Vec<f32> = (0..s.param_count())
                .map(|_| rng.gen_range(-0.8f32..0.8))
                .collect();
            for _ in 0..50 {
                let input: Vec<f32> = (0..9).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
                let ours = forward_logits(&s, &params, &input).unwrap();
                let oracle = oracle_logits(&s, &params, &input);
                for (a, b) in ours.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-5, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn prediction_breaks_ties_toward_the_lowest_class() {
        let s = TinyModelSpec::new(vec![2, 3], Activation::Tanh).unwrap();
        // Zero weights and biases: all logits equal.
        let params = vec![0.0f32; s.param_count()];
        assert_eq!(predict(&s, &params, &[1.0, -1.0]).unwrap(), 0);
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let task = &make_tasks(1, 17).unwrap()[0];
        let data = task.generate(Split::Train);
        let s = spec();
        let base = s.init(23).unwrap();
        let params = base.values().to_vec();
        let indices: Vec<usize> = (0..16).collect();

        let mut grad = vec![0.0f64; s.param_count()];
        let loss = batch_loss_and_gradient(&s, &params, &data, &indices, &mut grad).unwrap();
        assert!(loss.is_finite() && loss > 0.0);

        let mut rng = StdRng::seed_from_u64(99);
        let h = 1e-3f64;
        for _ in 0..100 {
            let d = rng.gen_range(0..s.param_count());
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[d] = (params[d] as f64 + h) as f32;
            minus[d] = (params[d] as f64 - h) as f32;
            // Use the realized f32 step, not the nominal h, so parameter
            // quantization does not pollute the difference quotient.
            let span = plus[d] as f64 - minus[d] as f64;
            let l_plus = batch_loss(&s, &plus, &data, &indices).unwrap();
            let l_minus = batch_loss(&s, &minus, &data, &indices).unwrap();
            let numeric = (l_plus - l_minus) / span;
            let analytic = grad[d];
            let tolerance = 1e-4 * analytic.abs().max(numeric.abs()).max(1e-2);
            assert!(
                (analytic - numeric).abs() <= tolerance,
                "coordinate {d}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn batch_helpers_validate_shapes() {
        let task = &make_tasks(1, 1).unwrap()[0];
        let data = task.generate(Split::Calibration);
        let s = spec();
        let params = vec![0.0f32; s.param_count() - 1];
        assert!(matches!(
            batch_loss(&s, &params, &data, &[0]),
            Err(Error::Mismatch(_))
        ));
        let good = vec![0.0f32; s.param_count()];
        assert!(batch_loss(&s, &good, &data, &[]).is_err());
        assert!(batch_loss(&s, &good, &data, &[10_000]).is_err());
        let mut grad = vec![0.0f64; 3];
        assert!(batch_loss_and_gradient(&s, &good, &data, &[0], &mut grad).is_err());
    }
}
