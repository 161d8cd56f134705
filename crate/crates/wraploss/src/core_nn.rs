//! Minimal dense feed-forward network with exact reverse-mode gradients.
//!
//! Weights are `f64` row-major matrices of shape `(out, in)`. The forward pass
//! records a [`ForwardTrace`] so [`Network::backward`] can replay the chain rule
//! exactly. Dropout is inverted (masks carry the `1/(1-p)` scale) so eval mode
//! needs no rescaling.
//!
//! `backward` propagates a gradient taken with respect to the output layer
//! pre-activation (for a linear head this is the output itself; for a softmax
//! head the caller supplies the logit gradient, e.g. `p - onehot` for
//! cross-entropy). The returned [`ParamGrads`] are the exact gradients of
//! `sum over batch rows of (output_grad row . pre-activation row)`; any batch
//! normalization convention lives in the loss-gradient producers.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Linear,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One dense affine layer: `z = x W^T + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// Shape `(out, in)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<DenseLayer>,
    arch: Vec<usize>,
    /// One activation per hidden layer (`layers.len() - 1` entries).
    activations: Vec<Activation>,
    head: Head,
    /// Dropout rate per hidden layer, in `[0, 1)`.
    dropout: Vec<f64>,
}

/// Per-layer intermediates of one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer (`layer_inputs[0]` is the batch itself).
    pub layer_inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pub preacts: Vec<Array2<f64>>,
    /// Scaled dropout mask per hidden layer (`None` when inactive).
    pub masks: Vec<Option<Array2<f64>>>,
    pub batch_size: usize,
}

/// Parameter gradients, shapes mirroring the network's layers.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(net: &Network) -> Self {
        ParamGrads {
            weights: net
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
        }
    }

    /// Flattened in the same order as [`Network::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptKind {
    Sgd,
    Adagrad,
}

/// First-order optimizer state; AdaGrad accumulators are created lazily on the
/// first step so the state can be built before the network shapes are known.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptKind,
    pub learning_rate: f64,
    pub epsilon: f64,
    accum: Option<(Vec<Array2<f64>>, Vec<Array1<f64>>)>,
}

impl OptimizerState {
    pub fn new(kind: OptKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::Domain(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(OptimizerState {
            kind,
            learning_rate,
            epsilon: 1e-8,
            accum: None,
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptKind::Sgd, learning_rate)
    }

    pub fn adagrad(learning_rate: f64) -> Result<Self> {
        Self::new(OptKind::Adagrad, learning_rate)
    }

    /// Squared-gradient accumulators (AdaGrad only, present after a step).
    pub fn accumulators(&self) -> Option<&(Vec<Array2<f64>>, Vec<Array1<f64>>)> {
        self.accum.as_ref()
    }
}

pub fn init_network(
    arch: &[usize],
    activation: Activation,
    head: Head,
    dropout: &[f64],
    seed: u64,
) -> Result<Network> {
    if arch.len() < 2 {
        return Err(Error::InvalidArchitecture(format!(
            "need at least input and output widths, got {arch:?}"
        )));
    }
    if let Some(zero) = arch.iter().position(|&w| w == 0) {
        return Err(Error::InvalidArchitecture(format!(
            "layer width at position {zero} is zero"
        )));
    }
    let hidden = arch.len() - 2;
    if !dropout.is_empty() && dropout.len() != hidden {
        return Err(Error::InvalidArchitecture(format!(
            "dropout has {} rates but the network has {hidden} hidden layers",
            dropout.len()
        )));
    }
    if let Some(bad) = dropout.iter().find(|&&p| !(0.0..1.0).contains(&p)) {
        return Err(Error::InvalidArchitecture(format!(
            "dropout rate {bad} outside [0, 1)"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(arch.len() - 1);
    for win in arch.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let bound = (1.0 / fan_in as f64).sqrt();
        let weights =
            Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
        layers.push(DenseLayer {
            weights,
            bias: Array1::zeros(fan_out),
        });
    }
    Ok(Network {
        layers,
        arch: arch.to_vec(),
        activations: vec![activation; hidden],
        head,
        dropout: if dropout.is_empty() {
            vec![0.0; hidden]
        } else {
            dropout.to_vec()
        },
    })
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl Network {
    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn arch(&self) -> &[usize] {
        &self.arch
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.arch[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.arch.last().unwrap()
    }

    /// All parameters flattened in layer order, weights row-major then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.degrees_of_freedom());
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    /// Inverse of [`Network::flat_params`].
    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.degrees_of_freedom() {
            return Err(Error::ShapeMismatch(format!(
                "got {} parameters, network has {}",
                params.len(),
                self.degrees_of_freedom()
            )));
        }
        let mut at = 0;
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut() {
                *w = params[at];
                at += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = params[at];
                at += 1;
            }
        }
        Ok(())
    }

    /// Total scalar parameter count (weights + biases).
    pub fn degrees_of_freedom(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(
        &self,
        batch: &Array2<f64>,
        mode: Mode,
        seed: u64,
    ) -> Result<(Array2<f64>, ForwardTrace)> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} columns, network input width is {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let n_layers = self.layers.len();
        let mut trace = ForwardTrace {
            layer_inputs: Vec::with_capacity(n_layers),
            preacts: Vec::with_capacity(n_layers),
            masks: vec![None; n_layers.saturating_sub(1)],
            batch_size: batch.nrows(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut a = batch.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weights.t()) + &layer.bias;
            trace.layer_inputs.push(a);
            let is_hidden = k + 1 < n_layers;
            let mut out = if is_hidden {
                match self.activations[k] {
                    Activation::Relu => z.mapv(|v| v.max(0.0)),
                    Activation::Identity => z.clone(),
                }
            } else {
                match self.head {
                    Head::Linear => z.clone(),
                    Head::Softmax => softmax_rows(&z),
                }
            };
            trace.preacts.push(z);
            if is_hidden {
                let rate = self.dropout[k];
                if rate > 0.0 && mode == Mode::Train {
                    let keep = 1.0 - rate;
                    let mask = Array2::from_shape_fn(out.raw_dim(), |_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    out *= &mask;
                    trace.masks[k] = Some(mask);
                }
            }
            a = out;
        }
        Ok((a, trace))
    }

    /// Exact reverse-mode gradients of `sum_b output_grad[b] . preact_final[b]`.
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &Array2<f64>) -> Result<ParamGrads> {
        let n_layers = self.layers.len();
        if trace.layer_inputs.len() != n_layers || trace.preacts.len() != n_layers {
            return Err(Error::ShapeMismatch(format!(
                "trace depth {} does not match layer count {n_layers}",
                trace.layer_inputs.len()
            )));
        }
        if output_grad.dim() != (trace.batch_size, self.output_dim()) {
            return Err(Error::ShapeMismatch(format!(
                "output_grad shape {:?}, expected ({}, {})",
                output_grad.dim(),
                trace.batch_size,
                self.output_dim()
            )));
        }

        let mut grads = ParamGrads {
            weights: Vec::with_capacity(n_layers),
            biases: Vec::with_capacity(n_layers),
        };
        let mut delta = output_grad.clone();
        for k in (0..n_layers).rev() {
            grads.weights.push(delta.t().dot(&trace.layer_inputs[k]));
            grads.biases.push(delta.sum_axis(Axis(0)));
            if k > 0 {
                let mut da = delta.dot(&self.layers[k].weights);
                if let Some(mask) = &trace.masks[k - 1] {
                    da *= mask;
                }
                delta = match self.activations[k - 1] {
                    Activation::Relu => {
                        let z = &trace.preacts[k - 1];
                        let mut dz = da;
                        dz.zip_mut_with(z, |g, &zv| {
                            if zv <= 0.0 {
                                *g = 0.0;
                            }
                        });
                        dz
                    }
                    Activation::Identity => da,
                };
            }
        }
        grads.weights.reverse();
        grads.biases.reverse();
        Ok(grads)
    }
}

pub fn apply_grads(
    net: &Network,
    grads: &ParamGrads,
    opt: &OptimizerState,
) -> Result<(Network, OptimizerState)> {
    if grads.weights.len() != net.layers.len() {
        return Err(Error::ShapeMismatch(format!(
            "gradients cover {} layers, network has {}",
            grads.weights.len(),
            net.layers.len()
        )));
    }
    for (k, layer) in net.layers.iter().enumerate() {
        if grads.weights[k].raw_dim() != layer.weights.raw_dim()
            || grads.biases[k].raw_dim() != layer.bias.raw_dim()
        {
            return Err(Error::ShapeMismatch(format!(
                "gradient shapes for layer {k} do not mirror the layer"
            )));
        }
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient entries".into()));
    }

    let mut net = net.clone();
    let mut opt = opt.clone();
    let lr = opt.learning_rate;
    match opt.kind {
        OptKind::Sgd => {
            for (layer, (gw, gb)) in net
                .layers
                .iter_mut()
                .zip(grads.weights.iter().zip(&grads.biases))
            {
                layer.weights.zip_mut_with(gw, |w, &g| *w -= lr * g);
                layer.bias.zip_mut_with(gb, |b, &g| *b -= lr * g);
            }
        }
        OptKind::Adagrad => {
            let eps = opt.epsilon;
            let (aw, ab) = opt.accum.get_or_insert_with(|| {
                (
                    net.layers
                        .iter()
                        .map(|l| Array2::zeros(l.weights.raw_dim()))
                        .collect(),
                    net.layers
                        .iter()
                        .map(|l| Array1::zeros(l.bias.raw_dim()))
                        .collect(),
                )
            });
            for (k, layer) in net.layers.iter_mut().enumerate() {
                ndarray::Zip::from(&mut layer.weights)
                    .and(&mut aw[k])
                    .and(&grads.weights[k])
                    .for_each(|w, acc, &g| {
                        *acc += g * g;
                        *w -= lr * g / (*acc + eps).sqrt();
                    });
                ndarray::Zip::from(&mut layer.bias)
                    .and(&mut ab[k])
                    .and(&grads.biases[k])
                    .for_each(|b, acc, &g| {
                        *acc += g * g;
                        *b -= lr * g / (*acc + eps).sqrt();
                    });
            }
        }
    }
    Ok((net, opt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single_layer(weights: Array2<f64>, bias: Array1<f64>, head: Head) -> Network {
        let arch = vec![weights.ncols(), weights.nrows()];
        Network {
            layers: vec![DenseLayer { weights, bias }],
            arch,
            activations: vec![],
            head,
            dropout: vec![],
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_network(&[3, 4, 2], Activation::Relu, Head::Linear, &[], 7).unwrap();
        let b = init_network(&[3, 4, 2], Activation::Relu, Head::Linear, &[], 7).unwrap();
        assert_eq!(a, b);
        let c = init_network(&[3, 4, 2], Activation::Relu, Head::Linear, &[], 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes_and_zero_biases() {
        let net = init_network(&[3, 4, 2], Activation::Relu, Head::Linear, &[], 1).unwrap();
        assert_eq!(net.layers[0].weights.dim(), (4, 3));
        assert_eq!(net.layers[1].weights.dim(), (2, 4));
        assert_eq!(net.layers[0].bias.len(), 4);
        assert_eq!(net.layers[1].bias.len(), 2);
        assert!(net.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_rejects_bad_arch() {
        assert!(matches!(
            init_network(&[5], Activation::Relu, Head::Linear, &[], 0),
            Err(Error::InvalidArchitecture(_))
        ));
        assert!(matches!(
            init_network(&[3, 0, 2], Activation::Relu, Head::Linear, &[], 0),
            Err(Error::InvalidArchitecture(_))
        ));
    }

    #[test]
    fn forward_identity_layer_passes_through() {
        let net = single_layer(Array2::eye(2), Array1::zeros(2), Head::Linear);
        let (y, _) = net.forward(&array![[1.0, 2.0]], Mode::Eval, 0).unwrap();
        assert_eq!(y, array![[1.0, 2.0]]);
    }

    #[test]
    fn forward_relu_clamps_negative_preactivation() {
        // hidden unit: z = 2*(-3) + 1 = -5, relu -> 0, output = 0
        let net = Network {
            layers: vec![
                DenseLayer {
                    weights: array![[2.0]],
                    bias: array![1.0],
                },
                DenseLayer {
                    weights: array![[1.0]],
                    bias: array![0.0],
                },
            ],
            arch: vec![1, 1, 1],
            activations: vec![Activation::Relu],
            head: Head::Linear,
            dropout: vec![0.0],
        };
        let (y, trace) = net.forward(&array![[-3.0]], Mode::Eval, 0).unwrap();
        assert_eq!(trace.preacts[0][[0, 0]], -5.0);
        assert_eq!(y[[0, 0]], 0.0);
    }

    #[test]
    fn softmax_equal_logits_is_uniform() {
        let net = single_layer(Array2::zeros((4, 2)), Array1::zeros(4), Head::Softmax);
        let (y, _) = net.forward(&array![[1.0, -1.0]], Mode::Eval, 0).unwrap();
        for &p in y.iter() {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert!((y.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let net = init_network(&[3, 2], Activation::Relu, Head::Linear, &[], 0).unwrap();
        assert!(matches!(
            net.forward(&array![[1.0, 2.0]], Mode::Eval, 0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let net = init_network(&[3, 4, 2], Activation::Relu, Head::Linear, &[], 3).unwrap();
        let x = array![[0.3, -0.2, 0.9], [1.0, 0.5, -0.4]];
        let (_, trace) = net.forward(&x, Mode::Eval, 0).unwrap();
        let grads = net.backward(&trace, &Array2::zeros((2, 2))).unwrap();
        assert!(grads.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(grads.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_scalar_chain_rule() {
        // y = w*x with w=1, x=2; upstream grad 3 -> dW = 3*2 = 6
        let net = single_layer(array![[1.0]], array![0.0], Head::Linear);
        let (_, trace) = net.forward(&array![[2.0]], Mode::Eval, 0).unwrap();
        let grads = net.backward(&trace, &array![[3.0]]).unwrap();
        assert_eq!(grads.weights[0][[0, 0]], 6.0);
        assert_eq!(grads.biases[0][0], 3.0);
    }

    /// Flattens all parameters, perturbs one at a time, central differences.
    pub(crate) fn finite_diff_param_grads<F>(net: &Network, step: f64, mut scalar: F) -> ParamGrads
    where
        F: FnMut(&Network) -> f64,
    {
        let mut out = ParamGrads::zeros_like(net);
        for k in 0..net.layers.len() {
            for idx in 0..net.layers[k].weights.len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                plus.layers_mut()[k].weights.as_slice_mut().unwrap()[idx] += step;
                minus.layers_mut()[k].weights.as_slice_mut().unwrap()[idx] -= step;
                out.weights[k].as_slice_mut().unwrap()[idx] =
                    (scalar(&plus) - scalar(&minus)) / (2.0 * step);
            }
            for idx in 0..net.layers[k].bias.len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                plus.layers_mut()[k].bias[idx] += step;
                minus.layers_mut()[k].bias[idx] -= step;
                out.biases[k][idx] = (scalar(&plus) - scalar(&minus)) / (2.0 * step);
            }
        }
        out
    }

    pub(crate) fn max_rel_err(a: &ParamGrads, b: &ParamGrads) -> f64 {
        let mut worst: f64 = 0.0;
        for (x, y) in a
            .weights
            .iter()
            .flat_map(|w| w.iter())
            .zip(b.weights.iter().flat_map(|w| w.iter()))
            .chain(
                a.biases
                    .iter()
                    .flat_map(|v| v.iter())
                    .zip(b.biases.iter().flat_map(|v| v.iter())),
            )
        {
            let denom = x.abs().max(y.abs()).max(1.0);
            worst = worst.max((x - y).abs() / denom);
        }
        worst
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let net =
                init_network(&[4, 6, 5, 3], Activation::Relu, Head::Linear, &[], trial).unwrap();
            let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
            let g = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
            let (_, trace) = net.forward(&x, Mode::Eval, 0).unwrap();
            let analytic = net.backward(&trace, &g).unwrap();
            let numeric = finite_diff_param_grads(&net, 1e-5, |n| {
                let (y, _) = n.forward(&x, Mode::Eval, 0).unwrap();
                (&g * &y).sum()
            });
            assert!(
                max_rel_err(&analytic, &numeric) < 1e-6,
                "trial {trial}: rel err {}",
                max_rel_err(&analytic, &numeric)
            );
        }
    }

    #[test]
    fn degrees_of_freedom_counts_parameters() {
        let net = init_network(&[3, 4, 2], Activation::Relu, Head::Linear, &[], 0).unwrap();
        assert_eq!(net.degrees_of_freedom(), 26);
        let tiny = init_network(&[1, 1], Activation::Identity, Head::Linear, &[], 0).unwrap();
        assert_eq!(tiny.degrees_of_freedom(), 2);
        let other = init_network(&[3, 4, 2], Activation::Relu, Head::Linear, &[], 99).unwrap();
        assert_eq!(other.degrees_of_freedom(), net.degrees_of_freedom());
    }

    #[test]
    fn sgd_step_hand_values() {
        let net = single_layer(array![[1.0]], array![0.0], Head::Linear);
        let grads = ParamGrads {
            weights: vec![array![[3.0]]],
            biases: vec![array![0.0]],
        };
        let opt = OptimizerState::sgd(0.1).unwrap();
        let (net2, _) = apply_grads(&net, &grads, &opt).unwrap();
        assert!((net2.layers[0].weights[[0, 0]] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn zero_grads_leave_network_unchanged() {
        let net = init_network(&[2, 3, 1], Activation::Relu, Head::Linear, &[], 5).unwrap();
        let grads = ParamGrads::zeros_like(&net);
        let opt = OptimizerState::adagrad(0.01).unwrap();
        let (net2, _) = apply_grads(&net, &grads, &opt).unwrap();
        assert_eq!(net, net2);
    }

    #[test]
    fn adagrad_first_step_magnitude() {
        // g=1, alpha=0.01: step = 0.01/sqrt(1 + 1e-8) ~ 0.01
        let net = single_layer(array![[0.0]], array![0.0], Head::Linear);
        let grads = ParamGrads {
            weights: vec![array![[1.0]]],
            biases: vec![array![0.0]],
        };
        let opt = OptimizerState::adagrad(0.01).unwrap();
        let (net2, _) = apply_grads(&net, &grads, &opt).unwrap();
        assert!((net2.layers[0].weights[[0, 0]] + 0.01).abs() < 1e-8);
    }

    #[test]
    fn adagrad_accumulator_is_nondecreasing() {
        let mut net = init_network(&[2, 3, 1], Activation::Relu, Head::Linear, &[], 5).unwrap();
        let mut opt = OptimizerState::adagrad(0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut prev: Option<Vec<f64>> = None;
        for _ in 0..5 {
            let grads = ParamGrads {
                weights: net
                    .layers()
                    .iter()
                    .map(|l| Array2::from_shape_fn(l.weights.raw_dim(), |_| rng.random::<f64>()))
                    .collect(),
                biases: net
                    .layers()
                    .iter()
                    .map(|l| Array1::from_shape_fn(l.bias.raw_dim(), |_| rng.random::<f64>()))
                    .collect(),
            };
            let (n2, o2) = apply_grads(&net, &grads, &opt).unwrap();
            net = n2;
            opt = o2;
            let flat: Vec<f64> = {
                let (aw, ab) = opt.accumulators().unwrap();
                aw.iter()
                    .flat_map(|a| a.iter().cloned())
                    .chain(ab.iter().flat_map(|a| a.iter().cloned()))
                    .collect()
            };
            if let Some(p) = &prev {
                assert!(flat.iter().zip(p).all(|(now, before)| now >= before));
            }
            prev = Some(flat);
        }
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        let net = single_layer(array![[1.0]], array![0.0], Head::Linear);
        let grads = ParamGrads {
            weights: vec![array![[f64::NAN]]],
            biases: vec![array![0.0]],
        };
        let opt = OptimizerState::sgd(0.1).unwrap();
        assert!(matches!(
            apply_grads(&net, &grads, &opt),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn dropout_zero_train_matches_eval() {
        let net =
            init_network(&[3, 5, 2], Activation::Relu, Head::Linear, &[0.0], 11).unwrap();
        let x = array![[0.1, -0.7, 0.4], [1.2, 0.0, -0.3]];
        let (train_y, _) = net.forward(&x, Mode::Train, 123).unwrap();
        let (eval_y, _) = net.forward(&x, Mode::Eval, 456).unwrap();
        assert_eq!(train_y, eval_y);
    }

    #[test]
    fn dropout_is_deterministic_per_seed_and_masks_backprop() {
        let net = init_network(&[3, 8, 2], Activation::Relu, Head::Linear, &[0.5], 11).unwrap();
        let x = array![[0.1, -0.7, 0.4]];
        let (a, _) = net.forward(&x, Mode::Train, 9).unwrap();
        let (b, trace) = net.forward(&x, Mode::Train, 9).unwrap();
        assert_eq!(a, b);
        assert!(trace.masks[0].is_some());
        // gradient through a dropped unit is zero
        let grads = net.backward(&trace, &array![[1.0, 1.0]]).unwrap();
        let mask = trace.masks[0].as_ref().unwrap();
        for (j, &m) in mask.row(0).iter().enumerate() {
            if m == 0.0 {
                assert!(grads.weights[0].row(j).iter().all(|&v| v == 0.0));
            }
        }
    }
}
