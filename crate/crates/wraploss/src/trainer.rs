//! Wrapped-loss training loop with selectable weight-update strategy.
//!
//! The loop runs per mini-batch: compute per-output losses, update the wrap
//! weights from those losses, compute the output gradient with the freshly
//! updated weights, backprop, and take an optimizer step. `off` mode freezes
//! the weights at 1, which makes the run identical to plain training with the
//! original loss; a static-weight run uses fixed weights and drops the log
//! regularizer (pure weighted loss, the frequency-balancing baseline).

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core_nn::{apply_grads, Head, Mode, Network, OptKind, OptimizerState};
use crate::datagen::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::losses::{
    per_class_share_cross_entropy, per_output_squared_error, wrapped_cross_entropy_output_grad,
    wrapped_squared_output_grad, wrapped_total, PerOutputLosses, WrapWeights, DEFAULT_O_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OMode {
    /// Weights frozen at 1 (plain original-loss training).
    Off,
    /// Descent step on `d l_wrap / d o_i = l_i - 1/o_i`.
    Gradient,
    /// Direct assignment `o_i <- 1/l_i`.
    Assignment,
    /// Geometric interpolation towards the assignment target.
    Smoothed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rmse,
    OriginalLoss,
    Accuracy,
    PerClassAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptKind,
    pub loss: LossKind,
    pub o_mode: OMode,
    /// Fixed weights for the static-baseline mode; requires `o_mode = off`.
    #[serde(default)]
    pub static_weights: Option<Vec<f64>>,
    #[serde(default = "default_o_floor")]
    pub o_floor: f64,
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    pub seed: u64,
    #[serde(default = "default_metric")]
    pub eval_metric: Metric,
}

fn default_o_floor() -> f64 {
    DEFAULT_O_FLOOR
}

fn default_tol() -> f64 {
    1e-5
}

fn default_patience() -> usize {
    50
}

fn default_metric() -> Metric {
    Metric::Rmse
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0) {
            problems.push(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            problems.push("max_epochs must be at least 1".into());
        }
        if !(self.o_floor > 0.0) {
            problems.push(format!("o_floor must be positive, got {}", self.o_floor));
        }
        if !(self.convergence_tol > 0.0) {
            problems.push(format!(
                "convergence_tol must be positive, got {}",
                self.convergence_tol
            ));
        }
        if self.patience == 0 {
            problems.push("patience must be at least 1".into());
        }
        if let OMode::Smoothed(beta) = self.o_mode {
            if !(beta > 0.0 && beta < 1.0) {
                problems.push(format!("smoothed beta must be in (0, 1), got {beta}"));
            }
        }
        if self.static_weights.is_some() && self.o_mode != OMode::Off {
            problems.push("static_weights requires o_mode = off".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub network: Network,
    pub weights: WrapWeights,
    pub optimizer: OptimizerState,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based epoch index.
    pub epoch: usize,
    pub train_wrapped: f64,
    pub train_original: f64,
    /// Eval-set metric, computed with plain (o = 1) semantics.
    pub eval_metric: f64,
    pub o_min: f64,
    pub o_max: f64,
    pub o_mean: f64,
    pub per_class_accuracy: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub weights: WrapWeights,
    pub history: Vec<EpochMetrics>,
}

/// One wrap-weight update from batch losses; outputs with zero coverage keep
/// their previous weight.
pub fn update_wrap_weights(
    current: &WrapWeights,
    losses: &PerOutputLosses,
    mode: OMode,
    learning_rate: f64,
) -> Result<WrapWeights> {
    if current.len() != losses.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights vs {} per-output losses",
            current.len(),
            losses.len()
        )));
    }
    let floor = current.floor();
    let next = Array1::from_shape_fn(current.len(), |i| {
        let o = current.values()[i];
        if losses.coverage[i] == 0 {
            return o;
        }
        let l = losses.values[i];
        match mode {
            OMode::Off => o,
            OMode::Gradient => o - learning_rate * (l - 1.0 / o),
            // 1/max(l, floor) rather than 1/(l + floor): keeps the post-update
            // o-gradient magnitude at or below the floor itself.
            OMode::Assignment => 1.0 / l.max(floor),
            OMode::Smoothed(beta) => (1.0 - beta) * o + beta / (l + floor),
        }
    });
    let mut out = current.clone();
    out.set_clamped(next);
    Ok(out)
}

fn derive_batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    // splitmix-style mixing keeps dropout streams distinct per step
    let mut z = seed
        .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((batch as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn batch_losses(
    data: &Dataset,
    outputs: &ndarray::Array2<f64>,
    loss: LossKind,
    carry: Option<&PerOutputLosses>,
) -> Result<PerOutputLosses> {
    match loss {
        LossKind::Squared => per_output_squared_error(data.continuous_targets()?, outputs),
        // Class-share losses: each class holds its share of the batch-mean
        // cross-entropy, so rare classes have small l_i and large assigned o_i,
        // and the shares sum to the standard batch loss.
        LossKind::CrossEntropy => per_class_share_cross_entropy(data.labels()?, outputs, carry),
    }
}

/// Full Algorithm-1-style training: per batch, losses -> o update -> wrapped
/// output gradient with the new o -> backward -> optimizer step.
pub fn train(
    net: Network,
    train_data: &Dataset,
    eval_data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_data.validate()?;
    eval_data.validate()?;
    let c = train_data.output_dim();
    if net.output_dim() != c || net.input_dim() != train_data.feature_dim() {
        return Err(Error::ShapeMismatch(format!(
            "network {}->{} vs data {}->{c}",
            net.input_dim(),
            net.output_dim(),
            train_data.feature_dim()
        )));
    }
    match cfg.loss {
        LossKind::Squared => {
            train_data.continuous_targets()?;
        }
        LossKind::CrossEntropy => {
            train_data.labels()?;
            if net.head() != Head::Softmax {
                return Err(Error::Validation(vec![
                    "cross_entropy loss requires a softmax head".into(),
                ]));
            }
        }
    }

    let static_weights = match &cfg.static_weights {
        Some(w) => {
            if w.len() != c {
                return Err(Error::Validation(vec![format!(
                    "static_weights has {} entries, output width is {c}",
                    w.len()
                )]));
            }
            Some(WrapWeights::from_values(
                Array1::from_vec(w.clone()).mapv(|v| v.max(cfg.o_floor)),
                cfg.o_floor,
            )?)
        }
        None => None,
    };

    let mut state = TrainState {
        network: net,
        weights: static_weights
            .clone()
            .map_or(WrapWeights::ones(c, cfg.o_floor)?, |w| w),
        optimizer: OptimizerState::new(cfg.optimizer, cfg.learning_rate)?,
        epoch: 0,
    };
    let mut carry: Option<PerOutputLosses> = None;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5341_4C54_5348_5546);
    let mut history: Vec<EpochMetrics> = Vec::new();

    let n = train_data.len();
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_data.select(chunk);
            let seed = derive_batch_seed(cfg.seed, epoch, batch_idx);
            let (outputs, trace) = state.network.forward(&batch.x, Mode::Train, seed)?;
            let losses = batch_losses(&batch, &outputs, cfg.loss, carry.as_ref())?;
            if losses.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::TrainingAborted {
                    epoch,
                    batch: batch_idx,
                    detail: format!(
                        "non-finite per-output loss; o min/max/mean = {:.3e}/{:.3e}/{:.3e}",
                        state.weights.min(),
                        state.weights.max(),
                        state.weights.mean()
                    ),
                });
            }
            if static_weights.is_none() && cfg.o_mode != OMode::Off {
                state.weights =
                    update_wrap_weights(&state.weights, &losses, cfg.o_mode, cfg.learning_rate)?;
            }
            if cfg.loss == LossKind::CrossEntropy {
                carry = Some(losses);
            }
            let output_grad = match cfg.loss {
                LossKind::Squared => wrapped_squared_output_grad(
                    &state.weights,
                    batch.continuous_targets()?,
                    &outputs,
                )?,
                LossKind::CrossEntropy => {
                    wrapped_cross_entropy_output_grad(&state.weights, batch.labels()?, &outputs)?
                }
            };
            let grads = state.network.backward(&trace, &output_grad)?;
            let (next_net, next_opt) = apply_grads(&state.network, &grads, &state.optimizer)?;
            state.network = next_net;
            state.optimizer = next_opt;
        }
        state.epoch = epoch;

        history.push(epoch_metrics(&mut state, train_data, eval_data, cfg, epoch)?);
        let wrapped: Vec<f64> = history.iter().map(|m| m.train_wrapped).collect();
        if has_converged(&wrapped, cfg.convergence_tol, cfg.patience) {
            break;
        }
    }

    Ok(TrainOutcome {
        network: state.network,
        weights: state.weights,
        history,
    })
}

fn epoch_metrics(
    state: &mut TrainState,
    train_data: &Dataset,
    eval_data: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochMetrics> {
    let (outputs, _) = state.network.forward(&train_data.x, Mode::Eval, 0)?;
    let losses = batch_losses(train_data, &outputs, cfg.loss, None)?;
    // assignment mode keeps o consistent with the losses just measured
    if cfg.static_weights.is_none() && matches!(cfg.o_mode, OMode::Assignment) {
        state.weights =
            update_wrap_weights(&state.weights, &losses, OMode::Assignment, cfg.learning_rate)?;
    }
    let (train_wrapped, train_original) = if let Some(static_w) = &cfg.static_weights {
        // pure weighted loss: no log regularizer
        let weighted: f64 = static_w
            .iter()
            .zip(losses.values.iter())
            .map(|(w, l)| w * l)
            .sum();
        (weighted, losses.total())
    } else {
        let report = wrapped_total(&state.weights, &losses)?;
        (report.wrapped_total, report.original_total)
    };

    let eval_metric = match evaluate(&state.network, eval_data, cfg.eval_metric)? {
        MetricValue::Scalar(v) => v,
        MetricValue::PerClass(v) => {
            v.iter().sum::<f64>() / v.len().max(1) as f64
        }
    };
    let per_class_accuracy = match (&eval_data.targets, state.network.head()) {
        (Targets::Labels { .. }, Head::Softmax) => {
            match evaluate(&state.network, eval_data, Metric::PerClassAccuracy)? {
                MetricValue::PerClass(v) => Some(v),
                MetricValue::Scalar(_) => None,
            }
        }
        _ => None,
    };

    Ok(EpochMetrics {
        epoch,
        train_wrapped,
        train_original,
        eval_metric,
        o_min: state.weights.min(),
        o_max: state.weights.max(),
        o_mean: state.weights.mean(),
        per_class_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricValue {
    Scalar(f64),
    PerClass(Vec<f64>),
}

pub fn evaluate(net: &Network, data: &Dataset, metric: Metric) -> Result<MetricValue> {
    let (outputs, _) = net.forward(&data.x, Mode::Eval, 0)?;
    match metric {
        Metric::Rmse => {
            let y = data.continuous_targets().map_err(|_| Error::IncompatibleMetric {
                metric: "rmse".into(),
                head: "classification targets".into(),
            })?;
            let diff = y - &outputs;
            let mse = diff.mapv(|d| d * d).mean().unwrap();
            Ok(MetricValue::Scalar(mse.sqrt()))
        }
        Metric::OriginalLoss => {
            let losses = match &data.targets {
                Targets::Continuous(_) => {
                    per_output_squared_error(data.continuous_targets()?, &outputs)?
                }
                Targets::Labels { .. } => {
                    per_class_share_cross_entropy(data.labels()?, &outputs, None)?
                }
            };
            Ok(MetricValue::Scalar(losses.total()))
        }
        Metric::Accuracy | Metric::PerClassAccuracy => {
            if net.head() != Head::Softmax {
                return Err(Error::IncompatibleMetric {
                    metric: "accuracy".into(),
                    head: "linear".into(),
                });
            }
            let labels = data.labels().map_err(|_| Error::IncompatibleMetric {
                metric: "accuracy".into(),
                head: "continuous targets".into(),
            })?;
            let c = data.output_dim();
            let mut correct = vec![0usize; c];
            let mut totals = vec![0usize; c];
            for (row, &label) in outputs.rows().into_iter().zip(labels) {
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                totals[label] += 1;
                if pred == label {
                    correct[label] += 1;
                }
            }
            match metric {
                Metric::Accuracy => Ok(MetricValue::Scalar(
                    correct.iter().sum::<usize>() as f64 / labels.len() as f64,
                )),
                _ => Ok(MetricValue::PerClass(
                    correct
                        .iter()
                        .zip(&totals)
                        .map(|(&c, &t)| if t > 0 { c as f64 / t as f64 } else { 0.0 })
                        .collect(),
                )),
            }
        }
    }
}

/// True iff the best train wrapped loss has not improved by relative `tol`
/// for `patience` consecutive epochs. Improvement exactly at the tolerance
/// boundary counts as improvement.
pub fn has_converged(wrapped_history: &[f64], tol: f64, patience: usize) -> bool {
    debug_assert!(tol > 0.0 && patience >= 1);
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    for &value in wrapped_history {
        if best.is_infinite() || best - value >= tol * best.abs() {
            stale = 0;
        } else {
            stale += 1;
        }
        best = best.min(value);
    }
    stale >= patience
}

/// Index into `history` of the best eval metric (first occurrence), plus the
/// stored 1-based epoch number.
pub fn epoch_of_best(history: &[EpochMetrics], higher_is_better: bool) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for m in history {
        let improves = match best {
            None => true,
            Some((_, b)) => {
                if higher_is_better {
                    m.eval_metric > b
                } else {
                    m.eval_metric < b
                }
            }
        };
        if improves {
            best = Some((m.epoch, m.eval_metric));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_nn::{init_network, Activation};
    use crate::datagen::{
        gen_heteroscedastic_regression, gen_imbalanced_classification, HeteroSpec, ImbalanceSpec,
        MapKind,
    };
    use crate::losses::grad_wrapped_wrt_o;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn base_cfg() -> TrainConfig {
        TrainConfig {
            max_epochs: 10,
            learning_rate: 0.01,
            batch_size: 8,
            optimizer: OptKind::Sgd,
            loss: LossKind::Squared,
            o_mode: OMode::Off,
            static_weights: None,
            o_floor: DEFAULT_O_FLOOR,
            convergence_tol: 1e-5,
            patience: 50,
            seed: 1,
            eval_metric: Metric::Rmse,
        }
    }

    fn losses_of(values: Array1<f64>) -> PerOutputLosses {
        let coverage = vec![1; values.len()];
        PerOutputLosses { values, coverage }
    }

    #[test]
    fn gradient_mode_hand_step() {
        let o = WrapWeights::ones(1, DEFAULT_O_FLOOR).unwrap();
        let next =
            update_wrap_weights(&o, &losses_of(array![4.0]), OMode::Gradient, 0.1).unwrap();
        assert!((next.values()[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn gradient_mode_fixed_point_at_inverse_loss() {
        let o = WrapWeights::from_values(array![0.5], DEFAULT_O_FLOOR).unwrap();
        let next =
            update_wrap_weights(&o, &losses_of(array![2.0]), OMode::Gradient, 0.1).unwrap();
        assert_eq!(next.values()[0], 0.5);
    }

    #[test]
    fn assignment_mode_inverts_loss() {
        let o = WrapWeights::ones(1, DEFAULT_O_FLOOR).unwrap();
        let next =
            update_wrap_weights(&o, &losses_of(array![2.0]), OMode::Assignment, 0.1).unwrap();
        assert!((next.values()[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn assignment_mode_leaves_o_gradient_within_floor() {
        let o = WrapWeights::ones(4, DEFAULT_O_FLOOR).unwrap();
        let l = losses_of(array![3.7, 0.004, 91.0, 1e-12]);
        let next = update_wrap_weights(&o, &l, OMode::Assignment, 0.1).unwrap();
        let g = grad_wrapped_wrt_o(&next, &l).unwrap();
        for (i, &gi) in g.iter().enumerate() {
            assert!(gi.abs() <= DEFAULT_O_FLOOR, "output {i}: gradient {gi}");
        }
    }

    #[test]
    fn zero_coverage_keeps_previous_weight() {
        let o = WrapWeights::from_values(array![0.3, 0.4], DEFAULT_O_FLOOR).unwrap();
        let l = PerOutputLosses {
            values: array![2.0, 99.0],
            coverage: vec![5, 0],
        };
        let next = update_wrap_weights(&o, &l, OMode::Assignment, 0.1).unwrap();
        assert!((next.values()[0] - 0.5).abs() < 1e-8);
        assert_eq!(next.values()[1], 0.4);
    }

    #[test]
    fn smoothed_mode_interpolates() {
        let o = WrapWeights::ones(1, DEFAULT_O_FLOOR).unwrap();
        let next =
            update_wrap_weights(&o, &losses_of(array![2.0]), OMode::Smoothed(0.5), 0.1).unwrap();
        let expected = 0.5 * 1.0 + 0.5 / (2.0 + DEFAULT_O_FLOOR);
        assert!((next.values()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn converged_cases() {
        assert!(!has_converged(&[10.0, 8.0, 6.0, 4.0], 1e-3, 2));
        assert!(has_converged(&[5.0, 5.0, 5.0, 5.0], 1e-3, 2));
        // improvement exactly at the boundary counts as improvement
        // (dyadic values so the comparison is exact in floating point)
        let tol = 0.25;
        let history = vec![1.0, 0.75, 0.5625];
        assert!(!has_converged(&history, tol, 2));
        assert!(!has_converged(&[], 1e-3, 1));
    }

    #[test]
    fn evaluate_examples() {
        // perfect predictions
        let net = init_network(&[2, 2], Activation::Identity, Head::Linear, &[], 0).unwrap();
        let mut perfect = net.clone();
        perfect.layers_mut()[0].weights = Array2::eye(2);
        perfect.layers_mut()[0].bias = Array1::zeros(2);
        let x = array![[1.0, 2.0], [3.0, -1.0]];
        let data = Dataset {
            x: x.clone(),
            targets: Targets::Continuous(x.clone()),
            provenance: "t".into(),
        };
        match evaluate(&perfect, &data, Metric::Rmse).unwrap() {
            MetricValue::Scalar(v) => assert_eq!(v, 0.0),
            _ => panic!(),
        }
        // residuals (3,4) on one sample, two outputs -> sqrt(25/2)
        let data2 = Dataset {
            x: array![[1.0, 2.0]],
            targets: Targets::Continuous(array![[1.0 + 3.0, 2.0 + 4.0]]),
            provenance: "t".into(),
        };
        match evaluate(&perfect, &data2, Metric::Rmse).unwrap() {
            MetricValue::Scalar(v) => assert!((v - (12.5f64).sqrt()).abs() < 1e-12),
            _ => panic!(),
        }
    }

    #[test]
    fn constant_classifier_per_class_accuracy() {
        // bias strongly favors class 0 regardless of input
        let mut net = init_network(&[2, 3], Activation::Identity, Head::Softmax, &[], 0).unwrap();
        net.layers_mut()[0].weights = Array2::zeros((3, 2));
        net.layers_mut()[0].bias = array![10.0, 0.0, 0.0];
        let data = Dataset {
            x: Array2::zeros((6, 2)),
            targets: Targets::Labels {
                labels: vec![0, 0, 1, 1, 2, 2],
                classes: 3,
            },
            provenance: "t".into(),
        };
        match evaluate(&net, &data, Metric::PerClassAccuracy).unwrap() {
            MetricValue::PerClass(v) => assert_eq!(v, vec![1.0, 0.0, 0.0]),
            _ => panic!(),
        }
        match evaluate(&net, &data, Metric::Accuracy).unwrap() {
            MetricValue::Scalar(v) => assert!((v - 1.0 / 3.0).abs() < 1e-12),
            _ => panic!(),
        }
    }

    #[test]
    fn incompatible_metric_is_rejected() {
        let net = init_network(&[2, 2], Activation::Identity, Head::Linear, &[], 0).unwrap();
        let data = Dataset {
            x: Array2::zeros((2, 2)),
            targets: Targets::Labels {
                labels: vec![0, 1],
                classes: 2,
            },
            provenance: "t".into(),
        };
        assert!(matches!(
            evaluate(&net, &data, Metric::Accuracy),
            Err(Error::IncompatibleMetric { .. })
        ));
    }

    #[test]
    fn zero_noise_linear_data_is_solved() {
        let spec = HeteroSpec {
            input_dim: 3,
            output_dim: 2,
            map: MapKind::Linear,
            sigma: vec![0.0, 0.0],
            n_train: 64,
            n_test: 32,
            seed: 5,
        };
        let (train_data, test_data) = gen_heteroscedastic_regression(&spec).unwrap();
        let net = init_network(&[3, 2], Activation::Identity, Head::Linear, &[], 0).unwrap();
        let mut cfg = base_cfg();
        cfg.max_epochs = 2000;
        cfg.learning_rate = 0.05;
        cfg.batch_size = 16;
        cfg.convergence_tol = 1e-12;
        cfg.patience = 2000;
        let out = train(net, &train_data, &test_data, &cfg).unwrap();
        let last = out.history.last().unwrap();
        let rmse = match evaluate(&out.network, &train_data, Metric::Rmse).unwrap() {
            MetricValue::Scalar(v) => v,
            _ => unreachable!(),
        };
        assert!(rmse < 1e-3, "train rmse {rmse} after {} epochs", last.epoch);
    }

    #[test]
    fn history_length_matches_epochs_run() {
        let spec = HeteroSpec {
            input_dim: 2,
            output_dim: 1,
            map: MapKind::Linear,
            sigma: vec![0.1],
            n_train: 32,
            n_test: 16,
            seed: 3,
        };
        let (train_data, test_data) = gen_heteroscedastic_regression(&spec).unwrap();
        let net = init_network(&[2, 4, 1], Activation::Relu, Head::Linear, &[], 0).unwrap();
        let mut cfg = base_cfg();
        cfg.max_epochs = 7;
        let out = train(net, &train_data, &test_data, &cfg).unwrap();
        assert_eq!(out.history.len(), 7);
        assert_eq!(out.history.last().unwrap().epoch, 7);
    }

    #[test]
    fn off_mode_matches_hand_rolled_plain_training() {
        let spec = HeteroSpec {
            input_dim: 3,
            output_dim: 2,
            map: MapKind::Linear,
            sigma: vec![0.5, 1.0],
            n_train: 16,
            n_test: 8,
            seed: 11,
        };
        let (train_data, test_data) = gen_heteroscedastic_regression(&spec).unwrap();
        let net = init_network(&[3, 5, 2], Activation::Relu, Head::Linear, &[], 9).unwrap();
        let mut cfg = base_cfg();
        cfg.max_epochs = 25;
        cfg.batch_size = 16; // full batch: row order inside the batch is irrelevant
        cfg.learning_rate = 0.05;
        let out = train(net.clone(), &train_data, &test_data, &cfg).unwrap();

        // independent plain loop: mean squared loss gradient, sgd
        let mut plain = net;
        let y = train_data.continuous_targets().unwrap();
        let n = train_data.len() as f64;
        for _ in 0..25 {
            let (outputs, trace) = plain.forward(&train_data.x, Mode::Eval, 0).unwrap();
            let grad = (&outputs - y) * (2.0 / n);
            let grads = plain.backward(&trace, &grad).unwrap();
            let opt = OptimizerState::sgd(0.05).unwrap();
            let (next, _) = apply_grads(&plain, &grads, &opt).unwrap();
            plain = next;
        }
        // row order inside the full batch differs (shuffle), so sums can
        // disagree at the last ulp; anything beyond that is a real divergence
        for (a, b) in out
            .network
            .flat_params()
            .iter()
            .zip(plain.flat_params().iter())
        {
            let scale = a.abs().max(b.abs()).max(1.0);
            assert!((a - b).abs() <= 1e-12 * scale, "trajectories diverged: {a} vs {b}");
        }
        assert!(out.weights.values().iter().all(|&o| o == 1.0));
        for m in &out.history {
            assert_eq!(m.train_wrapped, m.train_original);
        }
    }

    #[test]
    fn combined_update_does_not_increase_wrapped_loss_at_small_lr() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut failures = 0;
        for trial in 0..120u64 {
            let net = init_network(&[4, 6, 3], Activation::Relu, Head::Linear, &[], trial).unwrap();
            let x = Array2::from_shape_fn((8, 4), |_| rng.random_range(-1.0..1.0));
            let y = Array2::from_shape_fn((8, 3), |_| rng.random_range(-1.0..1.0));
            let lr = 1e-3;
            let o = WrapWeights::ones(3, DEFAULT_O_FLOOR).unwrap();

            let (outputs, trace) = net.forward(&x, Mode::Eval, 0).unwrap();
            let losses = per_output_squared_error(&y, &outputs).unwrap();
            let before = wrapped_total(&o, &losses).unwrap().wrapped_total;

            let o_next = update_wrap_weights(&o, &losses, OMode::Gradient, lr).unwrap();
            let grad = wrapped_squared_output_grad(&o_next, &y, &outputs).unwrap();
            let grads = net.backward(&trace, &grad).unwrap();
            let opt = OptimizerState::sgd(lr).unwrap();
            let (net_next, _) = apply_grads(&net, &grads, &opt).unwrap();

            let (outputs2, _) = net_next.forward(&x, Mode::Eval, 0).unwrap();
            let losses2 = per_output_squared_error(&y, &outputs2).unwrap();
            let after = wrapped_total(&o_next, &losses2).unwrap().wrapped_total;
            if after > before + 1e-12 {
                failures += 1;
                eprintln!("trial {trial}: wrapped loss rose {before} -> {after}");
            }
        }
        assert_eq!(failures, 0);
    }

    #[test]
    fn assignment_mode_orders_weights_inversely_to_losses() {
        let spec = ImbalanceSpec::random_blobs(
            4,
            3,
            3.0,
            1.2,
            60,
            vec![0.1, 1.0, 1.0, 1.0],
            20,
            13,
        )
        .unwrap();
        let (train_data, test_data) = gen_imbalanced_classification(&spec).unwrap();
        let net = init_network(&[3, 16, 4], Activation::Relu, Head::Softmax, &[], 2).unwrap();
        let mut cfg = base_cfg();
        cfg.loss = LossKind::CrossEntropy;
        cfg.o_mode = OMode::Assignment;
        cfg.eval_metric = Metric::Accuracy;
        cfg.max_epochs = 5;
        cfg.batch_size = 20;
        cfg.learning_rate = 0.05;
        let out = train(net, &train_data, &test_data, &cfg).unwrap();
        // after the final epoch the weights are assigned from full-pass losses
        let (outputs, _) = out.network.forward(&train_data.x, Mode::Eval, 0).unwrap();
        let losses =
            per_class_share_cross_entropy(train_data.labels().unwrap(), &outputs, None)
                .unwrap();
        let o = out.weights.values();
        for i in 0..4 {
            for j in 0..4 {
                if losses.values[i] < losses.values[j] {
                    assert!(
                        o[i] > o[j],
                        "l[{i}]={} < l[{j}]={} but o[{i}]={} <= o[{j}]={}",
                        losses.values[i],
                        losses.values[j],
                        o[i],
                        o[j]
                    );
                }
            }
        }
    }

    #[test]
    fn static_weights_require_off_mode() {
        let mut cfg = base_cfg();
        cfg.static_weights = Some(vec![1.0, 2.0]);
        cfg.o_mode = OMode::Gradient;
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
    }

    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;
}
