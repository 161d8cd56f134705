//! Per-output losses and the wrapped-loss family.
//!
//! The wrapped loss over per-output losses `l_i` and positive weights `o_i` is
//! `sum_i (o_i * l_i + log(1/o_i))`; with `o_i = 1` everywhere it reduces to
//! the plain total `sum_i l_i`. Also here: the sigma-form negative
//! log-likelihood (same quantity under `o_i = 1/sigma_i^2`) and the static
//! median-frequency class weights used as the imbalance baseline.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_O_FLOOR: f64 = 1e-8;

/// Batch-aggregated per-output losses.
///
/// For regression `values[i]` is the batch mean of the i-th squared residual;
/// for classification it is the mean `-log p(true)` over the batch samples of
/// class `i`. `coverage[i]` counts the samples that contributed.
#[derive(Debug, Clone, PartialEq)]
pub struct PerOutputLosses {
    pub values: Array1<f64>,
    pub coverage: Vec<usize>,
}

impl PerOutputLosses {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.sum()
    }
}

/// The learnable per-output loss weights, kept at or above a positive floor so
/// `log(1/o_i)` stays finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrapWeights {
    o: Array1<f64>,
    floor: f64,
}

impl WrapWeights {
    pub fn ones(len: usize, floor: f64) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::WeightDomain(format!(
                "floor must be positive, got {floor}"
            )));
        }
        Ok(WrapWeights {
            o: Array1::ones(len),
            floor,
        })
    }

    pub fn from_values(values: Array1<f64>, floor: f64) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::WeightDomain(format!(
                "floor must be positive, got {floor}"
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(**v >= floor)) {
            return Err(Error::WeightDomain(format!(
                "weight {bad} below floor {floor}"
            )));
        }
        Ok(WrapWeights { o: values, floor })
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.o
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.o.len()
    }

    pub fn is_empty(&self) -> bool {
        self.o.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.o.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.o.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.o.mean().unwrap_or(f64::NAN)
    }

    /// Replaces the weights, clamping at the floor.
    pub fn set_clamped(&mut self, values: Array1<f64>) {
        let floor = self.floor;
        self.o = values.mapv(|v| v.max(floor));
    }
}

/// Per-output residual standard deviations (`sigma_i > 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaVector {
    sigma: Array1<f64>,
}

impl SigmaVector {
    pub fn new(sigma: Array1<f64>) -> Result<Self> {
        if let Some(bad) = sigma.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Domain(format!("sigma must be positive, got {bad}")));
        }
        Ok(SigmaVector { sigma })
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.sigma
    }
}

#[derive(Debug, Clone)]
pub struct LossReport {
    pub original_total: f64,
    pub wrapped_total: f64,
    pub per_output: PerOutputLosses,
    pub weights: Array1<f64>,
}

fn check_same_shape(targets: &Array2<f64>, outputs: &Array2<f64>) -> Result<()> {
    if targets.dim() != outputs.dim() {
        return Err(Error::ShapeMismatch(format!(
            "targets {:?} vs outputs {:?}",
            targets.dim(),
            outputs.dim()
        )));
    }
    Ok(())
}

/// Batch-mean squared error per output column.
pub fn per_output_squared_error(
    targets: &Array2<f64>,
    outputs: &Array2<f64>,
) -> Result<PerOutputLosses> {
    check_same_shape(targets, outputs)?;
    let n = targets.nrows();
    if n == 0 {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    let diff = targets - outputs;
    let values = diff.mapv(|d| d * d).mean_axis(ndarray::Axis(0)).unwrap();
    Ok(PerOutputLosses {
        values,
        coverage: vec![n; targets.ncols()],
    })
}

/// Per-class mean `-log p(true class)` over the batch.
///
/// Classes absent from the batch take the carried previous value (coverage 0),
/// or 0 when there is nothing to carry.
pub fn per_class_cross_entropy(
    labels: &[usize],
    probs: &Array2<f64>,
    carry: Option<&PerOutputLosses>,
) -> Result<PerOutputLosses> {
    per_class_nll(labels, probs, carry, ClassAggregation::Mean)
}

/// Each class's share of the batch-mean negative log-likelihood:
/// `l_i = sum over samples of class i of -log p(true) / batch size`.
///
/// The shares sum to the standard cross-entropy of the batch, and the share of
/// a rare class is small, so the assignment weight `1/l_i` is large for rare
/// classes. Absent classes carry like [`per_class_cross_entropy`].
pub fn per_class_share_cross_entropy(
    labels: &[usize],
    probs: &Array2<f64>,
    carry: Option<&PerOutputLosses>,
) -> Result<PerOutputLosses> {
    per_class_nll(labels, probs, carry, ClassAggregation::BatchShare)
}

#[derive(Clone, Copy)]
enum ClassAggregation {
    /// Mean over the class's own samples.
    Mean,
    /// Class sum divided by the whole batch size.
    BatchShare,
}

fn per_class_nll(
    labels: &[usize],
    probs: &Array2<f64>,
    carry: Option<&PerOutputLosses>,
    aggregation: ClassAggregation,
) -> Result<PerOutputLosses> {
    let c = probs.ncols();
    if labels.len() != probs.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels vs {} probability rows",
            labels.len(),
            probs.nrows()
        )));
    }
    if let Some(prev) = carry {
        if prev.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "carry length {} vs class count {c}",
                prev.len()
            )));
        }
    }
    for (row_idx, row) in probs.rows().into_iter().enumerate() {
        let sum = row.sum();
        if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::Probability(format!(
                "row {row_idx} is not a probability simplex (sum {sum})"
            )));
        }
    }
    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    for (row, &label) in probs.rows().into_iter().zip(labels) {
        if label >= c {
            return Err(Error::Label(format!("label {label} out of range [0, {c})")));
        }
        sums[label] += -row[label].max(f64::MIN_POSITIVE).ln();
        counts[label] += 1;
    }
    let values = Array1::from_shape_fn(c, |i| {
        if counts[i] > 0 {
            match aggregation {
                ClassAggregation::Mean => sums[i] / counts[i] as f64,
                ClassAggregation::BatchShare => sums[i] / labels.len() as f64,
            }
        } else {
            carry.map_or(0.0, |prev| prev.values[i])
        }
    });
    Ok(PerOutputLosses {
        values,
        coverage: counts,
    })
}

fn check_lengths(o: &WrapWeights, losses: &PerOutputLosses) -> Result<()> {
    if o.len() != losses.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights vs {} per-output losses",
            o.len(),
            losses.len()
        )));
    }
    if let Some(bad) = o.values().iter().find(|v| !(**v >= o.floor())) {
        return Err(Error::WeightDomain(format!(
            "weight {bad} below floor {}",
            o.floor()
        )));
    }
    Ok(())
}

/// `sum_i (o_i * l_i + log(1/o_i))` plus the plain total, with snapshots.
pub fn wrapped_total(o: &WrapWeights, losses: &PerOutputLosses) -> Result<LossReport> {
    check_lengths(o, losses)?;
    let wrapped = o
        .values()
        .iter()
        .zip(losses.values.iter())
        .map(|(&oi, &li)| oi * li + (1.0 / oi).ln())
        .sum();
    Ok(LossReport {
        original_total: losses.total(),
        wrapped_total: wrapped,
        per_output: losses.clone(),
        weights: o.values().clone(),
    })
}

/// `d l_wrap / d o_i = l_i - 1/o_i`.
pub fn grad_wrapped_wrt_o(o: &WrapWeights, losses: &PerOutputLosses) -> Result<Array1<f64>> {
    check_lengths(o, losses)?;
    Ok(Array1::from_shape_fn(o.len(), |i| {
        losses.values[i] - 1.0 / o.values()[i]
    }))
}

/// Gradient of the wrapped squared loss with respect to the outputs:
/// per sample and output, `o_i * 2 * (f(x)_i - y_i) / batch`.
///
/// Composed with `Network::backward` (which sums over the batch) this yields
/// the exact gradient of `sum_i o_i * l_i` for batch-mean `l_i`.
pub fn wrapped_squared_output_grad(
    o: &WrapWeights,
    targets: &Array2<f64>,
    outputs: &Array2<f64>,
) -> Result<Array2<f64>> {
    check_same_shape(targets, outputs)?;
    if o.len() != outputs.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights vs {} output columns",
            o.len(),
            outputs.ncols()
        )));
    }
    let n = outputs.nrows() as f64;
    let mut grad = outputs - targets;
    for mut row in grad.rows_mut() {
        for (g, &oi) in row.iter_mut().zip(o.values().iter()) {
            *g *= 2.0 * oi / n;
        }
    }
    Ok(grad)
}

/// Gradient of the wrapped cross-entropy with respect to the softmax logits:
/// per sample row, `o_label * (p - onehot) / batch`.
pub fn wrapped_cross_entropy_output_grad(
    o: &WrapWeights,
    labels: &[usize],
    probs: &Array2<f64>,
) -> Result<Array2<f64>> {
    let c = probs.ncols();
    if labels.len() != probs.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels vs {} probability rows",
            labels.len(),
            probs.nrows()
        )));
    }
    if o.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "{} weights vs {c} classes",
            o.len()
        )));
    }
    let n = probs.nrows() as f64;
    let mut grad = probs.clone();
    for (mut row, &label) in grad.rows_mut().into_iter().zip(labels) {
        if label >= c {
            return Err(Error::Label(format!("label {label} out of range [0, {c})")));
        }
        row[label] -= 1.0;
        let scale = o.values()[label] / n;
        row.mapv_inplace(|v| v * scale);
    }
    Ok(grad)
}

/// Sigma-form negative log-likelihood `sum_i (l_i / sigma_i^2 + log sigma_i^2)`
/// and its gradient `2/sigma_i - 2*l_i/sigma_i^3` (the `c/2 log 2pi` constant
/// is omitted).
pub fn sigma_nll(sigma: &SigmaVector, losses: &PerOutputLosses) -> Result<(f64, Array1<f64>)> {
    if sigma.values().len() != losses.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} sigmas vs {} per-output losses",
            sigma.values().len(),
            losses.len()
        )));
    }
    let mut value = 0.0;
    let grad = Array1::from_shape_fn(losses.len(), |i| {
        let s = sigma.values()[i];
        let l = losses.values[i];
        value += l / (s * s) + (s * s).ln();
        2.0 / s - 2.0 * l / (s * s * s)
    });
    Ok((value, grad))
}

/// Median frequency balancing: `weight_c = median(freq) / freq(c)` where
/// `freq(c) = count_c / total`.
pub fn median_frequency_weights(class_counts: &[usize]) -> Result<Vec<f64>> {
    if class_counts.is_empty() {
        return Err(Error::DegenerateClass("no classes".into()));
    }
    if let Some(zero) = class_counts.iter().position(|&n| n == 0) {
        return Err(Error::DegenerateClass(format!("class {zero} has no samples")));
    }
    let total: usize = class_counts.iter().sum();
    let freqs: Vec<f64> = class_counts
        .iter()
        .map(|&n| n as f64 / total as f64)
        .collect();
    let mut sorted = freqs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    Ok(freqs.iter().map(|&f| median / f).collect())
}
