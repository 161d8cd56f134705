//! Verifiers and estimators for the formal results: a finite-difference
//! gradient oracle, a Monte-Carlo checker for the approximation bound, the
//! `WrapErr = oP^2 + log(1/o)` surface, the expected-wrap-loss estimate
//! `c(1 + log DoF) + sum log sigma_i^2`, and the residual bound `L`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core_nn::{Mode, Network};
use crate::datagen::Dataset;
use crate::error::{Error, Result};

/// Central-difference gradient `(f(x+h) - f(x-h)) / 2h` per coordinate.
pub fn finite_diff_gradient<F>(f: F, at: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::Domain(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut grad = Vec::with_capacity(at.len());
    let mut point = at.to_vec();
    for i in 0..at.len() {
        point[i] = at[i] + step;
        let plus = f(&point)?;
        point[i] = at[i] - step;
        let minus = f(&point)?;
        point[i] = at[i];
        let g = (plus - minus) / (2.0 * step);
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite finite-difference quotient at coordinate {i}"
            )));
        }
        grad.push(g);
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub c: usize,
    pub l: f64,
    pub delta: f64,
    pub trials: usize,
    pub max_diff: f64,
    pub bound: f64,
    pub slack: f64,
    pub pass: bool,
}

fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Monte-Carlo check of the approximation bound: sample `trials` pairs of
/// weights `o_i` within `delta` of 1 and losses `l_i` in `[0, L]`, and verify
/// `max |l_wrap - l_orig| <= slack / (c(L+1))`. Requires the bound's regime
/// `L > 1` and `delta <= (c(L+1))^-2`; `delta = 0` is allowed and degenerates
/// to an exact zero difference.
pub fn check_theorem1(
    c: usize,
    l: f64,
    delta: f64,
    trials: usize,
    seed: u64,
    slack: f64,
) -> Result<Theorem1Report> {
    if c == 0 {
        return Err(Error::Domain("output count c must be at least 1".into()));
    }
    if !(l > 1.0) {
        return Err(Error::Domain(format!("residual bound L must exceed 1, got {l}")));
    }
    let delta_max = 1.0 / (c as f64 * (l + 1.0)).powi(2);
    if !(delta >= 0.0) || delta > delta_max {
        return Err(Error::Domain(format!(
            "delta must lie in [0, {delta_max:.6e}], got {delta}"
        )));
    }
    if trials == 0 {
        return Err(Error::Domain("trials must be at least 1".into()));
    }
    if !(slack > 0.0) {
        return Err(Error::Domain(format!("slack must be positive, got {slack}")));
    }
    // per-trial RNG streams derived from (seed, trial) keep the result
    // independent of the parallel schedule
    let max_diff = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, t));
            let mut diff = 0.0;
            for _ in 0..c {
                let o = if delta == 0.0 {
                    1.0
                } else {
                    rng.random_range(1.0 - delta..=1.0 + delta)
                };
                let li: f64 = rng.random_range(0.0..=l);
                // per-output: (o*l + log(1/o)) - l
                diff += o * li - o.ln() - li;
            }
            diff.abs()
        })
        .reduce(|| 0.0, f64::max);
    let bound = 1.0 / (c as f64 * (l + 1.0));
    Ok(Theorem1Report {
        c,
        l,
        delta,
        trials,
        max_diff,
        bound,
        slack,
        pass: max_diff <= slack * bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    /// First axis (weight `o`, or DoF for the estimate surface).
    pub axis1: Vec<f64>,
    /// Second axis (prediction error `P`, or output count `c`).
    pub axis2: Vec<f64>,
    /// `values[i][j]` is the surface at `(axis1[i], axis2[j])`.
    pub values: Vec<Vec<f64>>,
}

impl SurfaceGrid {
    pub fn shape(&self) -> (usize, usize) {
        (self.axis1.len(), self.axis2.len())
    }
}

/// `WrapErr(o, P) = oP^2 + log(1/o)` over the given grid.
pub fn wrap_error_surface(o_values: &[f64], p_values: &[f64]) -> Result<SurfaceGrid> {
    if let Some(bad) = o_values.iter().find(|&&o| !(o > 0.0)) {
        return Err(Error::Domain(format!(
            "weight grid values must be positive, got {bad}"
        )));
    }
    let values = o_values
        .iter()
        .map(|&o| p_values.iter().map(|&p| o * p * p - o.ln()).collect())
        .collect();
    Ok(SurfaceGrid {
        axis1: o_values.to_vec(),
        axis2: p_values.to_vec(),
        values,
    })
}

/// Expected wrapped loss after training: `c(1 + log DoF) + sum_i log sigma_i^2`.
pub fn expected_wrap_estimate(c: usize, dof: usize, sigma_sq: &[f64]) -> Result<f64> {
    if c == 0 {
        return Ok(0.0);
    }
    if dof == 0 {
        return Err(Error::Domain("degrees of freedom must be at least 1".into()));
    }
    if sigma_sq.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "{} variances for {c} outputs",
            sigma_sq.len()
        )));
    }
    if let Some(bad) = sigma_sq.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::Domain(format!("variances must be positive, got {bad}")));
    }
    let log_sigma: f64 = sigma_sq.iter().map(|s| s.ln()).sum();
    Ok(c as f64 * (1.0 + (dof as f64).ln()) + log_sigma)
}

/// The estimate as a (DoF, c) surface with the `sum log sigma` term omitted:
/// `c(1 + log DoF)`.
pub fn expected_wrap_surface(dof_values: &[usize], c_values: &[usize]) -> Result<SurfaceGrid> {
    if let Some(_) = dof_values.iter().find(|&&d| d == 0) {
        return Err(Error::Domain("degrees of freedom must be at least 1".into()));
    }
    let values = dof_values
        .iter()
        .map(|&d| {
            c_values
                .iter()
                .map(|&c| c as f64 * (1.0 + (d as f64).ln()))
                .collect()
        })
        .collect();
    Ok(SurfaceGrid {
        axis1: dof_values.iter().map(|&d| d as f64).collect(),
        axis2: c_values.iter().map(|&c| c as f64).collect(),
        values,
    })
}

/// Maximum squared residual over all samples and outputs.
pub fn compute_residual_bound_l(net: &Network, data: &Dataset) -> Result<f64> {
    let y = data.continuous_targets()?;
    let (outputs, _) = net.forward(&data.x, Mode::Eval, 0)?;
    Ok(max_squared_entry(&(y - &outputs)))
}

fn max_squared_entry(residuals: &Array2<f64>) -> f64 {
    residuals.iter().map(|r| r * r).fold(0.0, f64::max)
}

/// One entry of a gradient-check report: gradient family name and the max
/// relative error against the finite-difference oracle over all instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

fn stable_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    probs
}

/// Checks every analytic gradient in the crate against central finite
/// differences (step 1e-5) on random instances with networks of at most
/// 3 layers: the squared and cross-entropy output gradients, the sigma-form
/// NLL gradient, the o-gradient, and the composed parameter gradient.
pub fn gradient_check_suite(instances: usize, seed: u64) -> Result<Vec<GradCheckEntry>> {
    use crate::core_nn::{init_network, Activation, Head};
    use crate::losses::{
        grad_wrapped_wrt_o, per_output_squared_error, sigma_nll, wrapped_cross_entropy_output_grad,
        wrapped_squared_output_grad, wrapped_total, PerOutputLosses, SigmaVector, WrapWeights,
        DEFAULT_O_FLOOR,
    };
    use ndarray::Array1;

    if instances == 0 {
        return Err(Error::Domain("instances must be at least 1".into()));
    }
    let step = 1e-5;
    let mut report = Vec::new();

    // d l_wrap / d o_i = l_i - 1/o_i
    let mut worst = 0.0f64;
    for k in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, k as u64));
        let c = rng.random_range(1..=6);
        let losses = PerOutputLosses {
            values: Array1::from_shape_fn(c, |_| rng.random_range(0.1..5.0)),
            coverage: vec![1; c],
        };
        let o_vals = Array1::from_shape_fn(c, |_| rng.random_range(0.2..3.0));
        let o = WrapWeights::from_values(o_vals.clone(), DEFAULT_O_FLOOR)?;
        let analytic = grad_wrapped_wrt_o(&o, &losses)?;
        let numeric = finite_diff_gradient(
            |ov| {
                let probe = WrapWeights::from_values(Array1::from_vec(ov.to_vec()), DEFAULT_O_FLOOR)?;
                Ok(wrapped_total(&probe, &losses)?.wrapped_total)
            },
            o_vals.as_slice().unwrap(),
            step,
        )?;
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    report.push(GradCheckEntry {
        name: "grad_wrapped_wrt_o".into(),
        instances,
        max_rel_err: worst,
    });

    // sigma-form NLL: d/d sigma_i of sum(l_i/sigma_i^2 + log sigma_i^2)
    let mut worst = 0.0f64;
    for k in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x51, k as u64));
        let c = rng.random_range(1..=6);
        let losses = PerOutputLosses {
            values: Array1::from_shape_fn(c, |_| rng.random_range(0.1..5.0)),
            coverage: vec![1; c],
        };
        let s_vals = Array1::from_shape_fn(c, |_| rng.random_range(0.5..2.0));
        let sigma = SigmaVector::new(s_vals.clone())?;
        let (_, analytic) = sigma_nll(&sigma, &losses)?;
        let numeric = finite_diff_gradient(
            |sv| {
                let probe = SigmaVector::new(Array1::from_vec(sv.to_vec()))?;
                Ok(sigma_nll(&probe, &losses)?.0)
            },
            s_vals.as_slice().unwrap(),
            step,
        )?;
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    report.push(GradCheckEntry {
        name: "sigma_nll".into(),
        instances,
        max_rel_err: worst,
    });

    // wrapped squared-error output gradient
    let mut worst = 0.0f64;
    for k in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x52, k as u64));
        let b = rng.random_range(1..=6);
        let c = rng.random_range(1..=4);
        let y = Array2::from_shape_fn((b, c), |_| rng.random_range(-2.0..2.0));
        let outputs = Array2::from_shape_fn((b, c), |_| rng.random_range(-2.0..2.0));
        let o = WrapWeights::from_values(
            ndarray::Array1::from_shape_fn(c, |_| rng.random_range(0.2..3.0)),
            DEFAULT_O_FLOOR,
        )?;
        let analytic = wrapped_squared_output_grad(&o, &y, &outputs)?;
        let flat: Vec<f64> = outputs.iter().cloned().collect();
        let numeric = finite_diff_gradient(
            |p| {
                let probe = Array2::from_shape_vec((b, c), p.to_vec()).unwrap();
                let losses = per_output_squared_error(&y, &probe)?;
                Ok(wrapped_total(&o, &losses)?.wrapped_total)
            },
            &flat,
            step,
        )?;
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    report.push(GradCheckEntry {
        name: "wrapped_squared_output_grad".into(),
        instances,
        max_rel_err: worst,
    });

    // wrapped cross-entropy logit gradient; differentiates the per-sample-mean
    // weighted NLL (the quantity the producer normalizes by batch size)
    let mut worst = 0.0f64;
    for k in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x53, k as u64));
        let b = rng.random_range(2..=6);
        let c = rng.random_range(2..=4);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let logits = Array2::from_shape_fn((b, c), |_| rng.random_range(-2.0..2.0));
        let o = WrapWeights::from_values(
            ndarray::Array1::from_shape_fn(c, |_| rng.random_range(0.2..3.0)),
            DEFAULT_O_FLOOR,
        )?;
        let probs = stable_softmax_rows(&logits);
        let analytic = wrapped_cross_entropy_output_grad(&o, &labels, &probs)?;
        let weighted_nll = |logits: &Array2<f64>| -> f64 {
            let probs = stable_softmax_rows(logits);
            let nll: f64 = labels
                .iter()
                .enumerate()
                .map(|(row, &label)| -o.values()[label] * probs[[row, label]].ln())
                .sum();
            let log_term: f64 = o.values().iter().map(|v| -v.ln()).sum();
            nll / b as f64 + log_term
        };
        let flat: Vec<f64> = logits.iter().cloned().collect();
        let numeric = finite_diff_gradient(
            |p| Ok(weighted_nll(&Array2::from_shape_vec((b, c), p.to_vec()).unwrap())),
            &flat,
            step,
        )?;
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    report.push(GradCheckEntry {
        name: "wrapped_cross_entropy_output_grad".into(),
        instances,
        max_rel_err: worst,
    });

    // composed parameter gradient through a <=3-layer network; instances with
    // a relu preactivation near its kink are re-drawn (central differences are
    // not a valid oracle at the kink)
    let mut worst = 0.0f64;
    let mut done = 0usize;
    let mut attempt = 0u64;
    while done < instances {
        let k = attempt;
        attempt += 1;
        if attempt > 20 * instances as u64 {
            return Err(Error::Numeric(
                "could not draw enough kink-free gradient-check instances".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x54, k));
        let input = rng.random_range(2..=4);
        let hidden = rng.random_range(2..=6);
        let c = rng.random_range(1..=3);
        let arch = match rng.random_range(0..3u8) {
            0 => vec![input, c],
            1 => vec![input, hidden, c],
            _ => vec![input, hidden, hidden, c],
        };
        let mut net = init_network(&arch, Activation::Relu, Head::Linear, &[], mix(seed, k))?;
        // jitter away from the all-zero bias initialization so preactivations
        // sit in generic position
        let jittered: Vec<f64> = net
            .flat_params()
            .iter()
            .map(|p| p + rng.random_range(-0.05..0.05))
            .collect();
        net.set_flat_params(&jittered)?;
        let b = rng.random_range(2..=5);
        let x = Array2::from_shape_fn((b, input), |_| rng.random_range(-1.5..1.5));
        let y = Array2::from_shape_fn((b, c), |_| rng.random_range(-1.5..1.5));
        let o = WrapWeights::from_values(
            ndarray::Array1::from_shape_fn(c, |_| rng.random_range(0.2..3.0)),
            DEFAULT_O_FLOOR,
        )?;
        let (outputs, trace) = net.forward(&x, Mode::Eval, 0)?;
        let near_kink = trace.preacts[..trace.preacts.len() - 1]
            .iter()
            .any(|z| z.iter().any(|v| v.abs() < 1e-3));
        if near_kink {
            continue;
        }
        done += 1;
        let grad_out = wrapped_squared_output_grad(&o, &y, &outputs)?;
        let analytic = net.backward(&trace, &grad_out)?.flat();
        let at = net.flat_params();
        let numeric = finite_diff_gradient(
            |p| {
                let mut probe = net.clone();
                probe.set_flat_params(p)?;
                let (out, _) = probe.forward(&x, Mode::Eval, 0)?;
                let losses = per_output_squared_error(&y, &out)?;
                Ok(wrapped_total(&o, &losses)?.wrapped_total)
            },
            &at,
            step,
        )?;
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    report.push(GradCheckEntry {
        name: "composed_wrapped_param_grad".into(),
        instances,
        max_rel_err: worst,
    });

    Ok(report)
}

/// `n` evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Domain(format!("grid needs at least 2 points, got {n}")));
    }
    let step = (stop - start) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if i == n - 1 { stop } else { start + i as f64 * step })
        .collect())
}
