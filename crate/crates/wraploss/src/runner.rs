//! Executes experiments from configs and writes the on-disk artifacts:
//! per-epoch metrics CSV, summary JSON, and a model snapshot. All floats are
//! written with round-trip-exact decimal formatting and every file is written
//! atomically (temp + rename), so a rerun of the same config is byte-identical
//! and a failed run leaves no partial file behind.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CompareConfig, DataConfig, ExperimentConfig, StaticWeighting, Task};
use crate::core_nn::{init_network, Head, Network};
use crate::datagen::{
    gen_heteroscedastic_regression, gen_imbalanced_classification, load_csv_dataset, standardize,
    Dataset,
};
use crate::error::{Error, Result};
use crate::losses::median_frequency_weights;
use crate::trainer::{epoch_of_best, train, EpochMetrics, Metric, TrainOutcome};

/// Round-trip-exact float formatting (17 significant digits) shared by every
/// artifact writer.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Loads the train/eval splits named by the config and applies optional
/// train-fitted standardization to both.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (train_data, eval_data) = match &cfg.data {
        DataConfig::SyntheticRegression(spec) => gen_heteroscedastic_regression(spec)?,
        DataConfig::SyntheticClassification(spec) => gen_imbalanced_classification(spec)?,
        DataConfig::Csv {
            path,
            schema,
            eval_path,
        } => {
            let train_data = load_csv_dataset(path, schema)?;
            let eval_data = match eval_path {
                Some(p) => load_csv_dataset(p, schema)?,
                None => train_data.clone(),
            };
            (train_data, eval_data)
        }
    };
    if cfg.standardize {
        let (t, e, _) = standardize(&train_data, &eval_data)?;
        Ok((t, e))
    } else {
        Ok((train_data, eval_data))
    }
}

pub fn build_network(cfg: &ExperimentConfig, data: &Dataset) -> Result<Network> {
    let mut arch = vec![data.feature_dim()];
    arch.extend_from_slice(&cfg.network.hidden);
    arch.push(data.output_dim());
    let head = match cfg.task {
        Task::Regression => Head::Linear,
        Task::Classification => Head::Softmax,
    };
    init_network(
        &arch,
        cfg.network.activation,
        head,
        &cfg.network.dropout,
        cfg.train.seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub network: Network,
    pub wrap_weights: Vec<f64>,
    pub o_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub task: Task,
    pub epochs_run: usize,
    pub best_metric: f64,
    /// 1-based epoch attaining the best eval metric (first occurrence).
    pub epoch_of_best: usize,
    pub higher_is_better: bool,
    pub final_o: Vec<f64>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub metrics_csv: PathBuf,
    pub summary_json: PathBuf,
    pub model_json: PathBuf,
    pub summary: RunSummary,
    pub history: Vec<EpochMetrics>,
    pub wall_time_s: f64,
}

pub fn metric_higher_is_better(metric: Metric) -> bool {
    matches!(metric, Metric::Accuracy | Metric::PerClassAccuracy)
}

fn resolved_train_config(cfg: &ExperimentConfig, data: &Dataset) -> Result<crate::trainer::TrainConfig> {
    let mut train_cfg = cfg.train.clone();
    if let Some(StaticWeighting::MedianFrequency) = cfg.static_weighting {
        let weights = median_frequency_weights(&data.class_counts()?)?;
        train_cfg.static_weights = Some(weights);
    }
    Ok(train_cfg)
}

pub fn metrics_csv_text(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,wrapped_loss,original_loss,eval_metric,o_min,o_max,o_mean\n");
    for m in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.epoch,
            fmt_float(m.train_wrapped),
            fmt_float(m.train_original),
            fmt_float(m.eval_metric),
            fmt_float(m.o_min),
            fmt_float(m.o_max),
            fmt_float(m.o_mean),
        ));
    }
    out
}

/// Runs one experiment and writes `metrics.csv`, `summary.json`, and
/// `model.json` into `<out_root>/<label>/`.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    let started = Instant::now();
    let (train_data, eval_data) = load_data(cfg)?;
    let net = build_network(cfg, &train_data)?;
    let train_cfg = resolved_train_config(cfg, &train_data)?;
    let TrainOutcome {
        network,
        weights,
        history,
    } = train(net, &train_data, &eval_data, &train_cfg)?;

    let higher = metric_higher_is_better(train_cfg.eval_metric);
    let (best_epoch, best_metric) =
        epoch_of_best(&history, higher).ok_or_else(|| Error::Numeric("empty history".into()))?;
    let summary = RunSummary {
        label: cfg.label.clone(),
        task: cfg.task,
        epochs_run: history.len(),
        best_metric,
        epoch_of_best: best_epoch,
        higher_is_better: higher,
        final_o: weights.values().to_vec(),
        // echo the resolved config so derived static weights are auditable
        config: {
            let mut echo = cfg.clone();
            echo.train = train_cfg.clone();
            echo
        },
    };

    let dir = out_root.join(&cfg.label);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let metrics_csv = dir.join("metrics.csv");
    write_atomic(&metrics_csv, metrics_csv_text(&history).as_bytes())?;
    let summary_json = dir.join("summary.json");
    write_atomic(&summary_json, &to_pretty_json(&summary)?)?;
    let model_json = dir.join("model.json");
    let snapshot = ModelSnapshot {
        network,
        wrap_weights: weights.values().to_vec(),
        o_floor: weights.floor(),
    };
    write_atomic(&model_json, &to_pretty_json(&snapshot)?)?;

    Ok(RunArtifacts {
        dir,
        metrics_csv,
        summary_json,
        model_json,
        summary,
        history,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Numeric(format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub label: String,
    pub best_metric: Option<f64>,
    pub epoch_of_best: Option<usize>,
    pub epochs_run: Option<usize>,
    pub wall_time_s: Option<f64>,
    pub final_o: Option<Vec<f64>>,
    /// Accuracy on the down-sampled class at the best epoch (imbalance runs).
    pub adj_accuracy: Option<f64>,
    /// Total accuracy at the best epoch (imbalance runs).
    pub total_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<RunRow>,
    /// Index of the class with the smallest retention, when the data section
    /// is an imbalance grid.
    pub adjusted_class: Option<usize>,
    /// True iff every constituent run succeeded.
    pub complete: bool,
}

fn accuracy_columns(
    history: &[EpochMetrics],
    best_epoch: usize,
    metric: Metric,
    adjusted_class: Option<usize>,
) -> (Option<f64>, Option<f64>) {
    let Some(m) = history.iter().find(|m| m.epoch == best_epoch) else {
        return (None, None);
    };
    let Some(per_class) = &m.per_class_accuracy else {
        return (None, None);
    };
    let adj = adjusted_class.and_then(|c| per_class.get(c).copied());
    let total = match metric {
        Metric::Accuracy => Some(m.eval_metric),
        _ => None,
    };
    (adj, total)
}

/// Runs every grid row (in parallel when `jobs != Some(1)`) and assembles the
/// comparison table. A failed constituent run becomes a row with an error
/// message rather than failing the whole comparison.
pub fn compare(cfg: &CompareConfig, out_root: &Path, jobs: Option<usize>) -> Result<ComparisonReport> {
    cfg.validate()?;
    let adjusted_class = match &cfg.data {
        DataConfig::SyntheticClassification(spec) => spec
            .retention
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i),
        _ => None,
    };
    let experiments: Vec<ExperimentConfig> =
        cfg.runs.iter().map(|r| cfg.experiment_for(r)).collect();

    let run_all = || -> Vec<RunRow> {
        experiments
            .par_iter()
            .map(|exp| match run_experiment(exp, out_root) {
                Ok(art) => {
                    let (adj, total) = accuracy_columns(
                        &art.history,
                        art.summary.epoch_of_best,
                        exp.train.eval_metric,
                        adjusted_class,
                    );
                    RunRow {
                        label: exp.label.clone(),
                        best_metric: Some(art.summary.best_metric),
                        epoch_of_best: Some(art.summary.epoch_of_best),
                        epochs_run: Some(art.summary.epochs_run),
                        wall_time_s: Some(art.wall_time_s),
                        final_o: Some(art.summary.final_o.clone()),
                        adj_accuracy: adj,
                        total_accuracy: total,
                        error: None,
                    }
                }
                Err(e) => RunRow {
                    label: exp.label.clone(),
                    best_metric: None,
                    epoch_of_best: None,
                    epochs_run: None,
                    wall_time_s: None,
                    final_o: None,
                    adj_accuracy: None,
                    total_accuracy: None,
                    error: Some(e.to_string()),
                },
            })
            .collect()
    };
    let rows = match jobs {
        Some(n) if n >= 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?
            .install(run_all),
        _ => run_all(),
    };

    let report = ComparisonReport {
        complete: rows.iter().all(|r| r.error.is_none()),
        rows,
        adjusted_class,
    };
    std::fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    write_atomic(&out_root.join("comparison.json"), &to_pretty_json(&report)?)?;
    write_atomic(
        &out_root.join("comparison.csv"),
        comparison_csv_text(&report).as_bytes(),
    )?;
    Ok(report)
}

fn comparison_csv_text(report: &ComparisonReport) -> String {
    let mut out =
        String::from("label,best_metric,epoch_of_best,epochs_run,adj_accuracy,total_accuracy,error\n");
    let opt_f = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    let opt_u = |v: Option<usize>| v.map(|u| u.to_string()).unwrap_or_default();
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.label,
            opt_f(r.best_metric),
            opt_u(r.epoch_of_best),
            opt_u(r.epochs_run),
            opt_f(r.adj_accuracy),
            opt_f(r.total_accuracy),
            r.error.as_deref().unwrap_or_default().replace(',', ";"),
        ));
    }
    out
}
