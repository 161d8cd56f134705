//! Experiment configuration: flat JSON with one section per module. Unknown
//! keys are rejected so a typo cannot silently change an experiment.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::core_nn::Activation;
use crate::datagen::{CsvSchema, HeteroSpec, ImbalanceSpec};
use crate::error::{Error, Result};
use crate::trainer::{LossKind, Metric, OMode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataConfig {
    SyntheticRegression(HeteroSpec),
    SyntheticClassification(ImbalanceSpec),
    Csv {
        path: PathBuf,
        schema: CsvSchema,
        /// Optional held-out split; the train split doubles as eval when absent.
        #[serde(default)]
        eval_path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Per-hidden-layer keep-out probabilities; empty means no dropout.
    #[serde(default)]
    pub dropout: Vec<f64>,
}

/// How the static-baseline weights are chosen when `train.static_weights`
/// is not given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticWeighting {
    /// `weight_c = median class frequency / frequency of class c`, computed
    /// from the train split.
    MedianFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub label: String,
    pub task: Task,
    pub data: DataConfig,
    #[serde(default)]
    pub standardize: bool,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub static_weighting: Option<StaticWeighting>,
    /// Output directory; the CLI fills this from `--out-dir` / `WRAPLOSS_OUT`
    /// when absent.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Validation(vec![format!("config parse: {e}")]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Collects every violation instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.label.trim().is_empty() {
            problems.push("label must be non-empty".into());
        }
        if self.label.contains(['/', '\\']) {
            problems.push(format!(
                "label {:?} must not contain path separators (it names the run directory)",
                self.label
            ));
        }
        if let Some(zero) = self.network.hidden.iter().position(|&h| h == 0) {
            problems.push(format!("network.hidden[{zero}] must be positive"));
        }
        if !self.network.dropout.is_empty()
            && self.network.dropout.len() != self.network.hidden.len()
        {
            problems.push(format!(
                "network.dropout has {} rates for {} hidden layers",
                self.network.dropout.len(),
                self.network.hidden.len()
            ));
        }
        for (i, &p) in self.network.dropout.iter().enumerate() {
            if !(0.0..1.0).contains(&p) {
                problems.push(format!("network.dropout[{i}] must be in [0, 1), got {p}"));
            }
        }
        match (self.task, &self.data) {
            (Task::Regression, DataConfig::SyntheticClassification(_)) => {
                problems.push("task regression cannot use synthetic_classification data".into())
            }
            (Task::Classification, DataConfig::SyntheticRegression(_)) => {
                problems.push("task classification cannot use synthetic_regression data".into())
            }
            _ => {}
        }
        match (self.task, self.train.loss) {
            (Task::Regression, LossKind::CrossEntropy) => {
                problems.push("task regression requires loss = squared".into())
            }
            (Task::Classification, LossKind::Squared) => {
                problems.push("task classification requires loss = cross_entropy".into())
            }
            _ => {}
        }
        match (self.task, self.train.eval_metric) {
            (Task::Regression, Metric::Accuracy | Metric::PerClassAccuracy) => {
                problems.push("accuracy metrics require task = classification".into())
            }
            (Task::Classification, Metric::Rmse) => {
                problems.push("rmse requires task = regression".into())
            }
            _ => {}
        }
        if self.static_weighting.is_some() {
            if self.task != Task::Classification {
                problems.push("static_weighting = median_frequency requires classification".into());
            }
            if self.train.static_weights.is_some() {
                problems
                    .push("give either train.static_weights or static_weighting, not both".into());
            }
            if self.train.o_mode != OMode::Off {
                problems.push("static_weighting requires train.o_mode = off".into());
            }
        }
        if let DataConfig::Csv { path, eval_path, .. } = &self.data {
            if !path.exists() {
                problems.push(format!("data file {} does not exist", path.display()));
            }
            if let Some(p) = eval_path {
                if !p.exists() {
                    problems.push(format!("eval data file {} does not exist", p.display()));
                }
            }
        }
        if let Err(Error::Validation(mut v)) = self.train.validate() {
            problems.append(&mut v);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// A comparison grid: a shared data/standardize section plus one experiment
/// section per run. Run labels must be unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub standardize: bool,
    pub runs: Vec<RunSection>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub label: String,
    pub task: Task,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub static_weighting: Option<StaticWeighting>,
}

impl CompareConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: CompareConfig = serde_json::from_str(text)
            .map_err(|e| Error::Validation(vec![format!("config parse: {e}")]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.runs.len() < 2 {
            problems.push(format!(
                "a comparison needs at least 2 runs, got {}",
                self.runs.len()
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for run in &self.runs {
            if !seen.insert(run.label.clone()) {
                problems.push(format!("duplicate run label {:?}", run.label));
            }
        }
        for run in &self.runs {
            if let Err(Error::Validation(v)) = self.experiment_for(run).validate() {
                for p in v {
                    problems.push(format!("run {:?}: {p}", run.label));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Expands one grid row into a standalone experiment over the shared data.
    pub fn experiment_for(&self, run: &RunSection) -> ExperimentConfig {
        ExperimentConfig {
            label: run.label.clone(),
            task: run.task,
            data: self.data.clone(),
            standardize: self.standardize,
            network: run.network.clone(),
            train: run.train.clone(),
            static_weighting: run.static_weighting.clone(),
            out_dir: self.out_dir.clone(),
        }
    }
}
