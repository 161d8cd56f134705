//! Synthetic data generators, standardization, and CSV ingestion.
//!
//! Regression data follows `Y_i = f(X)_i + eps_i` with independent Gaussian
//! noise of per-output standard deviation `sigma_i`; classification data is
//! Gaussian blobs with per-class retention for imbalance experiments. All
//! generators are pure functions of their spec, including the seed.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `n x c` continuous targets.
    Continuous(Array2<f64>),
    /// Integer labels in `[0, classes)`.
    Labels { labels: Vec<usize>, classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub targets: Targets,
    /// Synthetic spec summary or source file path.
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.x.ncols()
    }

    /// Output width: target columns for regression, class count for labels.
    pub fn output_dim(&self) -> usize {
        match &self.targets {
            Targets::Continuous(y) => y.ncols(),
            Targets::Labels { classes, .. } => *classes,
        }
    }

    pub fn continuous_targets(&self) -> Result<&Array2<f64>> {
        match &self.targets {
            Targets::Continuous(y) => Ok(y),
            Targets::Labels { .. } => Err(Error::Domain(
                "expected continuous targets, dataset has labels".into(),
            )),
        }
    }

    pub fn labels(&self) -> Result<&[usize]> {
        match &self.targets {
            Targets::Labels { labels, .. } => Ok(labels),
            Targets::Continuous(_) => Err(Error::Domain(
                "expected labels, dataset has continuous targets".into(),
            )),
        }
    }

    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let labels = self.labels()?;
        let mut counts = vec![0usize; self.output_dim()];
        for &l in labels {
            counts[l] += 1;
        }
        Ok(counts)
    }

    /// Rows selected by index, preserving target kind.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let x = self.x.select(Axis(0), idx);
        let targets = match &self.targets {
            Targets::Continuous(y) => Targets::Continuous(y.select(Axis(0), idx)),
            Targets::Labels { labels, classes } => Targets::Labels {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        };
        Dataset {
            x,
            targets,
            provenance: self.provenance.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Domain("dataset has no rows".into()));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature entries".into()));
        }
        match &self.targets {
            Targets::Continuous(y) => {
                if y.nrows() != self.x.nrows() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} target rows vs {} feature rows",
                        y.nrows(),
                        self.x.nrows()
                    )));
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric("non-finite target entries".into()));
                }
            }
            Targets::Labels { labels, classes } => {
                if labels.len() != self.x.nrows() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} labels vs {} feature rows",
                        labels.len(),
                        self.x.nrows()
                    )));
                }
                if let Some(bad) = labels.iter().find(|l| **l >= *classes) {
                    return Err(Error::Label(format!(
                        "label {bad} out of range [0, {classes})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// Random affine map `A x + b`.
    Linear,
    /// Random tanh feature mixture (non-realizable by a linear net).
    TanhMixture,
}

/// Spec for heteroscedastic multi-output regression data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeteroSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub map: MapKind,
    /// Per-output noise standard deviation; entries may be 0 (noiseless).
    pub sigma: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl HeteroSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Domain("dimensions must be positive".into()));
        }
        if self.sigma.len() != self.output_dim {
            return Err(Error::Domain(format!(
                "sigma has {} entries, output_dim is {}",
                self.sigma.len(),
                self.output_dim
            )));
        }
        if let Some(bad) = self.sigma.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::Domain(format!("sigma must be >= 0, got {bad}")));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Domain("sample counts must be positive".into()));
        }
        Ok(())
    }
}

/// The noiseless true map drawn deterministically from a spec seed.
#[derive(Debug, Clone)]
pub struct TrueMap {
    kind: MapKind,
    // linear part: y = a x + b
    a: Array2<f64>,
    b: Array1<f64>,
    // tanh mixture: y = a2 tanh(a1 x + b1) + b
    a1: Array2<f64>,
    b1: Array1<f64>,
}

const TANH_FEATURES: usize = 16;

impl TrueMap {
    fn sample(spec: &HeteroSpec, rng: &mut ChaCha8Rng) -> TrueMap {
        let (p, c) = (spec.input_dim, spec.output_dim);
        let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        match spec.map {
            MapKind::Linear => TrueMap {
                kind: spec.map,
                a: Array2::from_shape_fn((c, p), |_| normal(rng)),
                b: Array1::from_shape_fn(c, |_| normal(rng)),
                a1: Array2::zeros((0, 0)),
                b1: Array1::zeros(0),
            },
            MapKind::TanhMixture => TrueMap {
                kind: spec.map,
                a1: Array2::from_shape_fn((TANH_FEATURES, p), |_| normal(rng)),
                b1: Array1::from_shape_fn(TANH_FEATURES, |_| normal(rng)),
                a: Array2::from_shape_fn((c, TANH_FEATURES), |_| normal(rng)),
                b: Array1::from_shape_fn(c, |_| normal(rng)),
            },
        }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        match self.kind {
            MapKind::Linear => x.dot(&self.a.t()) + &self.b,
            MapKind::TanhMixture => {
                let h = (x.dot(&self.a1.t()) + &self.b1).mapv(f64::tanh);
                h.dot(&self.a.t()) + &self.b
            }
        }
    }
}

fn draw_split(
    spec: &HeteroSpec,
    map: &TrueMap,
    n: usize,
    rng: &mut ChaCha8Rng,
    tag: &str,
) -> Dataset {
    let x = Array2::from_shape_fn((n, spec.input_dim), |_| StandardNormal.sample(rng));
    let mut y = map.apply(&x);
    for mut row in y.rows_mut() {
        for (v, &s) in row.iter_mut().zip(&spec.sigma) {
            if s > 0.0 {
                let e: f64 = StandardNormal.sample(rng);
                *v += s * e;
            }
        }
    }
    Dataset {
        x,
        targets: Targets::Continuous(y),
        provenance: format!(
            "synthetic-regression(map={:?}, p={}, c={}, seed={}, split={tag})",
            spec.map, spec.input_dim, spec.output_dim, spec.seed
        ),
    }
}

/// Train and test splits are disjoint draws from the same process.
pub fn gen_heteroscedastic_regression(spec: &HeteroSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let map = TrueMap::sample(spec, &mut rng);
    let train = draw_split(spec, &map, spec.n_train, &mut rng, "train");
    let test = draw_split(spec, &map, spec.n_test, &mut rng, "test");
    Ok((train, test))
}

/// The sampled true map, for residual-oracle tests.
pub fn true_map_of(spec: &HeteroSpec) -> Result<TrueMap> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(TrueMap::sample(spec, &mut rng))
}

/// Spec for imbalanced Gaussian-blob classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImbalanceSpec {
    /// Per-class blob centers, `classes x feature_dim`.
    pub means: Vec<Vec<f64>>,
    /// Isotropic standard deviation of each blob.
    pub spread: f64,
    /// Training samples per class before retention.
    pub base_per_class: usize,
    /// Per-class retention in `(0, 1]`; class i keeps `round(base * retention_i)`.
    pub retention: Vec<f64>,
    /// Balanced test samples per class.
    pub test_per_class: usize,
    pub seed: u64,
}

impl ImbalanceSpec {
    /// Blob centers drawn uniformly on the sphere of radius `separation`.
    pub fn random_blobs(
        classes: usize,
        feature_dim: usize,
        separation: f64,
        spread: f64,
        base_per_class: usize,
        retention: Vec<f64>,
        test_per_class: usize,
        seed: u64,
    ) -> Result<ImbalanceSpec> {
        if classes < 2 || feature_dim == 0 {
            return Err(Error::Domain(
                "need at least 2 classes and 1 feature".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB10B_5EED);
        let means = (0..classes)
            .map(|_| {
                let v: Vec<f64> = (0..feature_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / norm * separation).collect()
            })
            .collect();
        let spec = ImbalanceSpec {
            means,
            spread,
            base_per_class,
            retention,
            test_per_class,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn train_count(&self, class: usize) -> usize {
        (self.base_per_class as f64 * self.retention[class]).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.len() < 2 {
            return Err(Error::Domain("need at least 2 classes".into()));
        }
        let dim = self.means[0].len();
        if dim == 0 || self.means.iter().any(|m| m.len() != dim) {
            return Err(Error::Domain("blob means must share a positive dim".into()));
        }
        if !(self.spread > 0.0) {
            return Err(Error::Domain(format!(
                "spread must be positive, got {}",
                self.spread
            )));
        }
        if self.retention.len() != self.means.len() {
            return Err(Error::Domain(format!(
                "{} retention entries for {} classes",
                self.retention.len(),
                self.means.len()
            )));
        }
        if let Some(bad) = self
            .retention
            .iter()
            .find(|r| !(**r > 0.0 && **r <= 1.0))
        {
            return Err(Error::Domain(format!(
                "retention must be in (0, 1], got {bad}"
            )));
        }
        if self.base_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Domain("sample counts must be positive".into()));
        }
        for (i, _) in self.means.iter().enumerate() {
            if self.train_count(i) == 0 {
                return Err(Error::DegenerateClass(format!(
                    "class {i}: retention {} of base {} rounds to 0 samples",
                    self.retention[i], self.base_per_class
                )));
            }
        }
        Ok(())
    }
}

fn blob_rows(
    spec: &ImbalanceSpec,
    counts: &[usize],
    rng: &mut ChaCha8Rng,
    tag: &str,
) -> Dataset {
    let dim = spec.means[0].len();
    let total: usize = counts.iter().sum();
    let mut x = Array2::zeros((total, dim));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for (class, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            for (j, &m) in spec.means[class].iter().enumerate() {
                let e: f64 = StandardNormal.sample(rng);
                x[[row, j]] = m + spec.spread * e;
            }
            labels.push(class);
            row += 1;
        }
    }
    // deterministic shuffle so classes are interleaved across mini-batches
    let mut order: Vec<usize> = (0..total).collect();
    use rand::seq::SliceRandom;
    order.shuffle(rng);
    let ds = Dataset {
        x,
        targets: Targets::Labels {
            labels,
            classes: spec.classes(),
        },
        provenance: format!(
            "synthetic-classification(classes={}, seed={}, split={tag})",
            spec.classes(),
            spec.seed
        ),
    };
    ds.select(&order)
}

/// Imbalanced train split plus a balanced test split.
pub fn gen_imbalanced_classification(spec: &ImbalanceSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train_counts: Vec<usize> = (0..spec.classes()).map(|i| spec.train_count(i)).collect();
    let test_counts = vec![spec.test_per_class; spec.classes()];
    let train = blob_rows(spec, &train_counts, &mut rng, "train");
    let test = blob_rows(spec, &test_counts, &mut rng, "test");
    Ok((train, test))
}

/// Per-feature mean and standard deviation computed from the train split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Affine per-feature transform fit on train statistics only; constant
/// columns map to 0 in both splits.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, StandardizeStats)> {
    if train.feature_dim() != test.feature_dim() {
        return Err(Error::ShapeMismatch(format!(
            "train has {} features, test has {}",
            train.feature_dim(),
            test.feature_dim()
        )));
    }
    let n = train.len() as f64;
    let mean = train.x.mean_axis(Axis(0)).unwrap();
    let var = train
        .x
        .map_axis(Axis(0), |col| {
            let m = col.mean().unwrap();
            col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
        });
    let std = var.mapv(f64::sqrt);
    let apply = |ds: &Dataset| {
        let mut x = ds.x.clone();
        for mut row in x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if std[j] > 0.0 {
                    (*v - mean[j]) / std[j]
                } else {
                    0.0
                };
            }
        }
        Dataset {
            x,
            targets: ds.targets.clone(),
            provenance: format!("{} [standardized]", ds.provenance),
        }
    };
    Ok((
        apply(train),
        apply(test),
        StandardizeStats {
            mean: mean.to_vec(),
            std: std.to_vec(),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetColumns {
    /// Continuous target column indices; every other column is a feature.
    Continuous(Vec<usize>),
    /// Integer label column index; every other column is a feature.
    Label(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub target: TargetColumns,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_true")]
    pub has_header: bool,
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

/// Strict typed CSV ingestion: no imputation, parse failures name row/column.
pub fn load_csv_dataset(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .delimiter(schema.delimiter as u8)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
            ),
            _ => Error::CsvParse {
                row: 0,
                col: "-".into(),
                detail: e.to_string(),
            },
        })?;

    let target_cols: Vec<usize> = match &schema.target {
        TargetColumns::Continuous(cols) => cols.clone(),
        TargetColumns::Label(col) => vec![*col],
    };

    let mut feature_rows: Vec<Vec<f64>> = Vec::new();
    let mut target_rows: Vec<Vec<f64>> = Vec::new();
    let mut label_rows: Vec<usize> = Vec::new();
    let mut width = None;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::CsvParse {
            row: row_idx,
            col: "-".into(),
            detail: e.to_string(),
        })?;
        let w = record.len();
        if *width.get_or_insert(w) != w {
            return Err(Error::CsvParse {
                row: row_idx,
                col: "-".into(),
                detail: format!("row has {w} fields, expected {}", width.unwrap()),
            });
        }
        if let Some(&bad) = target_cols.iter().find(|&&c| c >= w) {
            return Err(Error::CsvParse {
                row: row_idx,
                col: bad.to_string(),
                detail: format!("target column {bad} out of range for {w}-column file"),
            });
        }
        let mut features = Vec::with_capacity(w - target_cols.len());
        let mut targets = Vec::with_capacity(target_cols.len());
        for (col_idx, field) in record.iter().enumerate() {
            let is_target = target_cols.contains(&col_idx);
            if field.trim().is_empty() {
                return Err(Error::CsvParse {
                    row: row_idx,
                    col: col_idx.to_string(),
                    detail: "missing value (no imputation is performed)".into(),
                });
            }
            if is_target && matches!(schema.target, TargetColumns::Label(_)) {
                let label: usize = field.trim().parse().map_err(|_| Error::CsvParse {
                    row: row_idx,
                    col: col_idx.to_string(),
                    detail: format!("'{field}' is not a class label"),
                })?;
                label_rows.push(label);
                continue;
            }
            let value: f64 = field.trim().parse().map_err(|_| Error::CsvParse {
                row: row_idx,
                col: col_idx.to_string(),
                detail: format!("'{field}' is not numeric"),
            })?;
            if is_target {
                targets.push(value);
            } else {
                features.push(value);
            }
        }
        feature_rows.push(features);
        if !targets.is_empty() {
            target_rows.push(targets);
        }
    }
    if feature_rows.is_empty() {
        return Err(Error::CsvParse {
            row: 0,
            col: "-".into(),
            detail: "file has no data rows".into(),
        });
    }

    let p = feature_rows[0].len();
    let n = feature_rows.len();
    let x = Array2::from_shape_vec((n, p), feature_rows.into_iter().flatten().collect())
        .expect("row widths already checked");
    let targets = match &schema.target {
        TargetColumns::Continuous(cols) => {
            let c = cols.len();
            Targets::Continuous(
                Array2::from_shape_vec((n, c), target_rows.into_iter().flatten().collect())
                    .expect("row widths already checked"),
            )
        }
        TargetColumns::Label(_) => {
            let classes = label_rows.iter().max().map_or(0, |m| m + 1);
            Targets::Labels {
                labels: label_rows,
                classes,
            }
        }
    };
    let ds = Dataset {
        x,
        targets,
        provenance: path.display().to_string(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes features then target columns, headers `x0..`, `y0..`/`label`.
pub fn save_csv_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
        )
    })?;
    let p = ds.feature_dim();
    let mut header: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    match &ds.targets {
        Targets::Continuous(y) => header.extend((0..y.ncols()).map(|j| format!("y{j}"))),
        Targets::Labels { .. } => header.push("label".into()),
    }
    let io_err = |e: csv::Error| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
        )
    };
    writer.write_record(&header).map_err(io_err)?;
    for i in 0..ds.len() {
        let mut record: Vec<String> = ds.x.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        match &ds.targets {
            Targets::Continuous(y) => {
                record.extend(y.row(i).iter().map(|v| format!("{v:.16e}")));
            }
            Targets::Labels { labels, .. } => record.push(labels[i].to_string()),
        }
        writer.write_record(&record).map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
