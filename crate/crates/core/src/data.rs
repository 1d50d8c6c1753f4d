//! Datasets, CSV ingestion, standardization, class weights and the two
//! simulation designs (additive and correlated covariates).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::network::TaskKind;
use crate::numerics::{Matrix, RngStream};

/// Integer-valued numeric targets with at most this many distinct values are
/// treated as class labels when the task is auto-detected.
pub const MAX_AUTO_CLASSES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Real(Vec<f64>),
    Class {
        labels: Vec<usize>,
        num_classes: usize,
    },
}

impl Targets {
    pub fn classes(labels: Vec<usize>, num_classes: usize) -> Self {
        Targets::Class {
            labels,
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Class { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Real(v) => Targets::Real(idx.iter().map(|&i| v[i]).collect()),
            Targets::Class {
                labels,
                num_classes,
            } => Targets::Class {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
        }
    }

    pub fn task(&self) -> TaskKind {
        match self {
            Targets::Real(_) => TaskKind::Regression,
            Targets::Class { num_classes, .. } => TaskKind::Classification {
                num_classes: *num_classes,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub targets: Targets,
    pub feature_names: Vec<String>,
    /// Per-observation loss weights: 1 for regression, normalized inverse
    /// class frequency for classification.
    pub obs_weights: Vec<f64>,
    /// Original label strings by class index; empty for regression.
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset and assigns default observation weights.
    pub fn new(x: Matrix, targets: Targets, feature_names: Vec<String>) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Data("a dataset needs at least one row".into()));
        }
        if x.rows() != targets.len() {
            return Err(Error::DimensionMismatch {
                op: "Dataset::new",
                expected: format!("{} targets", x.rows()),
                found: format!("{} targets", targets.len()),
            });
        }
        if feature_names.len() != x.cols() {
            return Err(contract("one feature name per column is required"));
        }
        let class_names = match &targets {
            Targets::Real(_) => Vec::new(),
            Targets::Class { num_classes, .. } => {
                (0..*num_classes).map(|c| c.to_string()).collect()
            }
        };
        let obs_weights = default_weights(&targets)?;
        Ok(Dataset {
            x,
            targets,
            feature_names,
            obs_weights,
            class_names,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Self {
        self.class_names = names;
        self
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn task(&self) -> TaskKind {
        self.targets.task()
    }

    /// Rows `idx`, with observation weights recomputed for the subset.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let targets = self.targets.select(idx);
        let obs_weights = default_weights(&targets)?;
        Ok(Dataset {
            x: self.x.select_rows(idx),
            targets,
            feature_names: self.feature_names.clone(),
            obs_weights,
            class_names: self.class_names.clone(),
        })
    }

    /// Rows `idx`, keeping each row's current observation weight.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            targets: self.targets.select(idx),
            feature_names: self.feature_names.clone(),
            obs_weights: idx.iter().map(|&i| self.obs_weights[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn target_values(&self) -> Option<&[f64]> {
        match &self.targets {
            Targets::Real(v) => Some(v),
            Targets::Class { .. } => None,
        }
    }
}

fn default_weights(targets: &Targets) -> Result<Vec<f64>> {
    match targets {
        Targets::Real(v) => Ok(vec![1.0; v.len()]),
        Targets::Class {
            labels,
            num_classes,
        } => class_weights(labels, *num_classes),
    }
}

/// Per-class weight `n / (K n_c)`: inverse empirical class frequency scaled
/// so that the per-observation weights average to one.
pub fn class_weight_table(labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(contract("class weights need at least one label"));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(contract(format!("label {l} outside 0..{num_classes}")));
        }
        counts[l] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(contract(format!(
            "class {missing} is absent from the training labels"
        )));
    }
    let n = labels.len() as f64;
    let k = num_classes as f64;
    Ok(counts.iter().map(|&c| n / (k * c as f64)).collect())
}

/// Inverse class frequency weights normalized to mean one.
pub fn class_weights(labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    let table = class_weight_table(labels, num_classes)?;
    Ok(labels.iter().map(|&l| table[l]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub center: f64,
    pub scale: f64,
    /// Constant columns are passed through untouched (`center = 0`, `scale = 1`).
    pub constant: bool,
}

impl ColumnScaling {
    fn fit(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let first = values[0];
        if values.iter().all(|&v| v == first) {
            return ColumnScaling {
                center: 0.0,
                scale: 1.0,
                constant: true,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        if var.is_nan() || var <= 0.0 {
            return ColumnScaling {
                center: 0.0,
                scale: 1.0,
                constant: true,
            };
        }
        ColumnScaling {
            center: mean,
            scale: var.sqrt(),
            constant: false,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.center) / self.scale
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.scale + self.center
    }
}

/// Centering and scaling learned from a training set (population variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub features: Vec<ColumnScaling>,
    /// Regression only.
    pub target: Option<ColumnScaling>,
}

impl StandardizationStats {
    pub fn constant_features(&self) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, s)| s.constant)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn apply_features(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.features.len() {
            return Err(Error::DimensionMismatch {
                op: "apply_features",
                expected: format!("{} columns", self.features.len()),
                found: format!("{} columns", x.cols()),
            });
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (v, s) in out.row_mut(r).iter_mut().zip(&self.features) {
                *v = s.apply(*v);
            }
        }
        Ok(out)
    }

    pub fn invert_features(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (v, s) in out.row_mut(r).iter_mut().zip(&self.features) {
                *v = s.invert(*v);
            }
        }
        out
    }

    pub fn apply_target(&self, y: f64) -> f64 {
        self.target.map_or(y, |s| s.apply(y))
    }

    pub fn invert_target(&self, y: f64) -> f64 {
        self.target.map_or(y, |s| s.invert(y))
    }

    /// Applies these statistics to another dataset (e.g. a held-out fold).
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        let mut out = dataset.clone();
        out.x = self.apply_features(&dataset.x)?;
        if let Targets::Real(v) = &mut out.targets {
            v.iter_mut().for_each(|y| *y = self.apply_target(*y));
        }
        Ok(out)
    }

    /// Undoes [`StandardizationStats::apply`].
    pub fn invert(&self, dataset: &Dataset) -> Dataset {
        let mut out = dataset.clone();
        out.x = self.invert_features(&dataset.x);
        if let Targets::Real(v) = &mut out.targets {
            v.iter_mut().for_each(|y| *y = self.invert_target(*y));
        }
        out
    }
}

/// Centers and scales every non-constant feature (and a regression target)
/// to mean 0 and population variance 1.
pub fn standardize(dataset: &Dataset) -> Result<(Dataset, StandardizationStats)> {
    if dataset.n() < 2 {
        return Err(contract("standardization needs at least 2 rows"));
    }
    let features = (0..dataset.d())
        .map(|c| ColumnScaling::fit(&dataset.x.column(c)))
        .collect();
    let target = dataset.target_values().map(ColumnScaling::fit);
    let stats = StandardizationStats { features, target };
    Ok((stats.apply(dataset)?, stats))
}

/// How to interpret the target column of a CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TaskHint {
    #[default]
    Auto,
    Regression,
    Classification,
}

/// A CSV file read into header and raw string cells.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)?;
        let headers: Vec<String> = reader
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::Data(format!(
                    "row {} has {} cells, header has {}",
                    i + 1,
                    record.len(),
                    headers.len()
                )));
            }
            rows.push(record.iter().map(|c| c.trim().to_string()).collect());
        }
        if rows.is_empty() {
            return Err(Error::Data("file has a header but no data rows".into()));
        }
        Ok(RawTable { headers, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn numeric_cell(&self, row: usize, col: usize) -> Result<f64> {
        let cell = &self.rows[row][col];
        let err = |message: String| Error::Cell {
            row: row + 1,
            column: self.headers[col].clone(),
            message,
        };
        if cell.is_empty() {
            return Err(err("missing value".into()));
        }
        let v: f64 = cell
            .parse()
            .map_err(|_| err(format!("cannot parse '{cell}' as a number")))?;
        if !v.is_finite() {
            return Err(err(format!("non-finite value '{cell}'")));
        }
        Ok(v)
    }

    /// Numeric matrix of the named columns, in the given order.
    pub fn numeric_columns(&self, columns: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(self.rows.len() * columns.len());
        for r in 0..self.rows.len() {
            for &c in columns {
                data.push(self.numeric_cell(r, c)?);
            }
        }
        Matrix::from_vec(self.rows.len(), columns.len(), data)
    }
}

/// Reads a labelled dataset. The target defaults to the last column.
pub fn load_csv(path: &Path, target_column: Option<&str>, hint: TaskHint) -> Result<Dataset> {
    let table = RawTable::read(path)?;
    let target_idx = match target_column {
        Some(name) => table
            .column_index(name)
            .ok_or_else(|| Error::Data(format!("target column '{name}' not found")))?,
        None => table.headers.len() - 1,
    };
    let feature_idx: Vec<usize> = (0..table.headers.len())
        .filter(|&c| c != target_idx)
        .collect();
    let x = table.numeric_columns(&feature_idx)?;
    let feature_names = feature_idx
        .iter()
        .map(|&c| table.headers[c].clone())
        .collect();

    let raw: Vec<&str> = table.rows.iter().map(|r| r[target_idx].as_str()).collect();
    let column = &table.headers[target_idx];
    if let Some(row) = raw.iter().position(|c| c.is_empty()) {
        return Err(Error::Cell {
            row: row + 1,
            column: column.clone(),
            message: "missing value".into(),
        });
    }
    let numeric: Option<Vec<f64>> = raw
        .iter()
        .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect();
    let classify = match hint {
        TaskHint::Regression => false,
        TaskHint::Classification => true,
        TaskHint::Auto => match &numeric {
            None => true,
            Some(values) => {
                let integral = values.iter().all(|v| v.fract() == 0.0);
                let distinct: BTreeSet<i64> = values.iter().map(|v| *v as i64).collect();
                integral && distinct.len() <= MAX_AUTO_CLASSES
            }
        },
    };

    let dataset = if classify {
        let (labels, names) = encode_labels(&raw, numeric.as_deref());
        let k = names.len();
        if k < 2 {
            return Err(Error::Data(format!("target '{column}' has a single class")));
        }
        Dataset::new(x, Targets::classes(labels, k), feature_names)?.with_class_names(names)
    } else {
        let values = match numeric {
            Some(v) => v,
            None => {
                let row = raw
                    .iter()
                    .position(|c| c.parse::<f64>().is_err())
                    .unwrap_or(0);
                return Err(Error::Cell {
                    row: row + 1,
                    column: column.clone(),
                    message: format!("cannot parse '{}' as a number", raw[row]),
                });
            }
        };
        Dataset::new(x, Targets::Real(values), feature_names)?
    };
    log::info!(
        "loaded {} rows, {} features, target '{}' ({:?})",
        dataset.n(),
        dataset.d(),
        column,
        dataset.task()
    );
    Ok(dataset)
}

/// Maps labels to indices in sorted order: numerically when every label
/// parses as a number, lexicographically otherwise.
fn encode_labels(raw: &[&str], numeric: Option<&[f64]>) -> (Vec<usize>, Vec<String>) {
    match numeric {
        Some(values) => {
            let mut distinct: Vec<f64> = values.to_vec();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let labels: Vec<usize> = values
                .iter()
                .map(|v| {
                    distinct
                        .binary_search_by(|d| d.total_cmp(v))
                        .expect("value present")
                })
                .collect();
            let mut names = vec![String::new(); distinct.len()];
            for (label, text) in labels.iter().zip(raw) {
                if names[*label].is_empty() {
                    names[*label] = text.to_string();
                }
            }
            (labels, names)
        }
        None => {
            let names: Vec<String> = raw
                .iter()
                .map(|s| s.to_string())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let index: BTreeMap<&str, usize> = names
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i))
                .collect();
            (raw.iter().map(|s| index[*s]).collect(), names)
        }
    }
}

/// Writes `x1..xd, y` with shortest round-trip decimal formatting.
pub fn write_csv(dataset: &Dataset, path: &Path, target_name: &str) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = dataset.feature_names.clone();
    header.push(target_name.to_string());
    writer.write_record(&header)?;
    for r in 0..dataset.n() {
        let mut record: Vec<String> = dataset.x.row(r).iter().map(|v| v.to_string()).collect();
        record.push(match &dataset.targets {
            Targets::Real(v) => v[r].to_string(),
            Targets::Class { labels, .. } => dataset
                .class_names
                .get(labels[r])
                .cloned()
                .unwrap_or_else(|| labels[r].to_string()),
        });
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

const VARIANCE_DRAWS: usize = 1_000_000;
const VARIANCE_SEED: u64 = 0x005e_ed0f_5167;

fn additive_block(x: &[f64]) -> f64 {
    (2.0 * x[0] + 2.0 * x[1]).sin() + 5.0 * x[2] * (x[3] - 0.25).abs()
}

fn correlated_signal(x: &[f64]) -> f64 {
    x[0] * x[1] + (x[2] + x[3]).sin()
}

fn monte_carlo_variance(width: usize, f: fn(&[f64]) -> f64) -> f64 {
    let mut rng = RngStream::new(VARIANCE_SEED);
    let mut buf = vec![0.0; width];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..VARIANCE_DRAWS {
        buf.iter_mut().for_each(|v| *v = rng.unit());
        let s = f(&buf);
        sum += s;
        sum_sq += s * s;
    }
    let n = VARIANCE_DRAWS as f64;
    let mean = sum / n;
    sum_sq / n - mean * mean
}

/// Variance of one four-covariate block of the additive signal under
/// independent `U(0,1)` covariates (Monte Carlo, computed once).
pub fn additive_block_variance() -> f64 {
    static CACHE: OnceLock<f64> = OnceLock::new();
    *CACHE.get_or_init(|| monte_carlo_variance(4, additive_block))
}

/// Variance of the additive signal with `num_relevant` relevant covariates.
pub fn additive_signal_variance(num_relevant: usize) -> f64 {
    (num_relevant / 4) as f64 * additive_block_variance()
}

/// Variance of `X1 X2 + sin(X3 + X4)` (Monte Carlo, computed once).
pub fn correlated_signal_variance() -> f64 {
    static CACHE: OnceLock<f64> = OnceLock::new();
    *CACHE.get_or_init(|| monte_carlo_variance(4, correlated_signal))
}

fn noise_sd(signal_variance: f64, snr: f64) -> Result<f64> {
    if snr.is_nan() || snr <= 0.0 {
        return Err(contract(format!("snr must be positive, got {snr}")));
    }
    Ok(if snr.is_infinite() {
        0.0
    } else {
        (signal_variance / snr).sqrt()
    })
}

fn feature_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

/// Additive design: `d` independent `U(0,1)` covariates and
/// `y = sum_{i=0}^{m} [sin(2x_{4i+1} + 2x_{4i+2}) + 5 x_{4i+3} |x_{4i+4} - 0.25|] + eps`
/// with `m = num_relevant / 4 - 1` and `Var(eps) = Var(signal) / snr`.
/// `snr = inf` gives noiseless responses.
pub fn simulate_additive(
    num_relevant: usize,
    d: usize,
    n: usize,
    snr: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_relevant == 0 || !num_relevant.is_multiple_of(4) {
        return Err(contract(format!(
            "num_relevant must be a positive multiple of 4, got {num_relevant}"
        )));
    }
    if d < num_relevant {
        return Err(contract(format!(
            "d = {d} is smaller than num_relevant = {num_relevant}"
        )));
    }
    if n == 0 {
        return Err(contract("n must be positive"));
    }
    if num_relevant == 100 {
        log::warn!(
            "num_relevant = 100 uses 25 blocks (m = 24) covering x1..x100; a sum up to m = 19 would only reach x80"
        );
    }
    let sd = noise_sd(additive_signal_variance(num_relevant), snr)?;
    let mut rng = RngStream::new(seed);
    let data: Vec<f64> = (0..n * d).map(|_| rng.unit()).collect();
    let x = Matrix::from_vec(n, d, data)?;
    let y = (0..n)
        .map(|r| {
            let row = x.row(r);
            let signal: f64 = row[..num_relevant]
                .chunks_exact(4)
                .map(additive_block)
                .sum();
            signal + sd * rng.standard_normal()
        })
        .collect();
    Dataset::new(x, Targets::Real(y), feature_names(d))
}

/// Correlated design with eight covariates: `X_i = U_i` and
/// `X_{i+4} = rho U_i + (1 - rho) U_{i+4}` for `i = 1..4`, with
/// `y = X1 X2 + sin(X3 + X4) + eps`.
pub fn simulate_correlated(rho: f64, n: usize, snr: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(contract(format!("rho must lie in [0, 1], got {rho}")));
    }
    if n == 0 {
        return Err(contract("n must be positive"));
    }
    let sd = noise_sd(correlated_signal_variance(), snr)?;
    let mut rng = RngStream::new(seed);
    let mut data = Vec::with_capacity(n * 8);
    for _ in 0..n {
        let latent: Vec<f64> = (0..8).map(|_| rng.unit()).collect();
        data.extend_from_slice(&latent[..4]);
        for i in 0..4 {
            data.push(rho * latent[i] + (1.0 - rho) * latent[i + 4]);
        }
    }
    let x = Matrix::from_vec(n, 8, data)?;
    let y = (0..n)
        .map(|r| correlated_signal(x.row(r)) + sd * rng.standard_normal())
        .collect();
    Dataset::new(x, Targets::Real(y), feature_names(8))
}
