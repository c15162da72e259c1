//! Datasets and N-way K-shot episodes, including multi-query episodes that
//! share one support set across several candidate query sets.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::seed::stream_rng;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("invalid dataset dimensions: {0}")]
    InvalidDims(String),
    #[error("parse error at line {line}{}: {message}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse { line: u64, column: Option<usize>, message: String },
    #[error("inconsistent width at line {line}: header declares {expected} features, row has {found}")]
    InconsistentWidth { line: u64, expected: usize, found: usize },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("class `{class}` has {have} rows but an episode needs {need}")]
    InsufficientSamples { class: String, have: usize, need: usize },
    #[error("dataset has {have} classes, episodes need {need}")]
    TooFewClasses { have: usize, need: usize },
    #[error("query set index {index} out of range ({len} query sets)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("query set {0} is already labelled")]
    AlreadyRevealed(usize),
    #[error("label budget of {0} query sets exhausted")]
    BudgetExhausted(u64),
}

/// Labelled feature vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    class_index: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self, EpisodeError> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(EpisodeError::InvalidDims(format!(
                "{} values for {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        let mut class_index = vec![Vec::new(); class_names.len()];
        for (row, &c) in labels.iter().enumerate() {
            let slot = class_index
                .get_mut(c)
                .ok_or_else(|| EpisodeError::InvalidDims(format!("label {c} has no class name")))?;
            slot.push(row);
        }
        Ok(Dataset { dim, features, labels, class_names, class_index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_rows(&self, class: usize) -> &[usize] {
        &self.class_index[class]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.features[r * self.dim..(r + 1) * self.dim]
    }

    /// Stacks the given rows into a `[rows.len(), dim]` tensor.
    pub fn gather(&self, rows: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Tensor::new(vec![rows.len(), self.dim], data).expect("dataset rows are finite")
    }
}

/// Parameters for [`make_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub radius: f64,
    pub noise_sigma: f64,
}

/// Gaussian clusters whose means sit on a circle of `radius` in the first two
/// feature dimensions, class `c` at angle `2 pi c / C`.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset, EpisodeError> {
    let SyntheticSpec { num_classes, dim, samples_per_class, radius, noise_sigma } = *spec;
    if num_classes < 2 {
        return Err(EpisodeError::InvalidDims(format!("need at least 2 classes, got {num_classes}")));
    }
    if dim < 2 {
        return Err(EpisodeError::InvalidDims(format!("need at least 2 dimensions, got {dim}")));
    }
    if samples_per_class == 0 {
        return Err(EpisodeError::InvalidDims("samples_per_class must be positive".into()));
    }
    if !(noise_sigma >= 0.0) || !radius.is_finite() || !noise_sigma.is_finite() {
        return Err(EpisodeError::InvalidDims("radius and noise_sigma must be finite, sigma >= 0".into()));
    }
    let mut rng = stream_rng(seed, "synthetic");
    let mut features = Vec::with_capacity(num_classes * samples_per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * samples_per_class);
    for c in 0..num_classes {
        let mean = class_mean(c, num_classes, dim, radius);
        for _ in 0..samples_per_class {
            for &m in &mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(m + noise_sigma * z);
            }
            labels.push(c);
        }
    }
    let names = (0..num_classes).map(|c| format!("c{c}")).collect();
    Dataset::new(dim, features, labels, names)
}

pub fn class_mean(class: usize, num_classes: usize, dim: usize, radius: f64) -> Vec<f64> {
    let angle = 2.0 * std::f64::consts::PI * class as f64 / num_classes as f64;
    let mut mean = vec![0.0; dim];
    mean[0] = radius * angle.cos();
    mean[1] = radius * angle.sin();
    mean
}

/// Reads `label,f0,...,f{d-1}` CSV. Classes are numbered in order of first
/// appearance.
pub fn load_csv(path: &Path) -> Result<Dataset, EpisodeError> {
    let file = std::fs::File::open(path)
        .map_err(|e| EpisodeError::Io { path: path.display().to_string(), message: e.to_string() })?;
    read_csv(file)
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Dataset, EpisodeError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(EpisodeError::Parse { line: 1, column: None, message: "empty file".into() }),
        Some(r) => r.map_err(|e| csv_error(&e))?,
    };
    if header.len() < 2 || header.get(0).map(str::trim) != Some("label") {
        return Err(EpisodeError::Parse {
            line: 1,
            column: None,
            message: "header must be `label,f0,...` with at least one feature".into(),
        });
    }
    let dim = header.len() - 1;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut lookup: HashMap<String, usize> = HashMap::new();
    for record in records {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != dim + 1 {
            return Err(EpisodeError::InconsistentWidth { line, expected: dim, found: record.len().saturating_sub(1) });
        }
        let label = record.get(0).unwrap_or("").trim();
        if label.is_empty() {
            return Err(EpisodeError::Parse { line, column: Some(1), message: "empty label".into() });
        }
        for (j, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| EpisodeError::Parse {
                line,
                column: Some(j + 2),
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(EpisodeError::Parse { line, column: Some(j + 2), message: "non-finite feature".into() });
            }
            features.push(v);
        }
        let id = *lookup.entry(label.to_string()).or_insert_with(|| {
            names.push(label.to_string());
            names.len() - 1
        });
        labels.push(id);
    }
    if labels.is_empty() {
        return Err(EpisodeError::Parse { line: 2, column: None, message: "no data rows".into() });
    }
    Dataset::new(dim, features, labels, names)
}

fn csv_error(e: &csv::Error) -> EpisodeError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    EpisodeError::Parse { line, column: None, message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    /// Query sets sharing the support set; 1 for a standard episode.
    pub queries_per_task: usize,
}

impl SamplerConfig {
    pub fn standard(n_way: usize, k_shot: usize, q_query: usize) -> Self {
        SamplerConfig { n_way, k_shot, q_query, queries_per_task: 1 }
    }

    pub fn rows_per_class(&self) -> usize {
        self.k_shot + self.q_query * self.queries_per_task
    }

    /// Fails if `ds` cannot supply episodes of this shape.
    pub fn check(&self, ds: &Dataset) -> Result<(), EpisodeError> {
        if self.n_way < 2 || self.k_shot == 0 || self.q_query == 0 || self.queries_per_task == 0 {
            return Err(EpisodeError::InvalidDims(format!(
                "episode shape needs n_way >= 2 and positive k, q, query sets: {self:?}"
            )));
        }
        if ds.num_classes() < self.n_way {
            return Err(EpisodeError::TooFewClasses { have: ds.num_classes(), need: self.n_way });
        }
        let need = self.rows_per_class();
        for (c, rows) in ds.class_index.iter().enumerate() {
            if rows.len() < need {
                return Err(EpisodeError::InsufficientSamples {
                    class: ds.class_names[c].clone(),
                    have: rows.len(),
                    need,
                });
            }
        }
        Ok(())
    }
}

/// Labelled support set with episode-local labels.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub rows: Vec<usize>,
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A query set whose labels stay hidden until revealed.
#[derive(Debug, Clone)]
pub struct QuerySet {
    pub rows: Vec<usize>,
    pub x: Tensor,
    labels: Vec<usize>,
    revealed: bool,
}

impl QuerySet {
    pub fn labels(&self) -> Option<&[usize]> {
        self.revealed.then_some(self.labels.as_slice())
    }

    pub fn is_revealed(&self) -> bool {
        self.revealed
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Counts revealed query sets against an optional limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LabelBudget {
    pub spent: u64,
    pub limit: Option<u64>,
}

impl LabelBudget {
    pub fn unlimited() -> Self {
        LabelBudget::default()
    }

    pub fn limited(limit: u64) -> Self {
        LabelBudget { spent: 0, limit: Some(limit) }
    }

    pub fn remaining(&self) -> Option<u64> {
        self.limit.map(|l| l.saturating_sub(self.spent))
    }

    fn spend(&mut self) -> Result<(), EpisodeError> {
        if let Some(limit) = self.limit {
            if self.spent >= limit {
                return Err(EpisodeError::BudgetExhausted(limit));
            }
        }
        self.spent += 1;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Task {
    /// Dataset class ids; position is the episode-local label.
    pub classes: Vec<usize>,
    pub support: LabeledSet,
    pub query_sets: Vec<QuerySet>,
}

impl Task {
    pub fn n_way(&self) -> usize {
        self.classes.len()
    }

    /// Labels query set `index`, charging one unit to `budget`.
    pub fn reveal_labels(&mut self, index: usize, budget: &mut LabelBudget) -> Result<&[usize], EpisodeError> {
        let len = self.query_sets.len();
        let qs = self
            .query_sets
            .get_mut(index)
            .ok_or(EpisodeError::IndexOutOfRange { index, len })?;
        if qs.revealed {
            return Err(EpisodeError::AlreadyRevealed(index));
        }
        budget.spend()?;
        qs.revealed = true;
        Ok(&qs.labels)
    }

    pub fn revealed_count(&self) -> usize {
        self.query_sets.iter().filter(|q| q.revealed).count()
    }

    pub fn all_rows(&self) -> Vec<usize> {
        let mut rows = self.support.rows.clone();
        for q in &self.query_sets {
            rows.extend_from_slice(&q.rows);
        }
        rows
    }
}

/// Draws one episode. Classes and rows are sampled without replacement;
/// rows never repeat across the support set and query sets of one task.
pub fn sample_task<R: Rng + ?Sized>(ds: &Dataset, cfg: &SamplerConfig, rng: &mut R) -> Result<Task, EpisodeError> {
    cfg.check(ds)?;
    let classes = index::sample(rng, ds.num_classes(), cfg.n_way).into_vec();
    let need = cfg.rows_per_class();

    let mut support_rows = Vec::with_capacity(cfg.n_way * cfg.k_shot);
    let mut support_labels = Vec::with_capacity(cfg.n_way * cfg.k_shot);
    let mut query_rows = vec![Vec::with_capacity(cfg.n_way * cfg.q_query); cfg.queries_per_task];
    let mut query_labels = vec![Vec::with_capacity(cfg.n_way * cfg.q_query); cfg.queries_per_task];
    for (local, &c) in classes.iter().enumerate() {
        let pool = ds.class_rows(c);
        let picks: Vec<usize> = index::sample(rng, pool.len(), need).into_iter().map(|i| pool[i]).collect();
        for &r in &picks[..cfg.k_shot] {
            support_rows.push(r);
            support_labels.push(local);
        }
        for j in 0..cfg.queries_per_task {
            let start = cfg.k_shot + j * cfg.q_query;
            for &r in &picks[start..start + cfg.q_query] {
                query_rows[j].push(r);
                query_labels[j].push(local);
            }
        }
    }

    let support = LabeledSet { x: ds.gather(&support_rows), rows: support_rows, labels: support_labels };
    let query_sets = query_rows
        .into_iter()
        .zip(query_labels)
        .map(|(rows, labels)| QuerySet { x: ds.gather(&rows), rows, labels, revealed: false })
        .collect();
    Ok(Task { classes, support, query_sets })
}

/// One-hot `[labels.len(), classes]` matrix.
pub fn one_hot_matrix(labels: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        data[i * classes + y] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data).expect("one-hot matrix")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodKind {
    FeatureShift,
    FeatureScale,
    RandomRotation,
}

impl fmt::Display for OodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OodKind::FeatureShift => "feature-shift",
            OodKind::FeatureScale => "feature-scale",
            OodKind::RandomRotation => "random-rotation",
        })
    }
}

/// Perturbs query features to simulate distribution shift.
pub fn ood_transform(x: &Tensor, kind: OodKind, magnitude: f64, seed: u64) -> Tensor {
    let magnitude = magnitude.max(0.0);
    match kind {
        OodKind::FeatureShift => x.map(|v| v + magnitude),
        OodKind::FeatureScale => x.map(|v| v * (1.0 + magnitude)),
        OodKind::RandomRotation => {
            let d = x.shape()[1];
            let m = rotation_matrix(d, magnitude, seed);
            let rows = x.shape()[0];
            let mut out = vec![0.0; rows * d];
            for r in 0..rows {
                let xr = x.row(r);
                for i in 0..d {
                    out[r * d + i] = (0..d).map(|j| m[i * d + j] * xr[j]).sum();
                }
            }
            Tensor::new(vec![rows, d], out).expect("rotated features are finite")
        }
    }
}

/// Orthonormalized blend `(1 - t) I + t R` of the identity with a seeded
/// random rotation `R`, `t = magnitude` clipped to `[0, 1]`. Row-major `d x d`.
pub fn rotation_matrix(d: usize, magnitude: f64, seed: u64) -> Vec<f64> {
    let t = magnitude.clamp(0.0, 1.0);
    let mut rng = stream_rng(seed, "ood-rotation");
    let gaussian: Vec<f64> = (0..d * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut r = gram_schmidt(&gaussian, d);
    if determinant(&r, d) < 0.0 {
        for i in 0..d {
            r[i * d] = -r[i * d];
        }
    }
    let mut blend = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let id = if i == j { 1.0 } else { 0.0 };
            blend[i * d + j] = (1.0 - t) * id + t * r[i * d + j];
        }
    }
    gram_schmidt(&blend, d)
}

/// Modified Gram-Schmidt on the columns of a row-major `d x d` matrix.
fn gram_schmidt(a: &[f64], d: usize) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = (0..d).map(|j| (0..d).map(|i| a[i * d + j]).collect()).collect();
    for j in 0..d {
        for k in 0..j {
            let dot: f64 = (0..d).map(|i| cols[j][i] * cols[k][i]).sum();
            for i in 0..d {
                cols[j][i] -= dot * cols[k][i];
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut cols[j] {
            *v /= norm;
        }
    }
    let mut out = vec![0.0; d * d];
    for j in 0..d {
        for i in 0..d {
            out[i * d + j] = cols[j][i];
        }
    }
    out
}

fn determinant(a: &[f64], d: usize) -> f64 {
    let mut m = a.to_vec();
    let mut det = 1.0;
    for c in 0..d {
        let pivot = (c..d)
            .max_by(|&x, &y| m[x * d + c].abs().total_cmp(&m[y * d + c].abs()))
            .unwrap();
        if m[pivot * d + c] == 0.0 {
            return 0.0;
        }
        if pivot != c {
            for k in 0..d {
                m.swap(c * d + k, pivot * d + k);
            }
            det = -det;
        }
        det *= m[c * d + c];
        for r in c + 1..d {
            let f = m[r * d + c] / m[c * d + c];
            for k in c..d {
                m[r * d + k] -= f * m[c * d + k];
            }
        }
    }
    det
}
