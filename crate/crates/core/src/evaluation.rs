//! Downstream tasks over frozen embeddings: a linear softmax probe, confusion
//! tables, weighted F1 and result files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::model::ModelVariant;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor_core::Tensor;

pub const RATING_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Genre,
    Rating,
    Retrieval,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Genre, Task::Rating, Task::Retrieval];

    pub fn name(self) -> &'static str {
        match self {
            Task::Genre => "genre",
            Task::Rating => "rating",
            Task::Retrieval => "retrieval",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "genre" => Ok(Task::Genre),
            "rating" => Ok(Task::Rating),
            "retrieval" => Ok(Task::Retrieval),
            other => Err(Error::Config(format!("unknown task {other:?}; expected genre, rating or retrieval"))),
        }
    }
}

/// Rounds half up to the nearest integer class in `1..=10`.
pub fn rating_to_class(rating: f64) -> Result<usize> {
    if !(1.0..=10.0).contains(&rating) {
        return Err(Error::Range(format!("rating {rating} outside [1, 10]")));
    }
    Ok(((rating + 0.5).floor() as usize).clamp(1, RATING_CLASSES))
}

/// Counts indexed by (true class, predicted class).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionTable {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionTable {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_predictions(labels: Vec<String>, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::dim("confusion table", &[truth.len()], &[predicted.len()]));
        }
        let mut t = ConfusionTable::new(labels);
        for (&a, &b) in truth.iter().zip(predicted) {
            t.record(a, b)?;
        }
        Ok(t)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let n = self.labels.len();
        if truth >= n || predicted >= n {
            return Err(Error::Range(format!("class pair ({truth}, {predicted}) outside {n} classes")));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let hit: u64 = (0..self.classes()).map(|i| self.counts[i][i]).sum();
        hit as f64 / self.total().max(1) as f64
    }

    /// `2PR/(P+R)` per class, 0 when `P + R = 0`.
    pub fn per_class_f1(&self) -> Vec<f64> {
        (0..self.classes())
            .map(|c| {
                let tp = self.counts[c][c] as f64;
                let predicted: u64 = self.counts.iter().map(|row| row[c]).sum();
                let actual = self.support(c);
                let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
                let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
                if p + r == 0.0 {
                    0.0
                } else {
                    2.0 * p * r / (p + r)
                }
            })
            .collect()
    }
}

/// Per-class F1 averaged with weights equal to true-class support.
pub fn weighted_f1(cm: &ConfusionTable) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput("weighted_f1"));
    }
    let f1 = cm.per_class_f1();
    Ok((0..cm.classes())
        .map(|c| cm.support(c) as f64 * f1[c])
        .sum::<f64>()
        / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 500,
            learning_rate: 0.5,
            l2: 1e-3,
            seed: 0,
        }
    }
}

/// Multinomial logistic classifier `argmax(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// `classes×d`.
    pub weights: Tensor<f64>,
    pub bias: Tensor<f64>,
}

impl LinearProbe {
    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        (0..self.classes())
            .map(|c| {
                let w = &self.weights.data()[c * d..(c + 1) * d];
                w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias.data()[c]
            })
            .collect()
    }

    /// Highest logit, lowest class on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (c, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = c;
            }
        }
        best
    }

    pub fn predict_all<T: Scalar>(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let (n, d) = x.dims2()?;
        if d * self.classes() != self.weights.len() {
            return Err(Error::dim("probe input", &[self.weights.len() / self.classes()], &[d]));
        }
        Ok((0..n)
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().map(|v| v.to_f64_lossy()).collect();
                self.predict(&row)
            })
            .collect())
    }
}

/// Fits a softmax probe by full-batch gradient descent on standardized
/// features, then folds the standardization into the returned weights.
pub fn fit_probe<T: Scalar>(x: &Tensor<T>, labels: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<LinearProbe> {
    let (n, d) = x.dims2()?;
    if labels.len() != n {
        return Err(Error::dim("probe labels", &[n], &[labels.len()]));
    }
    if classes == 0 {
        return Err(Error::Config("probe needs at least one class".into()));
    }
    let mut seen = vec![0usize; classes];
    for &y in labels {
        if y >= classes {
            return Err(Error::Range(format!("label {y} outside {classes} classes")));
        }
        seen[y] += 1;
    }
    if let Some(c) = seen.iter().position(|&s| s == 0) {
        return Err(Error::Coverage(format!("class {c} has no training example")));
    }
    let raw: Vec<f64> = x.data().iter().map(|v| v.to_f64_lossy()).collect();
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += raw[i * d + j] / n as f64;
        }
    }
    for i in 0..n {
        for j in 0..d {
            std[j] += (raw[i * d + j] - mean[j]).powi(2) / n as f64;
        }
    }
    for s in &mut std {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let z: Vec<f64> = (0..n * d).map(|k| (raw[k] - mean[k % d]) / std[k % d]).collect();

    let mut rng = Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, 0.01).expect("finite");
    let mut w: Vec<f64> = (0..classes * d).map(|_| init.sample(&mut rng)).collect();
    let mut b = vec![0.0; classes];
    let mut gw = vec![0.0; classes * d];
    let mut gb = vec![0.0; classes];
    let mut p = vec![0.0; classes];
    for _ in 0..cfg.epochs {
        gw.iter_mut().for_each(|g| *g = 0.0);
        gb.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let xi = &z[i * d..(i + 1) * d];
            for c in 0..classes {
                p[c] = w[c * d..(c + 1) * d].iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + b[c];
            }
            let m = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in &mut p {
                *v = (*v - m).exp();
                s += *v;
            }
            for c in 0..classes {
                let delta = p[c] / s - if c == labels[i] { 1.0 } else { 0.0 };
                gb[c] += delta / n as f64;
                for j in 0..d {
                    gw[c * d + j] += delta * xi[j] / n as f64;
                }
            }
        }
        for k in 0..classes * d {
            w[k] -= cfg.learning_rate * (gw[k] + cfg.l2 * w[k]);
        }
        for c in 0..classes {
            b[c] -= cfg.learning_rate * gb[c];
        }
    }
    // W z + b with z = (x - mean)/std  ⇒  W' = W/std, b' = b - W' mean
    let mut weights = vec![0.0; classes * d];
    let mut bias = b;
    for c in 0..classes {
        for j in 0..d {
            weights[c * d + j] = w[c * d + j] / std[j];
            bias[c] -= weights[c * d + j] * mean[j];
        }
    }
    let probe = LinearProbe {
        weights: Tensor::new(vec![classes, d], weights)?,
        bias: Tensor::vector(bias),
    };
    if !probe.weights.all_finite() || !probe.bias.all_finite() {
        return Err(Error::NumericDomain { op: "fit_probe" });
    }
    Ok(probe)
}

/// Labels and class names for a classification task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLabels {
    pub labels: Vec<usize>,
    pub names: Vec<String>,
}

impl TaskLabels {
    pub fn genre(labels: Vec<usize>, names: Vec<String>) -> Self {
        TaskLabels { labels, names }
    }

    /// Rating classes 1..=10 as labels 0..=9.
    pub fn rating(ratings: &[f64]) -> Result<Self> {
        let labels = ratings
            .iter()
            .map(|&r| rating_to_class(r).map(|c| c - 1))
            .collect::<Result<_>>()?;
        Ok(TaskLabels {
            labels,
            names: (1..=RATING_CLASSES).map(|c| c.to_string()).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub weighted_f1: f64,
    pub confusion: ConfusionTable,
    /// Accuracy of always predicting the most frequent training class.
    pub majority_baseline: f64,
}

/// Fits a probe on the train rows of `embeddings` and scores the test rows.
/// Only classes present in the train portion are probe outputs; test items
/// of any other class count as misses.
pub fn evaluate_task<T: Scalar>(
    embeddings: &Tensor<T>,
    task: &TaskLabels,
    split: &Split,
    cfg: &ProbeConfig,
) -> Result<TaskOutcome> {
    let (n, d) = embeddings.dims2()?;
    if task.labels.len() != n {
        return Err(Error::dim("task labels", &[n], &[task.labels.len()]));
    }
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::EmptyInput("evaluate_task split"));
    }
    let mut present: Vec<usize> = split.train.iter().map(|&i| task.labels[i]).collect();
    present.sort_unstable();
    present.dedup();
    let compact = |label: usize| present.binary_search(&label).expect("train label");
    let gather = |idx: &[usize]| -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(embeddings.row(i));
        }
        Tensor::new(vec![idx.len(), d], data)
    };
    let train_x = gather(&split.train)?;
    let train_y: Vec<usize> = split.train.iter().map(|&i| compact(task.labels[i])).collect();
    let probe = fit_probe(&train_x, &train_y, present.len(), cfg)?;
    let predicted: Vec<usize> = probe
        .predict_all(&gather(&split.test)?)?
        .into_iter()
        .map(|c| present[c])
        .collect();
    let truth: Vec<usize> = split.test.iter().map(|&i| task.labels[i]).collect();
    let confusion = ConfusionTable::from_predictions(task.names.clone(), &truth, &predicted)?;
    let mut counts = vec![0usize; task.names.len()];
    for &y in &train_y {
        counts[present[y]] += 1;
    }
    let majority = (0..counts.len()).fold(0, |best, c| if counts[c] > counts[best] { c } else { best });
    let majority_baseline = truth.iter().filter(|&&t| t == majority).count() as f64 / truth.len() as f64;
    Ok(TaskOutcome {
        weighted_f1: weighted_f1(&confusion)?,
        confusion,
        majority_baseline,
    })
}

/// One evaluation result as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub task: Task,
    pub variant: ModelVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_f1: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority_baseline: Option<f64>,
    /// `k` → recall@k, retrieval only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<BTreeMap<String, f64>>,
    pub seed: u64,
    pub checkpoint_hash: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl ResultRecord {
    pub fn classification(task: Task, variant: ModelVariant, outcome: &TaskOutcome, seed: u64, checkpoint_hash: String, timestamp: u64) -> Self {
        let f1 = outcome.confusion.per_class_f1();
        ResultRecord {
            task,
            variant,
            weighted_f1: Some(outcome.weighted_f1),
            per_class_f1: Some(outcome.confusion.labels.iter().cloned().zip(f1).collect()),
            confusion: Some(outcome.confusion.clone()),
            majority_baseline: Some(outcome.majority_baseline),
            recall: None,
            seed,
            checkpoint_hash,
            timestamp,
        }
    }

    /// The number shown in the summary table.
    pub fn headline(&self) -> Option<f64> {
        match self.task {
            Task::Retrieval => self.recall.as_ref().and_then(|r| r.get("1").copied()),
            _ => self.weighted_f1,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::MissingFile {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }
}

/// Renders a variant × task table. Later timestamps win when a
/// (variant, task) pair repeats; each such collision produces a warning.
pub fn report(records: &[ResultRecord]) -> Result<(String, Vec<String>)> {
    if records.is_empty() {
        return Err(Error::EmptyInput("report"));
    }
    let mut cells: BTreeMap<(ModelVariant, Task), &ResultRecord> = BTreeMap::new();
    let mut warnings = Vec::new();
    for r in records {
        if let Some(prev) = cells.get(&(r.variant, r.task)) {
            let msg = format!(
                "duplicate result for {} / {}; keeping timestamp {}",
                r.variant.display_name(),
                r.task,
                prev.timestamp.max(r.timestamp)
            );
            warn!("{msg}");
            warnings.push(msg);
            if r.timestamp < prev.timestamp {
                continue;
            }
        }
        cells.insert((r.variant, r.task), r);
    }
    let variants: Vec<ModelVariant> = ModelVariant::ALL
        .into_iter()
        .filter(|v| cells.keys().any(|(cv, _)| cv == v))
        .collect();
    let tasks: Vec<Task> = Task::ALL
        .into_iter()
        .filter(|t| cells.keys().any(|(_, ct)| ct == t))
        .collect();
    let header = |t: &Task| match t {
        Task::Genre => "Genre (wF1)",
        Task::Rating => "Rating (wF1)",
        Task::Retrieval => "Retrieval (R@1)",
    };
    let first = variants.iter().map(|v| v.display_name().len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<first$}", "Model");
    for t in &tasks {
        out.push_str(&format!(" | {:>15}", header(t)));
    }
    out.push('\n');
    out.push_str(&"-".repeat(first));
    for _ in &tasks {
        out.push_str(&format!("-+-{}", "-".repeat(15)));
    }
    out.push('\n');
    for v in &variants {
        out.push_str(&format!("{:<first$}", v.display_name()));
        for t in &tasks {
            let cell = cells
                .get(&(*v, *t))
                .and_then(|r| r.headline())
                .map(|x| format!("{x:.4}"))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(" | {cell:>15}"));
        }
        out.push('\n');
    }
    Ok((out, warnings))
}
