//! Downstream evaluation with frozen embeddings: documents become the mean of
//! their word vectors and a multinomial logistic regression is trained on top.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::embedding::{cosine, EmbeddingModel};
use crate::error::{Error, Result};
use crate::rng;

/// Tokenized documents with class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    examples: Vec<(Vec<String>, usize)>,
    classes: Vec<String>,
}

impl LabeledDataset {
    pub fn new(examples: Vec<(Vec<String>, String)>) -> Self {
        let classes: Vec<String> = examples
            .iter()
            .map(|(_, l)| l.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let examples = examples
            .into_iter()
            .map(|(d, l)| {
                let c = classes.binary_search(&l).expect("label collected above");
                (d, c)
            })
            .collect();
        LabeledDataset { examples, classes }
    }

    /// Parse `label TAB text` lines; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (label, body) = line.split_once('\t').ok_or_else(|| {
                Error::format("dataset", format!("line {}: expected label TAB text", i + 1))
            })?;
            if label.is_empty() {
                return Err(Error::format("dataset", format!("line {}: empty label", i + 1)));
            }
            out.push((tokenize(body), label.to_owned()));
        }
        Ok(Self::new(out))
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|(_, l)| *l).collect()
    }

    pub fn documents(&self) -> impl Iterator<Item = &[String]> {
        self.examples.iter().map(|(d, _)| d.as_slice())
    }
}

/// Document vectors, one row per document.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub rows: Vec<Vec<f64>>,
    pub dim: usize,
    /// Documents with no in-vocabulary word, mapped to the zero vector.
    pub empty: usize,
}

/// Mean of the in-vocabulary word vectors of each document.
pub fn featurize_documents<'a>(
    documents: impl IntoIterator<Item = &'a [String]>,
    embeddings: &EmbeddingModel,
) -> Features {
    let dim = embeddings.dim();
    let mut empty = 0;
    let rows = documents
        .into_iter()
        .map(|doc| {
            let mut row = vec![0.0; dim];
            let mut n = 0usize;
            for v in doc.iter().filter_map(|w| embeddings.vector(w)) {
                for (r, x) in row.iter_mut().zip(v) {
                    *r += x;
                }
                n += 1;
            }
            if n == 0 {
                empty += 1;
            } else {
                row.iter_mut().for_each(|r| *r /= n as f64);
            }
            row
        })
        .collect();
    Features { rows, dim, empty }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Fraction held out for testing; the rest is split 7:1 into train and validation.
    pub test_fraction: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-4,
            test_fraction: 0.2,
        }
    }
}

/// Accuracy and per-class F1 over repeated seeded runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub seeds: usize,
    pub accuracies: Vec<f64>,
    pub train_accuracies: Vec<f64>,
    pub mean: f64,
    pub stdev: f64,
    pub class_f1: Vec<(String, f64)>,
}

/// Sum in sorted order so the result does not depend on input order.
fn stable_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn stable_stdev(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mut sq: Vec<f64> = values.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    (sq.iter().sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

struct Softmax {
    classes: usize,
    dim: usize,
    // row-major classes x (dim + 1), last column is the bias
    w: Vec<f64>,
}

impl Softmax {
    fn logits(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.w[c * (self.dim + 1)..(c + 1) * (self.dim + 1)];
            *o = row[self.dim] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn predict(&self, x: &[f64], buf: &mut [f64]) -> usize {
        self.logits(x, buf);
        let mut best = 0;
        for c in 1..self.classes {
            if buf[c] > buf[best] {
                best = c;
            }
        }
        best
    }

    fn accuracy(&self, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        let mut buf = vec![0.0; self.classes];
        let hits = xs.iter().zip(ys).filter(|(x, y)| self.predict(x, &mut buf) == **y).count();
        hits as f64 / xs.len().max(1) as f64
    }

    fn gradient_step(&mut self, xs: &[Vec<f64>], ys: &[usize], lr: f64, l2: f64) {
        let k = self.classes;
        let stride = self.dim + 1;
        let mut grad = vec![0.0; self.w.len()];
        let mut p = vec![0.0; k];
        for (x, y) in xs.iter().zip(ys) {
            self.logits(x, &mut p);
            let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in p.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for (c, pc) in p.iter().enumerate() {
                let g = pc / z - if c == *y { 1.0 } else { 0.0 };
                let row = &mut grad[c * stride..(c + 1) * stride];
                for (r, xi) in row.iter_mut().zip(x) {
                    *r += g * xi;
                }
                row[self.dim] += g;
            }
        }
        let n = xs.len().max(1) as f64;
        for (i, (w, g)) in self.w.iter_mut().zip(&grad).enumerate() {
            let reg = if i % stride == self.dim { 0.0 } else { l2 * *w };
            *w -= lr * (g / n + reg);
        }
    }
}

/// Per-feature mean and standard deviation over the training rows.
fn standardizer(xs: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for x in xs {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; dim];
    for x in xs {
        for ((s, v), m) in sd.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let sd = sd.into_iter().map(|s| if s > 0.0 { s.sqrt() } else { 1.0 }).collect();
    (mean, sd)
}

fn f1_per_class(pred: &[usize], truth: &[usize], classes: usize) -> Vec<f64> {
    (0..classes)
        .map(|c| {
            let tp = pred.iter().zip(truth).filter(|(p, t)| **p == c && **t == c).count() as f64;
            let fp = pred.iter().zip(truth).filter(|(p, t)| **p == c && **t != c).count() as f64;
            let fneg = pred.iter().zip(truth).filter(|(p, t)| **p != c && **t == c).count() as f64;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fneg)
            }
        })
        .collect()
}

struct RunResult {
    test_accuracy: f64,
    train_accuracy: f64,
    class_f1: Vec<f64>,
}

fn run_once(
    features: &Features,
    labels: &[usize],
    classes: usize,
    seed: u64,
    config: &ClassifierConfig,
) -> RunResult {
    let mut rng = rng::stream(seed, "classifier");
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    let n = order.len();
    let n_test = ((n as f64 * config.test_fraction).round() as usize).clamp(1, n - 2);
    let rest = n - n_test;
    let n_valid = (rest / 8).max(1);
    let (test_idx, rest_idx) = order.split_at(n_test);
    let (valid_idx, train_idx) = rest_idx.split_at(n_valid);

    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (
            idx.iter().map(|i| features.rows[*i].clone()).collect(),
            idx.iter().map(|i| labels[*i]).collect(),
        )
    };
    let (mut train_x, train_y) = pick(train_idx);
    let (mut valid_x, valid_y) = pick(valid_idx);
    let (mut test_x, test_y) = pick(test_idx);
    let (mean, sd) = standardizer(&train_x, features.dim);
    for x in train_x.iter_mut().chain(valid_x.iter_mut()).chain(test_x.iter_mut()) {
        for ((v, m), s) in x.iter_mut().zip(&mean).zip(&sd) {
            *v = (*v - m) / s;
        }
    }

    let mut model = Softmax {
        classes,
        dim: features.dim,
        w: (0..classes * (features.dim + 1))
            .map(|_| rng.gen_range(-0.01..0.01))
            .collect(),
    };
    let mut best = (f64::NEG_INFINITY, model.w.clone());
    for epoch in 0..config.epochs {
        model.gradient_step(&train_x, &train_y, config.learning_rate, config.l2);
        if epoch % 10 == 9 || epoch + 1 == config.epochs {
            let acc = model.accuracy(&valid_x, &valid_y);
            if acc > best.0 {
                best = (acc, model.w.clone());
            }
        }
    }
    if config.epochs > 0 {
        model.w = best.1;
    }
    let mut buf = vec![0.0; classes];
    let pred: Vec<usize> = test_x.iter().map(|x| model.predict(x, &mut buf)).collect();
    RunResult {
        test_accuracy: model.accuracy(&test_x, &test_y),
        train_accuracy: model.accuracy(&train_x, &train_y),
        class_f1: f1_per_class(&pred, &test_y, classes),
    }
}

/// Train and test the classifier once per seed and aggregate.
pub fn train_eval_classifier(
    name: &str,
    features: &Features,
    labels: &[usize],
    class_names: &[String],
    seeds: &[u64],
    config: &ClassifierConfig,
) -> Result<EvalReport> {
    let classes = class_names.len();
    let distinct: BTreeSet<usize> = labels.iter().copied().collect();
    if classes < 2 || distinct.len() < 2 {
        return Err(Error::InvalidArgument("at least two classes are required".into()));
    }
    if labels.iter().any(|l| *l >= classes) {
        return Err(Error::InvalidArgument("label outside the class set".into()));
    }
    if features.rows.len() != labels.len() {
        return Err(Error::DimensionMismatch("one label per document is required".into()));
    }
    if labels.len() < 10 {
        return Err(Error::InvalidArgument("at least 10 labelled documents are required".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let runs: Vec<RunResult> = seeds
        .iter()
        .map(|s| run_once(features, labels, classes, *s, config))
        .collect();
    let accuracies: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
    let mean = stable_mean(&accuracies);
    let class_f1 = class_names
        .iter()
        .enumerate()
        .map(|(c, n)| {
            let v: Vec<f64> = runs.iter().map(|r| r.class_f1[c]).collect();
            (n.clone(), stable_mean(&v))
        })
        .collect();
    Ok(EvalReport {
        name: name.to_owned(),
        seeds: seeds.len(),
        train_accuracies: runs.iter().map(|r| r.train_accuracy).collect(),
        stdev: stable_stdev(&accuracies, mean),
        mean,
        accuracies,
        class_f1,
    })
}

/// Plain-text table, one row per report.
pub fn render_reports(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(0).max(10);
    let mut s = String::new();
    let _ = write!(s, "{:<width$}  seeds  accuracy         ", "embeddings");
    if let Some(r) = reports.first() {
        for (c, _) in &r.class_f1 {
            let _ = write!(s, "  f1[{c}]");
        }
    }
    s.push('\n');
    for r in reports {
        let _ = write!(s, "{:<width$}  {:>5}  {:.4} ± {:.4}  ", r.name, r.seeds, r.mean, r.stdev);
        for (c, f) in &r.class_f1 {
            let _ = write!(s, "  {:>width$.4}", f, width = c.len() + 4);
        }
        s.push('\n');
    }
    s
}

/// The `k` words closest to `word` by cosine, excluding `word` itself. Ties
/// are broken by ascending word.
pub fn nearest_neighbors(model: &EmbeddingModel, word: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let rank = model
        .vocab()
        .rank(word)
        .ok_or_else(|| Error::InvalidArgument(format!("{word:?} is not in the vocabulary")))?;
    let query = model.input_row(rank);
    let mut scored: Vec<(String, f64)> = model
        .vocab()
        .words()
        .enumerate()
        .filter(|(r, _)| *r != rank)
        .map(|(r, w)| (w.to_owned(), cosine(query, model.input_row(r))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}
