//! Pairwise meta-learner scoring whether two feature vectors of the same word
//! come from similar domain contexts.
//!
//! The model projects each l1-normalized input through a shared linear layer,
//! takes the element-wise absolute difference, and maps it through a linear
//! layer and a sigmoid:
//!
//! ```text
//! score = sigmoid(w2 . |W1 xa/|xa|_1 - W1 xb/|xb|_1| + b2)
//! ```
//!
//! Gradients are derived by hand for this fixed architecture. Training uses
//! binary cross-entropy and Adam.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::FeatureVector;
use crate::error::{Error, Result};
use crate::rng;

const MODEL_MAGIC: &[u8; 8] = b"LDEMMETA";
pub const MODEL_VERSION: u32 = 1;

/// Weights of the pairwise model. `w1` is stored feature-major: the `h` weights
/// fed by feature rank `r` are `w1[r*h..(r+1)*h]`, which makes the sparse
/// projection a sequence of contiguous axpy operations.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaLearnerParams {
    f: usize,
    h: usize,
    w1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl MetaLearnerParams {
    pub fn zeros(f: usize, h: usize) -> Result<Self> {
        if f == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "meta-learner needs f >= 1 and h >= 1 (got f={f}, h={h})"
            )));
        }
        Ok(MetaLearnerParams {
            f,
            h,
            w1: vec![0.0; f * h],
            w2: vec![0.0; h],
            b2: 0.0,
        })
    }

    /// Uniform Glorot-style initialization for `W1` and `W2`, `b2 = 0`.
    pub fn init(f: usize, h: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(f, h)?;
        let mut rng = rng::stream(seed, "meta-init");
        let a1 = (6.0 / (f + h) as f64).sqrt();
        for w in &mut p.w1 {
            *w = rng.gen_range(-a1..a1);
        }
        let a2 = (6.0 / (h + 1) as f64).sqrt();
        for w in &mut p.w2 {
            *w = rng.gen_range(-a2..a2);
        }
        Ok(p)
    }

    pub fn feature_dim(&self) -> usize {
        self.f
    }

    pub fn hidden_dim(&self) -> usize {
        self.h
    }

    /// Weight of hidden unit `k` for feature rank `r`.
    pub fn w1(&self, k: usize, r: usize) -> f64 {
        self.w1[r * self.h + k]
    }

    pub fn set_w1(&mut self, k: usize, r: usize, value: f64) {
        self.w1[r * self.h + k] = value;
    }

    pub fn w2(&self) -> &[f64] {
        &self.w2
    }

    pub fn w2_mut(&mut self) -> &mut [f64] {
        &mut self.w2
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    pub fn set_b2(&mut self, b2: f64) {
        self.b2 = b2;
    }

    /// Every parameter as one flat slice-like view: w1 (feature-major), w2, b2.
    fn len_flat(&self) -> usize {
        self.w1.len() + self.w2.len() + 1
    }

    fn get_flat(&self, i: usize) -> f64 {
        let n1 = self.w1.len();
        if i < n1 {
            self.w1[i]
        } else if i < n1 + self.h {
            self.w2[i - n1]
        } else {
            self.b2
        }
    }

    fn flat_mut(&mut self, i: usize) -> &mut f64 {
        let n1 = self.w1.len();
        if i < n1 {
            &mut self.w1[i]
        } else if i < n1 + self.h {
            &mut self.w2[i - n1]
        } else {
            &mut self.b2
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.w2).all(|v| v.is_finite()) && self.b2.is_finite()
    }

    /// Round every weight to the nearest `f32`, the precision used on disk.
    pub fn round_to_f32(&mut self) {
        for v in self.w1.iter_mut().chain(self.w2.iter_mut()) {
            *v = *v as f32 as f64;
        }
        self.b2 = self.b2 as f32 as f64;
    }

    fn checked_norm(&self, x: &FeatureVector) -> Result<f64> {
        let l1 = x.l1();
        if l1 == 0 {
            return Err(Error::ZeroVector(x.word().to_owned()));
        }
        if let Some(r) = x.max_rank().filter(|&r| r as usize >= self.f) {
            return Err(Error::IndexOutOfRange(format!(
                "feature rank {r} >= f={} in vector for {:?}",
                self.f,
                x.word()
            )));
        }
        Ok(l1 as f64)
    }

    /// W1 as f32 when every weight is exactly representable, which holds for
    /// any model read from a file. Halves the memory traffic of scoring.
    fn narrow_w1(&self) -> Option<Vec<f32>> {
        self.w1
            .iter()
            .map(|&w| {
                let n = w as f32;
                (n as f64 == w).then_some(n)
            })
            .collect()
    }

    /// `out = W1 x / |x|_1`.
    pub fn project(&self, x: &FeatureVector, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.h);
        let norm = self.checked_norm(x)?;
        project_kernel(&self.w1, self.h, x.counts(), norm, out);
        Ok(())
    }

    /// Pre-activation score from two projections.
    pub fn logit_from_projections(&self, za: &[f64], zb: &[f64]) -> f64 {
        let mut s = self.b2;
        for ((a, b), w) in za.iter().zip(zb).zip(&self.w2) {
            s += w * (a - b).abs();
        }
        s
    }

    /// Write the versioned binary model file.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(self.f as u32).to_le_bytes())?;
        w.write_all(&(self.h as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(4 * (self.len_flat()));
        // W1 as an h x f row-major matrix.
        for k in 0..self.h {
            for r in 0..self.f {
                buf.extend_from_slice(&(self.w1(k, r) as f32).to_le_bytes());
            }
        }
        for v in &self.w2 {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.b2 as f32).to_le_bytes());
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::format("model file", e.to_string()))?;
        if bytes.len() < 20 || &bytes[..8] != MODEL_MAGIC {
            return Err(Error::format("model file", "bad magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(8);
        if version != MODEL_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let (f, h) = (word(12) as usize, word(16) as usize);
        let mut p = Self::zeros(f, h)?;
        let expected = 20 + 4 * (f * h + h + 1);
        if bytes.len() != expected {
            return Err(Error::format(
                "model file",
                format!("expected {expected} bytes for f={f}, h={h}, found {}", bytes.len()),
            ));
        }
        let float = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as f64;
        let mut at = 20;
        for k in 0..h {
            for r in 0..f {
                p.set_w1(k, r, float(at));
                at += 4;
            }
        }
        for k in 0..h {
            p.w2[k] = float(at);
            at += 4;
        }
        p.b2 = float(at);
        if !p.is_finite() {
            return Err(Error::format("model file", "non-finite weight"));
        }
        Ok(p)
    }
}

/// Element type of a W1 copy read by the projection kernel.
trait Weight: Copy + Into<f64> {}
impl Weight for f64 {}
impl Weight for f32 {}

// Each output element receives `0.0 + w_1 * W1[r_1] + w_2 * W1[r_2] + ...` in
// ascending rank order whatever the path, and f32 weights widen to f64
// exactly, so every variant agrees bit for bit with the f64 reference.
fn project_kernel<T: Weight>(w1: &[T], h: usize, counts: &[(u32, u64)], norm: f64, out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { project_avx2(w1, h, counts, norm, out) };
            return;
        }
    }
    project_generic(w1, h, counts, norm, out);
}

#[inline(always)]
fn project_generic<T: Weight>(w1: &[T], h: usize, counts: &[(u32, u64)], norm: f64, out: &mut [f64]) {
    let row = |r: u32| &w1[r as usize * h..(r as usize + 1) * h];
    out.iter_mut().for_each(|o| *o = 0.0);
    // Four rows per pass over `out`; the additions stay in rank order.
    let mut quads = counts.chunks_exact(4);
    for (q, quad) in quads.by_ref().enumerate() {
        for &(next, _) in counts.iter().skip(4 * q + PREFETCH_AHEAD).take(4) {
            prefetch_row(row(next));
        }
        let [(ra, ca), (rb, cb), (rc, cc), (rd, cd)] = [quad[0], quad[1], quad[2], quad[3]];
        let (wa, wb, wc, wd) = (ca as f64 / norm, cb as f64 / norm, cc as f64 / norm, cd as f64 / norm);
        let (xa, xb, xc, xd) = (row(ra), row(rb), row(rc), row(rd));
        let out = &mut out[..h];
        for i in 0..h {
            out[i] = out[i] + wa * xa[i].into() + wb * xb[i].into() + wc * xc[i].into() + wd * xd[i].into();
        }
    }
    for &(r, c) in quads.remainder() {
        let weight = c as f64 / norm;
        for (o, w) in out.iter_mut().zip(row(r)) {
            *o += weight * (*w).into();
        }
    }
}

/// How many nonzeros ahead the W1 row is requested from memory.
const PREFETCH_AHEAD: usize = 8;

#[inline(always)]
fn prefetch_row<T>(row: &[T]) {
    #[cfg(target_arch = "x86_64")]
    for line in row.chunks((64 / std::mem::size_of::<T>()).max(1)) {
        // SAFETY: prefetching is a hint and the pointer is in bounds.
        unsafe {
            std::arch::x86_64::_mm_prefetch::<{ std::arch::x86_64::_MM_HINT_T0 }>(line.as_ptr().cast());
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = row;
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn project_avx2<T: Weight>(w1: &[T], h: usize, counts: &[(u32, u64)], norm: f64, out: &mut [f64]) {
    project_generic(w1, h, counts, norm, out)
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `label`, computed stably.
fn bce_from_logit(logit: f64, label: bool) -> f64 {
    let softplus = logit.max(0.0) + (-logit.abs()).exp().ln_1p();
    if label {
        softplus - logit
    } else {
        softplus
    }
}

/// Similarity score in (0, 1) for a pair of feature vectors.
pub fn meta_forward(params: &MetaLearnerParams, xa: &FeatureVector, xb: &FeatureVector) -> Result<f64> {
    let mut za = vec![0.0; params.h];
    let mut zb = vec![0.0; params.h];
    params.project(xa, &mut za)?;
    params.project(xb, &mut zb)?;
    Ok(sigmoid(params.logit_from_projections(&za, &zb)))
}

/// A labelled pair of feature vectors of the same word.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub xa: FeatureVector,
    pub xb: FeatureVector,
    /// `true` for a same-domain pair.
    pub label: bool,
}

/// Mean binary cross-entropy over `batch` and its exact gradient.
///
/// The gradient of `|d|` at `d = 0` is taken as 0.
pub fn meta_loss_and_grad(
    params: &MetaLearnerParams,
    batch: &[PairExample],
) -> Result<(f64, MetaLearnerParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let h = params.h;
    let mut grad = MetaLearnerParams::zeros(params.f, h)?;
    let mut za = vec![0.0; h];
    let mut zb = vec![0.0; h];
    let mut dz = vec![0.0; h];
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        params.project(&ex.xa, &mut za)?;
        params.project(&ex.xb, &mut zb)?;
        let logit = params.logit_from_projections(&za, &zb);
        loss += bce_from_logit(logit, ex.label);
        let g = (sigmoid(logit) - if ex.label { 1.0 } else { 0.0 }) * scale;
        grad.b2 += g;
        for k in 0..h {
            let diff = za[k] - zb[k];
            grad.w2[k] += g * diff.abs();
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            dz[k] = g * params.w2[k] * sign;
        }
        // dL/dza = dz, dL/dzb = -dz.
        for (x, s) in [(&ex.xa, 1.0), (&ex.xb, -1.0)] {
            let norm = x.l1() as f64;
            for &(r, c) in x.counts() {
                let weight = s * c as f64 / norm;
                let col = &mut grad.w1[r as usize * h..(r as usize + 1) * h];
                for (gw, d) in col.iter_mut().zip(&dz) {
                    *gw += weight * d;
                }
            }
        }
    }
    Ok((loss * scale, grad))
}

/// Score many pairs. Each entry is computed independently with the same
/// arithmetic as [`meta_forward`], so the parallel result equals a sequential
/// loop bit for bit.
pub fn batch_inference(
    params: &MetaLearnerParams,
    pairs: &[(&FeatureVector, &FeatureVector)],
) -> Vec<Result<f64>> {
    match params.narrow_w1() {
        Some(w1) => score_pairs(params, &w1, pairs),
        None => score_pairs(params, &params.w1, pairs),
    }
}

fn score_pairs<T: Weight + Sync>(
    params: &MetaLearnerParams,
    w1: &[T],
    pairs: &[(&FeatureVector, &FeatureVector)],
) -> Vec<Result<f64>> {
    let h = params.h;
    pairs
        .par_iter()
        .with_min_len(256)
        .map_init(
            || (vec![0.0; h], vec![0.0; h]),
            |(za, zb), (a, b)| {
                let na = params.checked_norm(a)?;
                let nb = params.checked_norm(b)?;
                project_kernel(w1, h, a.counts(), na, za);
                project_kernel(w1, h, b.counts(), nb, zb);
                Ok(sigmoid(params.logit_from_projections(za, zb)))
            },
        )
        .collect()
}

/// Sequential reference for [`batch_inference`].
pub fn sequential_inference(
    params: &MetaLearnerParams,
    pairs: &[(&FeatureVector, &FeatureVector)],
) -> Vec<Result<f64>> {
    pairs.iter().map(|(a, b)| meta_forward(params, a, b)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub hidden: usize,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        MetaTrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 20,
            patience: 5,
            seed: 1,
            hidden: 200,
        }
    }
}

impl MetaTrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument(
                "learning rate, batch size and hidden size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Precision/recall/F1 of the positive class at threshold 0.5.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl BinaryMetrics {
    pub fn from_predictions(predicted: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut fneg, mut n, mut correct) = (0u64, 0u64, 0u64, 0u64, 0u64);
        for (pred, truth) in predicted {
            n += 1;
            match (pred, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
            if pred == truth {
                correct += 1;
            }
        }
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fneg);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        BinaryMetrics {
            precision,
            recall,
            f1,
            accuracy: ratio(correct, n),
        }
    }
}

pub const DECISION_THRESHOLD: f64 = 0.5;

pub fn evaluate(params: &MetaLearnerParams, examples: &[PairExample]) -> Result<BinaryMetrics> {
    let pairs: Vec<_> = examples.iter().map(|e| (&e.xa, &e.xb)).collect();
    let scores = batch_inference(params, &pairs);
    let mut out = Vec::with_capacity(scores.len());
    for (s, e) in scores.into_iter().zip(examples) {
        out.push((s? >= DECISION_THRESHOLD, e.label));
    }
    Ok(BinaryMetrics::from_predictions(out))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_precision: f64,
    pub valid_recall: f64,
    pub valid_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MetaLearnerParams,
    pub best_epoch: usize,
    pub best_valid: BinaryMetrics,
    pub history: Vec<EpochMetrics>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut MetaLearnerParams, grad: &MetaLearnerParams) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len_flat() {
            let g = grad.get_flat(i);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let update = self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            *params.flat_mut(i) -= update;
        }
    }
}

/// Mini-batch Adam from `init`, keeping the parameters of the epoch with the
/// best validation F1 (epoch 0 is the initialization itself).
pub fn fit(
    init: MetaLearnerParams,
    train: &[PairExample],
    valid: &[PairExample],
    config: &MetaTrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::NoPairs("training and validation splits must be non-empty".into()));
    }
    let mut params = init;
    let first = evaluate(&params, valid)?;
    let mut best = (params.clone(), 0usize, first);
    let mut history = vec![EpochMetrics {
        epoch: 0,
        train_loss: mean_loss(&params, train)?,
        valid_precision: first.precision,
        valid_recall: first.recall,
        valid_f1: first.f1,
    }];
    let mut adam = Adam::new(params.len_flat(), config.learning_rate);
    let mut rng = rng::stream(config.seed, "meta-shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0;
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i].clone()));
            let (loss, grad) = meta_loss_and_grad(&params, &batch)?;
            total += loss * chunk.len() as f64;
            adam.step(&mut params, &grad);
        }
        let m = evaluate(&params, valid)?;
        history.push(EpochMetrics {
            epoch,
            train_loss: total / train.len() as f64,
            valid_precision: m.precision,
            valid_recall: m.recall,
            valid_f1: m.f1,
        });
        if m.f1 > best.2.f1 {
            best = (params.clone(), epoch, m);
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best.0,
        best_epoch: best.1,
        best_valid: best.2,
        history,
    })
}

pub fn mean_loss(params: &MetaLearnerParams, examples: &[PairExample]) -> Result<f64> {
    let mut za = vec![0.0; params.h];
    let mut zb = vec![0.0; params.h];
    let mut total = 0.0;
    for e in examples {
        params.project(&e.xa, &mut za)?;
        params.project(&e.xb, &mut zb)?;
        total += bce_from_logit(params.logit_from_projections(&za, &zb), e.label);
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Train the base meta-learner from a fresh initialization.
pub fn train_base(
    feature_dim: usize,
    train: &[PairExample],
    valid: &[PairExample],
    config: &MetaTrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let init = MetaLearnerParams::init(feature_dim, config.hidden, config.seed)?;
    fit(init, train, valid, config)
}

/// The two sub-corpus feature-vector maps of one domain.
#[derive(Debug, Clone, Copy)]
pub struct DomainVectors<'a> {
    pub id: &'a str,
    pub subcorpora: [&'a BTreeMap<String, FeatureVector>; 2],
}

impl DomainVectors<'_> {
    /// Words with a vector in both sub-corpora, in lexicographic order.
    fn paired_words(&self) -> Vec<&str> {
        self.subcorpora[0]
            .keys()
            .filter(|w| self.subcorpora[1].contains_key(*w))
            .map(String::as_str)
            .collect()
    }
}

fn sample_words<'a, R: Rng>(words: Vec<&'a str>, n: usize, rng: &mut R) -> Vec<&'a str> {
    if words.len() <= n {
        return words;
    }
    let mut picked = rand::seq::index::sample(rng, words.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| words[i]).collect()
}

/// Number of negatives owed after the `i`-th positive for a rational ratio.
fn negatives_for(i: usize, ratio: f64) -> usize {
    ((i + 1) as f64 * ratio).floor() as usize - (i as f64 * ratio).floor() as usize
}

/// Build same-domain positives and cross-domain negatives for base training.
///
/// Positive: the word's vectors from the two sub-corpora of one domain.
/// Negative: the word's vector from sub-corpus k of this domain paired with the
/// same word's sub-corpus k vector from a different domain chosen uniformly
/// among those containing it.
pub fn make_pair_examples(
    domains: &[DomainVectors<'_>],
    words_per_domain: usize,
    neg_ratio: f64,
    seed: u64,
) -> Result<Vec<PairExample>> {
    if domains.len() < 2 {
        return Err(Error::InvalidArgument("at least two domains are required".into()));
    }
    if !(neg_ratio >= 0.0) {
        return Err(Error::InvalidArgument("negative ratio must be >= 0".into()));
    }
    // word -> domains holding a vector for it, per sub-corpus.
    let mut holders: [HashMap<&str, Vec<usize>>; 2] = [HashMap::new(), HashMap::new()];
    for (j, d) in domains.iter().enumerate() {
        for k in 0..2 {
            for w in d.subcorpora[k].keys() {
                holders[k].entry(w.as_str()).or_default().push(j);
            }
        }
    }
    let mut rng = rng::stream(seed, "pair-examples");
    let mut out = Vec::new();
    let mut positives = 0usize;
    let mut negatives = 0usize;
    for (j, d) in domains.iter().enumerate() {
        for w in sample_words(d.paired_words(), words_per_domain, &mut rng) {
            out.push(PairExample {
                xa: d.subcorpora[0][w].clone(),
                xb: d.subcorpora[1][w].clone(),
                label: true,
            });
            for _ in 0..negatives_for(positives, neg_ratio) {
                let k = rng.gen_range(0..2);
                let others: Vec<usize> = holders[k]
                    .get(w)
                    .map(|v| v.iter().copied().filter(|&o| o != j).collect())
                    .unwrap_or_default();
                if others.is_empty() {
                    continue;
                }
                let other = others[rng.gen_range(0..others.len())];
                out.push(PairExample {
                    xa: d.subcorpora[k][w].clone(),
                    xb: domains[other].subcorpora[k][w].clone(),
                    label: false,
                });
                negatives += 1;
            }
            positives += 1;
        }
    }
    if out.is_empty() {
        return Err(Error::NoPairs("no word has vectors in both sub-corpora".into()));
    }
    if neg_ratio > 0.0 && negatives == 0 {
        return Err(Error::NoPairs(
            "negatives requested but no word is shared across domains".into(),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub train: MetaTrainConfig,
    /// Words sampled from the new domain; each yields one positive and one negative.
    pub words: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub min_examples: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            train: MetaTrainConfig {
                epochs: 5,
                ..MetaTrainConfig::default()
            },
            words: 3000,
            valid_fraction: 0.5 / 6.0,
            test_fraction: 2.0 / 6.0,
            min_examples: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub params: MetaLearnerParams,
    pub history: Vec<EpochMetrics>,
    pub test: BinaryMetrics,
    pub examples: usize,
}

/// Tuning pairs for a new domain: positives from its two sub-corpora, negatives
/// pairing its sub-corpus 1 vector with a past domain's sub-corpus 2 vector.
pub fn adaptation_examples(
    past: &[DomainVectors<'_>],
    new: &DomainVectors<'_>,
    words: usize,
    seed: u64,
) -> Vec<PairExample> {
    let mut rng = rng::stream(seed, "adapt-examples");
    let mut out = Vec::new();
    for w in sample_words(new.paired_words(), words, &mut rng) {
        out.push(PairExample {
            xa: new.subcorpora[0][w].clone(),
            xb: new.subcorpora[1][w].clone(),
            label: true,
        });
        let holders: Vec<&DomainVectors> = past
            .iter()
            .filter(|d| d.subcorpora[1].contains_key(w))
            .collect();
        if holders.is_empty() {
            continue;
        }
        let d = holders[rng.gen_range(0..holders.len())];
        out.push(PairExample {
            xa: new.subcorpora[0][w].clone(),
            xb: d.subcorpora[1][w].clone(),
            label: false,
        });
    }
    out
}

/// Fine-tune a copy of `base` on the new domain. With zero epochs the result
/// equals `base`.
pub fn adapt_meta(
    base: &MetaLearnerParams,
    past: &[DomainVectors<'_>],
    new: &DomainVectors<'_>,
    config: &AdaptConfig,
) -> Result<AdaptOutcome> {
    let mut examples = adaptation_examples(past, new, config.words, config.train.seed);
    if examples.len() < config.min_examples.max(3) {
        return Err(Error::NoPairs(format!(
            "only {} tuning examples for {:?} (minimum {})",
            examples.len(),
            new.id,
            config.min_examples.max(3)
        )));
    }
    if config.train.epochs == 0 {
        return Ok(AdaptOutcome {
            params: base.clone(),
            history: Vec::new(),
            test: BinaryMetrics::default(),
            examples: examples.len(),
        });
    }
    examples.shuffle(&mut rng::stream(config.train.seed, "adapt-split"));
    let n = examples.len();
    let n_test = ((n as f64 * config.test_fraction).round() as usize).clamp(1, n - 2);
    let n_valid = ((n as f64 * config.valid_fraction).round() as usize).clamp(1, n - n_test - 1);
    let test = examples.split_off(n - n_test);
    let valid = examples.split_off(n - n_test - n_valid);
    let outcome = fit(base.clone(), &examples, &valid, &config.train)?;
    let test_metrics = evaluate(&outcome.params, &test)?;
    Ok(AdaptOutcome {
        params: outcome.params,
        history: outcome.history,
        test: test_metrics,
        examples: n,
    })
}
