//! Skip-gram with negative sampling over a domain corpus, optionally augmented
//! with (word, context) pairs borrowed from past domains.
//!
//! For a center word `t` with input vector `u_t`, a positive context `c` and
//! sampled negatives `n`, one step ascends
//!
//! ```text
//! log sigmoid(u_t . v_c) + sum_n log sigmoid(-u_t . v_n)
//! ```
//!
//! Corpus pairs come from a fixed window around each token; borrowed pairs
//! are taken as-is, one per multiplicity. Both kinds share one shuffled
//! stream per epoch and draw negatives from the new-domain unigram table.
//!
//! Training with `workers > 1` updates the shared tables without locking. The
//! tables hold `f64` bit patterns in relaxed atomics, so concurrent updates
//! may overwrite each other but never tear.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocab, DomainCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::metalearner::sigmoid;
use crate::retrieval::RelevantKnowledge;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    /// Frequent-word subsampling threshold; 1 keeps every token.
    pub subsample: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub min_count: u64,
    pub seed: u64,
    pub workers: usize,
    pub neg_table_size: usize,
    /// Learning-rate multiplier for borrowed pairs. 1.0 weighs both objectives equally.
    pub relevant_weight: f64,
}

impl Default for SgConfig {
    fn default() -> Self {
        SgConfig {
            dim: 300,
            window: 5,
            negatives: 5,
            subsample: 1e-3,
            learning_rate: 0.025,
            epochs: 5,
            min_count: 5,
            seed: 1,
            workers: 1,
            neg_table_size: 10_000_000,
            relevant_weight: 1.0,
        }
    }
}

impl SgConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.min_count == 0 || self.workers == 0 {
            return Err(Error::InvalidArgument(
                "dim, window, min_count and workers must be positive".into(),
            ));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::InvalidArgument("subsample threshold must lie in (0, 1]".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.relevant_weight >= 0.0) || self.neg_table_size == 0 {
            return Err(Error::InvalidArgument(
                "learning rate and table size must be positive, relevant weight non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Word vectors over a vocabulary. `output` is absent for models loaded from
/// text files, which only carry input vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    vocab: Vocabulary,
    dim: usize,
    input: Vec<f64>,
    output: Option<Vec<f64>>,
}

impl EmbeddingModel {
    pub fn from_parts(vocab: Vocabulary, dim: usize, input: Vec<f64>, output: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        let n = vocab.len() * dim;
        if input.len() != n || output.as_ref().is_some_and(|o| o.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "tables must hold {} x {dim} values",
                vocab.len()
            )));
        }
        Ok(EmbeddingModel {
            vocab,
            dim,
            input,
            output,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn input_row(&self, rank: usize) -> &[f64] {
        &self.input[rank * self.dim..(rank + 1) * self.dim]
    }

    pub fn output_row(&self, rank: usize) -> Option<&[f64]> {
        self.output
            .as_ref()
            .map(|o| &o[rank * self.dim..(rank + 1) * self.dim])
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.vocab.rank(word).map(|r| self.input_row(r))
    }

    pub fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        Some(cosine(self.vector(a)?, self.vector(b)?))
    }

    /// Scale every input vector by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.input.iter_mut().for_each(|x| *x *= c);
        out
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Unigram^power sampling table, filled like word2vec's.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    table: Vec<u32>,
}

impl NegativeSampler {
    pub fn new(vocab: &Vocabulary, power: f64, table_size: usize) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::EmptyVocabulary("negative sampling table".into()));
        }
        if table_size == 0 {
            return Err(Error::InvalidArgument("table size must be positive".into()));
        }
        let weights: Vec<f64> = (0..vocab.len())
            .map(|r| (vocab.freq(r) as f64).powf(power))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut table = Vec::with_capacity(table_size);
        let mut word = 0usize;
        let mut cumulative = weights[0] / total;
        for i in 0..table_size {
            // Slot i covers the probability mass around its midpoint.
            while (i as f64 + 0.5) / table_size as f64 > cumulative && word + 1 < weights.len() {
                word += 1;
                cumulative += weights[word] / total;
            }
            table.push(word as u32);
        }
        Ok(NegativeSampler { table })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        self.table[rng.gen_range(0..self.table.len())]
    }
}

/// Log-likelihood of one (center, context, negatives) term.
pub fn sgns_objective(u: &[f64], v_pos: &[f64], v_negs: &[&[f64]]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = log_sigmoid(dot(u, v_pos));
    for v in v_negs {
        total += log_sigmoid(-dot(u, v));
    }
    total
}

fn log_sigmoid(t: f64) -> f64 {
    -((-t).max(0.0) + (-t.abs()).exp().ln_1p())
}

/// d/d(u.v) of `log sigmoid(±u.v)`: `label - sigmoid(u.v)`.
fn score_gradient(dot: f64, label: bool) -> f64 {
    (if label { 1.0 } else { 0.0 }) - sigmoid(dot)
}

/// Gradients of [`sgns_objective`] with respect to `u`, `v_pos` and each negative.
pub fn sgns_gradients(u: &[f64], v_pos: &[f64], v_negs: &[&[f64]]) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut gu = vec![0.0; u.len()];
    let mut gv = Vec::with_capacity(1 + v_negs.len());
    for (v, label) in std::iter::once((v_pos, true)).chain(v_negs.iter().map(|v| (*v, false))) {
        let g = score_gradient(dot(u, v), label);
        for (a, b) in gu.iter_mut().zip(v) {
            *a += g * b;
        }
        gv.push(u.iter().map(|x| g * x).collect::<Vec<f64>>());
    }
    let gpos = gv.remove(0);
    (gu, gpos, gv)
}

/// One step of stochastic gradient ascent on a single term, applied in place
/// with learning rate `lr`. Negatives equal to the positive are skipped by the
/// caller.
pub fn sgns_step(u: &mut [f64], v_pos: &mut [f64], v_negs: &mut [&mut [f64]], lr: f64) {
    let mut gu = vec![0.0; u.len()];
    accumulate(u, v_pos, true, lr, &mut gu);
    for v in v_negs.iter_mut() {
        accumulate(u, v, false, lr, &mut gu);
    }
    for (x, g) in u.iter_mut().zip(&gu) {
        *x += g;
    }
}

#[inline]
fn accumulate(u: &[f64], v: &mut [f64], label: bool, lr: f64, gu: &mut [f64]) {
    let dot: f64 = u.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
    let g = lr * score_gradient(dot, label);
    for ((gu, vv), uu) in gu.iter_mut().zip(v.iter_mut()).zip(u) {
        *gu += g * *vv;
        *vv += g * uu;
    }
}

/// Parameter table shared between training workers.
struct SharedTable {
    dim: usize,
    cells: Vec<AtomicU64>,
}

impl SharedTable {
    fn from_values(dim: usize, values: &[f64]) -> Self {
        SharedTable {
            dim,
            cells: values.iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
        }
    }

    #[inline]
    fn load(&self, row: u32, buf: &mut [f64]) {
        let base = row as usize * self.dim;
        for (b, c) in buf.iter_mut().zip(&self.cells[base..base + self.dim]) {
            *b = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    #[inline]
    fn store(&self, row: u32, buf: &[f64]) {
        let base = row as usize * self.dim;
        for (b, c) in buf.iter().zip(&self.cells[base..base + self.dim]) {
            c.store(b.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_values(self) -> Vec<f64> {
        self.cells
            .into_iter()
            .map(|c| f64::from_bits(c.into_inner()))
            .collect()
    }
}

/// Where a training pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSource {
    Corpus,
    Relevant,
}

/// A (center, context) pair of vocabulary ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingPair {
    pub center: u32,
    pub context: u32,
    pub source: PairSource,
}

/// Borrowed pairs expanded by multiplicity, with the number dropped because a
/// word is outside the training vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelevantPairs {
    pub pairs: Vec<TrainingPair>,
    pub dropped: u64,
}

/// One pair per (word, context word) multiplicity in `relevant`, in
/// lexicographic order of word, source domain and context word.
pub fn relevant_pairs(relevant: &RelevantKnowledge, vocab: &Vocabulary) -> RelevantPairs {
    let mut out = RelevantPairs::default();
    for (w, _, c, n) in relevant.iter() {
        match (vocab.rank(w), vocab.rank(c)) {
            (Some(center), Some(context)) => out.pairs.extend(
                std::iter::repeat(TrainingPair {
                    center: center as u32,
                    context: context as u32,
                    source: PairSource::Relevant,
                })
                .take(n as usize),
            ),
            _ => out.dropped += n,
        }
    }
    out
}

/// Per-epoch training progress. Epoch 0 is the state before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochProgress {
    pub epoch: usize,
    pub corpus_pairs: u64,
    pub relevant_pairs: u64,
    pub pairs_per_sec: f64,
    pub learning_rate: f64,
    /// Mean log-likelihood on a fixed sample of corpus terms.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: EmbeddingModel,
    pub progress: Vec<EpochProgress>,
    pub dropped_relevant: u64,
}

/// A frozen (center, context, negatives) term for objective estimates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub center: u32,
    pub context: u32,
    pub negatives: Vec<u32>,
}

/// Mean of [`sgns_objective`] over `terms` using the model's tables.
pub fn mean_objective(model: &EmbeddingModel, terms: &[Term]) -> f64 {
    let Some(out) = &model.output else { return f64::NAN };
    let d = model.dim;
    let row = |t: &[f64], r: u32| -> Vec<f64> { t[r as usize * d..(r as usize + 1) * d].to_vec() };
    let mut total = 0.0;
    for term in terms {
        let u = row(&model.input, term.center);
        let v = row(out, term.context);
        let negs: Vec<Vec<f64>> = term.negatives.iter().map(|n| row(out, *n)).collect();
        let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        total += sgns_objective(&u, &v, &refs);
    }
    total / terms.len().max(1) as f64
}

/// Full-batch gradient of the summed objective over `terms`, as (input, output) tables.
pub fn objective_gradient(model: &EmbeddingModel, terms: &[Term]) -> (Vec<f64>, Vec<f64>) {
    let d = model.dim;
    let out = model.output.as_ref().expect("model has output vectors");
    let mut gin = vec![0.0; model.input.len()];
    let mut gout = vec![0.0; out.len()];
    let row = |t: &[f64], r: u32| -> Vec<f64> { t[r as usize * d..(r as usize + 1) * d].to_vec() };
    for term in terms {
        let u = row(&model.input, term.center);
        let v = row(out, term.context);
        let negs: Vec<Vec<f64>> = term.negatives.iter().map(|n| row(out, *n)).collect();
        let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let (gu, gv, gn) = sgns_gradients(&u, &v, &refs);
        let add = |t: &mut [f64], r: u32, g: &[f64]| {
            for (x, y) in t[r as usize * d..(r as usize + 1) * d].iter_mut().zip(g) {
                *x += y;
            }
        };
        add(&mut gin, term.center, &gu);
        add(&mut gout, term.context, &gv);
        for (n, g) in term.negatives.iter().zip(&gn) {
            add(&mut gout, *n, g);
        }
    }
    (gin, gout)
}

impl EmbeddingModel {
    /// Add `step` times the given gradients to the tables.
    pub fn apply_gradient(&mut self, gin: &[f64], gout: &[f64], step: f64) {
        for (x, g) in self.input.iter_mut().zip(gin) {
            *x += step * g;
        }
        if let Some(out) = &mut self.output {
            for (x, g) in out.iter_mut().zip(gout) {
                *x += step * g;
            }
        }
    }
}

/// Encode documents as vocabulary ranks, dropping out-of-vocabulary tokens.
fn encode(corpus: &DomainCorpus, vocab: &Vocabulary) -> Vec<Vec<u32>> {
    corpus
        .documents()
        .iter()
        .map(|d| d.iter().filter_map(|t| vocab.rank(t).map(|r| r as u32)).collect::<Vec<_>>())
        .filter(|d: &Vec<u32>| d.len() > 1)
        .collect()
}

/// Sample `n` corpus terms with negatives, for objective estimates.
pub fn sample_terms(
    corpus: &DomainCorpus,
    vocab: &Vocabulary,
    config: &SgConfig,
    n: usize,
) -> Result<Vec<Term>> {
    let docs = encode(corpus, vocab);
    if docs.is_empty() {
        return Ok(Vec::new());
    }
    let sampler = NegativeSampler::new(vocab, 0.75, config.neg_table_size)?;
    let mut rng = rng::stream(config.seed, "objective-sample");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let doc = &docs[rng.gen_range(0..docs.len())];
        let pos = rng.gen_range(0..doc.len());
        let lo = pos.saturating_sub(config.window);
        let hi = (pos + config.window).min(doc.len() - 1);
        let cpos = rng.gen_range(lo..=hi);
        if cpos == pos {
            continue;
        }
        let context = doc[cpos];
        let negatives = (0..config.negatives)
            .map(|_| sampler.sample(&mut rng))
            .filter(|n| *n != context)
            .collect();
        out.push(Term {
            center: doc[pos],
            context,
            negatives,
        });
    }
    Ok(out)
}

fn keep_probabilities(vocab: &Vocabulary, threshold: f64) -> Vec<f64> {
    let total: u64 = vocab.entries().iter().map(|(_, c)| c).sum();
    let scaled = threshold * total as f64;
    (0..vocab.len())
        .map(|r| {
            let f = vocab.freq(r) as f64;
            ((f / scaled).sqrt() + 1.0) * scaled / f
        })
        .collect()
}

/// Number of (center, context) pairs a fixed window yields over `docs`.
fn window_pairs(docs: &[Vec<u32>], window: usize) -> u64 {
    docs.iter()
        .map(|d| {
            (0..d.len())
                .map(|p| (p.min(window) + (d.len() - 1 - p).min(window)) as u64)
                .sum::<u64>()
        })
        .sum()
}

struct Worker<'a> {
    u: &'a SharedTable,
    v: &'a SharedTable,
    sampler: &'a NegativeSampler,
    config: &'a SgConfig,
    buf_u: Vec<f64>,
    buf_v: Vec<f64>,
    grad: Vec<f64>,
}

impl Worker<'_> {
    fn train_pair(&mut self, center: u32, context: u32, lr: f64, rng: &mut ChaCha8Rng) {
        self.u.load(center, &mut self.buf_u);
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        self.v.load(context, &mut self.buf_v);
        accumulate(&self.buf_u, &mut self.buf_v, true, lr, &mut self.grad);
        self.v.store(context, &self.buf_v);
        for _ in 0..self.config.negatives {
            let n = self.sampler.sample(rng);
            if n == context {
                continue;
            }
            self.v.load(n, &mut self.buf_v);
            accumulate(&self.buf_u, &mut self.buf_v, false, lr, &mut self.grad);
            self.v.store(n, &self.buf_v);
        }
        for (x, g) in self.buf_u.iter_mut().zip(&self.grad) {
            *x += g;
        }
        self.u.store(center, &self.buf_u);
    }

    /// One epoch over this worker's documents and borrowed pairs. Returns the
    /// (corpus, borrowed) pair counts and the final learning rate.
    fn run_epoch(
        &mut self,
        docs: &[Vec<u32>],
        relevant: &[TrainingPair],
        keep: &[f64],
        epoch: usize,
        worker: usize,
    ) -> (u64, u64, f64) {
        let cfg = self.config;
        let mut rng = rng::stream(cfg.seed, &format!("sg/{epoch}/{worker}"));
        let mut merge_rng = rng::stream(cfg.seed, &format!("merge/{epoch}/{worker}"));
        let kept: Vec<Vec<u32>> = docs
            .iter()
            .map(|d| {
                d.iter()
                    .copied()
                    .filter(|w| keep[*w as usize] >= 1.0 || keep[*w as usize] >= rng.gen::<f64>())
                    .collect()
            })
            .collect();
        let corpus_total = window_pairs(&kept, cfg.window);
        let relevant_total = relevant.len() as u64;
        let total = (corpus_total + relevant_total).max(1);
        let lr_at = |done: u64| {
            let progress = (epoch as f64 + done as f64 / total as f64) / cfg.epochs as f64;
            cfg.learning_rate * (1.0 - progress).max(1e-4)
        };
        let mut done = 0u64;
        let mut lr = lr_at(0);
        let mut rel = relevant.iter();
        let mut rel_left = relevant_total;
        let mut corpus_left = corpus_total;
        let mut take_relevant = |corpus_left: u64, rel_left: u64, w: &mut Self, done: &mut u64, lr: &mut f64, rng: &mut ChaCha8Rng| {
            // Interleave borrowed pairs uniformly among the remaining corpus pairs.
            let mut rel_left = rel_left;
            while rel_left > 0
                && (corpus_left == 0 || merge_rng.gen_range(0..corpus_left + rel_left) < rel_left)
            {
                let p = rel.next().expect("borrowed pair count");
                w.train_pair(p.center, p.context, *lr * cfg.relevant_weight, rng);
                rel_left -= 1;
                *done += 1;
                if *done % 1024 == 0 {
                    *lr = lr_at(*done);
                }
            }
            rel_left
        };
        for doc in &kept {
            for pos in 0..doc.len() {
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window).min(doc.len() - 1);
                for cpos in lo..=hi {
                    if cpos == pos {
                        continue;
                    }
                    rel_left = take_relevant(corpus_left, rel_left, self, &mut done, &mut lr, &mut rng);
                    self.train_pair(doc[pos], doc[cpos], lr, &mut rng);
                    corpus_left -= 1;
                    done += 1;
                    if done % 1024 == 0 {
                        lr = lr_at(done);
                    }
                }
            }
        }
        take_relevant(0, rel_left, self, &mut done, &mut lr, &mut rng);
        (corpus_total, relevant_total, lr)
    }
}

/// Split `docs` into `n` contiguous chunks of roughly equal token count.
fn split_docs(docs: &[Vec<u32>], n: usize) -> Vec<&[Vec<u32>]> {
    let total: usize = docs.iter().map(Vec::len).sum();
    let per = total.div_ceil(n).max(1);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    let mut acc = 0;
    for (i, d) in docs.iter().enumerate() {
        acc += d.len();
        if acc >= per && out.len() + 1 < n {
            out.push(&docs[start..=i]);
            start = i + 1;
            acc = 0;
        }
    }
    out.push(&docs[start..]);
    while out.len() < n {
        out.push(&docs[docs.len()..]);
    }
    out
}

fn initial_input(vocab_len: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, "sg-init");
    let a = 0.5 / dim as f64;
    (0..vocab_len * dim).map(|_| rng.gen_range(-a..a)).collect()
}

/// Size of the frozen term sample behind the per-epoch objective estimate.
const OBJECTIVE_TERMS: usize = 20_000;

/// Plain skip-gram training on the corpus.
pub fn train_skipgram(corpus: &DomainCorpus, config: &SgConfig) -> Result<TrainOutput> {
    train_augmented(corpus, &RelevantKnowledge::new(), config)
}

/// Skip-gram on the corpus plus borrowed pairs, which share the corpus
/// vocabulary and negative-sampling table.
pub fn train_augmented(
    corpus: &DomainCorpus,
    relevant: &RelevantKnowledge,
    config: &SgConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    let vocab = build_vocab(corpus, config.min_count)?;
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary(format!(
            "no word of {:?} occurs {} times",
            corpus.domain_id(),
            config.min_count
        )));
    }
    let dim = config.dim;
    let docs = encode(corpus, &vocab);
    let sampler = NegativeSampler::new(&vocab, 0.75, config.neg_table_size)?;
    let keep = keep_probabilities(&vocab, config.subsample);
    let borrowed = relevant_pairs(relevant, &vocab);
    let terms = sample_terms(corpus, &vocab, config, OBJECTIVE_TERMS)?;

    let u = SharedTable::from_values(dim, &initial_input(vocab.len(), dim, config.seed));
    let v = SharedTable::from_values(dim, &vec![0.0; vocab.len() * dim]);
    let snapshot = |u: &SharedTable, v: &SharedTable| {
        let read = |t: &SharedTable| {
            t.cells
                .iter()
                .map(|c| f64::from_bits(c.load(Ordering::Relaxed)))
                .collect::<Vec<_>>()
        };
        EmbeddingModel {
            vocab: vocab.clone(),
            dim,
            input: read(u),
            output: Some(read(v)),
        }
    };
    let mut progress = vec![EpochProgress {
        epoch: 0,
        corpus_pairs: 0,
        relevant_pairs: 0,
        pairs_per_sec: 0.0,
        learning_rate: config.learning_rate,
        objective: mean_objective(&snapshot(&u, &v), &terms),
    }];
    let chunks = split_docs(&docs, config.workers);
    let mut relevant_order = borrowed.pairs.clone();
    for epoch in 0..config.epochs {
        relevant_order.shuffle(&mut rng::stream(config.seed, &format!("relevant/{epoch}")));
        let rel_chunks: Vec<Vec<TrainingPair>> = (0..config.workers)
            .map(|w| relevant_order.iter().skip(w).step_by(config.workers).copied().collect())
            .collect();
        let started = Instant::now();
        let run = |w: usize| {
            let mut worker = Worker {
                u: &u,
                v: &v,
                sampler: &sampler,
                config,
                buf_u: vec![0.0; dim],
                buf_v: vec![0.0; dim],
                grad: vec![0.0; dim],
            };
            worker.run_epoch(chunks[w], &rel_chunks[w], &keep, epoch, w)
        };
        let results: Vec<(u64, u64, f64)> = if config.workers == 1 {
            vec![run(0)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..config.workers).map(|w| s.spawn(move || run(w))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training worker panicked"))
                    .collect()
            })
        };
        let elapsed = started.elapsed().as_secs_f64().max(1e-9);
        let corpus_pairs: u64 = results.iter().map(|r| r.0).sum();
        let relevant_pairs: u64 = results.iter().map(|r| r.1).sum();
        progress.push(EpochProgress {
            epoch: epoch + 1,
            corpus_pairs,
            relevant_pairs,
            pairs_per_sec: (corpus_pairs + relevant_pairs) as f64 / elapsed,
            learning_rate: results.iter().map(|r| r.2).fold(f64::INFINITY, f64::min),
            objective: mean_objective(&snapshot(&u, &v), &terms),
        });
    }
    let model = EmbeddingModel {
        vocab,
        dim,
        input: u.into_values(),
        output: Some(v.into_values()),
    };
    Ok(TrainOutput {
        model,
        progress,
        dropped_relevant: borrowed.dropped,
    })
}

/// Format with 9 significant digits, without exponent for ordinary magnitudes.
fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&exp) {
        return format!("{x:.8e}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

/// word2vec text format: a `count dim` header, then `word v1 ... vd` per line.
pub fn embeddings_to_text(model: &EmbeddingModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {}", model.len(), model.dim);
    for (r, w) in model.vocab.words().enumerate() {
        s.push_str(w);
        for x in model.input_row(r) {
            s.push(' ');
            s.push_str(&format_float(*x));
        }
        s.push('\n');
    }
    s
}

pub fn embeddings_from_text(text: &str) -> Result<EmbeddingModel> {
    let bad = |detail: String| Error::format("embedding file", detail);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
    let mut parts = header.split_whitespace();
    let (Some(n), Some(dim), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(bad(format!("malformed header {header:?}")));
    };
    let n: usize = n.parse().map_err(|_| bad(format!("bad word count {n:?}")))?;
    let dim: usize = dim.parse().map_err(|_| bad(format!("bad dimension {dim:?}")))?;
    if dim == 0 {
        return Err(bad("dimension must be >= 1".into()));
    }
    let mut entries = Vec::with_capacity(n);
    let mut input = Vec::with_capacity(n * dim);
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let word = fields.next().unwrap_or_default();
        let before = input.len();
        for f in fields.filter(|f| !f.is_empty()) {
            input.push(
                f.parse::<f64>()
                    .map_err(|_| bad(format!("line {}: bad float {f:?}", i + 2)))?,
            );
        }
        if input.len() - before != dim {
            return Err(Error::DimensionMismatch(format!(
                "line {}: {} values for dimension {dim}",
                i + 2,
                input.len() - before
            )));
        }
        entries.push((word.to_owned(), 1));
    }
    if entries.len() != n {
        return Err(bad(format!("header promises {n} words, found {}", entries.len())));
    }
    let vocab = Vocabulary::from_entries(entries).map_err(|e| bad(e.to_string()))?;
    EmbeddingModel::from_parts(vocab, dim, input, None)
}

pub fn save_embeddings(model: &EmbeddingModel, path: &Path) -> Result<()> {
    fs::write(path, embeddings_to_text(model)).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    embeddings_from_text(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MissingPolicy {
    /// Words missing from one side get zeros for that side.
    ZeroFill,
    /// Vocabularies must contain the same words.
    Strict,
}

/// Concatenate vectors over the union vocabulary (a's order, then b's extra words).
pub fn concat_embeddings(a: &EmbeddingModel, b: &EmbeddingModel, policy: MissingPolicy) -> Result<EmbeddingModel> {
    let mut words: Vec<&str> = a.vocab.words().collect();
    words.extend(b.vocab.words().filter(|w| !a.vocab.contains(w)));
    if policy == MissingPolicy::Strict && (words.len() != a.len() || words.len() != b.len()) {
        return Err(Error::DimensionMismatch(
            "vocabularies differ under the strict concatenation policy".into(),
        ));
    }
    let dim = a.dim + b.dim;
    let mut input = Vec::with_capacity(words.len() * dim);
    for w in &words {
        for (m, d) in [(a, a.dim), (b, b.dim)] {
            match m.vector(w) {
                Some(v) => input.extend_from_slice(v),
                None => input.extend(std::iter::repeat(0.0).take(d)),
            }
        }
    }
    let entries = words.iter().map(|w| (w.to_string(), 1)).collect();
    EmbeddingModel::from_parts(Vocabulary::from_entries(entries)?, dim, input, None)
}
