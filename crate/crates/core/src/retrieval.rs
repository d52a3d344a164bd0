//! Retrieval of relevant past knowledge for a new domain, and the
//! non-parametric TF-IDF sentence-borrowing baseline.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DomainCorpus, FeatureVector};
use crate::error::{Error, Result};
use crate::kb::{DomainKnowledge, KnowledgeBase};
use crate::metalearner::{adapt_meta, batch_inference, AdaptConfig, AdaptOutcome, MetaLearnerParams};

/// Borrowed context bags keyed by new-domain word, with the past domain each
/// bag came from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelevantKnowledge {
    // word -> source domain -> context word -> count
    entries: BTreeMap<String, BTreeMap<String, BTreeMap<String, u64>>>,
}

impl RelevantKnowledge {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add `count` occurrences of `context` to `word`'s bag from `domain`.
    pub fn add(&mut self, word: &str, domain: &str, context: &str, count: u64) {
        if count == 0 {
            return;
        }
        *self
            .entries
            .entry(word.to_owned())
            .or_default()
            .entry(domain.to_owned())
            .or_default()
            .entry(context.to_owned())
            .or_insert(0) += count;
    }

    fn append_bag(&mut self, word: &str, domain: &str, bag: &BTreeMap<String, u64>) {
        for (c, n) in bag {
            self.add(word, domain, c, *n);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of distinct words with borrowed contexts.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// The multiset union of every contributing bag for `word`.
    pub fn aggregated(&self, word: &str) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        if let Some(sources) = self.entries.get(word) {
            for bag in sources.values() {
                for (c, n) in bag {
                    *out.entry(c.clone()).or_insert(0) += n;
                }
            }
        }
        out
    }

    /// (word, source domain) pairs that contributed, in lexicographic order.
    pub fn contributions(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .flat_map(|(w, s)| s.keys().map(move |d| (w.as_str(), d.as_str())))
    }

    /// (word, domain, context, count) in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &str, u64)> {
        self.entries.iter().flat_map(|(w, s)| {
            s.iter().flat_map(move |(d, bag)| {
                bag.iter()
                    .map(move |(c, n)| (w.as_str(), d.as_str(), c.as_str(), *n))
            })
        })
    }

    /// Total multiplicity, i.e. the number of borrowed training pairs.
    pub fn total_pairs(&self) -> u64 {
        self.iter().map(|(_, _, _, n)| n).sum()
    }

    /// Lines of `word TAB domain TAB context TAB count`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (w, d, c, n) in self.iter() {
            let _ = writeln!(s, "{w}\t{d}\t{c}\t{n}");
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut out = RelevantKnowledge::new();
        for (i, line) in text.split_terminator('\n').enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let [w, d, c, n] = fields[..] else {
                return Err(Error::format(
                    "relevant knowledge",
                    format!("line {}: expected 4 TAB-separated fields", i + 1),
                ));
            };
            let n: u64 = n.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
                Error::format("relevant knowledge", format!("line {}: bad count {n:?}", i + 1))
            })?;
            out.add(w, d, c, n);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Minimum similarity score for borrowing a past context.
    pub delta: f64,
    pub adapt: AdaptConfig,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            delta: 0.7,
            adapt: AdaptConfig::default(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Scores same-word vector pairs between a past domain and the new domain.
pub trait PairScorer: Sync {
    fn score(&self, domain: &str, pairs: &[(&FeatureVector, &FeatureVector)]) -> Vec<Result<f64>>;
}

impl PairScorer for MetaLearnerParams {
    fn score(&self, _domain: &str, pairs: &[(&FeatureVector, &FeatureVector)]) -> Vec<Result<f64>> {
        batch_inference(self, pairs)
    }
}

/// Counters from one aggregation pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalStats {
    /// Shared words across all past domains.
    pub shared_words: usize,
    pub scored_pairs: usize,
    /// (word, domain) pairs at or above the threshold.
    pub accepted: usize,
    /// Shared words skipped because a side lacks a non-zero vector or scoring failed.
    pub skipped: usize,
}

/// Score every shared word of every past domain against the new domain and
/// aggregate the context bags of those scoring at least `delta`.
///
/// Pairs use the sub-corpus 1 vector on both sides. Domains are processed in
/// parallel; the result does not depend on the schedule.
pub fn aggregate<S: PairScorer + ?Sized>(
    past: &[(&str, &DomainKnowledge)],
    new: &DomainKnowledge,
    scorer: &S,
    delta: f64,
) -> (RelevantKnowledge, RetrievalStats) {
    let per_domain: Vec<(Vec<&str>, RetrievalStats)> = past
        .par_iter()
        .map(|(id, past)| {
            let mut stats = RetrievalStats::default();
            let mut words = Vec::new();
            let mut pairs = Vec::new();
            for (word, _) in past.vocab.entries() {
                if !new.vocab.contains(word) {
                    continue;
                }
                stats.shared_words += 1;
                match (past.vectors[0].get(word), new.vectors[0].get(word)) {
                    (Some(a), Some(b)) if !a.is_zero() && !b.is_zero() => {
                        words.push(word.as_str());
                        pairs.push((a, b));
                    }
                    _ => stats.skipped += 1,
                }
            }
            stats.scored_pairs = pairs.len();
            let scores = scorer.score(id, &pairs);
            let mut kept = Vec::new();
            for (w, s) in words.into_iter().zip(scores) {
                match s {
                    Ok(s) if s >= delta => kept.push(w),
                    Ok(_) => {}
                    Err(_) => stats.skipped += 1,
                }
            }
            stats.accepted = kept.len();
            (kept, stats)
        })
        .collect();
    let mut out = RelevantKnowledge::new();
    let mut total = RetrievalStats::default();
    for ((id, past), (kept, stats)) in past.iter().zip(per_domain) {
        for w in kept {
            if let Some(bag) = past.contexts.get(w) {
                out.append_bag(w, id, bag);
            }
        }
        total.shared_words += stats.shared_words;
        total.scored_pairs += stats.scored_pairs;
        total.accepted += stats.accepted;
        total.skipped += stats.skipped;
    }
    (out, total)
}

#[derive(Debug, Clone)]
pub struct RetrievalOutput {
    pub relevant: RelevantKnowledge,
    /// Knowledge of the new domain, ready for [`KnowledgeBase::add_domain`].
    pub knowledge: DomainKnowledge,
    pub adapted: AdaptOutcome,
    pub stats: RetrievalStats,
}

/// Run the full retrieval for a new domain: build its knowledge, adapt the
/// base meta-learner, and aggregate similar past contexts.
pub fn retrieve_relevant(
    kb: &KnowledgeBase,
    new_corpus: &DomainCorpus,
    config: &RetrievalConfig,
) -> Result<RetrievalOutput> {
    config.validate()?;
    let base = kb.base_model().ok_or(Error::Untrained)?;
    if kb.domain(new_corpus.domain_id()).is_some() {
        return Err(Error::DuplicateDomain(new_corpus.domain_id().to_owned()));
    }
    let past: Vec<(&str, &DomainKnowledge)> = kb.past_domains().collect();
    if past.is_empty() {
        return Err(Error::InvalidArgument("knowledge base has no past domains".into()));
    }
    if new_corpus.is_empty() {
        return Err(Error::InvalidArgument("new domain corpus is empty".into()));
    }
    let knowledge = DomainKnowledge::build(new_corpus, kb.feature_vocab(), kb.settings())?;
    let past_vectors: Vec<_> = past.iter().map(|(id, k)| k.as_vectors(id)).collect();
    let adapted = adapt_meta(
        base,
        &past_vectors,
        &knowledge.as_vectors(new_corpus.domain_id()),
        &config.adapt,
    )?;
    let (relevant, stats) = aggregate(&past, &knowledge, &adapted.params, config.delta);
    Ok(RetrievalOutput {
        relevant,
        knowledge,
        adapted,
        stats,
    })
}

/// Inverse document frequencies over a sentence collection, smoothed as
/// `ln((1 + N) / (1 + df)) + 1`.
#[derive(Debug, Clone)]
pub struct TfidfModel {
    n_docs: usize,
    df: HashMap<String, usize>,
    reference: HashMap<String, f64>,
    reference_norm: f64,
}

impl TfidfModel {
    /// Fit idf on the past sentences and build the reference vector from the
    /// whole new-domain corpus.
    pub fn fit(past: &[DomainCorpus], new: &DomainCorpus) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0;
        for corpus in past {
            for doc in corpus.documents() {
                n_docs += 1;
                let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
                seen.sort_unstable();
                seen.dedup();
                for w in seen {
                    *df.entry(w.to_owned()).or_insert(0) += 1;
                }
            }
        }
        let mut model = TfidfModel {
            n_docs,
            df,
            reference: HashMap::new(),
            reference_norm: 0.0,
        };
        let reference = model.vectorize(new.tokens());
        model.reference_norm = norm(&reference);
        model.reference = reference.into_iter().collect();
        model
    }

    pub fn idf(&self, word: &str) -> f64 {
        let df = self.df.get(word).copied().unwrap_or(0);
        ((1 + self.n_docs) as f64 / (1 + df) as f64).ln() + 1.0
    }

    /// Sorted (term, tf * idf) pairs.
    fn vectorize<'a>(&self, tokens: impl Iterator<Item = &'a str>) -> Vec<(String, f64)> {
        let mut tf: BTreeMap<&str, u64> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t).or_insert(0) += 1;
        }
        tf.into_iter()
            .map(|(w, n)| (w.to_owned(), n as f64 * self.idf(w)))
            .collect()
    }

    /// Cosine similarity of a sentence to the new-domain reference; zero-norm
    /// vectors score 0.
    pub fn similarity(&self, sentence: &[String]) -> f64 {
        let v = self.vectorize(sentence.iter().map(String::as_str));
        let n = norm(&v);
        if n == 0.0 || self.reference_norm == 0.0 {
            return 0.0;
        }
        let dot: f64 = v
            .iter()
            .filter_map(|(w, x)| self.reference.get(w).map(|r| x * r))
            .sum();
        (dot / (n * self.reference_norm)).clamp(0.0, 1.0)
    }
}

fn norm(v: &[(String, f64)]) -> f64 {
    v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt()
}

/// Slack for rounding in cosine comparisons, so a sentence proportional to the
/// reference passes a threshold of exactly 1.
const COSINE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BorrowedSentence {
    pub domain: String,
    pub tokens: Vec<String>,
    pub similarity: f64,
}

/// Past-domain sentences whose TF-IDF cosine to the new corpus is at least
/// `threshold`, in input order.
pub fn tfidf_retrieve(
    past: &[DomainCorpus],
    new: &DomainCorpus,
    threshold: f64,
) -> Result<Vec<BorrowedSentence>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    if past.is_empty() || new.is_empty() {
        return Err(Error::InvalidArgument("corpora must be non-empty".into()));
    }
    let model = TfidfModel::fit(past, new);
    let mut out = Vec::new();
    for corpus in past {
        let scored: Vec<f64> = corpus
            .documents()
            .par_iter()
            .map(|d| model.similarity(d))
            .collect();
        for (doc, s) in corpus.documents().iter().zip(scored) {
            if s > 0.0 && s + COSINE_SLACK >= threshold {
                out.push(BorrowedSentence {
                    domain: corpus.domain_id().to_owned(),
                    tokens: doc.clone(),
                    similarity: s,
                });
            }
        }
    }
    Ok(out)
}
