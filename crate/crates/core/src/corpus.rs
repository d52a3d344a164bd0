//! Tokenization, vocabularies, context bags and co-occurrence feature vectors.
//!
//! A domain corpus on disk is a directory of UTF-8 text files with one
//! document per line. Files are read in lexicographic path order.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Split text into lowercased maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Tokenize raw bytes. Invalid UTF-8 sequences become U+FFFD, which acts as
/// a separator; the number of replacements is returned alongside the tokens.
pub fn tokenize_bytes(raw: &[u8]) -> (Vec<String>, usize) {
    let text = String::from_utf8_lossy(raw);
    let replaced = match &text {
        std::borrow::Cow::Borrowed(_) => 0,
        std::borrow::Cow::Owned(s) => s.matches('\u{fffd}').count() - count_literal_fffd(raw),
    };
    (tokenize(&text), replaced)
}

fn count_literal_fffd(raw: &[u8]) -> usize {
    raw.windows(3).filter(|w| *w == [0xef, 0xbf, 0xbd]).count()
}

/// The text of one domain, as an ordered list of tokenized documents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainCorpus {
    domain_id: String,
    documents: Vec<Vec<String>>,
    token_count: usize,
}

impl DomainCorpus {
    pub fn new(domain_id: impl Into<String>, documents: Vec<Vec<String>>) -> Result<Self> {
        let domain_id = domain_id.into();
        if domain_id.is_empty() {
            return Err(Error::InvalidArgument("domain id must be non-empty".into()));
        }
        let token_count = documents.iter().map(Vec::len).sum();
        Ok(DomainCorpus {
            domain_id,
            documents,
            token_count,
        })
    }

    /// Build a corpus from raw text, one document per line. Blank lines are skipped.
    pub fn from_text(domain_id: impl Into<String>, text: &str) -> Result<Self> {
        let docs = text
            .lines()
            .map(tokenize)
            .filter(|d| !d.is_empty())
            .collect();
        DomainCorpus::new(domain_id, docs)
    }

    /// Load every file under `dir` (sorted, non-recursive). The domain id is the
    /// directory name. Returns the corpus and the count of invalid UTF-8 replacements.
    pub fn from_dir(dir: &Path) -> Result<(Self, usize)> {
        let domain_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no name", dir.display())))?;
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut docs = Vec::new();
        let mut replaced = 0;
        for file in files {
            let raw = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            for line in raw.split(|b| *b == b'\n') {
                let (tokens, bad) = tokenize_bytes(line);
                replaced += bad;
                if !tokens.is_empty() {
                    docs.push(tokens);
                }
            }
        }
        Ok((DomainCorpus::new(domain_id, docs)?, replaced))
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn documents(&self) -> &[Vec<String>] {
        &self.documents
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().flatten().map(String::as_str)
    }

    /// Write the corpus back out as one space-joined document per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&doc.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Size of a document as serialized token text: tokens joined by single
/// spaces plus a trailing newline.
pub fn serialized_len(doc: &[String]) -> usize {
    doc.iter().map(String::len).sum::<usize>() + doc.len().saturating_sub(1) + 1
}

/// Words with frequencies, sorted by descending frequency then ascending word.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<(String, u64)>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from arbitrary (word, count) pairs; duplicate words are summed and
    /// zero counts dropped.
    pub fn from_counts<I, S>(counts: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut merged: HashMap<String, u64> = HashMap::new();
        for (w, c) in counts {
            *merged.entry(w.into()).or_insert(0) += c;
        }
        let mut entries: Vec<(String, u64)> = merged.into_iter().filter(|(_, c)| *c > 0).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_sorted(entries)
    }

    /// Build from entries already in vocabulary order. Used when loading from
    /// disk, where the stored order is authoritative.
    pub fn from_entries(entries: Vec<(String, u64)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (w, c)) in entries.iter().enumerate() {
            if *c == 0 {
                return Err(Error::format("vocabulary", format!("zero frequency for {w:?}")));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::format("vocabulary", format!("duplicate word {w:?}")));
            }
        }
        Ok(Vocabulary { entries, index })
    }

    fn from_sorted(entries: Vec<(String, u64)>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (w.clone(), i))
            .collect();
        Vocabulary { entries, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rank(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, rank: usize) -> &str {
        &self.entries[rank].0
    }

    pub fn freq(&self, rank: usize) -> u64 {
        self.entries[rank].1
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(w, _)| w.as_str())
    }

    /// Keep only the first `n` entries.
    pub fn truncate(&mut self, n: usize) {
        for (w, _) in self.entries.drain(n.min(self.entries.len())..) {
            self.index.remove(&w);
        }
    }
}

fn count_tokens<'a>(tokens: impl Iterator<Item = &'a str>, counts: &mut HashMap<&'a str, u64>) {
    for t in tokens {
        *counts.entry(t).or_insert(0) += 1;
    }
}

/// Words occurring at least `min_count` times in the corpus.
pub fn build_vocab(corpus: &DomainCorpus, min_count: u64) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::InvalidArgument("min_count must be >= 1".into()));
    }
    let mut counts = HashMap::new();
    count_tokens(corpus.tokens(), &mut counts);
    Ok(Vocabulary::from_counts(
        counts.into_iter().filter(|(_, c)| *c >= min_count),
    ))
}

/// The `f` most frequent words by frequency summed over all corpora.
pub fn build_feature_vocab(corpora: &[DomainCorpus], f: usize) -> Result<Vocabulary> {
    if f == 0 {
        return Err(Error::InvalidArgument("feature vocabulary size must be >= 1".into()));
    }
    if corpora.is_empty() {
        return Err(Error::InvalidArgument("at least one corpus is required".into()));
    }
    let mut counts = HashMap::new();
    for c in corpora {
        count_tokens(c.tokens(), &mut counts);
    }
    let mut vocab = Vocabulary::from_counts(counts);
    vocab.truncate(f);
    Ok(vocab)
}

/// Draw two independent sub-corpora of at most `target_bytes` serialized bytes.
///
/// Documents are visited in a uniformly random order without replacement. While
/// the sub-corpus is still empty, documents that are too large on their own are
/// skipped; after that, sampling stops at the first document that would overflow.
pub fn subsample_corpus(
    corpus: &DomainCorpus,
    target_bytes: usize,
    seed: u64,
) -> Result<(DomainCorpus, DomainCorpus)> {
    if corpus.is_empty() {
        return Err(Error::Sampling(format!(
            "corpus {:?} has no documents",
            corpus.domain_id
        )));
    }
    if target_bytes == 0 {
        return Err(Error::InvalidArgument("target_bytes must be > 0".into()));
    }
    let one = sample_once(corpus, target_bytes, seed, "subcorpus-1")?;
    let two = sample_once(corpus, target_bytes, seed, "subcorpus-2")?;
    Ok((one, two))
}

fn sample_once(
    corpus: &DomainCorpus,
    target_bytes: usize,
    seed: u64,
    label: &str,
) -> Result<DomainCorpus> {
    let mut rng = rng::stream(seed, &format!("{}/{}", corpus.domain_id, label));
    let mut order: Vec<usize> = (0..corpus.documents.len()).collect();
    order.shuffle(&mut rng);
    let mut docs = Vec::new();
    let mut used = 0usize;
    for i in order {
        let doc = &corpus.documents[i];
        let len = serialized_len(doc);
        if used + len > target_bytes {
            if docs.is_empty() {
                continue;
            }
            break;
        }
        used += len;
        docs.push(doc.clone());
    }
    if docs.is_empty() {
        return Err(Error::Sampling(format!(
            "every document of {:?} exceeds the {} byte target",
            corpus.domain_id, target_bytes
        )));
    }
    DomainCorpus::new(corpus.domain_id.clone(), docs)
}

/// Bag of context words with counts, per center word.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextBag {
    bags: BTreeMap<String, BTreeMap<String, u64>>,
}

impl ContextBag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, word: &str, context: &str, count: u64) {
        if count == 0 {
            return;
        }
        *self
            .bags
            .entry(word.to_owned())
            .or_default()
            .entry(context.to_owned())
            .or_insert(0) += count;
    }

    pub fn get(&self, word: &str) -> Option<&BTreeMap<String, u64>> {
        self.bags.get(word)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u64>)> {
        self.bags.iter().map(|(w, b)| (w.as_str(), b))
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    /// Total multiplicity across all bags.
    pub fn total(&self) -> u64 {
        self.bags.values().flat_map(|b| b.values()).sum()
    }
}

/// Map corpus tokens to dense ids, keeping `None` for tokens the lookup rejects.
fn encode_documents<F>(corpus: &DomainCorpus, mut lookup: F) -> Vec<Vec<Option<u32>>>
where
    F: FnMut(&str) -> Option<u32>,
{
    corpus
        .documents
        .iter()
        .map(|d| d.iter().map(|t| lookup(t)).collect())
        .collect()
}

/// For each in-vocabulary occurrence, every in-vocabulary token within
/// `window` positions on either side in the same document.
pub fn scan_context_words(corpus: &DomainCorpus, vocab: &Vocabulary, window: usize) -> Result<ContextBag> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    let docs = encode_documents(corpus, |t| vocab.rank(t).map(|r| r as u32));
    let mut counts: Vec<HashMap<u32, u64>> = vec![HashMap::new(); vocab.len()];
    for doc in &docs {
        for (pos, center) in doc.iter().enumerate() {
            let Some(center) = center else { continue };
            let lo = pos.saturating_sub(window);
            let hi = (pos + window).min(doc.len() - 1);
            for (cpos, ctx) in doc[lo..=hi].iter().enumerate() {
                if lo + cpos == pos {
                    continue;
                }
                if let Some(ctx) = ctx {
                    *counts[*center as usize].entry(*ctx).or_insert(0) += 1;
                }
            }
        }
    }
    let mut bag = ContextBag::new();
    for (rank, ctxs) in counts.into_iter().enumerate() {
        if ctxs.is_empty() {
            continue;
        }
        let entry = bag.bags.entry(vocab.word(rank).to_owned()).or_default();
        for (c, n) in ctxs {
            entry.insert(vocab.word(c as usize).to_owned(), n);
        }
    }
    Ok(bag)
}

/// Sparse co-occurrence counts of one word over the feature vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    word: String,
    counts: Vec<(u32, u64)>,
}

impl FeatureVector {
    /// Build from (rank, count) pairs. Zero counts are dropped, duplicate ranks
    /// summed, and entries sorted by rank.
    pub fn new(word: impl Into<String>, counts: impl IntoIterator<Item = (u32, u64)>) -> Self {
        let mut merged: BTreeMap<u32, u64> = BTreeMap::new();
        for (r, c) in counts {
            if c > 0 {
                *merged.entry(r).or_insert(0) += c;
            }
        }
        FeatureVector {
            word: word.into(),
            counts: merged.into_iter().collect(),
        }
    }

    pub fn word(&self) -> &str {
        &self.word
    }

    /// (rank, count) pairs in ascending rank order; all counts positive.
    pub fn counts(&self) -> &[(u32, u64)] {
        &self.counts
    }

    pub fn l1(&self) -> u64 {
        self.counts.iter().map(|(_, c)| c).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn max_rank(&self) -> Option<u32> {
        self.counts.last().map(|(r, _)| *r)
    }

    /// Multiply every count by `c` (c > 0).
    pub fn scaled(&self, c: u64) -> Self {
        FeatureVector {
            word: self.word.clone(),
            counts: self.counts.iter().map(|(r, n)| (*r, n * c)).collect(),
        }
    }
}

/// Feature vectors of every corpus word, counting feature-vocabulary words within
/// `window` positions. Words whose vector would be all zero are omitted.
pub fn build_feature_vectors(
    corpus: &DomainCorpus,
    feature_vocab: &Vocabulary,
    window: usize,
) -> Result<BTreeMap<String, FeatureVector>> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    if feature_vocab.is_empty() {
        return Err(Error::InvalidArgument("feature vocabulary is empty".into()));
    }
    let mut words: Vec<&str> = Vec::new();
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let docs: Vec<Vec<(u32, Option<u32>)>> = corpus
        .documents
        .iter()
        .map(|d| {
            d.iter()
                .map(|t| {
                    let next = ids.len() as u32;
                    let id = *ids.entry(t.as_str()).or_insert_with(|| {
                        words.push(t.as_str());
                        next
                    });
                    (id, feature_vocab.rank(t).map(|r| r as u32))
                })
                .collect()
        })
        .collect();
    let mut counts: Vec<HashMap<u32, u64>> = vec![HashMap::new(); words.len()];
    for doc in &docs {
        for (pos, (center, _)) in doc.iter().enumerate() {
            let lo = pos.saturating_sub(window);
            let hi = (pos + window).min(doc.len() - 1);
            for (cpos, (_, feat)) in doc[lo..=hi].iter().enumerate() {
                if lo + cpos == pos {
                    continue;
                }
                if let Some(feat) = feat {
                    *counts[*center as usize].entry(*feat).or_insert(0) += 1;
                }
            }
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .filter(|(_, c)| !c.is_empty())
        .map(|(id, c)| {
            let w = words[id];
            (w.to_owned(), FeatureVector::new(w, c))
        })
        .collect())
}
