//! The knowledge base: feature vocabulary, base meta-learner, and per-domain
//! vocabularies, context bags and sub-corpus feature vectors.
//!
//! On-disk layout (UTF-8, LF line endings, single TAB separators):
//!
//! ```text
//! KB/
//!   manifest.toml                 format version, settings, domain order, sha256 per file
//!   feature_vocab.tsv             word TAB count, rank = line number (0-based)
//!   model.bin                     meta-learner, present once trained
//!   domains/<id>/vocab.tsv        word TAB count
//!   domains/<id>/contexts.tsv     word TAB context-word TAB count
//!   domains/<id>/vectors.1.tsv    word TAB rank:count rank:count ...
//!   domains/<id>/vectors.2.tsv
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    build_feature_vectors, build_vocab, scan_context_words, subsample_corpus, ContextBag,
    DomainCorpus, FeatureVector, Vocabulary,
};
use crate::error::{Error, Result};
use crate::metalearner::{DomainVectors, MetaLearnerParams};
use crate::rng;

pub const KB_FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.toml";
const FEATURE_VOCAB: &str = "feature_vocab.tsv";
const MODEL: &str = "model.bin";

/// Parameters used to build every domain's knowledge. New domains must be
/// processed with the same values so their vectors are comparable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbSettings {
    /// Window for feature vectors.
    pub feature_window: usize,
    /// Window for context bags.
    pub context_window: usize,
    /// Serialized size of each sub-corpus.
    pub subcorpus_bytes: usize,
    pub min_count: u64,
    /// Stored as a string: TOML integers cannot hold every u64.
    #[serde(with = "u64_text")]
    pub seed: u64,
}

mod u64_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl Default for KbSettings {
    fn default() -> Self {
        KbSettings {
            feature_window: 5,
            context_window: 5,
            subcorpus_bytes: 10 * 1024 * 1024,
            min_count: 5,
            seed: 1,
        }
    }
}

/// Vocabulary, context bags and both sub-corpus feature-vector sets of one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainKnowledge {
    pub vocab: Vocabulary,
    pub contexts: ContextBag,
    pub vectors: [BTreeMap<String, FeatureVector>; 2],
}

impl DomainKnowledge {
    /// Build the vocabulary and context bags from the whole corpus and feature
    /// vectors from two sampled sub-corpora. Vectors are kept only for
    /// vocabulary words.
    pub fn build(corpus: &DomainCorpus, feature_vocab: &Vocabulary, settings: &KbSettings) -> Result<Self> {
        let vocab = build_vocab(corpus, settings.min_count)?;
        let contexts = scan_context_words(corpus, &vocab, settings.context_window)?;
        let seed = rng::derive_seed(settings.seed, corpus.domain_id());
        let (one, two) = subsample_corpus(corpus, settings.subcorpus_bytes, seed)?;
        let mut vectors = [BTreeMap::new(), BTreeMap::new()];
        for (slot, sub) in vectors.iter_mut().zip([&one, &two]) {
            *slot = build_feature_vectors(sub, feature_vocab, settings.feature_window)?;
            slot.retain(|w, _| vocab.contains(w));
        }
        Ok(DomainKnowledge {
            vocab,
            contexts,
            vectors,
        })
    }

    pub fn as_vectors<'a>(&'a self, id: &'a str) -> DomainVectors<'a> {
        DomainVectors {
            id,
            subcorpora: [&self.vectors[0], &self.vectors[1]],
        }
    }

    fn validate(&self, id: &str, f: usize) -> Result<()> {
        for (w, bag) in self.contexts.iter() {
            if !self.vocab.contains(w) {
                return Err(Error::IndexOutOfRange(format!(
                    "domain {id:?}: context key {w:?} not in vocabulary"
                )));
            }
            if let Some(c) = bag.keys().find(|c| !self.vocab.contains(c)) {
                return Err(Error::IndexOutOfRange(format!(
                    "domain {id:?}: context word {c:?} not in vocabulary"
                )));
            }
        }
        for vectors in &self.vectors {
            for (w, v) in vectors {
                if v.word() != w || !self.vocab.contains(w) {
                    return Err(Error::IndexOutOfRange(format!(
                        "domain {id:?}: vector for {w:?} not in vocabulary"
                    )));
                }
                if v.is_zero() {
                    return Err(Error::format("vectors", format!("domain {id:?}: zero vector for {w:?}")));
                }
                if let Some(r) = v.max_rank() {
                    if r as usize >= f {
                        return Err(Error::IndexOutOfRange(format!(
                            "domain {id:?}: rank {r} >= feature vocabulary size {f}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    feature_vocab: Vocabulary,
    base_model: Option<MetaLearnerParams>,
    settings: KbSettings,
    domains: Vec<(String, DomainKnowledge)>,
    /// Domains used to train the base meta-learner; excluded from retrieval.
    meta_domains: BTreeSet<String>,
}

fn check_model(vocab: &Vocabulary, model: &MetaLearnerParams) -> Result<()> {
    if model.feature_dim() != vocab.len() {
        return Err(Error::DimensionMismatch(format!(
            "meta-learner expects f={} but the feature vocabulary has {} words",
            model.feature_dim(),
            vocab.len()
        )));
    }
    Ok(())
}

fn check_domain_id(id: &str) -> Result<()> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\', '\t', '\n', '\0']) {
        return Err(Error::InvalidArgument(format!("invalid domain id {id:?}")));
    }
    Ok(())
}

impl KnowledgeBase {
    pub fn new(
        feature_vocab: Vocabulary,
        base_model: Option<MetaLearnerParams>,
        settings: KbSettings,
    ) -> Result<Self> {
        if feature_vocab.is_empty() {
            return Err(Error::EmptyVocabulary("feature vocabulary".into()));
        }
        if let Some(m) = &base_model {
            check_model(&feature_vocab, m)?;
        }
        Ok(KnowledgeBase {
            feature_vocab,
            base_model,
            settings,
            domains: Vec::new(),
            meta_domains: BTreeSet::new(),
        })
    }

    pub fn feature_vocab(&self) -> &Vocabulary {
        &self.feature_vocab
    }

    pub fn settings(&self) -> &KbSettings {
        &self.settings
    }

    pub fn base_model(&self) -> Option<&MetaLearnerParams> {
        self.base_model.as_ref()
    }

    pub fn set_base_model(&mut self, model: MetaLearnerParams) -> Result<()> {
        check_model(&self.feature_vocab, &model)?;
        self.base_model = Some(model);
        Ok(())
    }

    pub fn add_domain(&mut self, id: impl Into<String>, knowledge: DomainKnowledge) -> Result<()> {
        let id = id.into();
        check_domain_id(&id)?;
        if self.domain(&id).is_some() {
            return Err(Error::DuplicateDomain(id));
        }
        knowledge.validate(&id, self.feature_vocab.len())?;
        self.domains.push((id, knowledge));
        Ok(())
    }

    pub fn domain(&self, id: &str) -> Option<&DomainKnowledge> {
        self.domains.iter().find(|(d, _)| d == id).map(|(_, k)| k)
    }

    /// Domains in insertion order.
    pub fn domains(&self) -> impl Iterator<Item = (&str, &DomainKnowledge)> {
        self.domains.iter().map(|(d, k)| (d.as_str(), k))
    }

    pub fn domain_count(&self) -> usize {
        self.domains.len()
    }

    pub fn meta_domains(&self) -> &BTreeSet<String> {
        &self.meta_domains
    }

    /// Reserve domains for meta-learner training so retrieval skips them.
    pub fn set_meta_domains(&mut self, ids: impl IntoIterator<Item = String>) -> Result<()> {
        let ids: BTreeSet<String> = ids.into_iter().collect();
        if let Some(missing) = ids.iter().find(|d| self.domain(d).is_none()) {
            return Err(Error::UnknownDomain(missing.clone()));
        }
        self.meta_domains = ids;
        Ok(())
    }

    /// Domains available as retrieval sources.
    pub fn past_domains(&self) -> impl Iterator<Item = (&str, &DomainKnowledge)> {
        self.domains()
            .filter(|(d, _)| !self.meta_domains.contains(*d))
    }

    /// Check every cross-reference.
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = &self.base_model {
            check_model(&self.feature_vocab, m)?;
        }
        for (id, k) in &self.domains {
            k.validate(id, self.feature_vocab.len())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let name = path
            .file_name()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let staging = parent.join(format!(".{name}.partial"));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        let written = self.write_dir(&staging);
        if let Err(e) = written {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
        if path.exists() {
            let old = parent.join(format!(".{name}.old"));
            if old.exists() {
                fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
            }
            fs::rename(path, &old).map_err(|e| Error::io(path, e))?;
            fs::rename(&staging, path).map_err(|e| Error::io(path, e))?;
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        } else {
            fs::rename(&staging, path).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    fn write_dir(&self, dir: &Path) -> Result<()> {
        let mut checksums = BTreeMap::new();
        let mut put = |rel: String, bytes: &[u8]| -> Result<()> {
            let file = dir.join(&rel);
            if let Some(p) = file.parent() {
                fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
            }
            fs::write(&file, bytes).map_err(|e| Error::io(&file, e))?;
            checksums.insert(rel, sha256_hex(bytes));
            Ok(())
        };
        put(FEATURE_VOCAB.into(), write_vocab(&self.feature_vocab)?.as_bytes())?;
        if let Some(m) = &self.base_model {
            let mut buf = Vec::new();
            m.write_to(&mut buf).map_err(|e| Error::io(dir.join(MODEL), e))?;
            put(MODEL.into(), &buf)?;
        }
        for (id, k) in &self.domains {
            let base = format!("domains/{id}");
            put(format!("{base}/vocab.tsv"), write_vocab(&k.vocab)?.as_bytes())?;
            put(format!("{base}/contexts.tsv"), write_contexts(&k.contexts).as_bytes())?;
            for (i, v) in k.vectors.iter().enumerate() {
                put(format!("{base}/vectors.{}.tsv", i + 1), write_vectors(v).as_bytes())?;
            }
        }
        let manifest = KbManifest {
            format_version: KB_FORMAT_VERSION,
            feature_vocab_size: self.feature_vocab.len(),
            trained: self.base_model.is_some(),
            settings: self.settings,
            domains: self.domains.iter().map(|(d, _)| d.clone()).collect(),
            meta_domains: self.meta_domains.iter().cloned().collect(),
            checksums,
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::format("manifest", e.to_string()))?;
        let file = dir.join(MANIFEST);
        fs::write(&file, text).map_err(|e| Error::io(&file, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest = read_manifest(path)?;
        let read = |rel: &str| -> Result<Vec<u8>> {
            let file = path.join(rel);
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            match manifest.checksums.get(rel) {
                Some(sum) if *sum == sha256_hex(&bytes) => Ok(bytes),
                Some(_) => Err(Error::Checksum(file.display().to_string())),
                None => Err(Error::format("manifest", format!("no checksum recorded for {rel}"))),
            }
        };
        let text = |rel: &str| -> Result<String> {
            String::from_utf8(read(rel)?).map_err(|_| Error::format(rel, "invalid UTF-8"))
        };
        let feature_vocab = parse_vocab(&text(FEATURE_VOCAB)?, FEATURE_VOCAB)?;
        if feature_vocab.len() != manifest.feature_vocab_size {
            return Err(Error::DimensionMismatch(format!(
                "manifest says f={} but {FEATURE_VOCAB} has {} entries",
                manifest.feature_vocab_size,
                feature_vocab.len()
            )));
        }
        let base_model = if manifest.trained {
            Some(MetaLearnerParams::read_from(&read(MODEL)?[..])?)
        } else {
            None
        };
        let mut kb = KnowledgeBase::new(feature_vocab, base_model, manifest.settings)?;
        for id in &manifest.domains {
            check_domain_id(id)?;
            let base = format!("domains/{id}");
            let vocab_rel = format!("{base}/vocab.tsv");
            let ctx_rel = format!("{base}/contexts.tsv");
            let v1 = format!("{base}/vectors.1.tsv");
            let v2 = format!("{base}/vectors.2.tsv");
            let knowledge = DomainKnowledge {
                vocab: parse_vocab(&text(&vocab_rel)?, &vocab_rel)?,
                contexts: parse_contexts(&text(&ctx_rel)?, &ctx_rel)?,
                vectors: [parse_vectors(&text(&v1)?, &v1)?, parse_vectors(&text(&v2)?, &v2)?],
            };
            kb.add_domain(id.clone(), knowledge)?;
        }
        kb.set_meta_domains(manifest.meta_domains)?;
        Ok(kb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbManifest {
    pub format_version: u32,
    pub feature_vocab_size: usize,
    pub trained: bool,
    pub settings: KbSettings,
    pub domains: Vec<String>,
    pub meta_domains: Vec<String>,
    pub checksums: BTreeMap<String, String>,
}

/// Read and version-check a KB manifest without loading the rest.
pub fn read_manifest(path: &Path) -> Result<KbManifest> {
    let file = path.join(MANIFEST);
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    #[derive(Deserialize)]
    struct VersionOnly {
        format_version: u32,
    }
    let v: VersionOnly = toml::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
    if v.format_version != KB_FORMAT_VERSION {
        return Err(Error::Version {
            found: v.format_version,
            expected: KB_FORMAT_VERSION,
        });
    }
    toml::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn check_word(w: &str) -> Result<()> {
    if w.is_empty() || w.contains(['\t', '\n', '\r', ' ', ':']) {
        return Err(Error::format("word", format!("{w:?} cannot be stored in the KB")));
    }
    Ok(())
}

fn write_vocab(v: &Vocabulary) -> Result<String> {
    let mut s = String::new();
    for (w, c) in v.entries() {
        check_word(w)?;
        let _ = writeln!(s, "{w}\t{c}");
    }
    Ok(s)
}

fn write_contexts(bag: &ContextBag) -> String {
    let mut s = String::new();
    for (w, ctx) in bag.iter() {
        for (c, n) in ctx {
            let _ = writeln!(s, "{w}\t{c}\t{n}");
        }
    }
    s
}

fn write_vectors(vectors: &BTreeMap<String, FeatureVector>) -> String {
    let mut s = String::new();
    for (w, v) in vectors {
        s.push_str(w);
        s.push('\t');
        for (i, (r, c)) in v.counts().iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{r}:{c}");
        }
        s.push('\n');
    }
    s
}

fn bad(file: &str, line: usize, detail: impl std::fmt::Display) -> Error {
    Error::format(file.to_owned(), format!("line {}: {detail}", line + 1))
}

fn parse_count(s: &str, file: &str, line: usize) -> Result<u64> {
    s.parse().map_err(|_| bad(file, line, format!("bad count {s:?}")))
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split_terminator('\n').enumerate()
}

fn parse_vocab(text: &str, file: &str) -> Result<Vocabulary> {
    let mut entries = Vec::new();
    for (i, line) in lines(text) {
        let (w, c) = line.split_once('\t').ok_or_else(|| bad(file, i, "expected word TAB count"))?;
        entries.push((w.to_owned(), parse_count(c, file, i)?));
    }
    Vocabulary::from_entries(entries)
}

fn parse_contexts(text: &str, file: &str) -> Result<ContextBag> {
    let mut bag = ContextBag::new();
    for (i, line) in lines(text) {
        let mut parts = line.split('\t');
        let (Some(w), Some(c), Some(n), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad(file, i, "expected word TAB context TAB count"));
        };
        let n = parse_count(n, file, i)?;
        if n == 0 {
            return Err(bad(file, i, "zero count"));
        }
        bag.add(w, c, n);
    }
    Ok(bag)
}

fn parse_vectors(text: &str, file: &str) -> Result<BTreeMap<String, FeatureVector>> {
    let mut out = BTreeMap::new();
    for (i, line) in lines(text) {
        let (w, rest) = line.split_once('\t').ok_or_else(|| bad(file, i, "expected word TAB entries"))?;
        let mut counts = Vec::new();
        for item in rest.split(' ') {
            let (r, c) = item.split_once(':').ok_or_else(|| bad(file, i, format!("bad entry {item:?}")))?;
            let r: u32 = r.parse().map_err(|_| bad(file, i, format!("bad rank {r:?}")))?;
            counts.push((r, parse_count(c, file, i)?));
        }
        if out.insert(w.to_owned(), FeatureVector::new(w, counts)).is_some() {
            return Err(bad(file, i, format!("duplicate word {w:?}")));
        }
    }
    Ok(out)
}

/// Exclusive advisory lock held while a KB is being modified. The lock is a
/// sibling file `<kb>.lock` created with `create_new`; it is removed on drop.
#[derive(Debug)]
pub struct KbLock {
    path: PathBuf,
}

impl KbLock {
    pub fn acquire(kb: &Path) -> Result<Self> {
        let mut name = kb.as_os_str().to_owned();
        name.push(".lock");
        let path = PathBuf::from(name);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(KbLock { path })
    }
}

impl Drop for KbLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
