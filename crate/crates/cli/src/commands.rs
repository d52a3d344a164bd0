//! The subcommands. Each resolved command is serializable so its manifest can
//! be replayed.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ldem::corpus::{build_feature_vocab, tokenize_bytes, DomainCorpus};
use ldem::embedding::{
    concat_embeddings, embeddings_to_text, load_embeddings, train_augmented, MissingPolicy, SgConfig,
};
use ldem::eval::{featurize_documents, render_reports, train_eval_classifier, ClassifierConfig, LabeledDataset};
use ldem::kb::{DomainKnowledge, KbLock, KbSettings, KnowledgeBase};
use ldem::metalearner::{evaluate, make_pair_examples, train_base, AdaptConfig, MetaTrainConfig};
use ldem::retrieval::{retrieve_relevant, tfidf_retrieve, RelevantKnowledge, RetrievalConfig};
use ldem::rng::derive_seed;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::params::*;
use crate::run::{fail, sibling, write_atomic, MetricsLog, OutputGuard, RunManifest};

pub trait Command: Serialize + DeserializeOwned {
    const NAME: &'static str;

    fn seed(&self) -> Option<u64>;

    /// The output the run manifest is written next to.
    fn anchor(&self) -> &Path;

    fn execute(&self, run: &mut RunManifest, guard: &mut OutputGuard) -> anyhow::Result<()>;
}

pub fn manifest_path<C: Command>(cmd: &C) -> PathBuf {
    sibling(cmd.anchor(), &format!("{}.run.json", C::NAME))
}

/// Run a command and write its manifest. Returns the output checksums.
pub fn launch<C: Command>(cmd: &C) -> anyhow::Result<Vec<(String, String)>> {
    let mut run = RunManifest::start(C::NAME, cmd.seed(), cmd)?;
    let mut guard = OutputGuard::new();
    cmd.execute(&mut run, &mut guard)?;
    let outputs = run.outputs.clone();
    let path = manifest_path(cmd);
    guard.track(&path);
    run.finish(&path)?;
    guard.commit();
    Ok(outputs)
}

fn progress(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

fn load_domain(dir: &Path) -> anyhow::Result<DomainCorpus> {
    if !dir.is_dir() {
        return Err(fail("io", format!("{} is not a directory", dir.display())));
    }
    let (corpus, replaced) = DomainCorpus::from_dir(dir)?;
    if replaced > 0 {
        progress(format!("warning: {}: replaced {replaced} invalid UTF-8 sequences", dir.display()));
    }
    Ok(corpus)
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).map_err(|e| ldem::Error::io(path, e).into())
}

fn split_overlap<'a>(splits: &[(&'a str, &'a [String])]) -> Option<(String, &'a str, &'a str)> {
    for (i, (a, da)) in splits.iter().enumerate() {
        for (b, db) in &splits[i + 1..] {
            if let Some(d) = da.iter().find(|d| db.contains(d)) {
                return Some((d.clone(), a, b));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildKb {
    pub domains: Vec<PathBuf>,
    pub out: PathBuf,
    pub params: BuildKbParams,
}

impl Command for BuildKb {
    const NAME: &'static str = "build-kb";

    fn seed(&self) -> Option<u64> {
        Some(self.params.seed)
    }

    fn anchor(&self) -> &Path {
        &self.out
    }

    fn execute(&self, run: &mut RunManifest, guard: &mut OutputGuard) -> anyhow::Result<()> {
        let p = &self.params;
        if self.domains.is_empty() {
            return Err(fail("invalid_argument", "at least one domain directory is required"));
        }
        if self.out.exists() {
            let empty_dir = self.out.is_dir()
                && fs::read_dir(&self.out)
                    .map_err(|e| ldem::Error::io(&self.out, e))?
                    .next()
                    .is_none();
            if !empty_dir {
                return Err(fail(
                    "output_exists",
                    format!("{} exists and is not an empty directory", self.out.display()),
                ));
            }
        }
        let _lock = KbLock::acquire(&self.out)?;
        let mut corpora = Vec::new();
        for d in &self.domains {
            run.input(d)?;
            corpora.push(load_domain(d)?);
        }
        let vocab = build_feature_vocab(&corpora, p.feature_vocab_size)?;
        let settings = KbSettings {
            feature_window: p.window,
            context_window: p.window,
            subcorpus_bytes: p.subcorpus_bytes,
            min_count: p.min_count,
            seed: p.seed,
        };
        let mut kb = KnowledgeBase::new(vocab, None, settings)?;
        for c in &corpora {
            progress(format!("build-kb: {} ({} tokens)", c.domain_id(), c.token_count()));
            let k = DomainKnowledge::build(c, kb.feature_vocab(), &settings)?;
            kb.add_domain(c.domain_id(), k)?;
        }
        kb.save(&self.out)?;
        guard.track(&self.out);
        run.output(&self.out)?;
        println!(
            "build-kb: {} domains, feature vocabulary {} words, wrote {}",
            kb.domain_count(),
            kb.feature_vocab().len(),
            self.out.display()
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub kb: PathBuf,
    pub train_domains: Vec<String>,
    pub valid_domains: Vec<String>,
    pub test_domains: Vec<String>,
    /// Exclude the split domains from later retrieval.
    pub reserve: bool,
    pub metrics: PathBuf,
    pub params: TrainMetaParams,
}

impl Command for TrainMeta {
    const NAME: &'static str = "train-meta";

    fn seed(&self) -> Option<u64> {
        Some(self.params.seed)
    }

    fn anchor(&self) -> &Path {
        &self.kb
    }

    fn execute(&self, run: &mut RunManifest, guard: &mut OutputGuard) -> anyhow::Result<()> {
        let p = &self.params;
        let splits = [
            ("train", self.train_domains.as_slice()),
            ("valid", self.valid_domains.as_slice()),
            ("test", self.test_domains.as_slice()),
        ];
        if let Some((d, a, b)) = split_overlap(&splits) {
            return Err(fail(
                "overlapping_splits",
                format!("domain {d:?} is in both the {a} and {b} splits"),
            ));
        }
        for (name, ids) in &splits {
            let distinct: BTreeSet<&String> = ids.iter().collect();
            if distinct.len() != ids.len() {
                return Err(fail("invalid_argument", format!("the {name} split repeats a domain")));
            }
            if ids.len() < 2 {
                return Err(fail(
                    "invalid_argument",
                    format!("the {name} split needs at least two domains for negative pairs"),
                ));
            }
        }

        let _lock = KbLock::acquire(&self.kb)?;
        run.input(&self.kb)?;
        let mut kb = KnowledgeBase::load(&self.kb)?;
        let mut examples = Vec::new();
        for ((name, ids), words) in splits.iter().zip([
            p.words_per_domain,
            p.valid_words_per_domain,
            p.test_words_per_domain,
        ]) {
            let mut vectors = Vec::new();
            for id in ids.iter() {
                let k = kb.domain(id).ok_or_else(|| ldem::Error::UnknownDomain(id.clone()))?;
                vectors.push(k.as_vectors(id));
            }
            let ex = make_pair_examples(&vectors, words, p.neg_ratio, derive_seed(p.seed, name))
                .with_context(|| format!("{name} split"))?;
            progress(format!("train-meta: {} {name} examples", ex.len()));
            examples.push(ex);
        }
        let config = MetaTrainConfig {
            learning_rate: p.learning_rate,
            batch_size: p.batch_size,
            epochs: p.epochs,
            patience: p.patience,
            seed: p.seed,
            hidden: p.hidden,
        };
        let outcome = train_base(kb.feature_vocab().len(), &examples[0], &examples[1], &config)?;
        let test = evaluate(&outcome.params, &examples[2])?;

        let mut log = MetricsLog::default();
        for h in &outcome.history {
            log.push(h)?;
            progress(format!(
                "train-meta: epoch {} loss {:.4} valid F1 {:.3}",
                h.epoch, h.train_loss, h.valid_f1
            ));
        }
        log.push(&json!({
            "split": "test",
            "best_epoch": outcome.best_epoch,
            "precision": test.precision,
            "recall": test.recall,
            "f1": test.f1,
        }))?;

        kb.set_base_model(outcome.params)?;
        if self.reserve {
            kb.set_meta_domains(splits.iter().flat_map(|(_, ids)| ids.iter().cloned()))?;
        }
        log.write(&self.metrics)?;
        guard.track(&self.metrics);
        kb.save(&self.kb)?;
        run.output(&self.kb)?;
        run.log(&self.metrics);
        println!(
            "train-meta: best epoch {}, valid F1 {:.3}, test precision {:.3} recall {:.3} F1 {:.3}",
            outcome.best_epoch, outcome.best_valid.f1, test.precision, test.recall, test.f1
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Retrieve {
    pub kb: PathBuf,
    pub new_domain: PathBuf,
    pub out: PathBuf,
    pub model_out: PathBuf,
    pub params: RetrieveParams,
}

impl Command for Retrieve {
    const NAME: &'static str = "retrieve";

    fn seed(&self) -> Option<u64> {
        Some(self.params.seed)
    }

    fn anchor(&self) -> &Path {
        &self.out
    }

    fn execute(&self, run: &mut RunManifest, guard: &mut OutputGuard) -> anyhow::Result<()> {
        let p = &self.params;
        let mut config = RetrievalConfig {
            delta: p.delta,
            adapt: AdaptConfig {
                words: p.adapt_words,
                min_examples: p.min_examples,
                ..AdaptConfig::default()
            },
        };
        config.adapt.train.epochs = p.adapt_epochs;
        config.adapt.train.learning_rate = p.adapt_learning_rate;
        config.adapt.train.batch_size = p.adapt_batch_size;
        config.adapt.train.seed = p.seed;
        config.validate()?;

        let _lock = KbLock::acquire(&self.kb)?;
        run.input(&self.kb)?;
        run.input(&self.new_domain)?;
        let mut kb = KnowledgeBase::load(&self.kb)?;
        if let Some(m) = kb.base_model() {
            config.adapt.train.hidden = m.hidden_dim();
        }
        let corpus = load_domain(&self.new_domain)?;
        let id = corpus.domain_id().to_owned();
        let result = retrieve_relevant(&kb, &corpus, &config)?;

        write_atomic(&self.out, result.relevant.to_tsv().as_bytes())?;
        guard.track(&self.out);
        let mut model = Vec::new();
        result
            .adapted
            .params
            .write_to(&mut model)
            .map_err(|e| ldem::Error::io(&self.model_out, e))?;
        write_atomic(&self.model_out, &model)?;
        guard.track(&self.model_out);

        let borrowed = result.relevant.total_pairs();
        let own = result.knowledge.contexts.total();
        let metrics = sibling(&self.out, "retrieve.metrics.jsonl");
        let mut log = MetricsLog::default();
        for h in &result.adapted.history {
            log.push(h)?;
        }
        log.push(&json!({
            "split": "adapt-test",
            "examples": result.adapted.examples,
            "precision": result.adapted.test.precision,
            "recall": result.adapted.test.recall,
            "f1": result.adapted.test.f1,
        }))?;
        log.push(&json!({ "stats": result.stats, "borrowed_pairs": borrowed, "corpus_pairs": own }))?;
        log.write(&metrics)?;
        guard.track(&metrics);

        kb.add_domain(&id, result.knowledge)?;
        kb.save(&self.kb)?;
        for path in [&self.out, &self.model_out, &self.kb] {
            run.output(path)?;
        }
        run.log(&metrics);
        let ratio = if own == 0 { 0.0 } else { borrowed as f64 / own as f64 };
        println!(
            "retrieve: {id}: borrowed {borrowed} context pairs for {} words from {} of {} scored word-domain pairs at delta {}; new-corpus pairs {own}; expansion ratio {ratio:.3}; adapted test F1 {:.3}",
            result.relevant.len(),
            result.stats.accepted,
            result.stats.scored_pairs,
            p.delta,
            result.adapted.test.f1
        );
        Ok(())
    }
}

/// Concatenate the documents of directories and files into one corpus named
/// after the first path.
fn load_corpus(paths: &[PathBuf]) -> anyhow::Result<DomainCorpus> {
    let first = paths
        .first()
        .ok_or_else(|| fail("invalid_argument", "at least one corpus path is required"))?;
    let mut docs = Vec::new();
    for path in paths {
        if path.is_dir() {
            docs.extend(load_domain(path)?.documents().iter().cloned());
        } else {
            let raw = fs::read(path).map_err(|e| ldem::Error::io(path, e))?;
            let mut replaced = 0;
            for line in raw.split(|b| *b == b'\n') {
                let (tokens, bad) = tokenize_bytes(line);
                replaced += bad;
                if !tokens.is_empty() {
                    docs.push(tokens);
                }
            }
            if replaced > 0 {
                progress(format!("warning: {}: replaced {replaced} invalid UTF-8 sequences", path.display()));
            }
        }
    }
    let id = first
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    Ok(DomainCorpus::new(id, docs)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainEmbed {
    pub corpus: Vec<PathBuf>,
    pub relevant: Option<PathBuf>,
    pub out: PathBuf,
    pub params: TrainEmbedParams,
}

impl Command for TrainEmbed {
    const NAME: &'static str = "train-embed";

    fn seed(&self) -> Option<u64> {
        Some(self.params.seed)
    }

    fn anchor(&self) -> &Path {
        &self.out
    }

    fn execute(&self, run: &mut RunManifest, guard: &mut OutputGuard) -> anyhow::Result<()> {
        let p = &self.params;
        let relevant = match (p.mode, &self.relevant) {
            (EmbedMode::Augmented, None) => {
                return Err(fail("missing_relevant", "augmented mode requires --relevant"));
            }
            (EmbedMode::Plain, Some(_)) => {
                return Err(fail("invalid_argument", "--relevant is only used in augmented mode"));
            }
            (EmbedMode::Augmented, Some(path)) => {
                run.input(path)?;
                RelevantKnowledge::from_tsv(&read_text(path)?)?
            }
            (EmbedMode::Plain, None) => RelevantKnowledge::new(),
        };
        for c in &self.corpus {
            run.input(c)?;
        }
        let corpus = load_corpus(&self.corpus)?;
        let config = SgConfig {
            dim: p.dim,
            window: p.window,
            negatives: p.negatives,
            subsample: p.subsample,
            learning_rate: p.learning_rate,
            epochs: p.epochs,
            min_count: p.min_count,
            seed: p.seed,
            workers: p.workers,
            relevant_weight: p.relevant_weight,
            ..SgConfig::default()
        };
        progress(format!(
            "train-embed: {} tokens, {} borrowed pairs",
            corpus.token_count(),
            relevant.total_pairs()
        ));
        let trained = train_augmented(&corpus, &relevant, &config)?;
        let mut log = MetricsLog::default();
        for e in &trained.progress {
            log.push(e)?;
            progress(format!(
                "train-embed: epoch {} objective {:.4} ({:.0} pairs/s)",
                e.epoch, e.objective, e.pairs_per_sec
            ));
        }
        log.push(&json!({ "dropped_relevant_pairs": trained.dropped_relevant }))?;

        write_atomic(&self.out, embeddings_to_text(&trained.model).as_bytes())?;
        guard.track(&self.out);
        let metrics = sibling(&self.out, "train-embed.metrics.jsonl");
        log.write(&metrics)?;
        guard.track(&metrics);
        run.output(&self.out)?;
        run.log(&metrics);
        let last = trained.progress.last();
        println!(
            "train-embed: {} words x {}, {} corpus + {} borrowed pairs per epoch, {} borrowed pairs dropped, wrote {}",
            trained.model.len(),
            trained.model.dim(),
            last.map_or(0, |e| e.corpus_pairs),
            last.map_or(0, |e| e.relevant_pairs),
            trained.dropped_relevant,
            self.out.display()
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineTfidf {
    pub past_domains: Vec<PathBuf>,
    pub new_domain: PathBuf,
    pub out: PathBuf,
    pub params: BaselineParams,
}

impl Command for BaselineTfidf {
    const NAME: &'static str = "baseline-tfidf";

    fn seed(&self) -> Option<u64> {
        None
    }

    fn anchor(&self) -> &Path {
        &self.out
    }

    fn execute(&self, run: &mut RunManifest, guard: &mut OutputGuard) -> anyhow::Result<()> {
        let mut past = Vec::new();
        for d in &self.past_domains {
            run.input(d)?;
            past.push(load_domain(d)?);
        }
        run.input(&self.new_domain)?;
        let new = load_domain(&self.new_domain)?;
        let borrowed = tfidf_retrieve(&past, &new, self.params.threshold)?;
        let mut text = String::new();
        let mut tokens = 0;
        for s in &borrowed {
            tokens += s.tokens.len();
            text.push_str(&s.tokens.join(" "));
            text.push('\n');
        }
        write_atomic(&self.out, text.as_bytes())?;
        guard.track(&self.out);
        run.output(&self.out)?;
        let total: usize = past.iter().map(|c| c.documents().len()).sum();
        println!(
            "baseline-tfidf: borrowed {} of {total} sentences, {tokens} tokens, wrote {}",
            borrowed.len(),
            self.out.display()
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Eval {
    pub embeddings: Vec<PathBuf>,
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub params: EvalParams,
}

impl Command for Eval {
    const NAME: &'static str = "eval";

    fn seed(&self) -> Option<u64> {
        None
    }

    fn anchor(&self) -> &Path {
        &self.out
    }

    fn execute(&self, run: &mut RunManifest, guard: &mut OutputGuard) -> anyhow::Result<()> {
        let p = &self.params;
        if p.seeds == 0 {
            return Err(fail("invalid_argument", "--seeds must be positive"));
        }
        run.input(&self.dataset)?;
        let dataset = LabeledDataset::parse(&read_text(&self.dataset)?)?;
        let labels = dataset.labels();
        let seeds: Vec<u64> = (1..=p.seeds as u64).collect();
        let config = ClassifierConfig {
            epochs: p.epochs,
            learning_rate: p.learning_rate,
            l2: p.l2,
            test_fraction: p.test_fraction,
        };
        let mut reports = Vec::new();
        for path in &self.embeddings {
            run.input(path)?;
            let model = load_embeddings(path)?;
            let features = featurize_documents(dataset.documents(), &model);
            if features.empty > 0 {
                progress(format!(
                    "eval: {}: {} documents have no known word",
                    path.display(),
                    features.empty
                ));
            }
            let name = path.display().to_string();
            reports.push(train_eval_classifier(&name, &features, &labels, dataset.classes(), &seeds, &config)?);
        }
        let mut text = serde_json::to_string_pretty(&reports)?;
        text.push('\n');
        write_atomic(&self.out, text.as_bytes())?;
        guard.track(&self.out);
        run.output(&self.out)?;
        print!("{}", render_reports(&reports));
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Concat {
    pub a: PathBuf,
    pub b: PathBuf,
    pub out: PathBuf,
    pub params: ConcatParams,
}

impl Command for Concat {
    const NAME: &'static str = "concat";

    fn seed(&self) -> Option<u64> {
        None
    }

    fn anchor(&self) -> &Path {
        &self.out
    }

    fn execute(&self, run: &mut RunManifest, guard: &mut OutputGuard) -> anyhow::Result<()> {
        run.input(&self.a)?;
        run.input(&self.b)?;
        let a = load_embeddings(&self.a)?;
        let b = load_embeddings(&self.b)?;
        let policy = match self.params.missing {
            Missing::ZeroFill => MissingPolicy::ZeroFill,
            Missing::Strict => MissingPolicy::Strict,
        };
        let joined = concat_embeddings(&a, &b, policy)?;
        write_atomic(&self.out, embeddings_to_text(&joined).as_bytes())?;
        guard.track(&self.out);
        run.output(&self.out)?;
        println!(
            "concat: {} words x {} ({} + {}), wrote {}",
            joined.len(),
            joined.dim(),
            a.dim(),
            b.dim(),
            self.out.display()
        );
        Ok(())
    }
}
