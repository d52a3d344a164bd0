//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use ldem::corpus::{
    build_feature_vocab, ContextBag, DomainCorpus, FeatureVector, Vocabulary,
};
use ldem::embedding::{
    embeddings_from_text, embeddings_to_text, train_augmented, train_skipgram, EmbeddingModel,
    NegativeSampler, SgConfig,
};
use ldem::eval::{featurize_documents, train_eval_classifier, ClassifierConfig};
use ldem::kb::{DomainKnowledge, KbSettings, KnowledgeBase};
use ldem::metalearner::{
    batch_inference, evaluate, make_pair_examples, meta_forward, meta_loss_and_grad,
    sequential_inference, train_base, AdaptConfig, BinaryMetrics, DomainVectors,
    MetaLearnerParams, MetaTrainConfig, PairExample,
};
use ldem::retrieval::{aggregate, retrieve_relevant, tfidf_retrieve, RelevantKnowledge, RetrievalConfig};
use ldem::synthetic::{polysemy_fixture, topic_domains, two_topic_corpus, TopicDomainSpec};
use ldem::Error;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Failure(String);

impl From<String> for Failure {
    fn from(s: String) -> Self {
        Failure(s)
    }
}

impl From<ldem::Error> for Failure {
    fn from(e: ldem::Error) -> Self {
        Failure(format!("{}: {e}", e.kind()))
    }
}

type Check = Result<String, Failure>;

fn rng(label: &str) -> ChaCha8Rng {
    ldem::rng::stream(2024, label)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_vector<R: Rng>(rng: &mut R, word: &str, f: usize, max_nnz: usize) -> FeatureVector {
    let nnz = rng.gen_range(1..=max_nnz.min(f));
    let ranks = rand::seq::index::sample(rng, f, nnz);
    FeatureVector::new(word, ranks.into_iter().map(|r| (r as u32, rng.gen_range(1..20u64))))
}

// Dense reference forward pass, written independently of the library.
fn dense(x: &FeatureVector, f: usize) -> Vec<f64> {
    let mut v = vec![0.0; f];
    let l1: u64 = x.counts().iter().map(|c| c.1).sum();
    for &(r, c) in x.counts() {
        v[r as usize] = c as f64 / l1 as f64;
    }
    v
}

fn oracle_logit(p: &MetaLearnerParams, xa: &FeatureVector, xb: &FeatureVector) -> f64 {
    let (f, h) = (p.feature_dim(), p.hidden_dim());
    let (a, b) = (dense(xa, f), dense(xb, f));
    let mut s = p.b2();
    for k in 0..h {
        let za: f64 = (0..f).map(|r| p.w1(k, r) * a[r]).sum();
        let zb: f64 = (0..f).map(|r| p.w1(k, r) * b[r]).sum();
        s += p.w2()[k] * (za - zb).abs();
    }
    s
}

fn oracle_loss(p: &MetaLearnerParams, batch: &[PairExample]) -> f64 {
    batch
        .iter()
        .map(|e| {
            let prob = 1.0 / (1.0 + (-oracle_logit(p, &e.xa, &e.xb)).exp());
            if e.label {
                -prob.ln()
            } else {
                -(1.0 - prob).ln()
            }
        })
        .sum::<f64>()
        / batch.len() as f64
}

fn criterion_1() -> Check {
    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut rng = rng("c1");
    let mut worst: f64 = 0.0;
    for inst in 0..20 {
        let (f, h) = (10, 4);
        let mut p = MetaLearnerParams::init(f, h, inst)?;
        for k in 0..h {
            for r in 0..f {
                p.set_w1(k, r, rng.gen_range(-1.0..1.0));
            }
        }
        p.w2_mut().iter_mut().for_each(|w| *w = rng.gen_range(-2.0..2.0));
        p.set_b2(rng.gen_range(-1.0..1.0));
        let batch: Vec<PairExample> = (0..4)
            .map(|_| PairExample {
                xa: random_vector(&mut rng, "w", f, 6),
                xb: random_vector(&mut rng, "w", f, 6),
                label: rng.gen_bool(0.5),
            })
            .collect();
        let (loss, grad) = meta_loss_and_grad(&p, &batch)?;
        let reference = oracle_loss(&p, &batch);
        ensure((loss - reference).abs() <= 1e-10, || {
            format!("instance {inst}: loss {loss} vs reference {reference}")
        })?;
        let mut check = |analytic: f64, plus: &MetaLearnerParams, minus: &MetaLearnerParams, what: String| {
            let numeric = (oracle_loss(plus, &batch) - oracle_loss(minus, &batch)) / (2.0 * EPS);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            ensure(rel <= TOL, || {
                format!("instance {inst} {what}: analytic {analytic} numeric {numeric} rel {rel:.2e}")
            })
        };
        for k in 0..h {
            for r in 0..f {
                let (mut plus, mut minus) = (p.clone(), p.clone());
                plus.set_w1(k, r, p.w1(k, r) + EPS);
                minus.set_w1(k, r, p.w1(k, r) - EPS);
                check(grad.w1(k, r), &plus, &minus, format!("W1[{k},{r}]"))?;
            }
            let (mut plus, mut minus) = (p.clone(), p.clone());
            plus.w2_mut()[k] += EPS;
            minus.w2_mut()[k] -= EPS;
            check(grad.w2()[k], &plus, &minus, format!("w2[{k}]"))?;
        }
        let (mut plus, mut minus) = (p.clone(), p.clone());
        plus.set_b2(p.b2() + EPS);
        minus.set_b2(p.b2() - EPS);
        check(grad.b2(), &plus, &minus, "b2".into())?;
    }

    let p = MetaLearnerParams::init(50, 16, 7)?;
    let expected_same = 1.0 / (1.0 + (-p.b2()).exp());
    for i in 0..1000 {
        let x = random_vector(&mut rng, "w", 50, 20);
        let y = random_vector(&mut rng, "w", 50, 20);
        let xy = meta_forward(&p, &x, &y)?;
        let yx = meta_forward(&p, &y, &x)?;
        ensure(xy.to_bits() == yx.to_bits(), || format!("pair {i}: asymmetric {xy} vs {yx}"))?;
        let c = rng.gen_range(2..50u64);
        let scaled = meta_forward(&p, &x.scaled(c), &y)?;
        ensure((scaled - xy).abs() <= 1e-12, || {
            format!("pair {i}: scaling by {c} moved the score by {:e}", (scaled - xy).abs())
        })?;
        let same = meta_forward(&p, &x, &x)?;
        ensure((same - expected_same).abs() <= 1e-15, || {
            format!("pair {i}: identical input scored {same}, expected {expected_same}")
        })?;
        let reference = 1.0 / (1.0 + (-oracle_logit(&p, &x, &y)).exp());
        ensure((reference - xy).abs() <= 1e-12, || {
            format!("pair {i}: forward {xy} vs dense reference {reference}")
        })?;
    }
    Ok(format!("max gradient rel. error {worst:.1e} over 20 instances; properties hold on 1000 pairs"))
}

fn cosine_counts(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let bm: BTreeMap<u32, u64> = b.counts().iter().copied().collect();
    let dot: f64 = a
        .counts()
        .iter()
        .map(|(r, c)| *c as f64 * bm.get(r).copied().unwrap_or(0) as f64)
        .sum();
    let norm = |x: &FeatureVector| x.counts().iter().map(|(_, c)| (*c as f64).powi(2)).sum::<f64>().sqrt();
    dot / (norm(a) * norm(b))
}

/// Threshold on raw cosine that maximizes F1 on `tune`, applied to `test`.
fn cosine_baseline(tune: &[PairExample], test: &[PairExample]) -> f64 {
    let scored: Vec<(f64, bool)> = tune.iter().map(|e| (cosine_counts(&e.xa, &e.xb), e.label)).collect();
    let mut best = (-1.0, 0.0);
    for &(t, _) in &scored {
        let f1 = BinaryMetrics::from_predictions(scored.iter().map(|&(s, l)| (s >= t, l))).f1;
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    BinaryMetrics::from_predictions(test.iter().map(|e| (cosine_counts(&e.xa, &e.xb) >= best.1, e.label))).f1
}

fn criterion_2() -> Check {
    let mut lines = Vec::new();
    let mut passed = 0;
    for seed in 1..=3u64 {
        let spec = TopicDomainSpec::default();
        let domains = topic_domains(&spec, seed);
        let feature_vocab = build_feature_vocab(&domains[..8], 5000)?;
        let settings = KbSettings {
            subcorpus_bytes: domains[0].to_text().len() / 2,
            seed,
            ..KbSettings::default()
        };
        let knowledge = domains
            .iter()
            .map(|d| DomainKnowledge::build(d, &feature_vocab, &settings))
            .collect::<ldem::Result<Vec<_>>>()?;
        let vectors: Vec<DomainVectors> = knowledge
            .iter()
            .zip(&domains)
            .map(|(k, d)| k.as_vectors(d.domain_id()))
            .collect();
        let mut train = make_pair_examples(&vectors[..8], 300, 1.0, seed)?;
        let test = make_pair_examples(&vectors[8..], 300, 1.0, seed + 100)?;
        let valid = train.split_off(train.len() - train.len() / 7);
        let config = MetaTrainConfig {
            hidden: 64,
            batch_size: 32,
            seed,
            ..MetaTrainConfig::default()
        };
        let model = train_base(feature_vocab.len(), &train, &valid, &config)?;
        let f1 = evaluate(&model.params, &test)?.f1;
        let tune: Vec<PairExample> = train.iter().chain(&valid).cloned().collect();
        let baseline = cosine_baseline(&tune, &test);
        if f1 >= 0.75 && f1 - baseline >= 0.05 {
            passed += 1;
        }
        lines.push(format!("seed {seed}: F1 {f1:.3} vs cosine {baseline:.3}"));
    }
    let detail = format!("{} ({passed}/3 seeds pass)", lines.join(", "));
    if passed >= 2 {
        Ok(detail)
    } else {
        Err(detail.into())
    }
}

fn random_kb_domain<R: Rng>(rng: &mut R, pool: &[String], f: usize) -> DomainKnowledge {
    let n = rng.gen_range(1..=pool.len());
    let words: Vec<&String> = pool.choose_multiple(rng, n).collect();
    let vocab = Vocabulary::from_counts(words.iter().map(|w| (w.as_str(), rng.gen_range(1..100u64))));
    let mut contexts = ContextBag::new();
    for w in &words {
        for _ in 0..rng.gen_range(0..4) {
            let c = words[rng.gen_range(0..words.len())];
            contexts.add(w, c, rng.gen_range(1..5));
        }
    }
    let mut vectors = [BTreeMap::new(), BTreeMap::new()];
    for slot in vectors.iter_mut() {
        for w in &words {
            if rng.gen_bool(0.85) {
                slot.insert(w.to_string(), random_vector(rng, w, f, 6));
            }
        }
    }
    DomainKnowledge {
        vocab,
        contexts,
        vectors,
    }
}

/// Word-major brute force over every (word, past domain) combination.
fn brute_force(
    model: &MetaLearnerParams,
    past: &[(String, DomainKnowledge)],
    new: &DomainKnowledge,
    delta: f64,
) -> ldem::Result<BTreeSet<(String, String, String, u64)>> {
    let mut out = BTreeSet::new();
    for (word, _) in new.vocab.entries() {
        for (id, domain) in past {
            if domain.vocab.rank(word).is_none() {
                continue;
            }
            let (Some(a), Some(b)) = (domain.vectors[0].get(word), new.vectors[0].get(word)) else {
                continue;
            };
            if meta_forward(model, a, b)? >= delta {
                for (c, n) in domain.contexts.get(word).into_iter().flatten() {
                    out.insert((word.clone(), id.clone(), c.clone(), *n));
                }
            }
        }
    }
    Ok(out)
}

fn as_set(r: &RelevantKnowledge) -> BTreeSet<(String, String, String, u64)> {
    r.iter()
        .map(|(w, d, c, n)| (w.to_owned(), d.to_owned(), c.to_owned(), n))
        .collect()
}

fn criterion_3() -> Check {
    let mut rng = rng("c3");
    let deltas = [0.0, 0.5, 0.7, 1.0];
    let f = 12;
    let mut nonempty = [0usize; 4];
    let mut instances = 0;
    let mut full_runs = 0;
    while instances < 40 {
        let pool: Vec<String> = (0..rng.gen_range(f..=200)).map(|i| format!("w{i}")).collect();
        let mut model = MetaLearnerParams::init(f, 6, rng.gen())?;
        model.w2_mut().iter_mut().for_each(|w| *w = rng.gen_range(-3.0..0.0));
        // Some models saturate so that a threshold of 1 is reachable.
        model.set_b2(if rng.gen_bool(0.25) { 40.0 } else { rng.gen_range(0.0..2.5) });
        model.round_to_f32();
        let past: Vec<(String, DomainKnowledge)> = (0..rng.gen_range(1..=5))
            .map(|j| (format!("past{j}"), random_kb_domain(&mut rng, &pool, f)))
            .collect();
        let feature_vocab = Vocabulary::from_counts(pool[..f].iter().zip(0..).map(|(w, i)| (w.as_str(), 1000 - i)));

        // Hand-built new domain, scored directly.
        let new = random_kb_domain(&mut rng, &pool, f);
        let refs: Vec<(&str, &DomainKnowledge)> = past.iter().map(|(id, k)| (id.as_str(), k)).collect();
        let mut previous: Option<BTreeSet<_>> = None;
        for (i, &delta) in deltas.iter().enumerate() {
            let (got, _) = aggregate(&refs, &new, &model, delta);
            let got = as_set(&got);
            let want = brute_force(&model, &past, &new, delta)?;
            ensure(got == want, || {
                format!("instance {instances}, delta {delta}: {} entries vs oracle {}", got.len(), want.len())
            })?;
            if let Some(prev) = &previous {
                ensure(got.is_subset(prev), || format!("instance {instances}: not monotone at delta {delta}"))?;
            }
            nonempty[i] += usize::from(!got.is_empty());
            previous = Some(got);
        }

        // Full retrieval from a raw new-domain corpus, with adaptation disabled.
        let mut kb = KnowledgeBase::new(
            feature_vocab,
            Some(model.clone()),
            KbSettings {
                min_count: 1,
                subcorpus_bytes: 1 << 20,
                ..KbSettings::default()
            },
        )?;
        for (id, k) in &past {
            kb.add_domain(id.clone(), k.clone())?;
        }
        let docs: Vec<Vec<String>> = (0..30)
            .map(|_| (0..12).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect())
            .collect();
        let corpus = DomainCorpus::new("new", docs)?;
        for &delta in &deltas {
            let config = RetrievalConfig {
                delta,
                adapt: AdaptConfig {
                    train: MetaTrainConfig {
                        epochs: 0,
                        ..MetaTrainConfig::default()
                    },
                    min_examples: 0,
                    ..AdaptConfig::default()
                },
            };
            let out = match retrieve_relevant(&kb, &corpus, &config) {
                Ok(out) => out,
                Err(Error::NoPairs(_)) => break,
                Err(e) => return Err(e.into()),
            };
            let want = brute_force(&model, &past, &out.knowledge, delta)?;
            ensure(as_set(&out.relevant) == want, || {
                format!("instance {instances}, delta {delta}: retrieve_relevant disagrees with oracle")
            })?;
            full_runs += 1;
        }
        instances += 1;
    }
    Ok(format!(
        "40 randomized KBs, {full_runs} full retrievals; non-empty results per delta {deltas:?}: {nonempty:?}; monotone"
    ))
}

fn mean_cosine(model: &EmbeddingModel, a: &[String], b: &[String], same: bool) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if same && j <= i {
                continue;
            }
            if let Some(c) = model.cosine(x, y) {
                total += c;
                n += 1;
            }
        }
    }
    total / n as f64
}

fn bits(model: &EmbeddingModel) -> Vec<u64> {
    (0..model.len())
        .flat_map(|r| model.input_row(r).iter().chain(model.output_row(r).unwrap_or(&[])))
        .map(|x| x.to_bits())
        .collect()
}

fn criterion_4() -> Check {
    let (corpus, topics) = two_topic_corpus(200_000, 250, 7);
    let config = SgConfig {
        dim: 50,
        epochs: 5,
        seed: 3,
        ..SgConfig::default()
    };
    let first = train_skipgram(&corpus, &config)?;
    let second = train_skipgram(&corpus, &config)?;
    let within = (mean_cosine(&first.model, &topics[0], &topics[0], true)
        + mean_cosine(&first.model, &topics[1], &topics[1], true))
        / 2.0;
    let cross = mean_cosine(&first.model, &topics[0], &topics[1], false);
    ensure(within - cross >= 0.2, || {
        format!("within {within:.3} - cross {cross:.3} < 0.2")
    })?;
    let objective: Vec<f64> = first.progress.iter().map(|p| p.objective).collect();
    ensure(objective.len() == 6 && objective.windows(2).all(|w| w[1] > w[0]), || {
        format!("objective not strictly increasing: {objective:?}")
    })?;
    ensure(bits(&first.model) == bits(&second.model) && first.model.vocab() == second.model.vocab(), || {
        "two single-worker runs differ".into()
    })?;
    Ok(format!(
        "within {within:.3}, cross {cross:.3}; objective {:.4} -> {:.4}; runs bit-identical",
        objective[0], objective[5]
    ))
}

fn criterion_5() -> Check {
    let mut cos_wins = 0;
    let mut acc_wins = 0;
    let mut margins = Vec::new();
    for seed in 1..=10u64 {
        let fx = polysemy_fixture(seed);
        let config = SgConfig {
            dim: 50,
            seed,
            ..SgConfig::default()
        };
        let plain = train_skipgram(&fx.corpus, &config)?.model;
        let augmented = train_augmented(&fx.corpus, &fx.relevant, &config)?.model;
        let missing = || format!("{} or {} missing from the vocabulary", fx.ambiguous, fx.anchor);
        let cp = plain.cosine(&fx.ambiguous, &fx.anchor).ok_or_else(missing)?;
        let ca = augmented.cosine(&fx.ambiguous, &fx.anchor).ok_or_else(missing)?;
        cos_wins += usize::from(ca > cp);
        let labels = fx.dataset.labels();
        let classifier = ClassifierConfig::default();
        let score = |name: &str, m: &EmbeddingModel| {
            let features = featurize_documents(fx.dataset.documents(), m);
            train_eval_classifier(name, &features, &labels, fx.dataset.classes(), &[seed], &classifier)
                .map(|r| r.mean)
        };
        let ap = score("plain", &plain)?;
        let aa = score("augmented", &augmented)?;
        acc_wins += usize::from(aa >= ap);
        margins.push(aa - ap);
    }
    let mean_margin = margins.iter().sum::<f64>() / margins.len() as f64;
    let detail = format!(
        "cosine improved in {cos_wins}/10 seeds, accuracy augmented >= plain in {acc_wins}/10 (mean gain {mean_margin:.3})"
    );
    if cos_wins >= 8 && acc_wins >= 8 {
        Ok(detail)
    } else {
        Err(detail.into())
    }
}

fn criterion_6() -> Check {
    let (corpus, _) = two_topic_corpus(30_000, 30, 11);
    for seed in [1, 2, 3] {
        let config = SgConfig {
            dim: 20,
            seed,
            ..SgConfig::default()
        };
        let plain = train_skipgram(&corpus, &config)?;
        let empty = train_augmented(&corpus, &RelevantKnowledge::new(), &config)?;
        ensure(bits(&plain.model) == bits(&empty.model), || format!("seed {seed}: empty knowledge changed the model"))?;
        // Knowledge whose every word is outside the vocabulary contributes nothing either.
        let mut unknown = RelevantKnowledge::new();
        unknown.add("zzz-unknown", "past", "alpha0", 5);
        let dropped = train_augmented(&corpus, &unknown, &config)?;
        ensure(dropped.dropped_relevant == 5, || "dropped pairs not counted".into())?;
        ensure(bits(&plain.model) == bits(&dropped.model), || {
            format!("seed {seed}: fully dropped knowledge changed the model")
        })?;
    }
    Ok("bit-identical for 3 seeds, with empty and fully dropped knowledge".into())
}

fn criterion_7() -> Check {
    let spec = TopicDomainSpec {
        domains: 4,
        documents: 200,
        ..TopicDomainSpec::default()
    };
    let domains = topic_domains(&spec, 5);
    let (past, new) = (&domains[..3], &domains[3]);
    let borrowed = tfidf_retrieve(past, new, 0.18)?;
    ensure(!borrowed.is_empty(), || "nothing borrowed from overlapping domains".into())?;

    let (other, _) = two_topic_corpus(2000, 20, 3);
    let disjoint = tfidf_retrieve(std::slice::from_ref(&other), new, 0.18)?;
    ensure(disjoint.is_empty(), || format!("{} sentences borrowed across disjoint vocabularies", disjoint.len()))?;

    let key = |b: &[ldem::retrieval::BorrowedSentence]| {
        let mut v: Vec<(String, Vec<String>, u64)> = b
            .iter()
            .map(|s| (s.domain.clone(), s.tokens.clone(), s.similarity.to_bits()))
            .collect();
        v.sort();
        v
    };
    let mut rng = rng("c7");
    for _ in 0..3 {
        let shuffled: Vec<DomainCorpus> = past
            .iter()
            .map(|d| {
                let mut docs = d.documents().to_vec();
                docs.shuffle(&mut rng);
                DomainCorpus::new(d.domain_id(), docs)
            })
            .collect::<ldem::Result<_>>()?;
        let mut new_docs = new.documents().to_vec();
        new_docs.shuffle(&mut rng);
        let new_shuffled = DomainCorpus::new(new.domain_id(), new_docs)?;
        let again = tfidf_retrieve(&shuffled, &new_shuffled, 0.18)?;
        ensure(key(&again) == key(&borrowed), || "sentence order changed the borrowed set".into())?;
    }
    let total: usize = past.iter().map(|d| d.documents().len()).sum();
    Ok(format!(
        "{} of {total} sentences borrowed from overlapping domains, 0 from disjoint; order invariant",
        borrowed.len()
    ))
}

fn random_kb<R: Rng>(rng: &mut R) -> ldem::Result<KnowledgeBase> {
    let f = rng.gen_range(1..20);
    let feature_vocab = Vocabulary::from_counts((0..f).map(|i| (format!("f{i}"), rng.gen_range(1..50u64))));
    let model = if rng.gen_bool(0.5) {
        let mut m = MetaLearnerParams::init(f, rng.gen_range(1..8), rng.gen())?;
        m.round_to_f32();
        Some(m)
    } else {
        None
    };
    let settings = KbSettings {
        feature_window: rng.gen_range(1..8),
        context_window: rng.gen_range(1..8),
        subcorpus_bytes: rng.gen_range(1..1 << 24),
        min_count: rng.gen_range(1..10),
        seed: rng.gen(),
    };
    let mut kb = KnowledgeBase::new(feature_vocab, model, settings)?;
    let pool: Vec<String> = (0..rng.gen_range(1..40)).map(|i| format!("wörd{i}")).collect();
    let n = rng.gen_range(0..5);
    for j in 0..n {
        kb.add_domain(format!("domain-{j}"), random_kb_domain(rng, &pool, f))?;
    }
    let meta: Vec<String> = (0..n).filter(|_| rng.gen_bool(0.5)).map(|j| format!("domain-{j}")).collect();
    kb.set_meta_domains(meta)?;
    Ok(kb)
}

fn criterion_8() -> Check {
    let mut rng = rng("c8");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for i in 0..100 {
        let kb = random_kb(&mut rng)?;
        let path = dir.path().join(format!("kb{i}"));
        kb.save(&path)?;
        let loaded = KnowledgeBase::load(&path)?;
        ensure(loaded == kb, || format!("knowledge base {i} changed in a round trip"))?;

        let words = rng.gen_range(1..30);
        let dim = rng.gen_range(1..12);
        let vocab = Vocabulary::from_counts((0..words).map(|w| (format!("tok{w}"), rng.gen_range(1..100u64))));
        let input: Vec<f64> = (0..words * dim).map(|_| rng.gen_range(-2.0..2.0) * 10f64.powi(rng.gen_range(-6..3))).collect();
        let model = EmbeddingModel::from_parts(vocab, dim, input, None)?;
        let text = embeddings_to_text(&model);
        let back = embeddings_from_text(&text)?;
        ensure(back.vocab().words().eq(model.vocab().words()) && back.dim() == dim, || {
            format!("embedding {i}: vocabulary or dimension changed")
        })?;
        for r in 0..words {
            for (a, b) in model.input_row(r).iter().zip(back.input_row(r)) {
                ensure((a - b).abs() <= 5e-9 * a.abs(), || format!("embedding {i}: {a} read back as {b}"))?;
            }
        }
        ensure(embeddings_to_text(&back) == text, || format!("embedding {i}: text not stable"))?;
    }

    let kb = random_kb(&mut rng)?;
    let path = dir.path().join("corrupt");
    kb.save(&path)?;
    let vocab_file = path.join("feature_vocab.tsv");
    let mut bytes = std::fs::read(&vocab_file).map_err(|e| e.to_string())?;
    bytes.push(b'\n');
    bytes.extend_from_slice(b"extra\t1\n");
    std::fs::write(&vocab_file, bytes).map_err(|e| e.to_string())?;
    match KnowledgeBase::load(&path) {
        Err(Error::Checksum(file)) => Ok(format!(
            "100 KBs and 100 embedding files round-trip; corrupted file rejected ({})",
            file.rsplit('/').next().unwrap_or(&file)
        )),
        other => Err(format!("corrupted KB loaded without a checksum error: {:?}", other.map(|_| ())).into()),
    }
}

fn criterion_9() -> Check {
    let mut rng = rng("c9");
    let draws = 1_000_000;
    let cases: Vec<Vec<u64>> = vec![vec![4, 1], (1..=20).map(|r| 1000 / r).collect()];
    let mut worst: f64 = 0.0;
    let mut pa = 0.0;
    for freqs in &cases {
        let vocab = Vocabulary::from_counts(freqs.iter().enumerate().map(|(i, f)| (format!("v{i:02}"), *f)));
        let sampler = NegativeSampler::new(&vocab, 0.75, 10_000_000)?;
        let mut counts = vec![0u64; vocab.len()];
        for _ in 0..draws {
            counts[sampler.sample(&mut rng) as usize] += 1;
        }
        let z: f64 = vocab.entries().iter().map(|(_, f)| (*f as f64).powf(0.75)).sum();
        for (r, (_, f)) in vocab.entries().iter().enumerate() {
            let expected = (*f as f64).powf(0.75) / z;
            let observed = counts[r] as f64 / draws as f64;
            worst = worst.max((expected - observed).abs());
            if freqs.len() == 2 && r == 0 {
                pa = observed;
            }
        }
    }
    ensure((pa - 0.7388).abs() <= 0.01, || format!("p(a) = {pa:.4}"))?;
    if worst <= 0.01 {
        Ok(format!("p(a) = {pa:.4}; max absolute deviation {worst:.4}"))
    } else {
        Err(format!("max absolute deviation {worst:.4}").into())
    }
}

fn criterion_10() -> Check {
    let (f, h) = (5000, 200);
    let mut rng = rng("c10");
    // Context words follow a Zipf law over the feature vocabulary; each vector
    // collects 100 context tokens, about 70 distinct.
    let weights: Vec<f64> = (1..=f).map(|r| 1.0 / r as f64).collect();
    let zipf = rand::distributions::WeightedIndex::new(&weights).map_err(|e| e.to_string())?;
    let vectors: Vec<FeatureVector> = (0..4000)
        .map(|i| {
            let ranks = (0..100).map(|_| (rand::distributions::Distribution::sample(&zipf, &mut rng) as u32, 1));
            FeatureVector::new(format!("w{i}"), ranks)
        })
        .collect();
    let nnz = vectors.iter().map(|v| v.counts().len()).sum::<usize>() as f64 / vectors.len() as f64;
    let mut bytes = Vec::new();
    MetaLearnerParams::init(f, h, 1)?
        .write_to(&mut bytes)
        .map_err(|e| e.to_string())?;
    let model = MetaLearnerParams::read_from(bytes.as_slice())?;
    let pairs: Vec<(&FeatureVector, &FeatureVector)> = (0..100_000)
        .map(|i| (&vectors[i % 4000], &vectors[(i * 7919 + 13) % 4000]))
        .collect();
    let mut best = Duration::MAX;
    for _ in 0..5 {
        let start = Instant::now();
        let scores = batch_inference(&model, &pairs);
        best = best.min(start.elapsed());
        ensure(scores.iter().all(|s| s.is_ok()), || "scoring failed".into())?;
    }
    let rate = pairs.len() as f64 / best.as_secs_f64();

    // Parallel scoring on several threads must equal the sequential loop.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .map_err(|e| e.to_string())?;
    let mut wide = MetaLearnerParams::init(f, h, 2)?;
    wide.set_b2(0.1);
    for m in [&model, &wide] {
        let parallel = pool.install(|| batch_inference(m, &pairs[..10_000]));
        let sequential = sequential_inference(m, &pairs[..10_000]);
        let same = parallel
            .iter()
            .zip(&sequential)
            .all(|(a, b)| matches!((a, b), (Ok(x), Ok(y)) if x.to_bits() == y.to_bits()));
        ensure(same, || "parallel scores differ from sequential".into())?;
    }
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let detail = format!(
        "{rate:.0} pairs/s on {cores} core(s), {nnz:.0} nonzeros per vector; parallel == sequential on 10k pairs"
    );
    if rate >= 100_000.0 {
        Ok(detail)
    } else {
        Err(detail.into())
    }
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("meta-learner correctness", criterion_1),
        ("synthetic meta-learning fidelity", criterion_2),
        ("retrieval oracle equivalence", criterion_3),
        ("skip-gram sanity", criterion_4),
        ("augmentation effect", criterion_5),
        ("empty knowledge equivalence", criterion_6),
        ("tf-idf baseline", criterion_7),
        ("persistence", criterion_8),
        ("negative sampling distribution", criterion_9),
        ("inference throughput", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{secs:.1}s]", i + 1),
            Err(Failure(detail)) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
