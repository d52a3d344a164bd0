//! Seeded synthetic corpora for tests, benchmarks and demos.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::DomainCorpus;
use crate::eval::LabeledDataset;
use crate::retrieval::RelevantKnowledge;
use crate::rng;

/// Shape of a family of topic-mixture domains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopicDomainSpec {
    pub domains: usize,
    pub topics: usize,
    /// Words per topic with elevated probability.
    pub topic_words: usize,
    /// Frequent words shared by every topic.
    pub background_words: usize,
    /// Probability mass of the background words in each topic.
    pub background_mass: f64,
    /// Topics mixed into each domain (the first is dominant).
    pub topics_per_domain: usize,
    pub documents: usize,
    pub doc_len: usize,
    /// Probability that a token follows its topic's bigram successor of the previous token.
    pub bigram_rate: f64,
}

impl Default for TopicDomainSpec {
    fn default() -> Self {
        TopicDomainSpec {
            domains: 12,
            topics: 8,
            topic_words: 40,
            background_words: 40,
            background_mass: 0.75,
            topics_per_domain: 3,
            documents: 1500,
            doc_len: 25,
            bigram_rate: 0.2,
        }
    }
}

struct Topic {
    unigram: WeightedIndex<f64>,
    successor: Vec<usize>,
}

/// Domains whose documents draw every token from the domain's own topic
/// mixture over one shared vocabulary. Words keep the same surface form in
/// every topic, so a word's contexts differ across domains only through the
/// mixture.
pub fn topic_domains(spec: &TopicDomainSpec, seed: u64) -> Vec<DomainCorpus> {
    let mut rng = rng::stream(seed, "topic-domains");
    let vocab: Vec<String> = (0..spec.background_words)
        .map(|i| format!("bg{i}"))
        .chain((0..spec.topics * spec.topic_words).map(|i| format!("w{i}")))
        .collect();
    let n = vocab.len();
    let topics: Vec<Topic> = (0..spec.topics)
        .map(|t| {
            let mut weights = vec![0.0; n];
            let bg_total: f64 = (1..=spec.background_words).map(|r| 1.0 / r as f64).sum();
            for r in 0..spec.background_words {
                weights[r] = spec.background_mass / (r + 1) as f64 / bg_total;
            }
            // Core words of this topic, plus a thin tail over every other topic word.
            let core = spec.background_words + t * spec.topic_words;
            let tail_mass = 0.05 * (1.0 - spec.background_mass);
            let core_mass = (1.0 - spec.background_mass) - tail_mass;
            let core_total: f64 = (1..=spec.topic_words).map(|r| 1.0 / (r as f64).sqrt()).sum();
            let mut order: Vec<usize> = (0..spec.topic_words).collect();
            order.shuffle(&mut rng);
            for (r, i) in order.into_iter().enumerate() {
                weights[core + i] = core_mass / ((r + 1) as f64).sqrt() / core_total;
            }
            let others = n - spec.background_words - spec.topic_words;
            for (i, w) in weights.iter_mut().enumerate().skip(spec.background_words) {
                if i < core || i >= core + spec.topic_words {
                    *w = tail_mass / others.max(1) as f64;
                }
            }
            let successor = (0..n)
                .map(|_| core + rng.gen_range(0..spec.topic_words))
                .collect();
            Topic {
                unigram: WeightedIndex::new(&weights).expect("positive weights"),
                successor,
            }
        })
        .collect();

    (0..spec.domains)
        .map(|d| {
            let mut picked: Vec<usize> = (0..spec.topics).collect();
            picked.shuffle(&mut rng);
            picked.truncate(spec.topics_per_domain.clamp(1, spec.topics));
            // Dominant topic first, the rest share the remainder.
            let mut mix = vec![0.0; spec.topics];
            let k = picked.len();
            for (i, t) in picked.iter().enumerate() {
                mix[*t] = if k == 1 {
                    1.0
                } else if i == 0 {
                    0.6
                } else {
                    0.4 / (k - 1) as f64
                };
            }
            let mixture = WeightedIndex::new(&mix).expect("positive mixture");
            let docs = (0..spec.documents)
                .map(|_| {
                    let mut doc = Vec::with_capacity(spec.doc_len);
                    let mut prev: Option<usize> = None;
                    for _ in 0..spec.doc_len {
                        let topic = &topics[mixture.sample(&mut rng)];
                        let w = match prev {
                            Some(p) if rng.gen_bool(spec.bigram_rate) => topic.successor[p],
                            _ => topic.unigram.sample(&mut rng),
                        };
                        doc.push(vocab[w].clone());
                        prev = Some(w);
                    }
                    doc
                })
                .collect();
            DomainCorpus::new(format!("domain{d:02}"), docs).expect("non-empty id")
        })
        .collect()
}

/// Two sublanguages with disjoint vocabularies; each document uses one.
/// Returns the corpus and the word lists of both topics.
pub fn two_topic_corpus(tokens: usize, words_per_topic: usize, seed: u64) -> (DomainCorpus, [Vec<String>; 2]) {
    let mut rng = rng::stream(seed, "two-topic");
    let topics: [Vec<String>; 2] = [
        (0..words_per_topic).map(|i| format!("alpha{i}")).collect(),
        (0..words_per_topic).map(|i| format!("beta{i}")).collect(),
    ];
    let weights: Vec<f64> = (1..=words_per_topic).map(|r| 1.0 / (r as f64).sqrt()).collect();
    let dist = WeightedIndex::new(&weights).expect("positive weights");
    let doc_len = 20;
    let docs = (0..tokens.div_ceil(doc_len))
        .map(|_| {
            let t = &topics[rng.gen_range(0..2)];
            (0..doc_len).map(|_| t[dist.sample(&mut rng)].clone()).collect()
        })
        .collect();
    (
        DomainCorpus::new("two-topic", docs).expect("non-empty id"),
        topics,
    )
}

/// A small new-domain corpus where an ambiguous word is seen only in its
/// minority sense, borrowed knowledge supplying its majority-sense contexts,
/// and a 3-class labelled set built from words that are rare in the corpus.
#[derive(Debug, Clone)]
pub struct PolysemyFixture {
    pub corpus: DomainCorpus,
    pub relevant: RelevantKnowledge,
    pub dataset: LabeledDataset,
    /// The ambiguous word.
    pub ambiguous: String,
    /// A frequent word of the sense supplied by the borrowed contexts.
    pub anchor: String,
}

pub fn polysemy_fixture(seed: u64) -> PolysemyFixture {
    let mut rng = rng::stream(seed, "polysemy");
    let classes = ["code", "coffee", "travel"];
    let common: Vec<Vec<String>> = classes
        .iter()
        .map(|c| (0..15).map(|i| format!("{c}{i}")).collect())
        .collect();
    // Words that are rare in the corpus; the labelled set is built from these.
    let rare: Vec<Vec<String>> = classes
        .iter()
        .map(|c| (0..30).map(|i| format!("{c}rare{i}")).collect())
        .collect();
    let filler: Vec<String> = (0..20).map(|i| format!("the{i}")).collect();
    let ambiguous = "java".to_string();
    let anchor = common[0][0].clone();

    let pick = |rng: &mut rand_chacha::ChaCha8Rng, v: &[String]| v[rng.gen_range(0..v.len())].clone();
    let mut docs: Vec<Vec<String>> = Vec::new();
    for i in 0..1800 {
        let c = i % 3;
        let doc: Vec<String> = (0..12)
            .map(|_| {
                if rng.gen_bool(0.25) {
                    pick(&mut rng, &filler)
                } else {
                    pick(&mut rng, &common[c])
                }
            })
            .collect();
        docs.push(doc);
    }
    // The ambiguous word appears a few times, only among coffee words.
    for _ in 0..5 {
        let mut doc: Vec<String> = (0..8).map(|_| pick(&mut rng, &common[1])).collect();
        doc.insert(4, ambiguous.clone());
        docs.push(doc);
    }
    // Each rare word appears five times, surrounded by filler only.
    for class_words in &rare {
        for w in class_words {
            for _ in 0..5 {
                let mut doc: Vec<String> = (0..6).map(|_| pick(&mut rng, &filler)).collect();
                doc.insert(3, w.clone());
                docs.push(doc);
            }
        }
    }
    docs.shuffle(&mut rng);
    let corpus = DomainCorpus::new("new-domain", docs).expect("non-empty id");

    let mut relevant = RelevantKnowledge::new();
    for w in &common[0][..8] {
        relevant.add(&ambiguous, "programming", w, 25);
    }
    for (c, words) in rare.iter().enumerate() {
        for w in words {
            for ctx in common[c].choose_multiple(&mut rng, 6) {
                relevant.add(w, &format!("past-{}", classes[c]), ctx, rng.gen_range(3..7));
            }
        }
    }

    let mut examples = Vec::new();
    for (c, words) in rare.iter().enumerate() {
        for _ in 0..60 {
            let doc: Vec<String> = (0..3).map(|_| pick(&mut rng, words)).collect();
            examples.push((doc, classes[c].to_string()));
        }
    }
    examples.shuffle(&mut rng);
    PolysemyFixture {
        corpus,
        relevant,
        dataset: LabeledDataset::new(examples),
        ambiguous,
        anchor,
    }
}
