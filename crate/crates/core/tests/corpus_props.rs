use std::collections::BTreeMap;

use ldem::corpus::{
    build_feature_vectors, build_vocab, scan_context_words, serialized_len, subsample_corpus,
    DomainCorpus, Vocabulary,
};
use proptest::prelude::*;

fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<String>>> {
    let word = (0..8u8).prop_map(|i| format!("t{i}"));
    prop::collection::vec(prop::collection::vec(word, 1..15), 1..12)
}

/// Every (center, neighbour) occurrence pair within `window` positions of the
/// same document, counted one by one.
fn naive_bag(docs: &[Vec<String>], keep: impl Fn(&str) -> bool, window: usize) -> BTreeMap<(String, String), u64> {
    let mut out = BTreeMap::new();
    for doc in docs {
        for (i, w) in doc.iter().enumerate() {
            if !keep(w) {
                continue;
            }
            for (j, c) in doc.iter().enumerate() {
                if i != j && i.abs_diff(j) <= window && keep(c) {
                    *out.entry((w.clone(), c.clone())).or_insert(0) += 1;
                }
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn context_bags_match_brute_force(docs in corpus_strategy(), window in 1usize..5, min_count in 1u64..4) {
        let corpus = DomainCorpus::new("d", docs.clone()).unwrap();
        let vocab = build_vocab(&corpus, min_count).unwrap();
        let bag = scan_context_words(&corpus, &vocab, window).unwrap();
        let flat: BTreeMap<(String, String), u64> = bag
            .iter()
            .flat_map(|(w, ctx)| ctx.iter().map(move |(c, n)| ((w.to_owned(), c.clone()), *n)))
            .collect();
        prop_assert_eq!(flat, naive_bag(&docs, |w| vocab.contains(w), window));
    }

    #[test]
    fn feature_vectors_match_brute_force(docs in corpus_strategy(), window in 1usize..4, f in 1usize..8) {
        let corpus = DomainCorpus::new("d", docs.clone()).unwrap();
        let mut feature_vocab = build_vocab(&corpus, 1).unwrap();
        feature_vocab.truncate(f);
        let vectors = build_feature_vectors(&corpus, &feature_vocab, window).unwrap();
        let expected = naive_bag(&docs, |_| true, window);
        for (word, v) in &vectors {
            prop_assert!(!v.is_zero());
            for &(r, c) in v.counts() {
                let feature = feature_vocab.word(r as usize).to_owned();
                prop_assert_eq!(Some(&c), expected.get(&(word.clone(), feature)));
            }
        }
        // Words with any feature context have a vector.
        for ((w, c), _) in &expected {
            if feature_vocab.contains(c) {
                prop_assert!(vectors.contains_key(w));
            }
        }
    }

    #[test]
    fn vocabulary_ignores_document_order(docs in corpus_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = docs.clone();
        shuffled.shuffle(&mut ldem::rng::stream(seed, "shuffle"));
        let a = build_vocab(&DomainCorpus::new("d", docs).unwrap(), 1).unwrap();
        let b = build_vocab(&DomainCorpus::new("d", shuffled).unwrap(), 1).unwrap();
        prop_assert_eq!(a.entries(), b.entries());
    }

    #[test]
    fn subcorpora_respect_the_byte_budget(docs in corpus_strategy(), target in 1usize..200, seed in any::<u64>()) {
        let corpus = DomainCorpus::new("d", docs.clone()).unwrap();
        match subsample_corpus(&corpus, target, seed) {
            Ok((one, two)) => {
                for sub in [&one, &two] {
                    let bytes: usize = sub.documents().iter().map(|d| serialized_len(d)).sum();
                    prop_assert!(bytes <= target);
                    prop_assert!(sub.documents().iter().all(|d| docs.contains(d)));
                }
            }
            Err(e) => prop_assert!(docs.iter().all(|d| serialized_len(d) > target), "{}", e),
        }
    }
}

#[test]
fn vocabulary_order_is_frequency_then_word() {
    let v = Vocabulary::from_counts([("b", 2u64), ("a", 2), ("c", 5)]);
    assert_eq!(v.words().collect::<Vec<_>>(), ["c", "a", "b"]);
}
