use ldem::corpus::{DomainCorpus, Vocabulary};
use ldem::embedding::{
    concat_embeddings, embeddings_from_text, embeddings_to_text, mean_objective, objective_gradient,
    sample_terms, sgns_gradients, sgns_objective, train_skipgram, EmbeddingModel, MissingPolicy, SgConfig,
};
use ldem::synthetic::two_topic_corpus;
use proptest::prelude::*;

fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d)
}

proptest! {
    #[test]
    fn sgns_gradients_match_finite_differences(
        u in vec_strategy(8),
        v in vec_strategy(8),
        negs in prop::collection::vec(vec_strategy(8), 1..6),
    ) {
        let eps = 1e-6;
        let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let (gu, gv, gn) = sgns_gradients(&u, &v, &refs);
        let close = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6) <= 1e-4;
        for i in 0..8 {
            let f = |du: f64, dv: f64| {
                let mut u2 = u.clone();
                let mut v2 = v.clone();
                u2[i] += du;
                v2[i] += dv;
                sgns_objective(&u2, &v2, &refs)
            };
            let nu = (f(eps, 0.0) - f(-eps, 0.0)) / (2.0 * eps);
            let nv = (f(0.0, eps) - f(0.0, -eps)) / (2.0 * eps);
            prop_assert!(close(gu[i], nu), "u[{}]: {} vs {}", i, gu[i], nu);
            prop_assert!(close(gv[i], nv), "v[{}]: {} vs {}", i, gv[i], nv);
            for (k, g) in gn.iter().enumerate() {
                let mut bumped = negs.clone();
                bumped[k][i] += eps;
                let plus = sgns_objective(&u, &v, &bumped.iter().map(Vec::as_slice).collect::<Vec<_>>());
                bumped[k][i] -= 2.0 * eps;
                let minus = sgns_objective(&u, &v, &bumped.iter().map(Vec::as_slice).collect::<Vec<_>>());
                let n = (plus - minus) / (2.0 * eps);
                prop_assert!(close(g[i], n), "neg {}[{}]: {} vs {}", k, i, g[i], n);
            }
        }
    }

    #[test]
    fn small_full_batch_step_never_decreases_the_objective(seed in 0u64..1000) {
        let docs = vec!["a b c d e a b".split(' ').map(String::from).collect::<Vec<_>>(); 3];
        let corpus = DomainCorpus::new("five", docs).unwrap();
        let cfg = SgConfig { dim: 6, min_count: 1, epochs: 1, seed, neg_table_size: 1000, ..SgConfig::default() };
        let mut model = train_skipgram(&corpus, &cfg).unwrap().model;
        let terms = sample_terms(&corpus, model.vocab(), &cfg, 40).unwrap();
        let before = mean_objective(&model, &terms);
        let (gin, gout) = objective_gradient(&model, &terms);
        model.apply_gradient(&gin, &gout, 1e-3);
        prop_assert!(mean_objective(&model, &terms) >= before);
    }

    #[test]
    fn text_round_trip_preserves_vectors(
        rows in prop::collection::vec(vec_strategy(4), 1..10),
        scale in -8i32..4,
    ) {
        let vocab = Vocabulary::from_counts((0..rows.len()).map(|i| (format!("w{i}"), 10 + i as u64)));
        let input: Vec<f64> = rows.iter().flatten().map(|x| x * 10f64.powi(scale)).collect();
        let model = EmbeddingModel::from_parts(vocab, 4, input, None).unwrap();
        let back = embeddings_from_text(&embeddings_to_text(&model)).unwrap();
        prop_assert!(back.vocab().words().eq(model.vocab().words()));
        for r in 0..model.len() {
            for (a, b) in model.input_row(r).iter().zip(back.input_row(r)) {
                prop_assert!((a - b).abs() <= 5e-9 * a.abs());
            }
        }
    }
}

#[test]
fn concatenation_zero_fills_missing_words() {
    let a = EmbeddingModel::from_parts(Vocabulary::from_counts([("x", 2u64), ("y", 1)]), 2, vec![1.0, 0.0, 0.5, 0.5], None).unwrap();
    let b = EmbeddingModel::from_parts(Vocabulary::from_counts([("x", 3u64), ("z", 1)]), 1, vec![5.0, 7.0], None).unwrap();
    let c = concat_embeddings(&a, &b, MissingPolicy::ZeroFill).unwrap();
    assert_eq!(c.dim(), 3);
    assert_eq!(c.vector("x").unwrap(), [1.0, 0.0, 5.0]);
    assert_eq!(c.vector("y").unwrap(), [0.5, 0.5, 0.0]);
    assert_eq!(c.vector("z").unwrap(), [0.0, 0.0, 7.0]);
    assert!(concat_embeddings(&a, &b, MissingPolicy::Strict).is_err());
}

#[test]
fn parallel_workers_still_separate_topics() {
    let (corpus, topics) = two_topic_corpus(60_000, 40, 4);
    let cfg = SgConfig { dim: 30, workers: 4, seed: 2, ..SgConfig::default() };
    let model = train_skipgram(&corpus, &cfg).unwrap().model;
    let mean = |a: &[String], b: &[String]| {
        let mut s = 0.0;
        let mut n = 0;
        for x in a {
            for y in b {
                if x != y {
                    s += model.cosine(x, y).unwrap();
                    n += 1;
                }
            }
        }
        s / n as f64
    };
    let within = (mean(&topics[0], &topics[0]) + mean(&topics[1], &topics[1])) / 2.0;
    assert!(within - mean(&topics[0], &topics[1]) >= 0.2);
}
