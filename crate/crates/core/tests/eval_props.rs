use ldem::corpus::Vocabulary;
use ldem::embedding::EmbeddingModel;
use ldem::eval::{featurize_documents, nearest_neighbors, train_eval_classifier, ClassifierConfig, LabeledDataset};
use proptest::prelude::*;

proptest! {
    #[test]
    fn neighbours_ignore_global_scaling(rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 3..12), c in 0.1f64..50.0) {
        let vocab = Vocabulary::from_counts((0..rows.len()).map(|i| (format!("w{i}"), 5u64)));
        let model = EmbeddingModel::from_parts(vocab, 3, rows.concat(), None).unwrap();
        let scaled = model.scaled(c);
        let a = nearest_neighbors(&model, "w0", 5);
        let b = nearest_neighbors(&scaled, "w0", 5);
        if let (Ok(a), Ok(b)) = (&a, &b) {
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x.1 - y.1).abs() < 1e-9);
            }
        } else {
            prop_assert_eq!(a.is_ok(), b.is_ok());
        }
    }
}

#[test]
fn report_mean_does_not_depend_on_seed_order() {
    let text = (0..60)
        .map(|i| if i % 2 == 0 { format!("pos\tgood great w{i}") } else { format!("neg\tbad awful w{i}") })
        .collect::<Vec<_>>()
        .join("\n");
    let data = LabeledDataset::parse(&text).unwrap();
    let vocab = Vocabulary::from_counts([("good", 1u64), ("great", 1), ("bad", 1), ("awful", 1)]);
    let model = EmbeddingModel::from_parts(vocab, 2, vec![1.0, 0.0, 0.9, 0.1, 0.0, 1.0, 0.1, 0.9], None).unwrap();
    let features = featurize_documents(data.documents(), &model);
    let cfg = ClassifierConfig::default();
    let a = train_eval_classifier("m", &features, &data.labels(), data.classes(), &[1, 2, 3, 4], &cfg).unwrap();
    let b = train_eval_classifier("m", &features, &data.labels(), data.classes(), &[4, 3, 2, 1], &cfg).unwrap();
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    assert!(a.mean > 0.95);
}
