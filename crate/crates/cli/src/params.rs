//! Tunable parameters of each command.
//!
//! Every parameter exists twice: as an optional layer filled from the command
//! line, the environment or a config-file section, and as a resolved value
//! with the default applied. Layers stack with [`over`](BuildKbLayer::over).

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

macro_rules! params {
    ($layer:ident => $resolved:ident {
        $( $field:ident : $ty:ty = $default:expr, $env:literal, $help:literal; )*
    }) => {
        #[derive(Debug, Clone, Default, clap::Args, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $layer {
            $(
                #[arg(long, env = $env, help = concat!($help, " [default: ", stringify!($default), "]"))]
                pub $field: Option<$ty>,
            )*
        }

        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct $resolved {
            $( pub $field: $ty, )*
        }

        impl $layer {
            /// Keep values set here, take the rest from `lower`.
            pub fn over(self, lower: Self) -> Self {
                Self { $( $field: self.$field.or(lower.$field), )* }
            }

            pub fn resolve(self) -> $resolved {
                $resolved { $( $field: self.$field.unwrap_or($default), )* }
            }
        }

        impl Default for $resolved {
            fn default() -> Self {
                $layer::default().resolve()
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedMode {
    Plain,
    Augmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Missing {
    ZeroFill,
    Strict,
}

params! {
    BuildKbLayer => BuildKbParams {
        feature_vocab_size: usize = 5000, "LDEM_FEATURE_VOCAB_SIZE", "Words in the shared feature vocabulary";
        window: usize = 5, "LDEM_WINDOW", "Context window for feature vectors and context bags";
        subcorpus_bytes: usize = 10 * 1024 * 1024, "LDEM_SUBCORPUS_BYTES", "Serialized size of each sub-corpus";
        min_count: u64 = 5, "LDEM_MIN_COUNT", "Minimum frequency for a domain vocabulary word";
        seed: u64 = 1, "LDEM_SEED", "Random seed";
    }
}

params! {
    TrainMetaLayer => TrainMetaParams {
        words_per_domain: usize = 2000, "LDEM_WORDS_PER_DOMAIN", "Sampled words per training domain";
        valid_words_per_domain: usize = 500, "LDEM_VALID_WORDS_PER_DOMAIN", "Sampled words per validation domain";
        test_words_per_domain: usize = 1000, "LDEM_TEST_WORDS_PER_DOMAIN", "Sampled words per test domain";
        neg_ratio: f64 = 1.0, "LDEM_NEG_RATIO", "Negative examples per positive";
        epochs: usize = 20, "LDEM_EPOCHS", "Maximum training epochs";
        patience: usize = 5, "LDEM_PATIENCE", "Epochs without validation gain before stopping";
        hidden: usize = 200, "LDEM_HIDDEN", "Hidden layer size";
        learning_rate: f64 = 1e-3, "LDEM_LEARNING_RATE", "Adam step size";
        batch_size: usize = 64, "LDEM_BATCH_SIZE", "Examples per update";
        seed: u64 = 1, "LDEM_SEED", "Random seed";
    }
}

params! {
    RetrieveLayer => RetrieveParams {
        delta: f64 = 0.7, "LDEM_DELTA", "Minimum similarity for borrowing a past context";
        adapt_epochs: usize = 5, "LDEM_ADAPT_EPOCHS", "Fine-tuning epochs on the new domain";
        adapt_words: usize = 3000, "LDEM_ADAPT_WORDS", "New-domain words sampled for fine-tuning";
        adapt_learning_rate: f64 = 1e-3, "LDEM_ADAPT_LEARNING_RATE", "Fine-tuning step size";
        adapt_batch_size: usize = 64, "LDEM_ADAPT_BATCH_SIZE", "Fine-tuning examples per update";
        min_examples: usize = 10, "LDEM_MIN_EXAMPLES", "Minimum fine-tuning examples";
        seed: u64 = 1, "LDEM_SEED", "Random seed";
    }
}

params! {
    TrainEmbedLayer => TrainEmbedParams {
        mode: EmbedMode = EmbedMode::Plain, "LDEM_MODE", "Train on the corpus only, or add borrowed pairs";
        dim: usize = 300, "LDEM_DIM", "Vector dimension";
        window: usize = 5, "LDEM_WINDOW", "Context window";
        negatives: usize = 5, "LDEM_NEGATIVES", "Negative samples per pair";
        subsample: f64 = 1e-3, "LDEM_SUBSAMPLE", "Frequent-word subsampling threshold";
        learning_rate: f64 = 0.025, "LDEM_LEARNING_RATE", "Initial learning rate";
        epochs: usize = 5, "LDEM_EPOCHS", "Passes over the corpus";
        min_count: u64 = 5, "LDEM_MIN_COUNT", "Minimum word frequency";
        relevant_weight: f64 = 1.0, "LDEM_RELEVANT_WEIGHT", "Learning-rate multiplier for borrowed pairs";
        workers: usize = 1, "LDEM_WORKERS", "Training threads; 1 is deterministic";
        seed: u64 = 1, "LDEM_SEED", "Random seed";
    }
}

params! {
    BaselineLayer => BaselineParams {
        threshold: f64 = 0.18, "LDEM_THRESHOLD", "Minimum TF-IDF cosine for borrowing a sentence";
    }
}

params! {
    EvalLayer => EvalParams {
        seeds: usize = 10, "LDEM_SEEDS", "Classifier runs per embedding file";
        epochs: usize = 300, "LDEM_EPOCHS", "Classifier training epochs";
        learning_rate: f64 = 0.5, "LDEM_LEARNING_RATE", "Classifier step size";
        l2: f64 = 1e-4, "LDEM_L2", "Weight decay";
        test_fraction: f64 = 0.2, "LDEM_TEST_FRACTION", "Share of documents held out for testing";
    }
}

params! {
    ConcatLayer => ConcatParams {
        missing: Missing = Missing::ZeroFill, "LDEM_MISSING", "Handling of words present in only one file";
    }
}
