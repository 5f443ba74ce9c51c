//! Shared setup for the criterion benches: a small trained desk corpus.

use qfcomp::datagen::{desk_corpus, make_dataset, split_corpus, QueryLengthDist, Reservation};
use qfcomp::ilp::PerceptronOptions;
use qfcomp::pipeline::{build_engines, train_ilp_model, train_vertex_bundle, TrainConfig};
use qfcomp::service::Engines;
use qfcomp::Instance;

pub struct Setup {
    pub test: Vec<Instance>,
    pub engines: Engines,
}

/// Trains every engine on `sentences` desk sentences and keeps the test
/// split for timing.
pub fn trained(sentences: usize, seed: u64) -> Setup {
    let pairs = desk_corpus(sentences, seed);
    let (all, _) = make_dataset(&pairs, &QueryLengthDist::default(), seed).expect("default distribution is valid");
    let splits = split_corpus(all, Reservation::Fraction(0.1), seed).expect("fraction is in range");
    let cfg = TrainConfig {
        seed,
        perceptron: PerceptronOptions {
            epochs: 2,
            ..PerceptronOptions::default()
        },
        ..TrainConfig::default()
    };
    let (bundle, _) = train_vertex_bundle(&splits.train, &splits.validation, &cfg).expect("desk corpus trains");
    let (ilp, _) = train_ilp_model(&splits.train, &splits.validation, &cfg).expect("desk corpus trains");
    Setup {
        test: splits.test,
        engines: build_engines(Some(bundle), Some(ilp)),
    }
}
