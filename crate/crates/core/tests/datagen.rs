use std::sync::Arc;

use proptest::prelude::*;
use qfcomp::datagen::{build_instance, desk_corpus, make_dataset, split_corpus, Build, QueryLengthDist, Reservation};
use qfcomp::{char_len, Instance, ParseGraph, Positions, Split, Token};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Five nouns followed by a verb, every token kept by the gold.
fn noun_rich() -> Arc<ParseGraph> {
    let mut tokens: Vec<Token> = (1..=5).map(|i| Token::new(i, &format!("n{i}"), "n", if i % 2 == 0 { "PROPN" } else { "NOUN" })).collect();
    tokens.push(Token::new(6, "ran", "run", "VERB"));
    let mut arcs: Vec<(usize, usize, String)> = (1..=5).map(|i| (6, i, "obl".to_string())).collect();
    arcs.push((0, 6, "root".into()));
    Arc::new(ParseGraph::new("rich", tokens, arcs).unwrap())
}

#[test]
fn query_length_frequencies_follow_the_distribution() {
    let dist = QueryLengthDist {
        lengths: vec![0.4, 0.6],
        proper_noun_weight: 0.4,
    };
    let g = noun_rich();
    let gold: Positions = (1..=6).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut counts = [0usize; 2];
    let builds = 10_000;
    for _ in 0..builds {
        let Build::Instance(inst) = build_instance(g.clone(), &gold, &dist, &mut rng).unwrap() else {
            panic!("five nouns always suffice")
        };
        counts[inst.query.len() - 1] += 1;
    }
    for (c, p) in counts.iter().zip(&dist.lengths) {
        let freq = *c as f64 / builds as f64;
        assert!((freq - p).abs() <= 0.02, "frequency {freq} vs {p}");
    }
}

fn tagged(n: usize, split: Split) -> Vec<Instance> {
    let g = Arc::new(ParseGraph::new("t", vec![Token::new(1, "x", "x", "NOUN")], vec![(0, 1, "root".into())]).unwrap());
    (0..n)
        .map(|_| Instance::new(g.clone(), [1].into(), 1, Some([1].into())).unwrap().with_split(Some(split)))
        .collect()
}

#[test]
fn full_size_split() {
    let mut all = tagged(199_152, Split::Train);
    all.extend(tagged(9_969, Split::Test));
    let s = split_corpus(all, Reservation::Count(24_999), 3).unwrap();
    assert_eq!(s.train.len() + s.validation.len(), 199_152);
    assert_eq!(s.validation.len(), 24_999);
    assert_eq!(s.test.len(), 9_969);
    assert!(s.warning.is_none());
}

#[test]
fn small_corpus_falls_back_to_a_fraction() {
    let s = split_corpus(tagged(100, Split::Train), Reservation::Count(24_999), 3).unwrap();
    assert_eq!((s.train.len(), s.validation.len()), (90, 10));
    assert!(s.warning.is_some());
}

#[test]
fn datasets_are_reproducible() {
    let pairs = desk_corpus(200, 4);
    let (a, skipped_a) = make_dataset(&pairs, &QueryLengthDist::default(), 8).unwrap();
    let (b, skipped_b) = make_dataset(&pairs, &QueryLengthDist::default(), 8).unwrap();
    assert_eq!(a, b);
    assert_eq!(skipped_a, skipped_b);
    assert_eq!(a.len() + skipped_a, 200);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn emitted_instances_respect_their_gold(corpus_seed in 0u64..1000, seed in 0u64..1000) {
        let pairs = desk_corpus(30, corpus_seed);
        let (instances, _) = make_dataset(&pairs, &QueryLengthDist::default(), seed).unwrap();
        for inst in &instances {
            let gold = inst.gold.as_ref().unwrap();
            prop_assert!(!inst.query.is_empty());
            prop_assert!(inst.query.is_subset(gold));
            prop_assert_eq!(char_len(&inst.graph, gold.iter().copied()), inst.budget);
            for &q in &inst.query {
                let upos = &inst.graph.token(q).upos;
                prop_assert!(upos == "NOUN" || upos == "PROPN");
            }
        }
    }
}
