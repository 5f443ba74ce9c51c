use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use qfcomp::eval::{latency_bench_with_warmup, paired_bootstrap};
use qfcomp::system::{Compressor, SystemError};
use qfcomp::{compression_ratio, token_f1, Instance, ParseGraph, Positions, Token};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn normal<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    mean + sd * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Straight reading of the test: the share of resamples in which the mean
/// of `b` reaches the mean of `a`, drawn with a different generator.
fn reference_p(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> f64 {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = a.len();
    let mut hits = 0usize;
    for _ in 0..resamples {
        let (mut sa, mut sb) = (0.0, 0.0);
        for _ in 0..n {
            let i = rng.random_range(0..n);
            sa += a[i];
            sb += b[i];
        }
        if sb >= sa {
            hits += 1;
        }
    }
    hits as f64 / resamples as f64
}

#[test]
fn bootstrap_matches_a_high_resolution_run() {
    let mut rng = StdRng::seed_from_u64(17);
    for (shift, n) in [(0.03, 60), (0.05, 40), (0.015, 120)] {
        let a: Vec<f64> = (0..n).map(|_| normal(&mut rng, 0.5 + shift, 0.15)).collect();
        let b: Vec<f64> = (0..n).map(|_| normal(&mut rng, 0.5, 0.15)).collect();
        let ours = paired_bootstrap(&a, &b, 10_000, 5).unwrap();
        let reference = reference_p(&a, &b, 1_000_000, 6);
        assert!(
            (ours.p_one_sided - reference).abs() <= 0.02,
            "shift {shift}: {} vs {reference}",
            ours.p_one_sided
        );
        assert_eq!(ours.p_two_sided, (2.0 * ours.p_one_sided).min(1.0));
    }
}

#[test]
fn bootstrap_length_mismatch() {
    assert!(paired_bootstrap(&[1.0, 2.0], &[1.0], 10, 0).is_err());
}

struct Sleeper(Duration);

impl Compressor for Sleeper {
    fn name(&self) -> &str {
        "sleeper"
    }

    fn compress(&self, inst: &Instance) -> Result<Positions, SystemError> {
        std::thread::sleep(self.0);
        Ok(inst.query.clone())
    }
}

fn one_token() -> Vec<Instance> {
    let g = Arc::new(ParseGraph::new("s", vec![Token::new(1, "x", "x", "NOUN")], vec![(0, 1, "root".into())]).unwrap());
    vec![Instance::new(g, [1].into(), 1, None).unwrap()]
}

#[test]
fn latency_of_a_constant_time_stub() {
    let stub = Sleeper(Duration::from_millis(3));
    let stats = latency_bench_with_warmup(&stub, &one_token(), 60, 1, 5).unwrap();
    assert_eq!(stats.n, 60);
    assert!((stats.mean_ms - 3.0).abs() <= 0.6, "mean {} ms", stats.mean_ms);

    let single = latency_bench_with_warmup(&stub, &one_token(), 1, 1, 0).unwrap();
    assert_eq!(single.std_ms, 0.0);
}

fn sentence(lens: &[usize]) -> ParseGraph {
    let tokens = lens.iter().enumerate().map(|(i, l)| Token::new(i + 1, &"x".repeat(*l), "x", "X")).collect();
    let arcs = (1..=lens.len()).map(|i| (i - 1, i, if i == 1 { "root" } else { "dep" }.to_string())).collect();
    ParseGraph::new("s", tokens, arcs).unwrap()
}

proptest! {
    #[test]
    fn f1_is_symmetric(pred in prop::collection::btree_set(1usize..20, 1..10), gold in prop::collection::btree_set(1usize..20, 1..10)) {
        let ab = token_f1(&pred, &gold).unwrap();
        let ba = token_f1(&gold, &pred).unwrap();
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(ab.recall, ba.precision);
        prop_assert!((ab.f1 - ba.f1).abs() < 1e-12);
    }

    #[test]
    fn ratio_is_bounded_by_the_budget(lens in prop::collection::vec(1usize..9, 1..15), mask in any::<u32>()) {
        let g = sentence(&lens);
        let pred: Positions = (1..=lens.len()).filter(|v| mask >> v & 1 == 1).collect();
        prop_assume!(!pred.is_empty());
        let b = qfcomp::char_len(&g, pred.iter().copied());
        let r = compression_ratio(&pred, &g).unwrap();
        prop_assert!(r <= b as f64 / g.sentence_char_len() as f64 + 1e-12);
        prop_assert!(r > 0.0 && r <= 1.0);
    }
}
