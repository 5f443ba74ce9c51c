//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line to the
//! real stdout (bypassing the test harness capture) and then asserts.
//!
//! Criteria run one at a time under a shared lock so the timing checks are
//! not disturbed by the others.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use qfcomp::datagen::{chain_graph, desk_corpus, make_dataset, split_corpus, QueryLengthDist, Reservation, Splits};
use qfcomp::eval::{evaluate_suite, latency_bench, linear_fit, paired_bootstrap};
use qfcomp::ilp::{decode, enumerate_exact, EdgeScores};
use qfcomp::lm::{TrigramLm, BOS, DEFAULT_DISCOUNT};
use qfcomp::pipeline::{build_engines, train_ilp_model, train_vertex_bundle, TrainConfig};
use qfcomp::service::Engines;
use qfcomp::{char_len, oracle_path, token_f1, transform_root_edges, Instance, ParseGraph, Positions, Token};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const SEED: u64 = 20;
const DESK_SENTENCES: usize = 3000;
const RESAMPLES: usize = 10_000;

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(name: &str, pass: bool, detail: &str) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

struct Fixture {
    all: Vec<Instance>,
    splits: Splits,
    engines: Engines,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let pairs = desk_corpus(DESK_SENTENCES, SEED);
        let (all, _) = make_dataset(&pairs, &QueryLengthDist::default(), SEED).unwrap();
        let splits = split_corpus(all.clone(), Reservation::Fraction(0.1), SEED).unwrap();
        let cfg = TrainConfig {
            seed: SEED,
            ..TrainConfig::default()
        };
        let (bundle, _) = train_vertex_bundle(&splits.train, &splits.validation, &cfg).unwrap();
        let (ilp, _) = train_ilp_model(&splits.train, &splits.validation, &cfg).unwrap();
        Fixture {
            all,
            splits,
            engines: build_engines(Some(bundle), Some(ilp)),
        }
    })
}

#[test]
fn constraint_safety() {
    let _g = serial();
    let f = fixture();
    let t0 = Instant::now();
    let mut checked = 0;
    let mut violations = Vec::new();
    for name in ["vertex_lr", "ablated", "random", "ilp"] {
        let engine = f.engines.get(name).unwrap();
        for inst in &f.all {
            checked += 1;
            match engine.compress(inst) {
                Ok(c) if inst.query.is_subset(&c) && char_len(&inst.graph, c.iter().copied()) <= inst.budget => {}
                Ok(_) => violations.push(format!("{name}/{}", inst.id())),
                Err(e) => violations.push(format!("{name}/{}: {e}", inst.id())),
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = f.all.len() >= 1000 && violations.is_empty() && secs < 60.0;
    report(
        "constraint safety",
        pass,
        &format!(
            "{} instances x 4 engines = {checked} outputs, {} violations, {secs:.1}s",
            f.all.len(),
            violations.len()
        ),
    );
    assert!(pass, "violations: {:?}", &violations[..violations.len().min(10)]);
}

#[test]
fn oracle_completeness() {
    let _g = serial();
    let f = fixture();
    let t0 = Instant::now();
    let instances = &f.all[..1000.min(f.all.len())];
    let mut misses = Vec::new();
    for inst in instances {
        let gold = inst.gold.as_ref().unwrap();
        let decisions = oracle_path(inst).unwrap();
        let mut kept = inst.query.clone();
        kept.extend(decisions.iter().filter(|d| d.label).map(|d| d.candidate));
        let f1 = token_f1(&kept, gold).unwrap().f1;
        if f1 != 1.0 {
            misses.push((inst.id().to_string(), f1));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = instances.len() == 1000 && misses.is_empty() && secs < 60.0;
    report(
        "oracle completeness",
        pass,
        &format!("{} instances, {} below F1 = 1.0, {secs:.1}s", instances.len(), misses.len()),
    );
    assert!(pass, "{misses:?}");
}

/// A random tree over `n` tokens: a random root, then every other token
/// hangs off one that is already attached.
fn random_tree<R: Rng>(id: usize, n: usize, rng: &mut R) -> ParseGraph {
    let tokens = (1..=n)
        .map(|i| {
            let len = rng.random_range(1..=6);
            let form: String = (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
            Token::new(i, &form, &form, "X")
        })
        .collect();
    let mut order: Vec<usize> = (1..=n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut arcs = vec![(0, order[0], "root".to_string())];
    for i in 1..n {
        let head = order[rng.random_range(0..i)];
        arcs.push((head, order[i], "dep".to_string()));
    }
    ParseGraph::new(format!("rand-{id}"), tokens, arcs).unwrap()
}

#[test]
fn ilp_matches_exhaustive_search() {
    let _g = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut mismatches = Vec::new();
    let mut unproven = 0;
    for case in 0..200 {
        let n = rng.random_range(1..=10);
        let g = random_tree(case, n, &mut rng);
        let g = if n > 1 { transform_root_edges(&g).unwrap() } else { g };
        let scores = EdgeScores::from_fn(&g, |_| rng.random_range(-1.0..1.0));
        let query: Positions = (1..=n).filter(|_| rng.random_bool(0.2)).collect();
        let lo = char_len(&g, query.iter().copied()).max(1);
        let hi = g.sentence_char_len() + 2;
        let budget = rng.random_range(lo..=hi.max(lo));
        let fast = decode(&g, &scores, &query, budget, u64::MAX).unwrap();
        let slow = enumerate_exact(&g, &scores, &query, budget).unwrap();
        unproven += usize::from(!fast.stats.proven_optimal);
        if fast.objective != slow.objective {
            mismatches.push((case, fast.objective, slow.objective));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = mismatches.is_empty() && unproven == 0 && secs < 300.0;
    report(
        "ILP correctness",
        pass,
        &format!("200 instances, {} objective mismatches, {unproven} unproven, {secs:.1}s", mismatches.len()),
    );
    assert!(pass, "{mismatches:?}");
}

#[test]
fn linear_time_on_chains() {
    let _g = serial();
    let f = fixture();
    let engine = f.engines.get("vertex_lr").unwrap();
    let sizes = [10usize, 20, 40, 80, 160];
    let mut times = Vec::new();
    for &n in &sizes {
        let g = Arc::new(chain_graph(n));
        let inst = Instance::new(g.clone(), [1].into(), g.sentence_char_len(), None).unwrap();
        let reps = 40_000 / n;
        for _ in 0..reps / 4 {
            engine.compress(&inst).unwrap();
        }
        // best of several batches filters out scheduler noise
        let best = (0..7)
            .map(|_| {
                let t0 = Instant::now();
                for _ in 0..reps {
                    engine.compress(&inst).unwrap();
                }
                t0.elapsed().as_secs_f64() * 1e3 / reps as f64
            })
            .fold(f64::INFINITY, f64::min);
        times.push(best);
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let (slope, intercept, r2) = linear_fit(&xs, &times);
    let pass = r2 >= 0.98;
    let per: Vec<String> = sizes.iter().zip(&times).map(|(n, t)| format!("{n}:{t:.4}ms")).collect();
    report(
        "linearity",
        pass,
        &format!("R^2 = {r2:.4} (slope {:.3} us/token, intercept {:.3} us) [{}]", slope * 1e3, intercept * 1e3, per.join(" ")),
    );
    assert!(pass);
}

#[test]
fn vertex_addition_is_faster_than_ilp() {
    let _g = serial();
    let f = fixture();
    let test = &f.splits.test;
    let lr = latency_bench(f.engines.get("vertex_lr").unwrap(), test, 20_000, SEED).unwrap();
    let ilp = latency_bench(f.engines.get("ilp").unwrap(), test, 20_000, SEED).unwrap();
    let ratio = lr.mean_ms / ilp.mean_ms;
    let pass = ratio <= 0.5 && lr.failures == 0 && ilp.failures == 0;
    report(
        "latency ordering",
        pass,
        &format!(
            "vertex_lr {:.4} ms, ilp {:.4} ms, ratio {ratio:.3} (threshold 0.5) over {} test instances",
            lr.mean_ms,
            ilp.mean_ms,
            test.len()
        ),
    );
    assert!(pass);
}

#[test]
fn model_ordering() {
    let _g = serial();
    let f = fixture();
    let test = &f.splits.test;
    let mut f1 = BTreeMap::new();
    for name in ["vertex_lr", "ablated", "random", "ilp"] {
        let r = evaluate_suite(f.engines.get(name).unwrap(), test, None).unwrap();
        f1.insert(name, r.metric("f1").unwrap());
    }
    let mean = |n: &str| f1[n].iter().sum::<f64>() / f1[n].len() as f64;
    let p_lr_ab = paired_bootstrap(&f1["vertex_lr"], &f1["ablated"], RESAMPLES, SEED).unwrap();
    let p_ab_rand = paired_bootstrap(&f1["ablated"], &f1["random"], RESAMPLES, SEED).unwrap();
    let p_ilp = paired_bootstrap(&f1["vertex_lr"], &f1["ilp"], RESAMPLES, SEED).unwrap();
    let pass = mean("vertex_lr") > mean("ablated")
        && mean("ablated") > mean("random")
        && p_lr_ab.p_one_sided < 0.05
        && p_ab_rand.p_one_sided < 0.05;
    report(
        "model ordering",
        pass,
        &format!(
            "F1 vertex_lr {:.4} > ablated {:.4} (p = {:.5}) > random {:.4} (p = {:.5}); ilp {:.4} (vs vertex_lr p = {:.5}, not gated); {} test instances",
            mean("vertex_lr"),
            mean("ablated"),
            p_lr_ab.p_one_sided,
            mean("random"),
            p_ab_rand.p_one_sided,
            mean("ilp"),
            p_ilp.p_one_sided,
            test.len()
        ),
    );
    assert!(pass);
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[test]
fn slor_identities() {
    let _g = serial();
    let corpus: Vec<Vec<String>> = ["the cat sat", "a dog ran home", "the dog sat on the mat"].iter().map(|s| words(s)).collect();
    let uni = TrigramLm::train(&corpus, 1, DEFAULT_DISCOUNT).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let vocab = ["the", "cat", "sat", "a", "dog", "ran", "home", "on", "mat", "zebra"];
    let mut nonzero = 0;
    for _ in 0..500 {
        let len = rng.random_range(1..=8);
        let seq: Vec<&str> = (0..len).map(|_| vocab[rng.random_range(0..vocab.len())]).collect();
        nonzero += usize::from(uni.slor(&seq).unwrap() != 0.0);
    }

    // two sentences, D = 0.75, vocabulary {the, cat, sat, ran, </s>} + <unk>:
    //   P1(the) = (2 - .75)/8 + .75*5/8/6 = 0.234375
    //   P1(cat) = 0.234375, P1(sat) = (1 - .75)/8 + 0.078125 = 0.109375
    //   P2(the|<s>) = (1.25 + .75*P1(the))/2 = 0.712890625
    //   P2(cat|the) = (1.25 + .75*P1(cat))/2 = 0.712890625
    //   P3(cat|<s> the) = (1.25 + .75*P2(cat|the))/2 = 0.892333984375
    //   P2(sat|cat) = (0.25 + 1.5*P1(sat))/2 = 0.20703125
    //   P3(sat|the cat) = (0.25 + 1.5*P2(sat|cat))/2 = 0.2802734375
    let tri = TrigramLm::train(&[words("the cat sat"), words("the cat ran")], 3, DEFAULT_DISCOUNT).unwrap();
    let lp = 0.712890625f64.ln() + 0.892333984375f64.ln() + 0.2802734375f64.ln();
    let up = 2.0 * 0.234375f64.ln() + 0.109375f64.ln();
    let expected = (lp - up) / 3.0;
    let got = tri.slor(&["the", "cat", "sat"]).unwrap();
    let p = tri.prob(&[BOS, "the"], "cat");
    let err = (got - expected).abs().max((p - 0.892333984375).abs());
    let pass = nonzero == 0 && err <= 1e-9;
    report(
        "SLOR identity",
        pass,
        &format!("order-1 model: {nonzero}/500 sequences with slor != 0; trigram example |error| = {err:.2e}"),
    );
    assert!(pass);
}

#[test]
fn bootstrap_calibration() {
    let _g = serial();
    let f = fixture();
    let lr = f.engines.get("vertex_lr").unwrap();
    let a = evaluate_suite(lr, &f.splits.test, None).unwrap().metric("f1").unwrap();
    let b = evaluate_suite(lr, &f.splits.test, None).unwrap().metric("f1").unwrap();
    let same = paired_bootstrap(&a, &b, RESAMPLES, SEED).unwrap();
    let better: Vec<f64> = a.iter().map(|x| x + 0.05).collect();
    let dominant = paired_bootstrap(&better, &a, RESAMPLES, SEED).unwrap();
    let pass = same.p_one_sided >= 0.3 && dominant.p_one_sided <= 1.0 / RESAMPLES as f64;
    report(
        "bootstrap calibration",
        pass,
        &format!(
            "identical systems p = {:.4} (>= 0.3); dominant system p = {:.3e} (<= {:.1e})",
            same.p_one_sided,
            dominant.p_one_sided,
            1.0 / RESAMPLES as f64
        ),
    );
    assert!(pass);
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("timing");
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// File contents with every `timing` field removed from JSON documents and
/// JSON-lines rows.
fn canonical(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    if let Ok(mut v) = serde_json::from_str::<Value>(&text) {
        strip_timing(&mut v);
        return v.to_string();
    }
    if path.extension().is_some_and(|e| e == "jsonl") {
        return text
            .lines()
            .map(|l| {
                let mut v: Value = serde_json::from_str(l).unwrap();
                strip_timing(&mut v);
                v.to_string() + "\n"
            })
            .collect();
    }
    text
}

fn run_pipeline(dir: &Path) -> BTreeMap<String, String> {
    let bin = env!("CARGO_BIN_EXE_qfcomp");
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["ingest".into(), "--desk".into(), "800".into(), "--seed".into(), "5".into(), "--out".into(), p("desk.jsonl")],
        vec!["make-dataset".into(), "--input".into(), p("desk.jsonl"), "--out-dir".into(), p("ds"), "--seed".into(), "5".into()],
        vec![
            "train-lr".into(),
            "--train".into(),
            p("ds/train.jsonl"),
            "--validation".into(),
            p("ds/validation.jsonl"),
            "--out".into(),
            p("vertex.json"),
            "--seed".into(),
            "5".into(),
            "--decisions-out".into(),
            p("decisions.jsonl"),
        ],
        vec![
            "train-ilp".into(),
            "--train".into(),
            p("ds/train.jsonl"),
            "--validation".into(),
            p("ds/validation.jsonl"),
            "--out".into(),
            p("ilp.json"),
            "--epochs".into(),
            "2".into(),
        ],
        vec!["train-lm".into(), "--input".into(), p("desk.jsonl"), "--out".into(), p("lm.arpa")],
        vec![
            "compress".into(),
            "--model".into(),
            p("vertex.json"),
            "--input".into(),
            p("ds/test.jsonl"),
            "--out".into(),
            p("compressed.jsonl"),
        ],
        vec![
            "evaluate".into(),
            "--model".into(),
            p("vertex.json"),
            "--ilp-model".into(),
            p("ilp.json"),
            "--lm".into(),
            p("lm.arpa"),
            "--input".into(),
            p("ds/test.jsonl"),
            "--resamples".into(),
            "1000".into(),
            "--seed".into(),
            "5".into(),
            "--out".into(),
            p("eval.json"),
        ],
    ];
    for args in steps {
        let out = Command::new(bin).args(&args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let mut files = BTreeMap::new();
    for name in [
        "desk.jsonl",
        "ds/train.jsonl",
        "ds/validation.jsonl",
        "ds/test.jsonl",
        "vertex.json",
        "decisions.jsonl",
        "ilp.json",
        "lm.arpa",
        "compressed.jsonl",
        "eval.json",
    ] {
        files.insert(name.to_string(), canonical(&dir.join(name)));
    }
    files
}

#[test]
fn seeded_runs_are_deterministic() {
    let _g = serial();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(a.path());
    let second = run_pipeline(b.path());
    let differing: Vec<&String> = first.keys().filter(|k| first[*k] != second[*k]).collect();
    let pass = differing.is_empty();
    report(
        "determinism",
        pass,
        &format!("{} artifacts compared across two seeded runs, differing: {differing:?}", first.len()),
    );
    assert!(pass);
}
