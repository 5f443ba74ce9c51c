//! Synthesis of constrained compression tuples from (sentence, gold) pairs,
//! corpus splitting, and a small generated "desk" corpus of parsed English
//! sentences with synthetic golds for tests and demos.

use std::sync::Arc;

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{char_len, CorpusError, Instance, ParseGraph, Positions, Split, Token};

#[derive(Debug, Error, PartialEq)]
pub enum DatagenError {
    #[error("query length probabilities must be non-negative and sum to 1 (got sum {0})")]
    BadDistribution(f64),
    #[error("proper noun weight {0} outside [0, 1]")]
    BadProperWeight(f64),
    #[error("validation fraction {0} outside [0, 1)")]
    BadFraction(f64),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Distribution of query lengths and how often a proper noun is preferred.
///
/// `lengths[i]` is the probability of a query of `i + 1` tokens. The
/// defaults are placeholders chosen for this toolkit, not measured values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLengthDist {
    pub lengths: Vec<f64>,
    pub proper_noun_weight: f64,
}

impl Default for QueryLengthDist {
    fn default() -> Self {
        QueryLengthDist {
            lengths: vec![0.30, 0.35, 0.20, 0.10, 0.05],
            proper_noun_weight: 0.4,
        }
    }
}

impl QueryLengthDist {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let sum: f64 = self.lengths.iter().sum();
        if self.lengths.is_empty() || self.lengths.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(DatagenError::BadDistribution(sum));
        }
        if !(0.0..=1.0).contains(&self.proper_noun_weight) {
            return Err(DatagenError::BadProperWeight(self.proper_noun_weight));
        }
        Ok(())
    }

    fn sampler(&self) -> Result<WeightedIndex<f64>, DatagenError> {
        self.validate()?;
        WeightedIndex::new(&self.lengths).map_err(|_| DatagenError::BadDistribution(self.lengths.iter().sum()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    EmptyGold,
    NotEnoughNouns { wanted: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Build {
    Instance(Instance),
    Skip(SkipReason),
}

fn is_noun(t: &Token) -> bool {
    t.upos == "NOUN" || t.upos == "PROPN"
}

/// Builds one tuple: the budget is the gold length and the query is a
/// sample of gold nouns whose size follows `dist`.
pub fn build_instance<R: Rng + ?Sized>(
    graph: Arc<ParseGraph>,
    gold: &Positions,
    dist: &QueryLengthDist,
    rng: &mut R,
) -> Result<Build, DatagenError> {
    let sampler = dist.sampler()?;
    if gold.is_empty() {
        return Ok(Build::Skip(SkipReason::EmptyGold));
    }
    let wanted = sampler.sample(rng) + 1;
    let (mut proper, mut common): (Vec<usize>, Vec<usize>) = gold
        .iter()
        .copied()
        .filter(|&v| is_noun(graph.token(v)))
        .partition(|&v| graph.token(v).upos == "PROPN");
    let available = proper.len() + common.len();
    if available < wanted {
        return Ok(Build::Skip(SkipReason::NotEnoughNouns { wanted, available }));
    }
    let mut query = Positions::new();
    while query.len() < wanted {
        let use_proper = match (proper.is_empty(), common.is_empty()) {
            (false, false) => rng.random_bool(dist.proper_noun_weight),
            (empty_proper, _) => !empty_proper,
        };
        let pool = if use_proper { &mut proper } else { &mut common };
        let i = rng.random_range(0..pool.len());
        query.insert(pool.swap_remove(i));
    }
    let budget = char_len(&graph, gold.iter().copied());
    Ok(Build::Instance(Instance::new(graph, query, budget, Some(gold.clone()))?))
}

/// Builds tuples for every pair with one seeded stream, keeping upstream
/// split tags. Returns the instances and the number of skipped pairs.
pub fn make_dataset(
    pairs: &[(Arc<ParseGraph>, Positions, Option<Split>)],
    dist: &QueryLengthDist,
    seed: u64,
) -> Result<(Vec<Instance>, usize), DatagenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut skipped = 0;
    for (g, gold, split) in pairs {
        match build_instance(g.clone(), gold, dist, &mut rng)? {
            Build::Instance(inst) => out.push(inst.with_split(*split)),
            Build::Skip(_) => skipped += 1,
        }
    }
    Ok((out, skipped))
}

/// Size of the validation set carved out of the training pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reservation {
    Count(usize),
    Fraction(f64),
}

/// Fraction used when a fixed reservation does not fit the training pool.
pub const FALLBACK_VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<Instance>,
    pub validation: Vec<Instance>,
    pub test: Vec<Instance>,
    pub warning: Option<String>,
}

/// Keeps upstream test (and validation) tags, then reserves a seeded random
/// validation subset of the remaining training pool.
pub fn split_corpus(instances: Vec<Instance>, reservation: Reservation, seed: u64) -> Result<Splits, DatagenError> {
    let mut splits = Splits::default();
    let mut pool = Vec::new();
    for inst in instances {
        match inst.split {
            Some(Split::Test) => splits.test.push(inst),
            Some(Split::Validation) => splits.validation.push(inst),
            _ => pool.push(inst),
        }
    }
    let n_valid = match reservation {
        Reservation::Fraction(f) if (0.0..1.0).contains(&f) => (pool.len() as f64 * f).round() as usize,
        Reservation::Fraction(f) => return Err(DatagenError::BadFraction(f)),
        Reservation::Count(n) if n < pool.len() => n,
        Reservation::Count(n) => {
            let msg = format!(
                "training pool of {} is too small to reserve {n}; reserving {FALLBACK_VALIDATION_FRACTION} of it instead",
                pool.len()
            );
            warn!("{msg}");
            splits.warning = Some(msg);
            (pool.len() as f64 * FALLBACK_VALIDATION_FRACTION).round() as usize
        }
    };
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut reserved = vec![false; pool.len()];
    for &i in &idx[..n_valid] {
        reserved[i] = true;
    }
    for (inst, r) in pool.into_iter().zip(reserved) {
        if r {
            splits.validation.push(inst.with_split(Some(Split::Validation)));
        } else {
            splits.train.push(inst.with_split(Some(Split::Train)));
        }
    }
    Ok(splits)
}

// ---------------------------------------------------------------------------
// Desk corpus

const NOUNS: &[&str] = &[
    "minister", "company", "market", "city", "police", "report", "plan", "team", "court", "school", "bank", "river",
    "storm", "price", "doctor", "village", "election", "budget", "player", "museum", "factory", "road", "festival",
    "hospital", "council", "student", "farmer", "bridge", "official", "rate", "family", "driver", "coach", "station",
    "law", "deal", "fire", "worker", "airport", "island",
];
const PROPNS: &[&str] = &[
    "Obama", "Google", "Paris", "Texas", "Apple", "Berlin", "Smith", "Toyota", "Chelsea", "Kenya", "Boeing", "Madrid",
    "Merkel", "Ohio", "Nokia", "Sydney",
];
const VERBS: &[(&str, &str)] = &[
    ("announced", "announce"), ("approved", "approve"), ("closed", "close"), ("opened", "open"), ("rejected", "reject"),
    ("signed", "sign"), ("visited", "visit"), ("won", "win"), ("lost", "lose"), ("bought", "buy"), ("sold", "sell"),
    ("launched", "launch"), ("raised", "raise"), ("cut", "cut"), ("blocked", "block"), ("criticized", "criticize"),
    ("praised", "praise"), ("delayed", "delay"), ("hit", "hit"), ("released", "release"),
];
const ADJS: &[&str] = &[
    "new", "local", "former", "large", "small", "major", "national", "young", "old", "public", "key", "recent", "strong",
    "popular", "rural", "british",
];
const ADVS: &[&str] = &["quickly", "finally", "also", "recently", "again", "reportedly", "officially", "already"];
const PREPS: &[&str] = &["in", "on", "at", "for", "with", "after", "near", "from"];
const DETS: &[&str] = &["the", "a", "this", "its"];
const AUXES: &[(&str, &str)] = &[("has", "have"), ("will", "will"), ("had", "have"), ("could", "could")];
const MARKS: &[&str] = &["because", "after", "while"];

/// A node of the tree under construction; linearized left, self, right.
struct Node {
    form: String,
    lemma: String,
    upos: &'static str,
    label: &'static str,
    left: Vec<Node>,
    right: Vec<Node>,
}

impl Node {
    fn new(form: &str, lemma: &str, upos: &'static str, label: &'static str) -> Node {
        Node {
            form: form.to_string(),
            lemma: lemma.to_string(),
            upos,
            label,
            left: Vec::new(),
            right: Vec::new(),
        }
    }

    fn flatten(self, head: usize, out: &mut Vec<(String, String, &'static str, usize, &'static str)>) {
        // positions are assigned in order, so reserve ours after the left side
        let mut heads_to_fix = Vec::new();
        for l in self.left {
            let start = out.len();
            l.flatten(usize::MAX, out);
            heads_to_fix.extend((start..out.len()).filter(|&i| out[i].3 == usize::MAX));
        }
        let me = out.len() + 1;
        out.push((self.form, self.lemma, self.upos, head, self.label));
        for i in heads_to_fix {
            out[i].3 = me;
        }
        for r in self.right {
            r.flatten(me, out);
        }
    }
}

fn noun_phrase<R: Rng>(rng: &mut R, label: &'static str, depth: usize) -> Node {
    if rng.random_bool(0.3) {
        let name = *PROPNS.choose(rng).unwrap();
        let mut n = Node::new(name, &name.to_lowercase(), "PROPN", label);
        if rng.random_bool(0.2) {
            let first = *PROPNS.choose(rng).unwrap();
            n.left.push(Node::new(first, &first.to_lowercase(), "PROPN", "compound"));
        }
        return n;
    }
    let noun = *NOUNS.choose(rng).unwrap();
    let mut n = Node::new(noun, noun, "NOUN", label);
    if rng.random_bool(0.75) {
        let d = *DETS.choose(rng).unwrap();
        n.left.push(Node::new(d, d, "DET", "det"));
    }
    for _ in 0..rng.random_range(0..=2) {
        let a = *ADJS.choose(rng).unwrap();
        n.left.push(Node::new(a, a, "ADJ", "amod"));
    }
    if rng.random_bool(0.2) {
        let c = *NOUNS.choose(rng).unwrap();
        n.left.push(Node::new(c, c, "NOUN", "compound"));
    }
    if depth < 2 && rng.random_bool(0.25) {
        n.right.push(prep_phrase(rng, "nmod", depth + 1));
    }
    n
}

fn prep_phrase<R: Rng>(rng: &mut R, label: &'static str, depth: usize) -> Node {
    let mut n = noun_phrase(rng, label, depth);
    let p = *PREPS.choose(rng).unwrap();
    n.left.insert(0, Node::new(p, p, "ADP", "case"));
    n
}

fn clause<R: Rng>(rng: &mut R, label: &'static str, depth: usize) -> Node {
    let (form, lemma) = *VERBS.choose(rng).unwrap();
    let mut v = Node::new(form, lemma, "VERB", label);
    if depth == 0 && rng.random_bool(0.15) {
        let a = *ADVS.choose(rng).unwrap();
        v.left.push(Node::new(&capitalize(a), a, "ADV", "advmod"));
        v.left.push(Node::new(",", ",", "PUNCT", "punct"));
    }
    v.left.push(noun_phrase(rng, "nsubj", depth));
    if rng.random_bool(0.3) {
        let (f, l) = *AUXES.choose(rng).unwrap();
        v.left.push(Node::new(f, l, "AUX", "aux"));
        if rng.random_bool(0.3) {
            v.left.push(Node::new("not", "not", "PART", "advmod"));
        }
    }
    if rng.random_bool(0.15) {
        let a = *ADVS.choose(rng).unwrap();
        v.left.push(Node::new(a, a, "ADV", "advmod"));
    }
    if rng.random_bool(0.8) {
        v.right.push(noun_phrase(rng, "obj", depth));
    }
    for _ in 0..rng.random_range(0..=2) {
        v.right.push(prep_phrase(rng, "obl", depth));
    }
    if depth == 0 && rng.random_bool(0.15) {
        let mut c = clause(rng, "conj", depth + 1);
        c.left.insert(0, Node::new("and", "and", "CCONJ", "cc"));
        v.right.push(c);
    }
    if depth == 0 && rng.random_bool(0.2) {
        let mut c = clause(rng, "advcl", depth + 1);
        let m = *MARKS.choose(rng).unwrap();
        c.left.insert(0, Node::new(m, m, "SCONJ", "mark"));
        v.right.push(c);
    }
    v
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map_or(String::new(), |f| f.to_uppercase().chain(c).collect())
}

/// One generated sentence with its parse.
pub fn synth_sentence<R: Rng>(id: &str, rng: &mut R) -> ParseGraph {
    let mut root = clause(rng, "root", 0);
    root.right.push(Node::new(".", ".", "PUNCT", "punct"));
    let mut flat = Vec::new();
    root.flatten(0, &mut flat);
    if let Some(first) = flat.first_mut() {
        first.0 = capitalize(&first.0);
    }
    let tokens = flat
        .iter()
        .enumerate()
        .map(|(i, (f, l, u, _, _))| Token::new(i + 1, f, l, u))
        .collect();
    let arcs = flat.iter().enumerate().map(|(i, t)| (t.3, i + 1, t.4.to_string())).collect();
    ParseGraph::new(id, tokens, arcs).expect("generated trees are well formed")
}

fn keep_prob(label: &str) -> f64 {
    match label.split(':').next().unwrap_or("") {
        "root" => 1.0,
        "nsubj" => 0.95,
        "obj" => 0.9,
        "case" | "cc" | "mark" => 0.95,
        "compound" | "flat" => 0.8,
        "conj" | "advcl" | "obl" => 0.6,
        "nmod" | "amod" | "det" => 0.5,
        "aux" => 0.4,
        "advmod" => 0.3,
        "punct" => 0.03,
        _ => 0.3,
    }
}

/// Samples a gold compression: a connected subtree grown from the root word
/// with label-dependent keep rates (negations are always kept with their
/// governor), then trimmed from the right to a random share of the sentence
/// length.
pub fn synth_gold<R: Rng>(g: &ParseGraph, rng: &mut R) -> Positions {
    let mut gold = Positions::new();
    let mut stack: Vec<usize> = g.children_of(0).to_vec();
    while let Some(v) = stack.pop() {
        let t = g.token(v);
        let e = g.governing_edge(v);
        let depth_decay = 0.85f64.powi(g.depth_of(v).saturating_sub(2) as i32);
        let p = if t.lemma == "not" {
            1.0
        } else if e.head == 0 {
            keep_prob(&e.label)
        } else {
            keep_prob(&e.label) * depth_decay
        };
        if rng.random_bool(p.clamp(0.0, 1.0)) {
            gold.insert(v);
            stack.extend(g.children_of(v));
        }
    }
    let share = rng.random_range(0.3..0.6);
    let cap = ((g.sentence_char_len() as f64 * share) as usize).max(1);
    while char_len(g, gold.iter().copied()) > cap {
        // drop the rightmost leaf of the kept subtree
        let leaf = gold
            .iter()
            .rev()
            .copied()
            .find(|&v| g.head_of(v) != 0 && !g.children_of(v).iter().any(|c| gold.contains(c)));
        match leaf {
            Some(v) => {
                gold.remove(&v);
            }
            None => break,
        }
    }
    gold
}

/// A generated corpus of `n` sentences with golds; roughly a fifth is tagged
/// as upstream test data.
pub fn desk_corpus(n: usize, seed: u64) -> Vec<(Arc<ParseGraph>, Positions, Option<Split>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let g = synth_sentence(&format!("desk-{i:05}"), &mut rng);
            let gold = synth_gold(&g, &mut rng);
            let split = if rng.random_bool(0.2) { Split::Test } else { Split::Train };
            (Arc::new(g), gold, Some(split))
        })
        .collect()
}

/// A right-branching chain of `n` two-letter tokens (token `i` governs
/// `i + 1`), used for timing the engines against sentence length.
pub fn chain_graph(n: usize) -> ParseGraph {
    let tokens = (1..=n).map(|i| Token::new(i, "ab", "ab", "NOUN")).collect();
    let arcs = (1..=n).map(|i| (i - 1, i, if i == 1 { "root" } else { "dep" }.to_string())).collect();
    ParseGraph::new(format!("chain-{n}"), tokens, arcs).expect("chains are trees")
}
