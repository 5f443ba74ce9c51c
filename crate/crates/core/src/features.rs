//! Sparse hashed features for transition decisions and ILP edges.
//!
//! Three families are emitted as readable names and hashed into a fixed
//! space with 64-bit FNV-1a:
//!
//! * `e/` edge features of the parse arc linking a candidate to the
//!   compression (or the arc being scored by the ILP),
//! * `s/` stateful features relating the candidate to the current state,
//! * `x/` every stateful feature crossed with the candidate's governing label
//!   and with the direction of the linking arc.
//!
//! The edge family is the committed feature set; see [`EDGE_FEATURE_TEMPLATES`].

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DepEdge, Instance, ParseGraph};
use crate::engine::CompressionState;

/// Edge feature templates, in emission order. `c` is the dependent of the
/// arc and `h` its governor.
pub const EDGE_FEATURE_TEMPLATES: [&str; 11] = [
    "lab=<label>",
    "lab=<label>&cupos=<upos(c)>",
    "hupos=<upos(h) or ROOT>",
    "depth=<depth of c below the root word, capped at 6>",
    "kids=<number of dependents of c, capped at 4>",
    "clen=<s|m|l: chars of c <=3, 4-7, 8+>",
    "dist=<root|1|2|3-5|6+: |h - c|>",
    "neg (c is not/never/no)",
    "nopunct (c has no punctuation dependent)",
    "lem=<lemma(c) or OOV>",
    "lempair=<lemma(h)^lemma(c) or OOV>",
];

pub const BIAS_FEATURE: &str = "bias";

const NEGATIONS: [&str; 3] = ["not", "never", "no"];

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("feature dimension {0} must be a power of two no smaller than 2^16")]
    BadDimension(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub use_edge: bool,
    pub use_stateful: bool,
    pub use_interaction: bool,
    pub dim: usize,
    pub lexical_vocab_cutoff: usize,
}

impl FeatureConfig {
    pub const DEFAULT_DIM: usize = 1 << 18;
    pub const DEFAULT_VOCAB_CUTOFF: usize = 5000;

    pub fn full() -> FeatureConfig {
        FeatureConfig {
            use_edge: true,
            use_stateful: true,
            use_interaction: true,
            dim: Self::DEFAULT_DIM,
            lexical_vocab_cutoff: Self::DEFAULT_VOCAB_CUTOFF,
        }
    }

    /// Edge features only.
    pub fn ablated() -> FeatureConfig {
        FeatureConfig {
            use_stateful: false,
            use_interaction: false,
            ..Self::full()
        }
    }

    pub fn is_ablated(&self) -> bool {
        self.use_edge && !self.use_stateful && !self.use_interaction
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.dim < (1 << 16) || !self.dim.is_power_of_two() {
            return Err(FeatureError::BadDimension(self.dim));
        }
        Ok(())
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn hash_index(name: &str, dim: usize) -> u32 {
    (fnv1a(name.as_bytes()) & (dim as u64 - 1)) as u32
}

/// Sparse vector with sorted, unique indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    /// Hashes indicator names; colliding names add up.
    pub fn from_names<S: AsRef<str>>(names: &[S], dim: usize) -> FeatureVector {
        let mut raw: Vec<(u32, f64)> = names
            .iter()
            .map(|n| (hash_index(n.as_ref(), dim), 1.0))
            .collect();
        raw.sort_unstable_by_key(|e| e.0);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(raw.len());
        for (i, v) in raw {
            match entries.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => entries.push((i, v)),
            }
        }
        FeatureVector { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| weights[i as usize] * v).sum()
    }

    pub fn max_index(&self) -> Option<u32> {
        self.entries.last().map(|e| e.0)
    }
}

/// The most frequent training lemmas; everything else is `OOV`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LemmaVocab {
    lemmas: Vec<String>,
    set: HashSet<String>,
}

impl From<Vec<String>> for LemmaVocab {
    fn from(lemmas: Vec<String>) -> LemmaVocab {
        LemmaVocab::new(lemmas)
    }
}

impl From<LemmaVocab> for Vec<String> {
    fn from(v: LemmaVocab) -> Vec<String> {
        v.lemmas
    }
}

impl LemmaVocab {
    pub fn new(lemmas: Vec<String>) -> LemmaVocab {
        let set = lemmas.iter().cloned().collect();
        LemmaVocab { lemmas, set }
    }

    /// Keeps the `cutoff` most frequent lowercased lemmas; ties go to the
    /// alphabetically smaller lemma.
    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a ParseGraph>, cutoff: usize) -> LemmaVocab {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for g in graphs {
            for t in g.tokens() {
                *counts.entry(t.lemma.to_lowercase()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cutoff);
        let mut lemmas: Vec<String> = ranked.into_iter().map(|(l, _)| l).collect();
        lemmas.sort();
        LemmaVocab::new(lemmas)
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.set.contains(lemma)
    }

    pub fn len(&self) -> usize {
        self.lemmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lemmas.is_empty()
    }

    pub fn lemmas(&self) -> &[String] {
        &self.lemmas
    }
}

/// Direction of the arc between the candidate `v` and its connecting vertex `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkDirection {
    UGovernsV,
    VGovernsU,
    NoEdge,
}

impl LinkDirection {
    fn name(self) -> &'static str {
        match self {
            LinkDirection::UGovernsV => "u_governs_v",
            LinkDirection::VGovernsU => "v_governs_u",
            LinkDirection::NoEdge => "no_edge",
        }
    }
}

/// The accepted tree neighbour of `v` that joined the compression first,
/// ties broken by position.
pub fn connecting_vertex(g: &ParseGraph, state: &CompressionState, v: usize) -> Option<usize> {
    g.tree_neighbors(v)
        .filter_map(|u| state.accepted_at(u).map(|t| (t, u)))
        .min()
        .map(|(_, u)| u)
}

pub fn link_direction(g: &ParseGraph, u: Option<usize>, v: usize) -> LinkDirection {
    match u {
        Some(u) if g.head_of(v) == u => LinkDirection::UGovernsV,
        Some(u) if g.head_of(u) == v => LinkDirection::VGovernsU,
        _ => LinkDirection::NoEdge,
    }
}

fn len_bucket(chars: usize) -> &'static str {
    match chars {
        0..=3 => "s",
        4..=7 => "m",
        _ => "l",
    }
}

fn tenth_bucket(num: usize, den: usize) -> String {
    let k = (num * 10).checked_div(den).map_or(0, |x| x.min(9));
    format!("[{:.1},{:.1})", k as f64 / 10.0, (k + 1) as f64 / 10.0)
}

fn size_bucket(n: usize) -> &'static str {
    match n {
        0 => "0",
        1 => "1",
        2 => "2",
        3 => "3",
        4..=5 => "4-5",
        6..=9 => "6-9",
        _ => "10+",
    }
}

/// Turns decisions and ILP arcs into feature vectors.
#[derive(Debug, Clone)]
pub struct Featurizer {
    config: FeatureConfig,
    vocab: LemmaVocab,
}

impl Featurizer {
    pub fn new(config: FeatureConfig, vocab: LemmaVocab) -> Result<Featurizer, FeatureError> {
        config.validate()?;
        Ok(Featurizer { config, vocab })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn vocab(&self) -> &LemmaVocab {
        &self.vocab
    }

    fn lemma(&self, g: &ParseGraph, v: usize) -> String {
        if v == 0 {
            return "<root>".to_string();
        }
        let l = g.token(v).lemma.to_lowercase();
        if self.vocab.contains(&l) {
            l
        } else {
            "OOV".to_string()
        }
    }

    /// Edge-family names for `edge`, or the NONE family for `v` when the
    /// candidate has no arc into the compression.
    pub fn edge_feature_names(&self, g: &ParseGraph, edge: Option<&DepEdge>, v: usize) -> Vec<String> {
        let Some(e) = edge else {
            return vec!["e/none".to_string(), format!("e/none&upos={}", g.token(v).upos)];
        };
        let (h, c) = (e.head, e.child);
        let tok = g.token(c);
        let mut out = Vec::with_capacity(EDGE_FEATURE_TEMPLATES.len());
        out.push(format!("e/lab={}", e.label));
        out.push(format!("e/lab={}&cupos={}", e.label, tok.upos));
        let hupos = if h == 0 { "ROOT" } else { g.token(h).upos.as_str() };
        out.push(format!("e/hupos={hupos}"));
        out.push(format!("e/depth={}", (g.depth_of(c) - 1).min(6)));
        out.push(format!("e/kids={}", g.children_of(c).len().min(4)));
        out.push(format!("e/clen={}", len_bucket(tok.char_len)));
        let dist = if h == 0 {
            "root"
        } else {
            match h.abs_diff(c) {
                1 => "1",
                2 => "2",
                3..=5 => "3-5",
                _ => "6+",
            }
        };
        out.push(format!("e/dist={dist}"));
        let lower = tok.lemma.to_lowercase();
        if NEGATIONS.contains(&lower.as_str()) || NEGATIONS.contains(&tok.form.to_lowercase().as_str()) {
            out.push("e/neg".to_string());
        }
        let has_punct = g.children_of(c).iter().any(|&k| {
            g.token(k).upos == "PUNCT" || g.governing_edge(k).label == "punct"
        });
        if !has_punct {
            out.push("e/nopunct".to_string());
        }
        let lc = self.lemma(g, c);
        out.push(format!("e/lem={lc}"));
        let lh = self.lemma(g, h);
        if lc == "OOV" || lh == "OOV" {
            out.push("e/lempair=OOV".to_string());
        } else {
            out.push(format!("e/lempair={lh}^{lc}"));
        }
        out
    }

    /// The arc between `v` and its connecting vertex, if any.
    pub fn linking_edge<'g>(g: &'g ParseGraph, state: &CompressionState, v: usize) -> Option<&'g DepEdge> {
        let u = connecting_vertex(g, state, v)?;
        match link_direction(g, Some(u), v) {
            LinkDirection::UGovernsV => Some(g.governing_edge(v)),
            LinkDirection::VGovernsU => Some(g.governing_edge(u)),
            LinkDirection::NoEdge => None,
        }
    }

    /// Stateful names without namespace.
    fn stateful_core(&self, g: &ParseGraph, state: &CompressionState, v: usize) -> Vec<String> {
        let pos = match (state.min_accepted(), state.max_accepted()) {
            (Some(lo), _) if v < lo => "left",
            (_, Some(hi)) if v > hi => "right",
            (Some(_), Some(_)) => "inside",
            _ => "empty",
        };
        let adjacent = g.tree_neighbors(v).any(|u| state.is_accepted(u));
        vec![
            format!("pos={pos}"),
            format!("budget={}", tenth_bucket(state.used_chars(), state.budget())),
            format!("csize={}", size_bucket(state.accepted_count())),
            format!("consumed={}", tenth_bucket(state.timestep(), state.initial_queue_len())),
            format!("adj={}", u8::from(adjacent)),
            format!("vlen={}", len_bucket(g.token(v).char_len)),
        ]
    }

    pub fn stateful_feature_names(&self, g: &ParseGraph, state: &CompressionState, v: usize) -> Vec<String> {
        self.stateful_core(g, state, v)
            .into_iter()
            .map(|s| format!("s/{s}"))
            .collect()
    }

    pub fn interaction_feature_names(&self, g: &ParseGraph, state: &CompressionState, v: usize) -> Vec<String> {
        let label = &g.governing_edge(v).label;
        let dir = link_direction(g, connecting_vertex(g, state, v), v).name();
        let core = self.stateful_core(g, state, v);
        let mut out = Vec::with_capacity(core.len() * 2);
        for s in &core {
            out.push(format!("x/{s}&lab={label}"));
            out.push(format!("x/{s}&dir={dir}"));
        }
        out
    }

    /// All enabled family names plus the bias indicator.
    pub fn feature_names(&self, inst: &Instance, state: &CompressionState, v: usize) -> Vec<String> {
        let g = &inst.graph;
        let mut names = vec![BIAS_FEATURE.to_string()];
        if self.config.use_edge {
            names.extend(self.edge_feature_names(g, Self::linking_edge(g, state, v), v));
        }
        if self.config.use_stateful {
            names.extend(self.stateful_feature_names(g, state, v));
        }
        if self.config.use_interaction {
            names.extend(self.interaction_feature_names(g, state, v));
        }
        names
    }

    pub fn featurize(&self, inst: &Instance, state: &CompressionState, v: usize) -> FeatureVector {
        FeatureVector::from_names(&self.feature_names(inst, state, v), self.config.dim)
    }

    pub fn edge_features(&self, g: &ParseGraph, edge: Option<&DepEdge>, v: usize) -> FeatureVector {
        FeatureVector::from_names(&self.edge_feature_names(g, edge, v), self.config.dim)
    }
}

/// TSV of `name, index, weight` rows sorted by name.
pub fn feature_weight_tsv<'a>(names: impl IntoIterator<Item = &'a str>, weights: &[f64]) -> String {
    let dim = weights.len();
    let table: BTreeMap<&str, u32> = names.into_iter().map(|n| (n, hash_index(n, dim))).collect();
    let mut out = String::from("name\tindex\tweight\n");
    for (name, idx) in table {
        out.push_str(&format!("{name}\t{idx}\t{}\n", weights[idx as usize]));
    }
    out
}
