//! Boolean retrieval over an indexed corpus with constrained compression of
//! each match into a snippet.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{char_len, linearize, Instance, ParseGraph, Positions};
use crate::system::{check_output, Compressor, EngineKind, SystemError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("duplicate sentence id {0:?}")]
    DuplicateId(String),
    #[error("unknown engine {0:?}")]
    UnknownEngine(String),
    #[error("{0} must be at least 1")]
    BadParameter(&'static str),
    #[error("snippet for {id} violates its contract: {msg}")]
    Contract { id: String, msg: String },
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Case-folded token → sorted sentence numbers.
#[derive(Debug, Default)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<u32>>,
    sentences: Vec<Arc<ParseGraph>>,
}

pub fn index_corpus(graphs: impl IntoIterator<Item = Arc<ParseGraph>>) -> Result<InvertedIndex, ServiceError> {
    let mut index = InvertedIndex::default();
    let mut seen: HashMap<String, u32> = HashMap::new();
    for g in graphs {
        let doc = index.sentences.len() as u32;
        if seen.insert(g.id().to_string(), doc).is_some() {
            return Err(ServiceError::DuplicateId(g.id().to_string()));
        }
        for t in g.tokens() {
            let list = index.postings.entry(t.form.to_lowercase()).or_default();
            // documents arrive in increasing order, so checking the tail dedups
            if list.last() != Some(&doc) {
                list.push(doc);
            }
        }
        index.sentences.push(g);
    }
    Ok(index)
}

impl InvertedIndex {
    pub fn postings(&self, term: &str) -> &[u32] {
        self.postings.get(&term.to_lowercase()).map_or(&[], Vec::as_slice)
    }

    pub fn sentence(&self, doc: u32) -> &Arc<ParseGraph> {
        &self.sentences[doc as usize]
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    /// Sentences containing every term.
    pub fn matching(&self, terms: &[String]) -> Vec<u32> {
        let Some((first, rest)) = terms.split_first() else {
            return Vec::new();
        };
        let mut acc = self.postings(first).to_vec();
        for t in rest {
            let other = self.postings(t);
            acc.retain(|d| other.binary_search(d).is_ok());
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub sentence_id: String,
    pub text: String,
    pub char_len: usize,
    pub engine: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub sentence_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub query: String,
    pub budget: usize,
    pub snippets: Vec<Snippet>,
    #[serde(default)]
    pub skipped: Vec<Skipped>,
    pub total_ms: f64,
}

/// Lowercased, deduplicated terms in order of first appearance.
pub fn normalize_terms(query: &str) -> Vec<String> {
    let mut terms: Vec<String> = Vec::new();
    for t in query.split_whitespace().map(str::to_lowercase) {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    terms
}

/// Leftmost position of each term in `g`.
pub fn query_positions(g: &ParseGraph, terms: &[String]) -> Option<Positions> {
    terms
        .iter()
        .map(|t| g.tokens().iter().find(|tok| tok.form.to_lowercase() == *t).map(|tok| tok.position))
        .collect()
}

/// Compresses up to `k` matching sentences, shortest source first (ties by
/// index order). Sentences whose query alone exceeds `b` are reported in
/// `skipped` and do not count towards `k`.
pub fn search(
    index: &InvertedIndex,
    query: &str,
    b: usize,
    k: usize,
    engine: &dyn Compressor,
) -> Result<SearchResponse, ServiceError> {
    if k == 0 {
        return Err(ServiceError::BadParameter("k"));
    }
    if b == 0 {
        return Err(ServiceError::BadParameter("b"));
    }
    let start = Instant::now();
    let terms = normalize_terms(query);
    let mut docs = index.matching(&terms);
    docs.sort_by_key(|&d| (index.sentence(d).sentence_char_len(), d));

    let mut snippets = Vec::new();
    let mut skipped = Vec::new();
    for d in docs {
        if snippets.len() == k {
            break;
        }
        let g = index.sentence(d);
        let q = query_positions(g, &terms).expect("postings only list sentences with every term");
        let needed = char_len(g, q.iter().copied());
        if needed > b {
            skipped.push(Skipped {
                sentence_id: g.id().to_string(),
                reason: format!("query needs {needed} characters, budget is {b}"),
            });
            continue;
        }
        let inst = Instance::new(g.clone(), q, b, None).expect("query positions come from the sentence");
        let t0 = Instant::now();
        let kept = engine.compress(&inst)?;
        let latency_ms = t0.elapsed().as_secs_f64() * 1e3;
        let snippet = make_snippet(&inst, &kept, engine.name(), latency_ms, &terms)?;
        snippets.push(snippet);
    }
    Ok(SearchResponse {
        query: query.to_string(),
        budget: b,
        snippets,
        skipped,
        total_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn make_snippet(
    inst: &Instance,
    kept: &Positions,
    engine: &str,
    latency_ms: f64,
    terms: &[String],
) -> Result<Snippet, ServiceError> {
    let contract = |msg: String| ServiceError::Contract {
        id: inst.id().to_string(),
        msg,
    };
    check_output(inst, kept).map_err(|e| contract(e.to_string()))?;
    let (text, len) = linearize(&inst.graph, kept);
    let words: Vec<String> = text.split(' ').map(str::to_lowercase).collect();
    if let Some(t) = terms.iter().find(|t| !words.contains(t)) {
        return Err(contract(format!("term {t:?} missing from snippet")));
    }
    Ok(Snippet {
        sentence_id: inst.id().to_string(),
        text,
        char_len: len,
        engine: engine.to_string(),
        latency_ms,
    })
}

/// The engines available to a running service.
#[derive(Default)]
pub struct Engines {
    map: BTreeMap<EngineKind, Box<dyn Compressor>>,
}

impl Engines {
    pub fn insert(&mut self, kind: EngineKind, c: Box<dyn Compressor>) {
        self.map.insert(kind, c);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.map.keys().map(|k| k.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn Compressor, ServiceError> {
        let unknown = || ServiceError::UnknownEngine(name.to_string());
        let kind: EngineKind = name.parse().map_err(|_| unknown())?;
        self.map.get(&kind).map(|c| c.as_ref()).ok_or_else(unknown)
    }
}
