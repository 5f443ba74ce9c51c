//! Dependency-parsed sentences, CoNLL-U and JSON-lines I/O, and the
//! linearization function used for every character budget.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label given to the synthetic edges added by [`transform_root_edges`].
pub const ROOT_AUG_LABEL: &str = "root_aug";

/// Sorted set of 1-based token positions.
pub type Positions = BTreeSet<usize>;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("sentence {id}: {msg}")]
    InvalidGraph { id: String, msg: String },
    #[error("graph {0} already carries root-augmented edges")]
    AlreadyTransformed(String),
    #[error("instance {id}: {msg}")]
    InvalidInstance { id: String, msg: String },
    #[error("jsonl line {line}: {msg}")]
    Json { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub position: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub char_len: usize,
}

impl Token {
    pub fn new(position: usize, form: &str, lemma: &str, upos: &str) -> Token {
        Token {
            position,
            form: form.to_string(),
            lemma: lemma.to_string(),
            upos: upos.to_string(),
            char_len: form.chars().count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeOrigin {
    Tree,
    RootAugmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DepEdge {
    /// Governor position, 0 for the synthetic root.
    pub head: usize,
    pub child: usize,
    pub label: String,
    pub origin: EdgeOrigin,
}

/// Structural problems found while assembling a graph. Positions refer to
/// the offending child token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphDefect {
    EmptyForm(usize),
    NonContiguous(usize),
    HeadOutOfRange(usize),
    SelfLoop(usize),
    MissingHead(usize),
    DuplicateHead(usize),
    MultipleRoots(usize),
    NoRoot,
    Cycle(usize),
}

impl GraphDefect {
    fn position(&self) -> Option<usize> {
        match *self {
            GraphDefect::EmptyForm(p)
            | GraphDefect::NonContiguous(p)
            | GraphDefect::HeadOutOfRange(p)
            | GraphDefect::SelfLoop(p)
            | GraphDefect::MissingHead(p)
            | GraphDefect::DuplicateHead(p)
            | GraphDefect::MultipleRoots(p)
            | GraphDefect::Cycle(p) => Some(p),
            GraphDefect::NoRoot => None,
        }
    }

    fn describe(&self) -> String {
        match self {
            GraphDefect::EmptyForm(p) => format!("token {p} has an empty form"),
            GraphDefect::NonContiguous(p) => format!("token positions not contiguous at {p}"),
            GraphDefect::HeadOutOfRange(p) => format!("HEAD of token {p} is out of range"),
            GraphDefect::SelfLoop(p) => format!("token {p} governs itself"),
            GraphDefect::MissingHead(p) => format!("token {p} has no head"),
            GraphDefect::DuplicateHead(p) => format!("token {p} has more than one head"),
            GraphDefect::MultipleRoots(p) => format!("token {p} is a second root"),
            GraphDefect::NoRoot => "no token attaches to the root".to_string(),
            GraphDefect::Cycle(p) => format!("token {p} lies on a cycle"),
        }
    }
}

/// A dependency-parsed sentence. The tree is validated on construction and
/// never changes afterwards; transforms return new graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseGraph {
    id: String,
    tokens: Vec<Token>,
    /// Sorted by child, so `tree_edges[v - 1]` governs `v`.
    tree_edges: Vec<DepEdge>,
    aug_edges: Vec<DepEdge>,
    /// `children[h]` lists the tree dependents of `h` (0 = root), ascending.
    children: Vec<Vec<usize>>,
    /// Tree depth, root children at depth 1. Index 0 unused.
    depth: Vec<usize>,
}

impl ParseGraph {
    /// Builds a graph from tokens and `(head, child, label)` tree arcs.
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<Token>,
        arcs: Vec<(usize, usize, String)>,
    ) -> Result<ParseGraph, CorpusError> {
        let id = id.into();
        Self::build(id.clone(), tokens, arcs).map_err(|d| CorpusError::InvalidGraph {
            id,
            msg: d.describe(),
        })
    }

    fn build(
        id: String,
        tokens: Vec<Token>,
        arcs: Vec<(usize, usize, String)>,
    ) -> Result<ParseGraph, GraphDefect> {
        let n = tokens.len();
        for (i, t) in tokens.iter().enumerate() {
            if t.position != i + 1 {
                return Err(GraphDefect::NonContiguous(i + 1));
            }
            if t.form.is_empty() {
                return Err(GraphDefect::EmptyForm(i + 1));
            }
        }
        let mut slots: Vec<Option<(usize, String)>> = vec![None; n + 1];
        for (head, child, label) in arcs {
            if child == 0 || child > n {
                return Err(GraphDefect::HeadOutOfRange(child.max(1).min(n.max(1))));
            }
            if head > n {
                return Err(GraphDefect::HeadOutOfRange(child));
            }
            if head == child {
                return Err(GraphDefect::SelfLoop(child));
            }
            if slots[child].is_some() {
                return Err(GraphDefect::DuplicateHead(child));
            }
            slots[child] = Some((head, label));
        }
        let mut tree_edges = Vec::with_capacity(n);
        let mut children = vec![Vec::new(); n + 1];
        let mut root_seen = false;
        for (child, slot) in slots.into_iter().enumerate().skip(1) {
            let (head, label) = slot.ok_or(GraphDefect::MissingHead(child))?;
            if head == 0 {
                if root_seen {
                    return Err(GraphDefect::MultipleRoots(child));
                }
                root_seen = true;
            }
            children[head].push(child);
            tree_edges.push(DepEdge {
                head,
                child,
                label,
                origin: EdgeOrigin::Tree,
            });
        }
        if n > 0 && !root_seen {
            return Err(GraphDefect::NoRoot);
        }
        // Depths by walking down from the root; anything unreached is on a cycle.
        let mut depth = vec![usize::MAX; n + 1];
        depth[0] = 0;
        let mut stack = vec![0usize];
        while let Some(h) = stack.pop() {
            for &c in &children[h] {
                depth[c] = depth[h] + 1;
                stack.push(c);
            }
        }
        if let Some(v) = (1..=n).find(|&v| depth[v] == usize::MAX) {
            return Err(GraphDefect::Cycle(v));
        }
        Ok(ParseGraph {
            id,
            tokens,
            tree_edges,
            aug_edges: Vec::new(),
            children,
            depth,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token at 1-based position `v`.
    pub fn token(&self, v: usize) -> &Token {
        &self.tokens[v - 1]
    }

    pub fn tree_edges(&self) -> &[DepEdge] {
        &self.tree_edges
    }

    pub fn aug_edges(&self) -> &[DepEdge] {
        &self.aug_edges
    }

    pub fn is_transformed(&self) -> bool {
        !self.aug_edges.is_empty()
    }

    /// The tree edge governing `v`.
    pub fn governing_edge(&self, v: usize) -> &DepEdge {
        &self.tree_edges[v - 1]
    }

    pub fn head_of(&self, v: usize) -> usize {
        self.tree_edges[v - 1].head
    }

    /// Tree dependents of `h` in ascending order; `h = 0` gives the root's.
    pub fn children_of(&self, h: usize) -> &[usize] {
        &self.children[h]
    }

    pub fn depth_of(&self, v: usize) -> usize {
        self.depth[v]
    }

    /// Undirected tree neighbours of `v`, excluding the synthetic root.
    pub fn tree_neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        let head = self.head_of(v);
        (head != 0)
            .then_some(head)
            .into_iter()
            .chain(self.children[v].iter().copied())
    }

    /// All edges (tree first, then augmented).
    pub fn all_edges(&self) -> impl Iterator<Item = &DepEdge> {
        self.tree_edges.iter().chain(self.aug_edges.iter())
    }

    pub fn positions(&self) -> Positions {
        (1..=self.len()).collect()
    }

    /// Character length of the whole sentence under [`linearize`].
    pub fn sentence_char_len(&self) -> usize {
        char_len(self, 1..=self.len())
    }
}

fn lemma_or_form(lemma: &str, form: &str) -> String {
    if lemma == "_" {
        form.to_lowercase()
    } else {
        lemma.to_string()
    }
}

/// Parses a CoNLL-U document. Multiword-token ranges and empty nodes are
/// skipped; DEPS and MISC are ignored.
pub fn parse_conllu(text: &str) -> Result<Vec<ParseGraph>, CorpusError> {
    let mut graphs = Vec::new();
    let mut sent_id: Option<String> = None;
    let mut tokens: Vec<Token> = Vec::new();
    let mut arcs = Vec::new();
    let mut lines: Vec<usize> = Vec::new();

    let flush = |sent_id: &mut Option<String>,
                     tokens: &mut Vec<Token>,
                     arcs: &mut Vec<(usize, usize, String)>,
                     lines: &mut Vec<usize>,
                     graphs: &mut Vec<ParseGraph>|
     -> Result<(), CorpusError> {
        if tokens.is_empty() {
            sent_id.take();
            return Ok(());
        }
        let id = sent_id
            .take()
            .unwrap_or_else(|| format!("s{}", graphs.len() + 1));
        let g = ParseGraph::build(id, std::mem::take(tokens), std::mem::take(arcs)).map_err(
            |d| {
                let line = d
                    .position()
                    .and_then(|p| lines.get(p - 1).copied())
                    .unwrap_or_else(|| lines.first().copied().unwrap_or(0));
                CorpusError::Malformed {
                    line,
                    msg: d.describe(),
                }
            },
        )?;
        lines.clear();
        graphs.push(g);
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut sent_id, &mut tokens, &mut arcs, &mut lines, &mut graphs)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(rest) = comment.trim().strip_prefix("sent_id") {
                let rest = rest.trim_start();
                if let Some(v) = rest.strip_prefix('=') {
                    sent_id = Some(v.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(CorpusError::Malformed {
                line: line_no,
                msg: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let malformed = |msg: String| CorpusError::Malformed { line: line_no, msg };
        let position: usize = cols[0]
            .parse()
            .map_err(|_| malformed(format!("bad ID column {:?}", cols[0])))?;
        if position != tokens.len() + 1 {
            return Err(malformed(format!(
                "token ID {position} out of sequence (expected {})",
                tokens.len() + 1
            )));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| malformed(format!("bad HEAD column {:?}", cols[6])))?;
        let form = cols[1];
        tokens.push(Token::new(position, form, &lemma_or_form(cols[2], form), cols[3]));
        arcs.push((head, position, cols[7].to_string()));
        lines.push(line_no);
    }
    // HEAD range is checked once the sentence length is known.
    flush(&mut sent_id, &mut tokens, &mut arcs, &mut lines, &mut graphs)?;
    Ok(graphs)
}

/// Writes graphs as CoNLL-U (tree edges only).
pub fn serialize_conllu(graphs: &[ParseGraph]) -> String {
    let mut out = String::new();
    for g in graphs {
        let _ = writeln!(out, "# sent_id = {}", g.id);
        for (t, e) in g.tokens.iter().zip(&g.tree_edges) {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t_\t_\t{}\t{}\t_\t_",
                t.position, t.form, t.lemma, t.upos, e.head, e.label
            );
        }
        out.push('\n');
    }
    out
}

/// Adds a `root_aug` edge from the root to every token not already attached
/// to it.
pub fn transform_root_edges(g: &ParseGraph) -> Result<ParseGraph, CorpusError> {
    if g.is_transformed() {
        return Err(CorpusError::AlreadyTransformed(g.id.clone()));
    }
    let mut out = g.clone();
    out.aug_edges = g
        .tree_edges
        .iter()
        .filter(|e| e.head != 0)
        .map(|e| DepEdge {
            head: 0,
            child: e.child,
            label: ROOT_AUG_LABEL.to_string(),
            origin: EdgeOrigin::RootAugmented,
        })
        .collect();
    Ok(out)
}

/// Base relations that receive a function-word suffix.
const SUFFIXABLE: [&str; 5] = ["nmod", "obl", "conj", "acl", "advcl"];

/// Suffixes modifier and conjunct labels with the lemma of their `case` or
/// `cc` dependent (`nmod` + case "in" becomes `nmod:in`). The leftmost such
/// dependent wins when there are several.
pub fn relabel_function_edges(g: &ParseGraph) -> ParseGraph {
    let mut out = g.clone();
    for e in out.tree_edges.iter_mut() {
        if !SUFFIXABLE.contains(&e.label.as_str()) {
            continue;
        }
        let marker = g.children[e.child].iter().copied().find(|&c| {
            let l = g.tree_edges[c - 1].label.as_str();
            l == "case" || l == "cc"
        });
        if let Some(m) = marker {
            e.label = format!("{}:{}", e.label, g.token(m).lemma.to_lowercase());
        }
    }
    out
}

/// Total character length of `verts` joined by single spaces.
pub fn char_len(g: &ParseGraph, verts: impl IntoIterator<Item = usize>) -> usize {
    let (sum, count) = verts
        .into_iter()
        .fold((0usize, 0usize), |(s, c), v| (s + g.token(v).char_len, c + 1));
    sum + count.saturating_sub(1)
}

/// Renders `verts` left to right with single spaces, returning the text and
/// its character length.
pub fn linearize(g: &ParseGraph, verts: &Positions) -> (String, usize) {
    let text = verts
        .iter()
        .map(|&v| g.token(v).form.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let len = char_len(g, verts.iter().copied());
    (text, len)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// A constrained compression problem: sentence, query, character budget and
/// optionally a known-good compression.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub graph: Arc<ParseGraph>,
    pub query: Positions,
    pub budget: usize,
    pub gold: Option<Positions>,
    pub split: Option<Split>,
}

impl Instance {
    pub fn new(
        graph: Arc<ParseGraph>,
        query: Positions,
        budget: usize,
        gold: Option<Positions>,
    ) -> Result<Instance, CorpusError> {
        let bad = |msg: &str| CorpusError::InvalidInstance {
            id: graph.id().to_string(),
            msg: msg.to_string(),
        };
        let n = graph.len();
        let in_range = |s: &Positions| s.iter().all(|&v| v >= 1 && v <= n);
        if budget == 0 {
            return Err(bad("budget must be at least 1"));
        }
        if !in_range(&query) {
            return Err(bad("query position out of range"));
        }
        if let Some(gold) = &gold {
            if !in_range(gold) {
                return Err(bad("gold position out of range"));
            }
            if !query.is_subset(gold) {
                return Err(bad("query is not contained in gold"));
            }
        }
        Ok(Instance {
            graph,
            query,
            budget,
            gold,
            split: None,
        })
    }

    pub fn id(&self) -> &str {
        self.graph.id()
    }

    pub fn with_split(mut self, split: Option<Split>) -> Instance {
        self.split = split;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub form: String,
    pub lemma: String,
    pub upos: String,
}

/// One line of the JSON-lines interchange format. Graph-only files omit
/// `query`, `budget` and `gold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub tokens: Vec<TokenRecord>,
    pub edges: Vec<(usize, usize, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl InstanceRecord {
    pub fn from_graph(g: &ParseGraph) -> InstanceRecord {
        InstanceRecord {
            id: g.id.clone(),
            tokens: g
                .tokens
                .iter()
                .map(|t| TokenRecord {
                    form: t.form.clone(),
                    lemma: t.lemma.clone(),
                    upos: t.upos.clone(),
                })
                .collect(),
            edges: g
                .all_edges()
                .map(|e| (e.head, e.child, e.label.clone()))
                .collect(),
            query: None,
            budget: None,
            gold: None,
            split: None,
        }
    }

    pub fn from_instance(inst: &Instance) -> InstanceRecord {
        let mut rec = InstanceRecord::from_graph(&inst.graph);
        rec.query = Some(inst.query.iter().copied().collect());
        rec.budget = Some(inst.budget);
        rec.gold = inst.gold.as_ref().map(|g| g.iter().copied().collect());
        rec.split = inst.split;
        rec
    }

    /// Rebuilds the graph. Edges labelled `root_aug` from the root are
    /// treated as augmented edges, everything else as the tree.
    pub fn to_graph(&self) -> Result<ParseGraph, CorpusError> {
        let tokens = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| Token::new(i + 1, &t.form, &t.lemma, &t.upos))
            .collect();
        let (aug, tree): (Vec<_>, Vec<_>) = self
            .edges
            .iter()
            .cloned()
            .partition(|(h, _, l)| *h == 0 && l == ROOT_AUG_LABEL);
        let mut g = ParseGraph::new(self.id.clone(), tokens, tree)?;
        if !aug.is_empty() {
            let mut seen = BTreeSet::new();
            for (_, c, _) in &aug {
                if *c == 0 || *c > g.len() || g.head_of(*c) == 0 || !seen.insert(*c) {
                    return Err(CorpusError::InvalidGraph {
                        id: self.id.clone(),
                        msg: format!("invalid root_aug edge to {c}"),
                    });
                }
            }
            g.aug_edges = aug
                .into_iter()
                .map(|(h, c, l)| DepEdge {
                    head: h,
                    child: c,
                    label: l,
                    origin: EdgeOrigin::RootAugmented,
                })
                .collect();
        }
        Ok(g)
    }

    pub fn to_instance(&self) -> Result<Instance, CorpusError> {
        let graph = Arc::new(self.to_graph()?);
        let budget = self.budget.ok_or_else(|| CorpusError::InvalidInstance {
            id: self.id.clone(),
            msg: "missing budget".to_string(),
        })?;
        let query = self.query.iter().flatten().copied().collect();
        let gold = self.gold.as_ref().map(|g| g.iter().copied().collect());
        Ok(Instance::new(graph, query, budget, gold)?.with_split(self.split))
    }
}

fn parse_jsonl_lines(text: &str) -> impl Iterator<Item = Result<(usize, InstanceRecord), CorpusError>> + '_ {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<InstanceRecord>(l)
                .map(|r| (i + 1, r))
                .map_err(|e| CorpusError::Json {
                    line: i + 1,
                    msg: e.to_string(),
                })
        })
}

/// Reads every record as a graph, ignoring instance fields.
pub fn read_graphs_jsonl(text: &str) -> Result<Vec<(ParseGraph, InstanceRecord)>, CorpusError> {
    parse_jsonl_lines(text)
        .map(|r| {
            let (_, rec) = r?;
            Ok((rec.to_graph()?, rec))
        })
        .collect()
}

pub fn read_instances_jsonl(text: &str) -> Result<Vec<Instance>, CorpusError> {
    parse_jsonl_lines(text)
        .map(|r| {
            let (line, rec) = r?;
            rec.to_instance().map_err(|e| CorpusError::Json {
                line,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_instances_jsonl(instances: &[Instance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(&InstanceRecord::from_instance(inst)).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn write_graphs_jsonl(graphs: &[ParseGraph]) -> String {
    let mut out = String::new();
    for g in graphs {
        out.push_str(&serde_json::to_string(&InstanceRecord::from_graph(g)).expect("serializable"));
        out.push('\n');
    }
    out
}
