//! Edge-selection compression with a global objective.
//!
//! A compression is an arborescence over the root-augmented parse: every kept
//! token takes exactly one incoming edge, either its tree edge (when its
//! governor is kept or is the root) or the synthetic `root_aug` edge. The
//! objective is the sum of learned edge scores, subject to the query and the
//! character budget. Connectivity is structural: vertexes are decided in
//! parent-before-child order, so a tree edge is only available once its
//! head has been kept. The search is an exact depth-first branch and bound.

use std::sync::Arc;

use log::debug;
use thiserror::Error;

use crate::corpus::{char_len, transform_root_edges, CorpusError, DepEdge, EdgeOrigin, Instance, ParseGraph, Positions};
use crate::eval::token_f1;
use crate::features::{FeatureVector, Featurizer};

pub const DEFAULT_NODE_LIMIT: u64 = 500_000;
pub const MAX_EXACT_TOKENS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum IlpError {
    #[error("query needs {needed} characters but the budget is {budget}")]
    Infeasible { needed: usize, budget: usize },
    #[error("node limit must be positive")]
    ZeroNodeLimit,
    #[error("graph {0} has no root-augmented edges")]
    NotTransformed(String),
    #[error("exhaustive search refused for {0} tokens (max {MAX_EXACT_TOKENS})")]
    TooLarge(usize),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Score of every candidate incoming edge of each token.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScores {
    /// `tree[v]`: score of the tree edge governing `v`. Index 0 unused.
    pub tree: Vec<f64>,
    /// `aug[v]`: score of the `root_aug` edge into `v`, if there is one.
    pub aug: Vec<Option<f64>>,
}

impl EdgeScores {
    /// Scores every edge with `f`.
    pub fn from_fn(g: &ParseGraph, mut f: impl FnMut(&DepEdge) -> f64) -> EdgeScores {
        let n = g.len();
        let mut tree = vec![0.0; n + 1];
        let mut aug = vec![None; n + 1];
        for e in g.tree_edges() {
            tree[e.child] = f(e);
        }
        for e in g.aug_edges() {
            aug[e.child] = Some(f(e));
        }
        EdgeScores { tree, aug }
    }

    /// Best incoming edge for `v` given whether its governor is kept.
    fn best(&self, g: &ParseGraph, v: usize, head_kept: bool) -> (f64, EdgeOrigin) {
        let tree_ok = head_kept || g.head_of(v) == 0;
        match (tree_ok, self.aug[v]) {
            (true, Some(a)) if a > self.tree[v] => (a, EdgeOrigin::RootAugmented),
            (true, _) => (self.tree[v], EdgeOrigin::Tree),
            (false, Some(a)) => (a, EdgeOrigin::RootAugmented),
            (false, None) => (f64::NEG_INFINITY, EdgeOrigin::Tree),
        }
    }

    fn optimistic(&self, v: usize) -> f64 {
        self.aug[v].map_or(self.tree[v], |a| a.max(self.tree[v]))
    }
}

/// Anything that can score the edges of a transformed graph.
pub trait EdgeScorer {
    fn edge_scores(&self, g: &ParseGraph) -> EdgeScores;
}

impl EdgeScorer for EdgeScores {
    fn edge_scores(&self, _: &ParseGraph) -> EdgeScores {
        self.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SearchStats {
    pub nodes_expanded: u64,
    pub proven_optimal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IlpSolution {
    pub selected_edges: Vec<DepEdge>,
    pub objective: f64,
    pub nodes: Positions,
    pub stats: SearchStats,
}

/// Sum of best available edge scores of `nodes`, in ascending position.
fn objective_of(g: &ParseGraph, scores: &EdgeScores, nodes: &Positions) -> f64 {
    nodes
        .iter()
        .map(|&v| scores.best(g, v, nodes.contains(&g.head_of(v))).0)
        .sum()
}

fn solution_for(g: &ParseGraph, scores: &EdgeScores, nodes: Positions, stats: SearchStats) -> IlpSolution {
    let selected_edges = nodes
        .iter()
        .map(|&v| match scores.best(g, v, nodes.contains(&g.head_of(v))).1 {
            EdgeOrigin::Tree => g.governing_edge(v).clone(),
            EdgeOrigin::RootAugmented => g
                .aug_edges()
                .iter()
                .find(|e| e.child == v)
                .expect("augmented edge exists")
                .clone(),
        })
        .collect();
    let objective = objective_of(g, scores, &nodes);
    IlpSolution {
        selected_edges,
        objective,
        nodes,
        stats,
    }
}

struct Search<'a> {
    g: &'a ParseGraph,
    scores: &'a EdgeScores,
    /// Vertexes in parent-before-child order.
    order: Vec<usize>,
    /// Non-query vertexes by optimistic gain per character, best first.
    by_ratio: Vec<usize>,
    in_query: Vec<bool>,
    /// Characters (token plus separator) of query vertexes at or after each
    /// depth of `order`.
    query_cost_after: Vec<usize>,
    query_gain_after: Vec<f64>,
    capacity: usize,
    kept: Vec<bool>,
    decided: Vec<bool>,
    best: Option<(f64, Vec<bool>)>,
    expanded: u64,
    limit: u64,
    aborted: bool,
}

impl Search<'_> {
    fn cost(&self, v: usize) -> usize {
        self.g.token(v).char_len + 1
    }

    /// Admissible bound on what the undecided vertexes can still add.
    fn bound(&self, depth: usize, used: usize) -> f64 {
        let mut room = self.capacity - used - self.query_cost_after[depth];
        let mut extra = self.query_gain_after[depth];
        for &v in &self.by_ratio {
            if self.decided[v] {
                continue;
            }
            let gain = self.scores.optimistic(v);
            if gain <= 0.0 {
                break;
            }
            let c = self.cost(v);
            if c <= room {
                room -= c;
                extra += gain;
            } else {
                extra += gain * room as f64 / c as f64;
                break;
            }
        }
        extra
    }

    fn dfs(&mut self, depth: usize, used: usize, value: f64) {
        if self.aborted {
            return;
        }
        self.expanded += 1;
        if self.expanded > self.limit {
            self.aborted = true;
            return;
        }
        if depth == self.order.len() {
            if self.best.as_ref().is_none_or(|(b, _)| value > *b) {
                self.best = Some((value, self.kept.clone()));
            }
            return;
        }
        if let Some((b, _)) = &self.best {
            if value + self.bound(depth, used) <= *b {
                return;
            }
        }
        let v = self.order[depth];
        let head = self.g.head_of(v);
        let (w, _) = self.scores.best(self.g, v, head != 0 && self.kept[head]);
        let can_include = w.is_finite() && used + self.cost(v) <= self.capacity - self.query_cost_after[depth + 1];
        let must_include = self.in_query[v];

        let mut branches: Vec<bool> = Vec::with_capacity(2);
        if can_include {
            branches.push(true);
        }
        if !must_include {
            if w > 0.0 {
                branches.push(false);
            } else {
                branches.insert(0, false);
            }
        }
        self.decided[v] = true;
        for include in branches {
            if include {
                self.kept[v] = true;
                self.dfs(depth + 1, used + self.cost(v), value + w);
                self.kept[v] = false;
            } else {
                self.dfs(depth + 1, used, value);
            }
        }
        self.decided[v] = false;
    }
}

fn check_query_fits(g: &ParseGraph, query: &Positions, budget: usize) -> Result<(), IlpError> {
    let needed = char_len(g, query.iter().copied());
    if needed > budget {
        return Err(IlpError::Infeasible { needed, budget });
    }
    Ok(())
}

/// Exact branch and bound. Stops after `node_limit` search nodes and then
/// returns the best solution found with `proven_optimal = false`.
pub fn decode<S: EdgeScorer + ?Sized>(
    g: &ParseGraph,
    scorer: &S,
    query: &Positions,
    budget: usize,
    node_limit: u64,
) -> Result<IlpSolution, IlpError> {
    if g.len() > 1 && !g.is_transformed() {
        return Err(IlpError::NotTransformed(g.id().to_string()));
    }
    if node_limit == 0 {
        return Err(IlpError::ZeroNodeLimit);
    }
    check_query_fits(g, query, budget)?;
    let scores = scorer.edge_scores(g);
    let n = g.len();

    let mut order = Vec::with_capacity(n);
    let mut stack: Vec<usize> = g.children_of(0).iter().rev().copied().collect();
    while let Some(v) = stack.pop() {
        order.push(v);
        stack.extend(g.children_of(v).iter().rev());
    }
    let mut in_query = vec![false; n + 1];
    for &q in query {
        in_query[q] = true;
    }
    let mut by_ratio: Vec<usize> = (1..=n).filter(|&v| !in_query[v]).collect();
    by_ratio.sort_by(|&a, &b| {
        let ra = scores.optimistic(a) / (g.token(a).char_len + 1) as f64;
        let rb = scores.optimistic(b) / (g.token(b).char_len + 1) as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut query_cost_after = vec![0usize; n + 1];
    let mut query_gain_after = vec![0.0; n + 1];
    for d in (0..n).rev() {
        let v = order[d];
        query_cost_after[d] = query_cost_after[d + 1];
        query_gain_after[d] = query_gain_after[d + 1];
        if in_query[v] {
            query_cost_after[d] += g.token(v).char_len + 1;
            query_gain_after[d] += scores.optimistic(v);
        }
    }

    let mut search = Search {
        g,
        scores: &scores,
        order,
        by_ratio,
        in_query,
        query_cost_after,
        query_gain_after,
        // ℓ(C) ≤ b  ⇔  Σ (len + 1) ≤ b + 1 for nonempty C
        capacity: budget + 1,
        kept: vec![false; n + 1],
        decided: vec![false; n + 1],
        best: None,
        expanded: 0,
        limit: node_limit,
        aborted: false,
    };
    // The query alone is always feasible and seeds the incumbent.
    let mut seed = vec![false; n + 1];
    for &q in query {
        seed[q] = true;
    }
    search.best = Some((objective_of(g, &scores, query), seed));
    search.dfs(0, 0, 0.0);

    let stats = SearchStats {
        nodes_expanded: search.expanded.min(node_limit),
        proven_optimal: !search.aborted,
    };
    let (_, kept) = search.best.expect("incumbent always present");
    let nodes: Positions = (1..=n).filter(|&v| kept[v]).collect();
    Ok(solution_for(g, &scores, nodes, stats))
}

/// Exhaustive search over every token subset. Test oracle for [`decode`].
pub fn enumerate_exact<S: EdgeScorer + ?Sized>(
    g: &ParseGraph,
    scorer: &S,
    query: &Positions,
    budget: usize,
) -> Result<IlpSolution, IlpError> {
    let n = g.len();
    if n > MAX_EXACT_TOKENS {
        return Err(IlpError::TooLarge(n));
    }
    check_query_fits(g, query, budget)?;
    let scores = scorer.edge_scores(g);
    let mut best: Option<(f64, Positions)> = None;
    for mask in 0u32..(1 << n) {
        let nodes: Positions = (1..=n).filter(|v| mask >> (v - 1) & 1 == 1).collect();
        if !query.is_subset(&nodes) || char_len(g, nodes.iter().copied()) > budget {
            continue;
        }
        let value = objective_of(g, &scores, &nodes);
        if !value.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, nodes));
        }
    }
    let (_, nodes) = best.expect("query subset is feasible");
    Ok(solution_for(
        g,
        &scores,
        nodes,
        SearchStats {
            nodes_expanded: 1 << n,
            proven_optimal: true,
        },
    ))
}

/// Checks a solution against the graph without trusting solver bookkeeping.
pub fn validate_solution(
    g: &ParseGraph,
    scores: &EdgeScores,
    query: &Positions,
    budget: usize,
    sol: &IlpSolution,
) -> Result<(), String> {
    let mut incoming = vec![0usize; g.len() + 1];
    let mut head = vec![usize::MAX; g.len() + 1];
    let mut total = 0.0;
    for e in &sol.selected_edges {
        if !g.all_edges().any(|x| x == e) {
            return Err(format!("edge {}->{} is not in the graph", e.head, e.child));
        }
        incoming[e.child] += 1;
        head[e.child] = e.head;
        total += match e.origin {
            EdgeOrigin::Tree => scores.tree[e.child],
            EdgeOrigin::RootAugmented => scores.aug[e.child].ok_or("missing aug score")?,
        };
    }
    let nodes: Positions = sol.selected_edges.iter().map(|e| e.child).collect();
    if nodes != sol.nodes {
        return Err("node set differs from selected edge children".into());
    }
    if let Some(v) = (1..=g.len()).find(|&v| incoming[v] > 1) {
        return Err(format!("token {v} has {} incoming edges", incoming[v]));
    }
    for &v in &nodes {
        let (mut cur, mut steps) = (v, 0);
        while cur != 0 {
            cur = head[cur];
            if cur != 0 && !nodes.contains(&cur) {
                return Err(format!("token {v} hangs from an unselected governor"));
            }
            steps += 1;
            if steps > g.len() {
                return Err("cycle among selected edges".into());
            }
        }
    }
    if !query.is_subset(&nodes) {
        return Err("query not covered".into());
    }
    if char_len(g, nodes.iter().copied()) > budget {
        return Err("budget exceeded".into());
    }
    if (total - sol.objective).abs() > 1e-9 * (1.0 + total.abs()) {
        return Err(format!("objective {} does not match edge sum {total}", sol.objective));
    }
    Ok(())
}

/// Learned edge weights over the hashed edge-feature space.
#[derive(Debug, Clone)]
pub struct IlpModel {
    pub featurizer: Featurizer,
    pub weights: Vec<f64>,
    pub epochs_trained: usize,
}

impl IlpModel {
    pub fn edge_vector(&self, g: &ParseGraph, e: &DepEdge) -> FeatureVector {
        self.featurizer.edge_features(g, Some(e), e.child)
    }
}

impl EdgeScorer for IlpModel {
    fn edge_scores(&self, g: &ParseGraph) -> EdgeScores {
        EdgeScores::from_fn(g, |e| self.edge_vector(g, e).dot(&self.weights))
    }
}

/// Transforms `g` unless it already carries root-augmented edges.
pub fn ensure_transformed(g: &ParseGraph) -> Result<ParseGraph, IlpError> {
    if g.is_transformed() || g.len() <= 1 {
        Ok(g.clone())
    } else {
        Ok(transform_root_edges(g)?)
    }
}

/// Compresses an instance with the model under its query and budget.
pub fn compress_instance(model: &IlpModel, inst: &Instance, node_limit: u64) -> Result<IlpSolution, IlpError> {
    let g = ensure_transformed(&inst.graph)?;
    decode(&g, model, &inst.query, inst.budget, node_limit)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptronOptions {
    pub epochs: usize,
    pub node_limit: u64,
}

impl Default for PerceptronOptions {
    fn default() -> Self {
        PerceptronOptions {
            epochs: 6,
            node_limit: DEFAULT_NODE_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochStats {
    pub mistakes: usize,
    pub skipped: usize,
    pub validation_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerceptronReport {
    pub epochs: Vec<EpochStats>,
}

impl PerceptronReport {
    /// Absolute change of validation F1 between the last two epochs.
    pub fn final_f1_change(&self) -> Option<f64> {
        let n = self.epochs.len();
        if n < 2 {
            return None;
        }
        Some((self.epochs[n - 1].validation_f1? - self.epochs[n - 2].validation_f1?).abs())
    }
}

/// Edges of the gold arborescence: tree edges inside the gold (or from the
/// root), `root_aug` edges for gold tokens whose governor was dropped.
pub fn gold_edges<'g>(g: &'g ParseGraph, gold: &Positions) -> Vec<&'g DepEdge> {
    gold.iter()
        .map(|&v| {
            let h = g.head_of(v);
            if h == 0 || gold.contains(&h) {
                g.governing_edge(v)
            } else {
                g.aug_edges().iter().find(|e| e.child == v).expect("transformed graph")
            }
        })
        .collect()
}

struct PreparedPair {
    graph: ParseGraph,
    gold: Positions,
    budget: usize,
    /// Feature vectors of tree edges then aug edges, by child.
    tree_fv: Vec<FeatureVector>,
    aug_fv: Vec<Option<FeatureVector>>,
}

impl PreparedPair {
    fn vector(&self, e: &DepEdge) -> &FeatureVector {
        match e.origin {
            EdgeOrigin::Tree => &self.tree_fv[e.child],
            EdgeOrigin::RootAugmented => self.aug_fv[e.child].as_ref().expect("aug feature"),
        }
    }

    fn scores(&self, w: &[f64]) -> EdgeScores {
        EdgeScores {
            tree: self.tree_fv.iter().map(|f| f.dot(w)).collect(),
            aug: self.aug_fv.iter().map(|f| f.as_ref().map(|f| f.dot(w))).collect(),
        }
    }
}

/// Averaged structured perceptron. Each example is decoded without a query
/// and with the gold length as budget; mistakes move the weights towards the
/// gold arborescence. The returned weights are the mean of the weight
/// vectors after every processed example.
pub fn train_perceptron(
    pairs: &[(Arc<ParseGraph>, Positions)],
    featurizer: Featurizer,
    opts: &PerceptronOptions,
    validation: &[(Arc<ParseGraph>, Positions)],
) -> Result<(IlpModel, PerceptronReport), IlpError> {
    let dim = featurizer.config().dim;
    let prepare = |g: &ParseGraph, gold: &Positions| -> Result<PreparedPair, IlpError> {
        let graph = ensure_transformed(g)?;
        let n = graph.len();
        let mut tree_fv = vec![FeatureVector::default(); n + 1];
        let mut aug_fv = vec![None; n + 1];
        for e in graph.tree_edges() {
            tree_fv[e.child] = featurizer.edge_features(&graph, Some(e), e.child);
        }
        for e in graph.aug_edges() {
            aug_fv[e.child] = Some(featurizer.edge_features(&graph, Some(e), e.child));
        }
        let budget = char_len(&graph, gold.iter().copied()).max(1);
        Ok(PreparedPair { graph, gold: gold.clone(), budget, tree_fv, aug_fv })
    };
    let train: Vec<PreparedPair> = pairs
        .iter()
        .filter(|(_, gold)| !gold.is_empty())
        .map(|(g, gold)| prepare(g, gold))
        .collect::<Result<_, _>>()?;
    let valid: Vec<PreparedPair> = validation
        .iter()
        .filter(|(_, gold)| !gold.is_empty())
        .map(|(g, gold)| prepare(g, gold))
        .collect::<Result<_, _>>()?;

    let mut w = vec![0.0; dim];
    // Σ (t - 1) Δ_t, so the mean of snapshots w_1..w_T is w - u / T
    let mut u = vec![0.0; dim];
    let mut steps = 0usize;
    let mut report = PerceptronReport::default();
    let empty = Positions::new();
    for epoch in 0..opts.epochs {
        let mut stats = EpochStats::default();
        for ex in &train {
            let sol = decode(&ex.graph, &ex.scores(&w), &empty, ex.budget, opts.node_limit)?;
            if !sol.stats.proven_optimal {
                stats.skipped += 1;
                continue;
            }
            let gold = gold_edges(&ex.graph, &ex.gold);
            let same = gold.len() == sol.selected_edges.len()
                && gold.iter().zip(&sol.selected_edges).all(|(a, b)| *a == b);
            if !same {
                stats.mistakes += 1;
                let t = steps as f64;
                for e in gold {
                    for &(i, v) in ex.vector(e).entries() {
                        w[i as usize] += v;
                        u[i as usize] += t * v;
                    }
                }
                for e in &sol.selected_edges {
                    for &(i, v) in ex.vector(e).entries() {
                        w[i as usize] -= v;
                        u[i as usize] -= t * v;
                    }
                }
            }
            steps += 1;
        }
        if !valid.is_empty() {
            let avg = averaged(&w, &u, steps);
            let mut total = 0.0;
            for ex in &valid {
                let sol = decode(&ex.graph, &ex.scores(&avg), &empty, ex.budget, opts.node_limit)?;
                total += token_f1(&sol.nodes, &ex.gold).map(|s| s.f1).unwrap_or(0.0);
            }
            stats.validation_f1 = Some(total / valid.len() as f64);
        }
        debug!("perceptron epoch {}: {:?}", epoch + 1, stats);
        report.epochs.push(stats);
    }
    let model = IlpModel {
        featurizer,
        weights: averaged(&w, &u, steps),
        epochs_trained: opts.epochs,
    };
    Ok((model, report))
}

fn averaged(w: &[f64], u: &[f64], steps: usize) -> Vec<f64> {
    if steps == 0 {
        return w.to_vec();
    }
    let t = steps as f64;
    w.iter().zip(u).map(|(w, u)| w - u / t).collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::corpus::Token;
    use crate::features::{FeatureConfig, LemmaVocab};

    fn tree(heads: &[usize], lens: &[usize]) -> ParseGraph {
        let tokens = lens
            .iter()
            .enumerate()
            .map(|(i, l)| Token::new(i + 1, &"w".repeat(*l), &format!("w{i}"), "X"))
            .collect();
        let arcs = heads.iter().enumerate().map(|(i, h)| (*h, i + 1, "dep".to_string())).collect();
        transform_root_edges(&ParseGraph::new("t", tokens, arcs).unwrap()).unwrap()
    }

    fn constant(g: &ParseGraph, w: f64) -> EdgeScores {
        EdgeScores::from_fn(g, |_| w)
    }

    #[test]
    fn positive_scores_keep_everything() {
        let g = tree(&[0, 1, 2], &[2, 2, 2]);
        let sol = decode(&g, &constant(&g, 1.0), &Positions::new(), 1000, DEFAULT_NODE_LIMIT).unwrap();
        assert_eq!(sol.nodes, [1, 2, 3].into());
        assert_eq!(sol.objective, 3.0);
        assert!(sol.stats.proven_optimal);
    }

    #[test]
    fn negative_scores_keep_nothing() {
        let g = tree(&[0, 1, 2], &[2, 2, 2]);
        let sol = decode(&g, &constant(&g, -1.0), &Positions::new(), 1000, DEFAULT_NODE_LIMIT).unwrap();
        assert!(sol.nodes.is_empty());
        assert_eq!(sol.objective, 0.0);
        // the query is kept even at a loss
        let sol = decode(&g, &constant(&g, -1.0), &[3].into(), 1000, DEFAULT_NODE_LIMIT).unwrap();
        assert_eq!(sol.nodes, [3].into());
        assert_eq!(sol.selected_edges[0].origin, EdgeOrigin::RootAugmented);
    }

    #[test]
    fn errors() {
        let g = tree(&[0, 1], &[5, 5]);
        let s = constant(&g, 1.0);
        assert_eq!(decode(&g, &s, &[1].into(), 3, 10), Err(IlpError::Infeasible { needed: 5, budget: 3 }));
        assert_eq!(decode(&g, &s, &Positions::new(), 3, 0), Err(IlpError::ZeroNodeLimit));
        let raw = ParseGraph::new("r", vec![Token::new(1, "a", "a", "X"), Token::new(2, "b", "b", "X")], vec![(0, 1, "root".into()), (1, 2, "dep".into())]).unwrap();
        assert!(matches!(decode(&raw, &s, &Positions::new(), 3, 10), Err(IlpError::NotTransformed(_))));
        let big = tree(&vec![0; 1].into_iter().chain(1..17).collect::<Vec<_>>(), &[1; 17]);
        assert_eq!(enumerate_exact(&big, &constant(&big, 1.0), &Positions::new(), 100), Err(IlpError::TooLarge(17)));
    }

    #[test]
    fn exact_small_cases() {
        let g = tree(&[0], &[3]);
        let s = EdgeScores { tree: vec![0.0, -0.4], aug: vec![None, None] };
        let sol = enumerate_exact(&g, &s, &[1].into(), 10).unwrap();
        assert_eq!(sol.nodes, [1].into());
        assert_eq!(sol.objective, -0.4);

        let g = tree(&[0, 1], &[4, 4]);
        let sol = enumerate_exact(&g, &constant(&g, 1.0), &Positions::new(), 3).unwrap();
        assert!(sol.nodes.is_empty());
    }

    #[test]
    fn node_limit_returns_incumbent() {
        let heads: Vec<usize> = (0..14).collect();
        let g = tree(&heads, &[3; 14]);
        let s = EdgeScores::from_fn(&g, |e| if e.child % 2 == 0 { 0.7 } else { 0.5 });
        let sol = decode(&g, &s, &[5].into(), 30, 3).unwrap();
        assert!(!sol.stats.proven_optimal);
        assert!(validate_solution(&g, &s, &[5].into(), 30, &sol).is_ok());
    }

    #[test]
    fn gold_arborescence_edges() {
        let g = tree(&[0, 1, 2, 2], &[1, 1, 1, 1]);
        let gold: Positions = [1, 3, 4].into();
        let edges = gold_edges(&g, &gold);
        assert_eq!(edges[0].origin, EdgeOrigin::Tree);
        assert_eq!(edges[1].origin, EdgeOrigin::RootAugmented);
        assert_eq!(edges[2].origin, EdgeOrigin::RootAugmented);
    }

    fn featurizer() -> Featurizer {
        Featurizer::new(FeatureConfig::ablated(), LemmaVocab::default()).unwrap()
    }

    #[test]
    fn perceptron_fits_single_pair() {
        let words = [("The", "DET", 3, "det"), ("old", "ADJ", 3, "amod"), ("man", "NOUN", 4, "nsubj"), ("left", "VERB", 0, "root"), ("town", "NOUN", 4, "obj"), ("quickly", "ADV", 4, "advmod")];
        let tokens = words.iter().enumerate().map(|(i, w)| Token::new(i + 1, w.0, &w.0.to_lowercase(), w.1)).collect();
        let arcs = words.iter().enumerate().map(|(i, w)| (w.2, i + 1, w.3.to_string())).collect();
        let g = Arc::new(ParseGraph::new("p", tokens, arcs).unwrap());
        let gold: Positions = [3, 4, 5].into();
        let pairs = vec![(g.clone(), gold.clone())];
        let (model, report) = train_perceptron(&pairs, featurizer(), &PerceptronOptions::default(), &pairs).unwrap();
        assert_eq!(model.epochs_trained, 6);
        let t = ensure_transformed(&g).unwrap();
        let b = char_len(&t, gold.iter().copied());
        let sol = decode(&t, &model, &Positions::new(), b, DEFAULT_NODE_LIMIT).unwrap();
        assert_eq!(token_f1(&sol.nodes, &gold).unwrap().f1, 1.0);
        assert!(report.final_f1_change().unwrap() < 1e-3);
        assert_eq!(report.epochs.last().unwrap().mistakes, 0);
    }

    #[test]
    fn correct_prediction_means_no_update() {
        // zero weights predict the empty set (ties favour exclusion), so the
        // first epoch updates once; afterwards the gold is predicted and the
        // raw weights stop moving
        let g = Arc::new(ParseGraph::new("s", vec![Token::new(1, "Go", "go", "VERB")], vec![(0, 1, "root".into())]).unwrap());
        let pairs = vec![(g, Positions::from([1]))];
        let opts = PerceptronOptions { epochs: 3, ..Default::default() };
        let (model, report) = train_perceptron(&pairs, featurizer(), &opts, &[]).unwrap();
        let mistakes: Vec<usize> = report.epochs.iter().map(|e| e.mistakes).collect();
        assert_eq!(mistakes, [1, 0, 0]);
        // averaged over three snapshots that all equal the first update
        assert!(model.weights.iter().any(|&w| w != 0.0));
        let (one, _) = train_perceptron(&pairs, featurizer(), &PerceptronOptions { epochs: 1, ..opts }, &[]).unwrap();
        assert_eq!(one.weights, model.weights);
    }

    #[test]
    fn averaging_equals_mean_of_snapshots() {
        // three mistakes on a 3-token chain, checked against explicit snapshots
        let pairs: Vec<(Arc<ParseGraph>, Positions)> = [[1usize, 2].as_slice(), &[2, 3], &[1]]
            .iter()
            .enumerate()
            .map(|(k, gold)| {
                let words = ["alpha", "beta", "gamma"];
                let tokens = words.iter().enumerate().map(|(i, w)| Token::new(i + 1, w, w, if i == k { "NOUN" } else { "VERB" })).collect();
                let g = ParseGraph::new(format!("a{k}"), tokens, vec![(0, 1, "root".into()), (1, 2, "obj".into()), (2, 3, "obl".into())]).unwrap();
                (Arc::new(g), gold.iter().copied().collect())
            })
            .collect();
        let opts = PerceptronOptions { epochs: 1, ..Default::default() };
        let f = featurizer();
        let (model, _) = train_perceptron(&pairs, f.clone(), &opts, &[]).unwrap();

        // replay naively
        let dim = f.config().dim;
        let mut w = vec![0.0; dim];
        let mut snaps: Vec<Vec<f64>> = Vec::new();
        for (g, gold) in &pairs {
            let t = ensure_transformed(g).unwrap();
            let scores = EdgeScores::from_fn(&t, |e| f.edge_features(&t, Some(e), e.child).dot(&w));
            let b = char_len(&t, gold.iter().copied());
            let sol = decode(&t, &scores, &Positions::new(), b, DEFAULT_NODE_LIMIT).unwrap();
            let ge = gold_edges(&t, gold);
            if ge.len() != sol.selected_edges.len() || ge.iter().zip(&sol.selected_edges).any(|(a, b)| *a != b) {
                for e in ge {
                    for &(i, v) in f.edge_features(&t, Some(e), e.child).entries() {
                        w[i as usize] += v;
                    }
                }
                for e in &sol.selected_edges {
                    for &(i, v) in f.edge_features(&t, Some(e), e.child).entries() {
                        w[i as usize] -= v;
                    }
                }
            }
            snaps.push(w.clone());
        }
        for i in 0..dim {
            let mean = snaps.iter().map(|s| s[i]).sum::<f64>() / snaps.len() as f64;
            assert!((model.weights[i] - mean).abs() < 1e-12, "index {i}");
        }
        assert!(model.weights.iter().any(|&x| x != 0.0));
    }

    fn random_case() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<f64>, Vec<f64>, u16, f64)> {
        (1usize..=10).prop_flat_map(|n| {
            let heads = (1..=n).map(|v| if v == 1 { Just(0usize).boxed() } else { (1..v).boxed() }).collect::<Vec<_>>();
            (
                heads,
                proptest::collection::vec(1usize..9, n),
                proptest::collection::vec(-1.0f64..1.0, n),
                proptest::collection::vec(-1.0f64..1.0, n),
                any::<u16>(),
                0.2f64..1.2,
            )
        })
    }

    proptest! {
        #[test]
        fn decode_matches_enumeration((heads, lens, tw, aw, qmask, frac) in random_case()) {
            let g = tree(&heads, &lens);
            let n = g.len();
            let s = EdgeScores {
                tree: std::iter::once(0.0).chain(tw.iter().copied()).collect(),
                aug: (0..=n).map(|v| if v > 0 && g.head_of(v) != 0 { Some(aw[v - 1]) } else { None }).collect(),
            };
            let q: Positions = (1..=n).filter(|v| qmask >> (v - 1) & 1 == 1 && v % 3 == 0).collect();
            let b = ((g.sentence_char_len() as f64 * frac) as usize).max(char_len(&g, q.iter().copied())).max(1);
            let fast = decode(&g, &s, &q, b, u64::MAX).unwrap();
            let slow = enumerate_exact(&g, &s, &q, b).unwrap();
            prop_assert_eq!(fast.objective, slow.objective);
            prop_assert!(fast.stats.proven_optimal);
            prop_assert!(validate_solution(&g, &s, &q, b, &fast).is_ok());
            prop_assert!(validate_solution(&g, &s, &q, b, &slow).is_ok());

            let wider = decode(&g, &s, &q, b + 5, u64::MAX).unwrap();
            prop_assert!(wider.objective >= fast.objective);
        }
    }
}
