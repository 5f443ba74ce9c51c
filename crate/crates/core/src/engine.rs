//! The vertex-addition transition system.
//!
//! A compression starts from the query tokens and grows one parse vertex at
//! a time. Candidates come off a queue that serves tree neighbours of the
//! current compression before everything else, leftmost first. Every vertex
//! is popped at most once, so a compression costs `O(|V| log |V|)` in the
//! worst case and is linear in practice.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{char_len, Instance, ParseGraph, Positions};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("instance {id}: query needs {needed} characters but the budget is {budget}")]
    Infeasible { id: String, needed: usize, budget: usize },
    #[error("pop from an empty queue")]
    EmptyQueue,
    #[error("instance {id}: {msg}")]
    BadOracle { id: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Queued,
    /// Queued and adjacent to the compression.
    Promoted,
    Pending,
    Accepted(u32),
    Rejected,
}

/// State of one compression: accepted vertexes `C`, the priority queue `P`,
/// rejected vertexes and the step counter.
#[derive(Debug, Clone)]
pub struct CompressionState {
    slots: Vec<Slot>,
    neighbors: BinaryHeap<Reverse<usize>>,
    scan: usize,
    queue_len: usize,
    initial_queue_len: usize,
    timestep: usize,
    used_chars: usize,
    budget: usize,
    accepted_count: usize,
    min_accepted: Option<usize>,
    max_accepted: Option<usize>,
}

impl CompressionState {
    /// `C = Q`, `P = V \ Q`.
    pub fn new(inst: &Instance) -> Result<CompressionState, EngineError> {
        let g = &inst.graph;
        let needed = char_len(g, inst.query.iter().copied());
        if needed > inst.budget {
            return Err(EngineError::Infeasible {
                id: inst.id().to_string(),
                needed,
                budget: inst.budget,
            });
        }
        let n = g.len();
        let mut state = CompressionState {
            slots: vec![Slot::Queued; n + 1],
            neighbors: BinaryHeap::new(),
            scan: 1,
            queue_len: n - inst.query.len(),
            initial_queue_len: n - inst.query.len(),
            timestep: 0,
            used_chars: needed,
            budget: inst.budget,
            accepted_count: inst.query.len(),
            min_accepted: inst.query.first().copied(),
            max_accepted: inst.query.last().copied(),
        };
        state.slots[0] = Slot::Rejected;
        for &q in &inst.query {
            state.slots[q] = Slot::Accepted(0);
        }
        for &q in &inst.query {
            state.promote_neighbors(g, q);
        }
        Ok(state)
    }

    fn promote_neighbors(&mut self, g: &ParseGraph, v: usize) {
        for w in g.tree_neighbors(v) {
            if self.slots[w] == Slot::Queued {
                self.slots[w] = Slot::Promoted;
                self.neighbors.push(Reverse(w));
            }
        }
    }

    /// Removes and returns the head of the queue: the leftmost queued
    /// neighbour of `C` if there is one, otherwise the leftmost queued vertex.
    pub fn pop_next(&mut self) -> Result<usize, EngineError> {
        if self.queue_len == 0 {
            return Err(EngineError::EmptyQueue);
        }
        let v = match self.neighbors.pop() {
            Some(Reverse(v)) => v,
            None => {
                while self.slots[self.scan] != Slot::Queued {
                    self.scan += 1;
                }
                self.scan += 1;
                self.scan - 1
            }
        };
        self.slots[v] = Slot::Pending;
        self.queue_len -= 1;
        Ok(v)
    }

    /// Adds the pending candidate `v` to `C`.
    pub fn accept(&mut self, g: &ParseGraph, v: usize) {
        debug_assert_eq!(self.slots[v], Slot::Pending);
        self.timestep += 1;
        self.slots[v] = Slot::Accepted(self.timestep as u32);
        self.used_chars = self.chars_with(g, v);
        self.accepted_count += 1;
        self.min_accepted = Some(self.min_accepted.map_or(v, |m| m.min(v)));
        self.max_accepted = Some(self.max_accepted.map_or(v, |m| m.max(v)));
        self.promote_neighbors(g, v);
    }

    pub fn reject(&mut self, v: usize) {
        debug_assert_eq!(self.slots[v], Slot::Pending);
        self.timestep += 1;
        self.slots[v] = Slot::Rejected;
    }

    /// `ℓ(C ∪ {v})`.
    pub fn chars_with(&self, g: &ParseGraph, v: usize) -> usize {
        let sep = usize::from(self.accepted_count > 0);
        self.used_chars + sep + g.token(v).char_len
    }

    pub fn is_accepted(&self, v: usize) -> bool {
        matches!(self.slots.get(v), Some(Slot::Accepted(_)))
    }

    pub fn is_rejected(&self, v: usize) -> bool {
        v > 0 && matches!(self.slots.get(v), Some(Slot::Rejected))
    }

    pub fn is_queued(&self, v: usize) -> bool {
        matches!(self.slots.get(v), Some(Slot::Queued | Slot::Promoted))
    }

    /// Step at which `v` joined `C`; query vertexes report 0.
    pub fn accepted_at(&self, v: usize) -> Option<usize> {
        match self.slots.get(v) {
            Some(Slot::Accepted(t)) => Some(*t as usize),
            _ => None,
        }
    }

    pub fn accepted(&self) -> Positions {
        (1..self.slots.len()).filter(|&v| self.is_accepted(v)).collect()
    }

    pub fn rejected(&self) -> Positions {
        (1..self.slots.len()).filter(|&v| self.is_rejected(v)).collect()
    }

    pub fn queued(&self) -> Positions {
        (1..self.slots.len()).filter(|&v| self.is_queued(v)).collect()
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn used_chars(&self) -> usize {
        self.used_chars
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn queue_len(&self) -> usize {
        self.queue_len
    }

    pub fn initial_queue_len(&self) -> usize {
        self.initial_queue_len
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted_count
    }

    pub fn min_accepted(&self) -> Option<usize> {
        self.min_accepted
    }

    pub fn max_accepted(&self) -> Option<usize> {
        self.max_accepted
    }

    fn should_continue(&self) -> bool {
        self.used_chars < self.budget && self.queue_len > 0
    }
}

/// Probability that a candidate should join the compression.
pub trait DecisionModel: Send + Sync {
    fn score(&self, inst: &Instance, state: &CompressionState, candidate: usize) -> f64;
}

/// Returns the same score for every candidate.
#[derive(Debug, Clone, Copy)]
pub struct ConstantModel(pub f64);

impl DecisionModel for ConstantModel {
    fn score(&self, _: &Instance, _: &CompressionState, _: usize) -> f64 {
        self.0
    }
}

/// Accepts exactly the gold vertexes of the instance.
#[derive(Debug, Clone, Copy, Default)]
pub struct GoldOracle;

impl DecisionModel for GoldOracle {
    fn score(&self, inst: &Instance, _: &CompressionState, candidate: usize) -> f64 {
        match &inst.gold {
            Some(g) if g.contains(&candidate) => 1.0,
            _ => 0.0,
        }
    }
}

/// Result of [`compress_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub kept: Positions,
    /// Candidates in pop order with the accept flag.
    pub pops: Vec<(usize, bool)>,
}

fn run<M: DecisionModel + ?Sized>(
    inst: &Instance,
    model: &M,
    mut trace: Option<&mut Vec<(usize, bool)>>,
) -> Result<Positions, EngineError> {
    let g = &inst.graph;
    let mut state = CompressionState::new(inst)?;
    while state.should_continue() {
        let v = state.pop_next()?;
        let fits = state.chars_with(g, v) <= inst.budget;
        let take = fits && model.score(inst, &state, v) > 0.5;
        if take {
            state.accept(g, v);
        } else {
            state.reject(v);
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push((v, take));
        }
    }
    let kept = state.accepted();
    assert!(
        inst.query.is_subset(&kept) && char_len(g, kept.iter().copied()) <= inst.budget,
        "vertex addition violated its constraints on {}",
        inst.id()
    );
    Ok(kept)
}

/// Runs vertex addition and returns the kept positions.
pub fn compress<M: DecisionModel + ?Sized>(inst: &Instance, model: &M) -> Result<Positions, EngineError> {
    run(inst, model, None)
}

pub fn compress_traced<M: DecisionModel + ?Sized>(inst: &Instance, model: &M) -> Result<Trace, EngineError> {
    let mut pops = Vec::new();
    let kept = run(inst, model, Some(&mut pops))?;
    Ok(Trace { kept, pops })
}

/// One labelled transition: the candidate, whether the gold keeps it, and
/// the state right after it was popped.
#[derive(Debug, Clone)]
pub struct Decision {
    pub candidate: usize,
    pub label: bool,
    pub state: CompressionState,
}

impl Decision {
    pub fn timestep(&self) -> usize {
        self.state.timestep()
    }
}

/// Training-file form of a [`Decision`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub instance_id: String,
    pub candidate: usize,
    pub label: u8,
    pub timestep: usize,
}

impl DecisionRecord {
    pub fn new(inst: &Instance, d: &Decision) -> DecisionRecord {
        DecisionRecord {
            instance_id: inst.id().to_string(),
            candidate: d.candidate,
            label: u8::from(d.label),
            timestep: d.timestep(),
        }
    }
}

/// Replays the engine with the policy "accept iff in gold" and returns every
/// decision it made. The final compression equals the gold.
pub fn oracle_path(inst: &Instance) -> Result<Vec<Decision>, EngineError> {
    let bad = |msg: String| EngineError::BadOracle {
        id: inst.id().to_string(),
        msg,
    };
    let gold = inst.gold.as_ref().ok_or_else(|| bad("no gold compression".into()))?;
    if !inst.query.is_subset(gold) {
        return Err(bad("gold does not contain the query".into()));
    }
    let g = &inst.graph;
    let gold_len = char_len(g, gold.iter().copied());
    if gold_len > inst.budget {
        return Err(bad(format!("gold needs {gold_len} characters, budget is {}", inst.budget)));
    }
    let mut state = CompressionState::new(inst)?;
    let mut out = Vec::new();
    while state.should_continue() {
        let v = state.pop_next()?;
        let label = gold.contains(&v);
        out.push(Decision {
            candidate: v,
            label,
            state: state.clone(),
        });
        if label {
            state.accept(g, v);
        } else {
            state.reject(v);
        }
    }
    debug_assert_eq!(&state.accepted(), gold);
    Ok(out)
}
