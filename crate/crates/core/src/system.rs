//! Uniform interface over the compression engines.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{char_len, Instance, Positions};
use crate::engine::{compress, DecisionModel, EngineError};
use crate::ilp::{compress_instance, IlpError, IlpModel, DEFAULT_NODE_LIMIT};

#[derive(Debug, Error)]
pub enum SystemError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Ilp(#[from] IlpError),
    #[error("output for {id} violates its constraints: {msg}")]
    Unsafe { id: String, msg: String },
}

/// Maps an instance to the set of kept token positions.
pub trait Compressor: Send + Sync {
    fn name(&self) -> &str;
    fn compress(&self, inst: &Instance) -> Result<Positions, SystemError>;
}

impl<C: Compressor + ?Sized> Compressor for Box<C> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn compress(&self, inst: &Instance) -> Result<Positions, SystemError> {
        (**self).compress(inst)
    }
}

/// The vertex-addition engine driven by a decision model.
pub struct VertexAddition<M> {
    name: String,
    pub model: M,
}

impl<M: DecisionModel> VertexAddition<M> {
    pub fn new(name: impl Into<String>, model: M) -> Self {
        VertexAddition {
            name: name.into(),
            model,
        }
    }
}

impl<M: DecisionModel> Compressor for VertexAddition<M> {
    fn name(&self) -> &str {
        &self.name
    }

    fn compress(&self, inst: &Instance) -> Result<Positions, SystemError> {
        Ok(compress(inst, &self.model)?)
    }
}

/// Branch-and-bound edge selection. Incumbents returned at the node limit
/// are used as they are.
pub struct IlpCompressor {
    pub model: IlpModel,
    pub node_limit: u64,
}

impl IlpCompressor {
    pub fn new(model: IlpModel) -> Self {
        IlpCompressor {
            model,
            node_limit: DEFAULT_NODE_LIMIT,
        }
    }
}

impl Compressor for IlpCompressor {
    fn name(&self) -> &str {
        EngineKind::Ilp.as_str()
    }

    fn compress(&self, inst: &Instance) -> Result<Positions, SystemError> {
        Ok(compress_instance(&self.model, inst, self.node_limit)?.nodes)
    }
}

/// Checks the query and budget constraints of an output.
pub fn check_output(inst: &Instance, out: &Positions) -> Result<(), SystemError> {
    let unsafe_ = |msg: String| SystemError::Unsafe {
        id: inst.id().to_string(),
        msg,
    };
    if !inst.query.is_subset(out) {
        return Err(unsafe_("query not kept".into()));
    }
    if out.iter().any(|&v| v == 0 || v > inst.graph.len()) {
        return Err(unsafe_("position out of range".into()));
    }
    let len = char_len(&inst.graph, out.iter().copied());
    if len > inst.budget {
        return Err(unsafe_(format!("length {len} exceeds budget {}", inst.budget)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EngineKind {
    VertexLr,
    Ilp,
    Random,
    Ablated,
}

impl EngineKind {
    pub const ALL: [EngineKind; 4] = [EngineKind::VertexLr, EngineKind::Ilp, EngineKind::Random, EngineKind::Ablated];

    pub fn as_str(self) -> &'static str {
        match self {
            EngineKind::VertexLr => "vertex_lr",
            EngineKind::Ilp => "ilp",
            EngineKind::Random => "random",
            EngineKind::Ablated => "ablated",
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown engine {0:?} (expected vertex_lr, ilp, random or ablated)")]
pub struct UnknownEngine(pub String);

impl FromStr for EngineKind {
    type Err = UnknownEngine;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EngineKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownEngine(s.to_string()))
    }
}
