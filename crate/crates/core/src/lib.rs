//! Query-focused extractive sentence compression.
//!
//! Given a dependency-parsed sentence, a set of query tokens and a character
//! budget, the vertex-addition engine grows a compression from the query one
//! parse vertex at a time, asking a decision model whether to keep each
//! candidate. An edge-selection baseline solved by branch and bound, a
//! trigram language model for readability scores, evaluation utilities and a
//! snippet search service are included.
//!
//! ```
//! use std::sync::Arc;
//! use qfcomp::{compress, linearize, ConstantModel, Instance, ParseGraph, Token};
//!
//! let tokens = vec![
//!     Token::new(1, "Dogs", "dog", "NOUN"),
//!     Token::new(2, "chase", "chase", "VERB"),
//!     Token::new(3, "cats", "cat", "NOUN"),
//! ];
//! let arcs = vec![(2, 1, "nsubj".into()), (0, 2, "root".into()), (2, 3, "obj".into())];
//! let g = Arc::new(ParseGraph::new("s1", tokens, arcs).unwrap());
//! let inst = Instance::new(g.clone(), [3].into(), 10, None).unwrap();
//! let kept = compress(&inst, &ConstantModel(1.0)).unwrap();
//! assert_eq!(linearize(&g, &kept).0, "chase cats");
//! ```

pub mod corpus;
pub mod datagen;
pub mod engine;
pub mod eval;
pub mod features;
pub mod ilp;
pub mod learn;
pub mod lm;
pub mod persist;
pub mod pipeline;
pub mod service;
pub mod system;

pub use corpus::{
    char_len, linearize, parse_conllu, read_graphs_jsonl, read_instances_jsonl, relabel_function_edges,
    serialize_conllu, transform_root_edges, write_graphs_jsonl, write_instances_jsonl, CorpusError, DepEdge,
    EdgeOrigin, Instance, InstanceRecord, ParseGraph, Positions, Split, Token,
};
pub use engine::{compress, compress_traced, oracle_path, CompressionState, ConstantModel, Decision, DecisionModel, EngineError, GoldOracle};
pub use eval::{compression_ratio, evaluate_suite, latency_bench, paired_bootstrap, token_f1, EvalReport};
pub use features::{FeatureConfig, FeatureVector, Featurizer, LemmaVocab};
pub use ilp::{decode, enumerate_exact, train_perceptron, IlpModel, IlpSolution};
pub use learn::{fit_random_policy, train_lr, LrModel, RandomPolicy};
pub use lm::{train_lm, TrigramLm};
pub use system::{Compressor, EngineKind, IlpCompressor, VertexAddition};
