//! End-to-end training helpers shared by the command line, the benchmarks and
//! the acceptance tests.

use std::sync::Arc;

use log::info;
use thiserror::Error;

use crate::corpus::{Instance, ParseGraph, Positions};
use crate::features::{FeatureConfig, FeatureError, Featurizer, LemmaVocab};
use crate::ilp::{train_perceptron, IlpError, IlpModel, PerceptronOptions, PerceptronReport};
use crate::learn::{fit_random_policy, oracle_examples, select_c, LearnError, TrainOptions};
use crate::persist::VertexBundle;
use crate::service::Engines;
use crate::system::{EngineKind, IlpCompressor, VertexAddition};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Ilp(#[from] IlpError),
    #[error("no training instances with gold")]
    NoTraining,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub c_grid: Vec<f64>,
    pub dim: usize,
    pub vocab_cutoff: usize,
    pub seed: u64,
    pub perceptron: PerceptronOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c_grid: vec![0.1, 1.0, 10.0, 100.0],
            dim: FeatureConfig::DEFAULT_DIM,
            vocab_cutoff: FeatureConfig::DEFAULT_VOCAB_CUTOFF,
            seed: 0,
            perceptron: PerceptronOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainSummary {
    pub decisions: usize,
    pub skipped_instances: usize,
    pub lr_grid: Vec<(f64, f64)>,
    pub ablated_grid: Vec<(f64, f64)>,
    pub accept_rate: f64,
}

fn vocab_of(instances: &[Instance], cutoff: usize) -> LemmaVocab {
    LemmaVocab::from_graphs(instances.iter().map(|i| i.graph.as_ref()), cutoff)
}

/// Trains the full and edge-only logistic models (each picking `c` on the
/// validation set) and fits the random policy to the same decisions.
pub fn train_vertex_bundle(
    train: &[Instance],
    validation: &[Instance],
    cfg: &TrainConfig,
) -> Result<(VertexBundle, TrainSummary), PipelineError> {
    let vocab = vocab_of(train, cfg.vocab_cutoff);
    let full = FeatureConfig {
        dim: cfg.dim,
        lexical_vocab_cutoff: cfg.vocab_cutoff,
        ..FeatureConfig::full()
    };
    let ablated = FeatureConfig {
        dim: cfg.dim,
        lexical_vocab_cutoff: cfg.vocab_cutoff,
        ..FeatureConfig::ablated()
    };
    let base = TrainOptions::default();
    let fz = Featurizer::new(full, vocab.clone())?;
    let (examples, skipped) = oracle_examples(train, &fz);
    if examples.is_empty() {
        return Err(PipelineError::NoTraining);
    }
    let random = fit_random_policy(examples.iter().map(|e| e.label), cfg.seed)?;
    let (lr, lr_grid) = select_c(&examples, &fz, validation, &cfg.c_grid, &base)?;
    info!("vertex_lr: c={} grid={lr_grid:?}", lr.c);
    drop(examples);

    let fz_ab = Featurizer::new(ablated, vocab)?;
    let (examples_ab, _) = oracle_examples(train, &fz_ab);
    let (ab, ablated_grid) = select_c(&examples_ab, &fz_ab, validation, &cfg.c_grid, &base)?;
    info!("ablated: c={} grid={ablated_grid:?}", ab.c);
    let summary = TrainSummary {
        decisions: examples_ab.len(),
        skipped_instances: skipped,
        lr_grid,
        ablated_grid,
        accept_rate: random.accept_prob,
    };
    Ok((
        VertexBundle {
            lr,
            ablated: ab,
            random,
        },
        summary,
    ))
}

fn gold_pairs(instances: &[Instance]) -> Vec<(Arc<ParseGraph>, Positions)> {
    instances
        .iter()
        .filter_map(|i| i.gold.as_ref().map(|g| (i.graph.clone(), g.clone())))
        .collect()
}

/// Trains the edge-scoring model with the averaged perceptron.
pub fn train_ilp_model(
    train: &[Instance],
    validation: &[Instance],
    cfg: &TrainConfig,
) -> Result<(IlpModel, PerceptronReport), PipelineError> {
    let config = FeatureConfig {
        dim: cfg.dim,
        lexical_vocab_cutoff: cfg.vocab_cutoff,
        ..FeatureConfig::ablated()
    };
    let fz = Featurizer::new(config, vocab_of(train, cfg.vocab_cutoff))?;
    let pairs = gold_pairs(train);
    if pairs.is_empty() {
        return Err(PipelineError::NoTraining);
    }
    Ok(train_perceptron(&pairs, fz, &cfg.perceptron, &gold_pairs(validation))?)
}

/// Registers every engine whose model is available.
pub fn build_engines(bundle: Option<VertexBundle>, ilp: Option<IlpModel>) -> Engines {
    let mut engines = Engines::default();
    if let Some(b) = bundle {
        engines.insert(EngineKind::VertexLr, Box::new(VertexAddition::new(EngineKind::VertexLr.as_str(), b.lr)));
        engines.insert(EngineKind::Ablated, Box::new(VertexAddition::new(EngineKind::Ablated.as_str(), b.ablated)));
        engines.insert(EngineKind::Random, Box::new(VertexAddition::new(EngineKind::Random.as_str(), b.random)));
    }
    if let Some(m) = ilp {
        engines.insert(EngineKind::Ilp, Box::new(IlpCompressor::new(m)));
    }
    engines
}
