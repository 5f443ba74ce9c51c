//! JSON model files.
//!
//! ```json
//! {"kind": "vertex", "version": 1, "lr": {...}, "ablated": {...}, "random": {...}}
//! {"kind": "ilp", "version": 1, "config": {...}, "vocab": [...], "weights": [[17, 0.5]], "epochs_trained": 6}
//! ```
//!
//! Only nonzero weights are stored, as `[hashed index, value]` pairs in
//! increasing index order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureConfig, FeatureError, Featurizer, LemmaVocab};
use crate::ilp::IlpModel;
use crate::learn::{LrModel, RandomPolicy};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("model file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model file version {0} (expected {MODEL_VERSION})")]
    Version(u32),
    #[error("weight index {index} outside feature dimension {dim}")]
    BadIndex { index: u32, dim: usize },
    #[error("non-finite weight at index {0}")]
    NonFinite(u32),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("expected a {expected} model file, found {found}")]
    WrongKind { expected: &'static str, found: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrFile {
    pub config: FeatureConfig,
    pub c: f64,
    pub bias: f64,
    pub train_accept_rate: f64,
    pub vocab: LemmaVocab,
    pub weights: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexFile {
    pub version: u32,
    pub lr: LrFile,
    pub ablated: LrFile,
    pub random: RandomPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlpFile {
    pub version: u32,
    pub config: FeatureConfig,
    pub vocab: LemmaVocab,
    pub weights: Vec<(u32, f64)>,
    pub epochs_trained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelFile {
    Vertex(VertexFile),
    Ilp(IlpFile),
}

/// The three decision models of the vertex-addition engine.
#[derive(Debug, Clone)]
pub struct VertexBundle {
    pub lr: LrModel,
    pub ablated: LrModel,
    pub random: RandomPolicy,
}

fn sparse(weights: &[f64]) -> Vec<(u32, f64)> {
    weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(i, w)| (i as u32, *w))
        .collect()
}

fn dense(weights: &[(u32, f64)], dim: usize) -> Result<Vec<f64>, PersistError> {
    let mut out = vec![0.0; dim];
    for &(index, w) in weights {
        if index as usize >= dim {
            return Err(PersistError::BadIndex { index, dim });
        }
        if !w.is_finite() {
            return Err(PersistError::NonFinite(index));
        }
        out[index as usize] = w;
    }
    Ok(out)
}

impl LrFile {
    pub fn from_model(m: &LrModel) -> LrFile {
        LrFile {
            config: *m.config(),
            c: m.c,
            bias: m.bias,
            train_accept_rate: m.train_accept_rate,
            vocab: m.featurizer.vocab().clone(),
            weights: sparse(&m.weights),
        }
    }

    pub fn to_model(&self) -> Result<LrModel, PersistError> {
        let featurizer = Featurizer::new(self.config, self.vocab.clone())?;
        if !self.bias.is_finite() {
            return Err(PersistError::Config("non-finite bias".into()));
        }
        Ok(LrModel {
            weights: dense(&self.weights, self.config.dim)?,
            featurizer,
            bias: self.bias,
            c: self.c,
            train_accept_rate: self.train_accept_rate,
            iterations: 0,
        })
    }
}

impl ModelFile {
    pub fn from_bundle(b: &VertexBundle) -> ModelFile {
        ModelFile::Vertex(VertexFile {
            version: MODEL_VERSION,
            lr: LrFile::from_model(&b.lr),
            ablated: LrFile::from_model(&b.ablated),
            random: b.random,
        })
    }

    pub fn from_ilp(m: &IlpModel) -> ModelFile {
        ModelFile::Ilp(IlpFile {
            version: MODEL_VERSION,
            config: *m.featurizer.config(),
            vocab: m.featurizer.vocab().clone(),
            weights: sparse(&m.weights),
            epochs_trained: m.epochs_trained,
        })
    }

    fn kind(&self) -> &'static str {
        match self {
            ModelFile::Vertex(_) => "vertex",
            ModelFile::Ilp(_) => "ilp",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model files serialize")
    }

    pub fn from_json(text: &str) -> Result<ModelFile, PersistError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn into_bundle(self) -> Result<VertexBundle, PersistError> {
        let ModelFile::Vertex(f) = self else {
            return Err(PersistError::WrongKind {
                expected: "vertex",
                found: self.kind(),
            });
        };
        if f.version != MODEL_VERSION {
            return Err(PersistError::Version(f.version));
        }
        if !f.ablated.config.is_ablated() {
            return Err(PersistError::Config("ablated model must use edge features only".into()));
        }
        if !(0.0..=1.0).contains(&f.random.accept_prob) {
            return Err(PersistError::Config("random accept probability outside [0, 1]".into()));
        }
        Ok(VertexBundle {
            lr: f.lr.to_model()?,
            ablated: f.ablated.to_model()?,
            random: f.random,
        })
    }

    pub fn into_ilp(self) -> Result<IlpModel, PersistError> {
        let ModelFile::Ilp(f) = self else {
            return Err(PersistError::WrongKind {
                expected: "ilp",
                found: self.kind(),
            });
        };
        if f.version != MODEL_VERSION {
            return Err(PersistError::Version(f.version));
        }
        let featurizer = Featurizer::new(f.config, f.vocab)?;
        Ok(IlpModel {
            weights: dense(&f.weights, f.config.dim)?,
            featurizer,
            epochs_trained: f.epochs_trained,
        })
    }
}
