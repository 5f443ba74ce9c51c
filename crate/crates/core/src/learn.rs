//! Decision models for vertex addition: L2-regularized logistic regression
//! over hashed features (full or edge-only) and the random prior baseline.

use std::collections::BTreeMap;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Instance;
use crate::engine::{compress, oracle_path, CompressionState, DecisionModel, EngineError};
use crate::eval::token_f1;
use crate::features::{fnv1a, FeatureConfig, FeatureVector, Featurizer};

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("training data needs at least one decision of each label (accepts {accepts}, rejects {rejects})")]
    SingleClass { accepts: usize, rejects: usize },
    #[error("loss became non-finite at iteration {0}")]
    NonFinite(usize),
    #[error("no decisions to fit")]
    Empty,
    #[error("inverse regularization constant must be positive, got {0}")]
    BadC(f64),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// A featurized oracle decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureVector,
    pub label: bool,
}

/// Featurizes the oracle path of every instance. Instances whose gold does
/// not respect their constraints are skipped and counted.
pub fn oracle_examples(instances: &[Instance], featurizer: &Featurizer) -> (Vec<Example>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for inst in instances {
        match oracle_path(inst) {
            Ok(decisions) => out.extend(decisions.iter().map(|d| Example {
                features: featurizer.featurize(inst, &d.state, d.candidate),
                label: d.label,
            })),
            Err(e) => {
                debug!("skipping {}: {e}", inst.id());
                skipped += 1;
            }
        }
    }
    (out, skipped)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Examples re-indexed onto the features that actually occur.
struct Compact {
    rows: Vec<Vec<(usize, f64)>>,
    signs: Vec<f64>,
    index: Vec<u32>,
}

impl Compact {
    fn new(examples: &[Example]) -> Compact {
        let mut map: BTreeMap<u32, usize> = BTreeMap::new();
        for ex in examples {
            for &(i, _) in ex.features.entries() {
                map.entry(i).or_insert(0);
            }
        }
        for (k, slot) in map.values_mut().enumerate() {
            *slot = k;
        }
        let rows = examples
            .iter()
            .map(|ex| ex.features.entries().iter().map(|&(i, v)| (map[&i], v)).collect())
            .collect();
        let signs = examples.iter().map(|e| if e.label { 1.0 } else { -1.0 }).collect();
        Compact {
            rows,
            signs,
            index: map.into_keys().collect(),
        }
    }

    /// Objective and gradient; the last parameter is the unpenalized bias.
    fn eval(&self, params: &[f64], penalty: f64, grad: &mut [f64]) -> f64 {
        let k = params.len() - 1;
        let bias = params[k];
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (row, &y) in self.rows.iter().zip(&self.signs) {
            let z = bias + row.iter().map(|&(j, v)| params[j] * v).sum::<f64>();
            loss += softplus(-y * z);
            // d/dz softplus(-y z) = -y sigmoid(-y z)
            let coef = -y * sigmoid(-y * z);
            for &(j, v) in row {
                grad[j] += coef * v;
            }
            grad[k] += coef;
        }
        let mut reg = 0.0;
        for j in 0..k {
            reg += params[j] * params[j];
            grad[j] += penalty * params[j];
        }
        loss + 0.5 * penalty * reg
    }
}

/// Logistic loss `Σ ln(1 + exp(-y z))` of raw weights on examples, without
/// the penalty term.
pub fn logistic_loss(examples: &[Example], weights: &[f64], bias: f64) -> f64 {
    examples
        .iter()
        .map(|ex| {
            let y = if ex.label { 1.0 } else { -1.0 };
            softplus(-y * (ex.features.dot(weights) + bias))
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub c: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub history: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            c: 10.0,
            grad_tol: 1e-6,
            max_iter: 200,
            history: 10,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Limited-memory BFGS with Armijo backtracking. Returns the minimizer and
/// the number of iterations used.
fn lbfgs(data: &Compact, dim: usize, opts: &TrainOptions) -> Result<(Vec<f64>, usize), LearnError> {
    let penalty = 1.0 / opts.c;
    let mut x = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut f = data.eval(&x, penalty, &mut g);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    let mut g_new = vec![0.0; dim];
    let mut x_new = vec![0.0; dim];
    for iter in 0..opts.max_iter {
        if !f.is_finite() {
            return Err(LearnError::NonFinite(iter));
        }
        if norm(&g) <= opts.grad_tol {
            return Ok((x, iter));
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alpha = vec![0.0; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            alpha[i] = rho[i] * dot(&s_hist[i], &d);
            d.iter_mut().zip(&y_hist[i]).for_each(|(di, yi)| *di -= alpha[i] * yi);
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / norm(&g).max(1.0),
        };
        d.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..s_hist.len() {
            let beta = rho[i] * dot(&y_hist[i], &d);
            d.iter_mut().zip(&s_hist[i]).for_each(|(di, si)| *di += (alpha[i] - beta) * si);
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            // not a descent direction; restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            d = g.iter().map(|v| -v / norm(&g).max(1.0)).collect();
            slope = dot(&g, &d);
        }
        let mut step = 1.0;
        let mut f_new;
        loop {
            x_new.iter_mut().zip(x.iter().zip(&d)).for_each(|(n, (xi, di))| *n = xi + step * di);
            f_new = data.eval(&x_new, penalty, &mut g_new);
            if f_new.is_finite() && f_new <= f + 1e-4 * step * slope {
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                // no further progress possible at machine precision
                return Ok((x, iter));
            }
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if s_hist.len() == opts.history {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho.push(1.0 / sy);
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
    }
    if !f.is_finite() {
        return Err(LearnError::NonFinite(opts.max_iter));
    }
    Ok((x, opts.max_iter))
}

/// Logistic-regression decision model.
#[derive(Debug, Clone)]
pub struct LrModel {
    pub featurizer: Featurizer,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    /// Fraction of accept decisions in the training data.
    pub train_accept_rate: f64,
    pub iterations: usize,
}

/// Fits L2-regularized logistic regression with penalty `1/c` on the weights
/// (the bias is not penalized).
pub fn train_lr(examples: &[Example], featurizer: Featurizer, opts: &TrainOptions) -> Result<LrModel, LearnError> {
    if !(opts.c > 0.0) {
        return Err(LearnError::BadC(opts.c));
    }
    let accepts = examples.iter().filter(|e| e.label).count();
    let rejects = examples.len() - accepts;
    if accepts == 0 || rejects == 0 {
        return Err(LearnError::SingleClass { accepts, rejects });
    }
    let data = Compact::new(examples);
    let k = data.index.len();
    let (params, iterations) = lbfgs(&data, k + 1, opts)?;
    let mut weights = vec![0.0; featurizer.config().dim];
    for (j, &idx) in data.index.iter().enumerate() {
        weights[idx as usize] = params[j];
    }
    debug!("lr c={} converged after {iterations} iterations", opts.c);
    Ok(LrModel {
        featurizer,
        weights,
        bias: params[k],
        c: opts.c,
        train_accept_rate: accepts as f64 / examples.len() as f64,
        iterations,
    })
}

impl LrModel {
    pub fn predict(&self, fv: &FeatureVector) -> f64 {
        sigmoid(fv.dot(&self.weights) + self.bias)
    }

    pub fn config(&self) -> &FeatureConfig {
        self.featurizer.config()
    }

    pub fn weight_norm(&self) -> f64 {
        norm(&self.weights)
    }
}

impl DecisionModel for LrModel {
    fn score(&self, inst: &Instance, state: &CompressionState, candidate: usize) -> f64 {
        self.predict(&self.featurizer.featurize(inst, state, candidate))
    }
}

/// Mean token F1 of `model` on instances that carry gold.
pub fn validation_f1<M: DecisionModel + ?Sized>(model: &M, instances: &[Instance]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for inst in instances {
        let (Some(gold), Ok(pred)) = (&inst.gold, compress(inst, model)) else {
            continue;
        };
        if let Ok(s) = token_f1(&pred, gold) {
            total += s.f1;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Trains one model per `c` in `grid` and keeps the one with the best
/// validation F1 (first wins on ties). Also returns every `(c, f1)` pair.
pub fn select_c(
    examples: &[Example],
    featurizer: &Featurizer,
    validation: &[Instance],
    grid: &[f64],
    base: &TrainOptions,
) -> Result<(LrModel, Vec<(f64, f64)>), LearnError> {
    let mut best: Option<(LrModel, f64)> = None;
    let mut scores = Vec::new();
    for &c in grid {
        let model = train_lr(examples, featurizer.clone(), &TrainOptions { c, ..*base })?;
        let f1 = validation_f1(&model, validation);
        scores.push((c, f1));
        if best.as_ref().is_none_or(|(_, b)| f1 > *b) {
            best = Some((model, f1));
        }
    }
    let (model, _) = best.ok_or(LearnError::Empty)?;
    Ok((model, scores))
}

/// Accepts each candidate independently with the training accept rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomPolicy {
    pub accept_prob: f64,
    pub rng_seed: u64,
}

pub fn fit_random_policy(labels: impl IntoIterator<Item = bool>, rng_seed: u64) -> Result<RandomPolicy, LearnError> {
    let (mut n, mut pos) = (0usize, 0usize);
    for l in labels {
        n += 1;
        pos += usize::from(l);
    }
    if n == 0 {
        return Err(LearnError::Empty);
    }
    Ok(RandomPolicy {
        accept_prob: pos as f64 / n as f64,
        rng_seed,
    })
}

impl RandomPolicy {
    /// The draw is a pure function of seed, instance, step and candidate, so
    /// replays and concurrent use see the same sequence.
    fn draw(&self, inst: &Instance, state: &CompressionState, candidate: usize) -> f64 {
        let key = format!("{}\u{1f}{}\u{1f}{}", inst.id(), state.timestep(), candidate);
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed ^ fnv1a(key.as_bytes()));
        rng.random::<f64>()
    }
}

impl DecisionModel for RandomPolicy {
    fn score(&self, inst: &Instance, state: &CompressionState, candidate: usize) -> f64 {
        if self.draw(inst, state, candidate) < self.accept_prob {
            1.0
        } else {
            0.0
        }
    }
}
