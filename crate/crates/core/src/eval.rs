//! Metrics, latency measurement and paired significance testing.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{char_len, Instance, ParseGraph, Positions};
use crate::lm::TrigramLm;
use crate::system::Compressor;

pub const REPORT_VERSION: u32 = 1;
pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const LATENCY_WARMUP: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("gold compression is empty")]
    EmptyGold,
    #[error("prediction is empty")]
    EmptyPrediction,
    #[error("no instances to evaluate")]
    NoInstances,
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("paired bootstrap needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("resample count must be positive")]
    NoResamples,
    #[error("instance {0} has no gold compression")]
    MissingGold(String),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set-overlap precision, recall and F1 over token positions.
pub fn token_f1(pred: &Positions, gold: &Positions) -> Result<F1Scores, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let hit = pred.intersection(gold).count() as f64;
    if hit == 0.0 {
        return Ok(F1Scores {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        });
    }
    let precision = hit / pred.len() as f64;
    let recall = hit / gold.len() as f64;
    Ok(F1Scores {
        precision,
        recall,
        f1: 2.0 * precision * recall / (precision + recall),
    })
}

/// ℓ(pred) / ℓ(sentence).
pub fn compression_ratio(pred: &Positions, g: &ParseGraph) -> Result<f64, EvalError> {
    if pred.is_empty() {
        return Err(EvalError::EmptyPrediction);
    }
    Ok(char_len(g, pred.iter().copied()) as f64 / g.sentence_char_len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub failures: usize,
}

/// Times `n` compressions of instances drawn with replacement, after
/// [`LATENCY_WARMUP`] unmeasured calls. Runs on the calling thread.
pub fn latency_bench<C: Compressor + ?Sized>(
    system: &C,
    corpus: &[Instance],
    n: usize,
    seed: u64,
) -> Result<LatencyStats, EvalError> {
    latency_bench_with_warmup(system, corpus, n, seed, LATENCY_WARMUP)
}

pub fn latency_bench_with_warmup<C: Compressor + ?Sized>(
    system: &C,
    corpus: &[Instance],
    n: usize,
    seed: u64,
    warmup: usize,
) -> Result<LatencyStats, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::NoInstances);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..warmup {
        let _ = system.compress(&corpus[rng.random_range(0..corpus.len())]);
    }
    let mut samples = Vec::with_capacity(n);
    let mut failures = 0;
    for _ in 0..n {
        let inst = &corpus[rng.random_range(0..corpus.len())];
        let t0 = Instant::now();
        let out = system.compress(inst);
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
        failures += usize::from(out.is_err());
    }
    let (mean_ms, std_ms) = mean_std(&samples);
    Ok(LatencyStats {
        n,
        mean_ms,
        std_ms,
        failures,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn mean(xs: &[f64]) -> f64 {
    mean_std(xs).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub mean_a: f64,
    pub mean_b: f64,
    /// Fraction (with add-one smoothing) of resamples in which the system
    /// that is better overall is no longer strictly better.
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    pub resamples: usize,
}

/// Paired bootstrap over per-instance scores. Instances are resampled with
/// replacement; `p = (r + 1) / (R + 1)` where `r` counts resamples in which
/// the overall loser matches or beats the overall winner. Equal overall means
/// give `p = 1`.
pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<Bootstrap, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(EvalError::TooFewSamples(a.len()));
    }
    if resamples == 0 {
        return Err(EvalError::NoResamples);
    }
    let (mean_a, mean_b) = (mean(a), mean(b));
    let sign = if mean_a > mean_b {
        1.0
    } else if mean_b > mean_a {
        -1.0
    } else {
        return Ok(Bootstrap {
            mean_a,
            mean_b,
            p_one_sided: 1.0,
            p_two_sided: 1.0,
            resamples,
        });
    };
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| sign * (x - y)).collect();
    let n = diffs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reversals = 0usize;
    for _ in 0..resamples {
        let s: f64 = (0..n).map(|_| diffs[rng.random_range(0..n)]).sum();
        if s <= 0.0 {
            reversals += 1;
        }
    }
    let p = (reversals + 1) as f64 / (resamples + 1) as f64;
    Ok(Bootstrap {
        mean_a,
        mean_b,
        p_one_sided: p,
        p_two_sided: (2.0 * p).min(1.0),
        resamples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub instance_id: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Absent for empty predictions.
    pub ratio: Option<f64>,
    pub slor: Option<f64>,
    pub kept: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub instances: usize,
    pub failures: usize,
    pub mean_f1: f64,
    pub mean_ratio: f64,
    pub mean_slor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_latency_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub metric: String,
    pub system_a: String,
    pub system_b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub p_value: f64,
    pub p_two_sided: f64,
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub system: String,
    pub rows: Vec<InstanceRow>,
    pub aggregates: Aggregates,
    pub timing: Timing,
    #[serde(default)]
    pub significance: Vec<Significance>,
}

/// Runs `system` on every instance. Failures are recorded in the row (with
/// zero F1) rather than aborting the run.
pub fn evaluate_suite<C: Compressor + ?Sized>(
    system: &C,
    instances: &[Instance],
    lm: Option<&TrigramLm>,
) -> Result<EvalReport, EvalError> {
    if instances.is_empty() {
        return Err(EvalError::NoInstances);
    }
    let start = Instant::now();
    let mut latency = Vec::with_capacity(instances.len());
    let mut rows = Vec::with_capacity(instances.len());
    for inst in instances {
        let gold = inst.gold.as_ref().ok_or_else(|| EvalError::MissingGold(inst.id().to_string()))?;
        let t0 = Instant::now();
        let out = system.compress(inst);
        latency.push(t0.elapsed().as_secs_f64() * 1e3);
        let row = match out {
            Ok(pred) => {
                let s = token_f1(&pred, gold)?;
                let slor = lm.and_then(|lm| {
                    let words: Vec<&str> = pred.iter().map(|&v| inst.graph.token(v).form.as_str()).collect();
                    lm.slor(&words).ok()
                });
                InstanceRow {
                    instance_id: inst.id().to_string(),
                    f1: s.f1,
                    precision: s.precision,
                    recall: s.recall,
                    ratio: compression_ratio(&pred, &inst.graph).ok(),
                    slor,
                    kept: pred.into_iter().collect(),
                    error: None,
                }
            }
            Err(e) => InstanceRow {
                instance_id: inst.id().to_string(),
                f1: 0.0,
                precision: 0.0,
                recall: 0.0,
                ratio: None,
                slor: None,
                kept: Vec::new(),
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    let slors: Vec<f64> = rows.iter().filter_map(|r| r.slor).collect();
    let aggregates = Aggregates {
        instances: rows.len(),
        failures: rows.iter().filter(|r| r.error.is_some()).count(),
        mean_f1: mean(&rows.iter().map(|r| r.f1).collect::<Vec<_>>()),
        mean_ratio: mean(&ratios),
        mean_slor: (!slors.is_empty()).then(|| mean(&slors)),
    };
    Ok(EvalReport {
        version: REPORT_VERSION,
        system: system.name().to_string(),
        rows,
        aggregates,
        timing: Timing {
            mean_latency_ms: mean(&latency),
            total_ms: start.elapsed().as_secs_f64() * 1e3,
        },
        significance: Vec::new(),
    })
}

impl EvalReport {
    /// Per-instance values of `metric` (`f1`, `precision`, `recall`, `ratio`
    /// or `slor`). Missing ratio/SLOR values count as zero so that rows stay
    /// paired across systems.
    pub fn metric(&self, metric: &str) -> Result<Vec<f64>, EvalError> {
        let pick: fn(&InstanceRow) -> f64 = match metric {
            "f1" => |r| r.f1,
            "precision" => |r| r.precision,
            "recall" => |r| r.recall,
            "ratio" => |r| r.ratio.unwrap_or(0.0),
            "slor" => |r| r.slor.unwrap_or(0.0),
            _ => return Err(EvalError::UnknownMetric(metric.to_string())),
        };
        Ok(self.rows.iter().map(pick).collect())
    }

    /// Tab-separated per-instance dump with a header line.
    pub fn to_tsv(&self) -> String {
        let opt = |x: Option<f64>| x.map_or(String::new(), |x| x.to_string());
        let mut out = String::from("instance_id\tf1\tprecision\trecall\tratio\tslor\terror\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.instance_id,
                r.f1,
                r.precision,
                r.recall,
                opt(r.ratio),
                opt(r.slor),
                r.error.as_deref().unwrap_or("")
            ));
        }
        out
    }
}

/// Paired bootstrap of `metric` between two reports over the same instances.
pub fn compare_reports(
    a: &EvalReport,
    b: &EvalReport,
    metric: &str,
    resamples: usize,
    seed: u64,
) -> Result<Significance, EvalError> {
    let bs = paired_bootstrap(&a.metric(metric)?, &b.metric(metric)?, resamples, seed)?;
    Ok(Significance {
        metric: metric.to_string(),
        system_a: a.system.clone(),
        system_b: b.system.clone(),
        mean_a: bs.mean_a,
        mean_b: bs.mean_b,
        p_value: bs.p_one_sided,
        p_two_sided: bs.p_two_sided,
        resamples,
    })
}

/// Least-squares line through `(x, y)`: `(slope, intercept, r²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}
