//! Command-line pipeline: ingest, dataset synthesis, training, compression,
//! evaluation, benchmarking and the snippet server.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.

pub mod server;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use qfcomp::datagen::{desk_corpus, make_dataset, split_corpus, QueryLengthDist, Reservation};
use qfcomp::engine::{oracle_path, DecisionRecord};
use qfcomp::eval::{compare_reports, evaluate_suite, latency_bench, EvalReport, LatencyStats, Significance, DEFAULT_RESAMPLES};
use qfcomp::features::FeatureConfig;
use qfcomp::ilp::{compress_instance, PerceptronOptions, DEFAULT_NODE_LIMIT};
use qfcomp::lm::TrigramLm;
use qfcomp::persist::{ModelFile, VertexBundle};
use qfcomp::pipeline::{build_engines, train_ilp_model, train_vertex_bundle, TrainConfig};
use qfcomp::service::{index_corpus, Engines};
use qfcomp::system::EngineKind;
use qfcomp::{
    linearize, parse_conllu, read_graphs_jsonl, read_instances_jsonl, relabel_function_edges, write_instances_jsonl,
    IlpModel, Instance, InstanceRecord, ParseGraph,
};
use serde::Serialize;
use serde_json::json;

const EXIT_CODES: &str = "Exit status: 0 on success, 1 on a runtime failure, 2 on a usage error.";

#[derive(Debug, Parser)]
#[command(name = "qfcomp", version, about = "Query-focused extractive sentence compression", after_help = EXIT_CODES)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert CoNLL-U to JSON-lines graphs, or generate the desk corpus.
    #[command(after_help = EXIT_CODES)]
    Ingest(IngestArgs),
    /// Build (sentence, query, budget, gold) tuples and split them.
    #[command(after_help = EXIT_CODES)]
    MakeDataset(MakeDatasetArgs),
    /// Train the logistic, edge-only and random decision models.
    #[command(after_help = EXIT_CODES)]
    TrainLr(TrainLrArgs),
    /// Train the edge-selection baseline with the averaged perceptron.
    #[command(after_help = EXIT_CODES)]
    TrainIlp(TrainIlpArgs),
    /// Train a trigram language model and write it as ARPA.
    #[command(after_help = EXIT_CODES)]
    TrainLm(TrainLmArgs),
    /// Compress every instance of a JSON-lines file.
    #[command(after_help = EXIT_CODES)]
    Compress(CompressArgs),
    /// Score engines against gold and test their differences.
    #[command(after_help = EXIT_CODES)]
    Evaluate(EvaluateArgs),
    /// Measure per-sentence latency of each engine.
    #[command(after_help = EXIT_CODES)]
    Bench(BenchArgs),
    /// Serve snippet search over HTTP.
    #[command(after_help = EXIT_CODES)]
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CoNLL-U input.
    #[arg(long, conflicts_with = "desk", required_unless_present = "desk")]
    pub input: Option<PathBuf>,
    /// Generate this many desk sentences with synthetic golds instead.
    #[arg(long)]
    pub desk: Option<usize>,
    /// Suffix modifier labels with their case/cc lemma.
    #[arg(long)]
    pub relabel: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MakeDatasetArgs {
    /// JSON-lines graphs carrying gold compressions.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Query length distribution (TOML or JSON).
    #[arg(long)]
    pub dist: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1, conflicts_with = "validation_count")]
    pub validation_fraction: f64,
    #[arg(long)]
    pub validation_count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainLrArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub validation: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 10.0, 100.0])]
    pub c_grid: Vec<f64>,
    #[arg(long, default_value_t = FeatureConfig::DEFAULT_DIM)]
    pub dim: usize,
    #[arg(long, default_value_t = FeatureConfig::DEFAULT_VOCAB_CUTOFF)]
    pub vocab_cutoff: usize,
    /// Seed of the random baseline.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the oracle decisions as JSON lines.
    #[arg(long)]
    pub decisions_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainIlpArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub validation: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub epochs: usize,
    #[arg(long, default_value_t = DEFAULT_NODE_LIMIT)]
    pub node_limit: u64,
    #[arg(long, default_value_t = FeatureConfig::DEFAULT_DIM)]
    pub dim: usize,
    #[arg(long, default_value_t = FeatureConfig::DEFAULT_VOCAB_CUTOFF)]
    pub vocab_cutoff: usize,
}

#[derive(Debug, Args)]
pub struct TrainLmArgs {
    /// Sentences as CoNLL-U or JSON lines.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub order: u8,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Engine inside a vertex model file (vertex_lr, ablated or random).
    #[arg(long)]
    pub engine: Option<EngineKind>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub ilp_model: Option<PathBuf>,
    /// Engines to compare, in order (default: every loaded engine).
    #[arg(long, value_delimiter = ',')]
    pub engines: Vec<EngineKind>,
    /// ARPA language model for SLOR.
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for per-instance TSV dumps.
    #[arg(long)]
    pub tsv_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub ilp_model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub engines: Vec<EngineKind>,
    #[arg(short, long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Sentences to index (CoNLL-U or JSON lines).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub ilp_model: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value = "vertex_lr")]
    pub default_engine: EngineKind,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn is_conllu(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "conllu" || e == "conll")
}

/// Graphs from CoNLL-U or JSON lines, with the JSON records when available.
fn load_graphs(path: &Path) -> Result<Vec<(ParseGraph, Option<InstanceRecord>)>> {
    let text = read(path)?;
    if is_conllu(path) {
        Ok(parse_conllu(&text)?.into_iter().map(|g| (g, None)).collect())
    } else {
        Ok(read_graphs_jsonl(&text)?.into_iter().map(|(g, r)| (g, Some(r))).collect())
    }
}

fn load_instances(path: &Path) -> Result<Vec<Instance>> {
    read_instances_jsonl(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_model(path: &Path) -> Result<ModelFile> {
    ModelFile::from_json(&read(path)?).with_context(|| format!("loading model {}", path.display()))
}

fn load_engines(model: Option<&Path>, ilp_model: Option<&Path>) -> Result<Engines> {
    let bundle: Option<VertexBundle> = model.map(|p| Ok::<_, anyhow::Error>(load_model(p)?.into_bundle()?)).transpose()?;
    let ilp: Option<IlpModel> = ilp_model.map(|p| Ok::<_, anyhow::Error>(load_model(p)?.into_ilp()?)).transpose()?;
    Ok(build_engines(bundle, ilp))
}

fn selected_engines(engines: &Engines, wanted: &[EngineKind]) -> Result<Vec<&'static str>> {
    if wanted.is_empty() {
        let names = engines.names();
        if names.is_empty() {
            bail!("no engines loaded; pass --model and/or --ilp-model");
        }
        // report order: vertex_lr, ablated, random, ilp
        let order = [EngineKind::VertexLr, EngineKind::Ablated, EngineKind::Random, EngineKind::Ilp];
        return Ok(order.iter().map(|k| k.as_str()).filter(|n| names.contains(n)).collect());
    }
    for k in wanted {
        engines.get(k.as_str())?;
    }
    Ok(wanted.iter().map(|k| k.as_str()).collect())
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let mut records = Vec::new();
    if let Some(n) = a.desk {
        for (g, gold, split) in desk_corpus(n, a.seed) {
            let g = if a.relabel { relabel_function_edges(&g) } else { (*g).clone() };
            let mut r = InstanceRecord::from_graph(&g);
            r.gold = Some(gold.into_iter().collect());
            r.split = split;
            records.push(r);
        }
    } else if let Some(input) = &a.input {
        for g in parse_conllu(&read(input)?)? {
            let g = if a.relabel { relabel_function_edges(&g) } else { g };
            records.push(InstanceRecord::from_graph(&g));
        }
    }
    let mut out = String::new();
    for r in &records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write(&a.out, &out)?;
    println!("{}", json!({ "sentences": records.len() }));
    Ok(())
}

fn make_dataset_cmd(a: &MakeDatasetArgs) -> Result<()> {
    let dist: QueryLengthDist = match &a.dist {
        None => QueryLengthDist::default(),
        Some(p) if p.extension().is_some_and(|e| e == "json") => serde_json::from_str(&read(p)?)?,
        Some(p) => toml::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
    };
    dist.validate()?;
    let mut pairs = Vec::new();
    for (g, rec) in load_graphs(&a.input)? {
        let rec = rec.context("dataset input must be JSON lines with gold compressions")?;
        let gold = rec.gold.with_context(|| format!("record {} has no gold", rec.id))?;
        pairs.push((Arc::new(g), gold.into_iter().collect(), rec.split));
    }
    let (instances, skipped) = make_dataset(&pairs, &dist, a.seed)?;
    let built = instances.len();
    let reservation = match a.validation_count {
        Some(n) => Reservation::Count(n),
        None => Reservation::Fraction(a.validation_fraction),
    };
    let splits = split_corpus(instances, reservation, a.seed)?;
    write(&a.out_dir.join("train.jsonl"), &write_instances_jsonl(&splits.train))?;
    write(&a.out_dir.join("validation.jsonl"), &write_instances_jsonl(&splits.validation))?;
    write(&a.out_dir.join("test.jsonl"), &write_instances_jsonl(&splits.test))?;
    println!(
        "{}",
        json!({
            "built": built,
            "skipped": skipped,
            "train": splits.train.len(),
            "validation": splits.validation.len(),
            "test": splits.test.len(),
            "warning": splits.warning,
        })
    );
    Ok(())
}

fn train_lr_cmd(a: &TrainLrArgs) -> Result<()> {
    let train = load_instances(&a.train)?;
    let validation = load_instances(&a.validation)?;
    let cfg = TrainConfig {
        c_grid: a.c_grid.clone(),
        dim: a.dim,
        vocab_cutoff: a.vocab_cutoff,
        seed: a.seed,
        ..TrainConfig::default()
    };
    if let Some(path) = &a.decisions_out {
        let mut out = String::new();
        for inst in &train {
            if let Ok(ds) = oracle_path(inst) {
                for d in &ds {
                    out.push_str(&serde_json::to_string(&DecisionRecord::new(inst, d))?);
                    out.push('\n');
                }
            }
        }
        write(path, &out)?;
    }
    let (bundle, summary) = train_vertex_bundle(&train, &validation, &cfg)?;
    write(&a.out, &ModelFile::from_bundle(&bundle).to_json())?;
    println!(
        "{}",
        json!({
            "decisions": summary.decisions,
            "skipped_instances": summary.skipped_instances,
            "accept_rate": summary.accept_rate,
            "vertex_lr": { "c": bundle.lr.c, "grid": summary.lr_grid },
            "ablated": { "c": bundle.ablated.c, "grid": summary.ablated_grid },
        })
    );
    Ok(())
}

fn train_ilp_cmd(a: &TrainIlpArgs) -> Result<()> {
    let train = load_instances(&a.train)?;
    let validation = load_instances(&a.validation)?;
    let cfg = TrainConfig {
        dim: a.dim,
        vocab_cutoff: a.vocab_cutoff,
        perceptron: PerceptronOptions {
            epochs: a.epochs,
            node_limit: a.node_limit,
        },
        ..TrainConfig::default()
    };
    let (model, report) = train_ilp_model(&train, &validation, &cfg)?;
    write(&a.out, &ModelFile::from_ilp(&model).to_json())?;
    let epochs: Vec<_> = report
        .epochs
        .iter()
        .map(|e| json!({ "mistakes": e.mistakes, "skipped": e.skipped, "validation_f1": e.validation_f1 }))
        .collect();
    println!("{}", json!({ "epochs": epochs, "final_f1_change": report.final_f1_change() }));
    Ok(())
}

fn train_lm_cmd(a: &TrainLmArgs) -> Result<()> {
    let sentences: Vec<Vec<String>> = load_graphs(&a.input)?
        .into_iter()
        .map(|(g, _)| g.tokens().iter().map(|t| t.form.clone()).collect())
        .collect();
    let lm = TrigramLm::train(&sentences, a.order as usize, qfcomp::lm::DEFAULT_DISCOUNT)?;
    write(&a.out, &lm.to_arpa())?;
    println!("{}", json!({ "sentences": sentences.len(), "vocab": lm.vocab().len(), "order": lm.order() }));
    Ok(())
}

fn compress_cmd(a: &CompressArgs) -> Result<()> {
    let engines = match load_model(&a.model)? {
        ModelFile::Ilp(f) => {
            if a.engine.is_some_and(|e| e != EngineKind::Ilp) {
                bail!("{} holds an ilp model", a.model.display());
            }
            build_engines(None, Some(ModelFile::Ilp(f).into_ilp()?))
        }
        m @ ModelFile::Vertex(_) => build_engines(Some(m.into_bundle()?), None),
    };
    let name = match a.engine {
        Some(k) => k.as_str(),
        None if engines.names().contains(&"ilp") => "ilp",
        None => EngineKind::VertexLr.as_str(),
    };
    let engine = engines.get(name)?;
    let instances = load_instances(&a.input)?;
    let mut out = String::new();
    let mut failures = 0;
    for inst in &instances {
        let t0 = std::time::Instant::now();
        let result = engine.compress(inst);
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        let row = match result {
            Ok(kept) => {
                let (text, char_len) = linearize(&inst.graph, &kept);
                json!({
                    "id": inst.id(),
                    "engine": name,
                    "kept": kept,
                    "text": text,
                    "char_len": char_len,
                    "budget": inst.budget,
                    "timing": { "ms": ms },
                })
            }
            Err(e) => {
                failures += 1;
                json!({ "id": inst.id(), "engine": name, "error": e.to_string(), "timing": { "ms": ms } })
            }
        };
        out.push_str(&serde_json::to_string(&row)?);
        out.push('\n');
    }
    write(&a.out, &out)?;
    info!("compressed {} instances ({failures} failures)", instances.len());
    if failures > 0 {
        bail!("{failures} of {} instances failed", instances.len());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvaluateOutput {
    version: u32,
    systems: Vec<EvalReport>,
    significance: Vec<Significance>,
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let engines = load_engines(a.model.as_deref(), a.ilp_model.as_deref())?;
    let names = selected_engines(&engines, &a.engines)?;
    let instances = load_instances(&a.input)?;
    let lm = a.lm.as_deref().map(|p| Ok::<_, anyhow::Error>(TrigramLm::from_arpa(&read(p)?)?)).transpose()?;
    let mut reports = Vec::new();
    for name in &names {
        let r = evaluate_suite(engines.get(name)?, &instances, lm.as_ref())?;
        println!(
            "{name}\tf1={:.4}\tratio={:.4}\tslor={}\tlatency_ms={:.4}",
            r.aggregates.mean_f1,
            r.aggregates.mean_ratio,
            r.aggregates.mean_slor.map_or("-".to_string(), |s| format!("{s:.4}")),
            r.timing.mean_latency_ms
        );
        if let Some(dir) = &a.tsv_dir {
            write(&dir.join(format!("{name}.tsv")), &r.to_tsv())?;
        }
        reports.push(r);
    }
    let mut metrics = vec!["f1", "ratio"];
    if lm.is_some() {
        metrics.push("slor");
    }
    let mut significance = Vec::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            for m in &metrics {
                let s = compare_reports(&reports[i], &reports[j], m, a.resamples, a.seed)?;
                println!(
                    "{} vs {}\t{m}\t{:.4} vs {:.4}\tp={:.6}\tp_two_sided={:.6}",
                    s.system_a, s.system_b, s.mean_a, s.mean_b, s.p_value, s.p_two_sided
                );
                reports[i].significance.push(s.clone());
                significance.push(s);
            }
        }
    }
    write_json(
        &a.out,
        &EvaluateOutput {
            version: qfcomp::eval::REPORT_VERSION,
            systems: reports,
            significance,
        },
    )
}

fn bench_cmd(a: &BenchArgs) -> Result<()> {
    let engines = load_engines(a.model.as_deref(), a.ilp_model.as_deref())?;
    let names = selected_engines(&engines, &a.engines)?;
    let instances = load_instances(&a.input)?;
    let mut results: Vec<(&str, LatencyStats)> = Vec::new();
    for name in &names {
        let stats = latency_bench(engines.get(name)?, &instances, a.n, a.seed)?;
        println!("{name}\tmean_ms={:.4}\tstd_ms={:.4}\tn={}", stats.mean_ms, stats.std_ms, stats.n);
        results.push((name, stats));
    }
    let lookup = |k: &str| results.iter().find(|(n, _)| *n == k).map(|(_, s)| s.mean_ms);
    let ratio = lookup("vertex_lr").zip(lookup("ilp")).map(|(v, i)| v / i);
    if let Some(r) = ratio {
        println!("vertex_lr / ilp latency ratio = {r:.3}");
    }
    // share of test instances the branch and bound closes within its node limit
    let proven_optimal = match (&a.ilp_model, names.contains(&"ilp")) {
        (Some(path), true) => {
            let model = load_model(path)?.into_ilp()?;
            let proven = instances
                .iter()
                .filter(|i| compress_instance(&model, i, DEFAULT_NODE_LIMIT).is_ok_and(|s| s.stats.proven_optimal))
                .count();
            let rate = proven as f64 / instances.len() as f64;
            println!("ilp proven optimal on {proven}/{} instances", instances.len());
            Some(rate)
        }
        _ => None,
    };
    let engines_json: serde_json::Map<String, serde_json::Value> =
        results.iter().map(|(n, s)| (n.to_string(), serde_json::to_value(s).unwrap())).collect();
    write_json(
        &a.out,
        &json!({
            "timing": {
                "engines": engines_json,
                "vertex_lr_over_ilp": ratio,
                "ilp_proven_optimal_rate": proven_optimal,
                "n": a.n,
                "seed": a.seed,
            }
        }),
    )
}

fn serve_cmd(a: &ServeArgs) -> Result<()> {
    let engines = load_engines(a.model.as_deref(), a.ilp_model.as_deref())?;
    if engines.names().is_empty() {
        bail!("no engines loaded; pass --model and/or --ilp-model");
    }
    let graphs = load_graphs(&a.corpus)?.into_iter().map(|(g, _)| Arc::new(g));
    let index = index_corpus(graphs)?;
    info!("indexed {} sentences, {} terms", index.len(), index.vocabulary_size());
    let state = Arc::new(server::AppState {
        index,
        engines,
        default_engine: a.default_engine.as_str().to_string(),
    });
    let addr = format!("{}:{}", a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, server::router(state)).await?;
        Ok(())
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::MakeDataset(a) => make_dataset_cmd(a),
        Command::TrainLr(a) => train_lr_cmd(a),
        Command::TrainIlp(a) => train_ilp_cmd(a),
        Command::TrainLm(a) => train_lm_cmd(a),
        Command::Compress(a) => compress_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}
