// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;
use std::time::Instant;

use editlab::corpus::{corpus_from_records, generate_synthetic_corpus, load_dataset, Corpus, FactRecord, Polarity, BOS_ID};
use editlab::editor::{retention_texts, sequential_edit, EditLog, EditRequest, Retention};
use editlab::evalsuite::factcheck::fact_check_with;
use editlab::evalsuite::{
    audit_tables, oracle_self_test, parse_table_rows, run_quadrants, FactCheckOutcome, TableAudit, AUDIT_TOLERANCE,
    PUBLISHED_TABLES,
};
use editlab::io::sha256_hex;
use editlab::tinylm::{train, Checkpoint};
use editlab::tracing::{aggregate_decisive_layers, causal_trace, TraceResult};
use editlab::LabError;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::manifest::{file_hash, Run};

pub const CORPUS_JSON: &str = "corpus.json";
pub const CORPUS_TXT: &str = "corpus.txt";
pub const BASE_CKPT: &str = "base.ckpt";
pub const TRACE_JSON: &str = "trace.json";
pub const TRACE_CSV: &str = "trace.csv";
pub const LAYERS_JSON: &str = "layers.json";
pub const EDITED_CKPT: &str = "edited.ckpt";
pub const EDIT_LOG: &str = "edit_log.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const FACTCHECK_JSON: &str = "factcheck.json";
pub const FACTCHECK_TXT: &str = "factcheck.txt";

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or a missing prerequisite.
    Validation(String),
    Runtime(String),
    SelfTestFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::SelfTestFailed(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) | CliError::SelfTestFailed(m) => f.write_str(m),
        }
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        match e {
            LabError::InvalidConfig(_) | LabError::MalformedRecord { .. } | LabError::PoolExhausted { .. } => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn missing(artifact: &str, command: &str) -> CliError {
    CliError::Validation(format!("missing artifact `{artifact}`: run `editlab {command}` first"))
}

fn needed_hash(run: &Run, artifact: &str, command: &str) -> CliResult<String> {
    file_hash(&run.path(artifact)).ok_or_else(|| missing(artifact, command))
}

fn input_hash(value: serde_json::Value) -> String {
    sha256_hex(value.to_string().as_bytes())
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifact serializes");
    v.push(b'\n');
    v
}

fn skipped(step: &str) {
    println!("{step}: up to date");
}

fn load_corpus(run: &Run) -> CliResult<Corpus> {
    let bytes = std::fs::read(run.path(CORPUS_JSON)).map_err(|_| missing(CORPUS_JSON, "generate"))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn load_ckpt(run: &Run, name: &str, command: &str) -> CliResult<Checkpoint> {
    if !run.path(name).exists() {
        return Err(missing(name, command));
    }
    Ok(Checkpoint::load(&run.path(name))?)
}

pub fn cmd_generate(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let dataset_hash = match &cfg.dataset {
        Some(d) => Some(
            file_hash(&d.path).ok_or_else(|| CliError::Validation(format!("dataset {} not found", d.path.display())))?,
        ),
        None => None,
    };
    let key = input_hash(json!({"seed": cfg.seed, "corpus": cfg.corpus, "dataset": cfg.dataset, "dataset_hash": dataset_hash}));
    if run.up_to_date("generate", &key) {
        skipped("generate");
        return Ok(());
    }
    let corpus = match &cfg.dataset {
        Some(d) => corpus_from_records(load_dataset(&d.path, d.format.parse()?)?, &cfg.corpus)?,
        None => generate_synthetic_corpus(&cfg.corpus)?,
    };
    println!(
        "generate: {} edit facts, {} held-out facts, {} training lines",
        corpus.edit_facts().count(),
        corpus.heldout_facts().count(),
        corpus.training_lines().count()
    );
    run.record(
        "generate",
        &key,
        vec![(CORPUS_JSON, pretty(&corpus)), (CORPUS_TXT, corpus.training_text.clone().into_bytes())],
    )?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let corpus_hash = needed_hash(run, CORPUS_JSON, "generate")?;
    let key = input_hash(json!({"seed": cfg.seed, "model": cfg.model, "train": cfg.train, "corpus": corpus_hash}));
    if run.up_to_date("train", &key) {
        skipped("train");
        return Ok(());
    }
    let corpus = load_corpus(run)?;
    let tokenizer = corpus.tokenizer();
    let timer = Instant::now();
    let ckpt = train(&corpus.training_text, &tokenizer, cfg.model_config(tokenizer.vocab_size()), &cfg.train)?;
    eprintln!("train: {:.1} s", timer.elapsed().as_secs_f64());
    println!(
        "train: {} steps, final loss {:.4}",
        ckpt.training_meta.steps,
        ckpt.training_meta.final_loss.unwrap_or(f64::NAN)
    );
    run.record("train", &key, vec![(BASE_CKPT, ckpt.to_bytes())])?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceArtifact {
    pub tool_version: String,
    pub config_hash: String,
    pub record_ids: Vec<u64>,
    pub traces: Vec<TraceResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerChoice {
    pub layers: Vec<usize>,
    pub n_traces: usize,
    pub n_weak_traces: usize,
}

pub fn cmd_trace(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let corpus_hash = needed_hash(run, CORPUS_JSON, "generate")?;
    let base_hash = needed_hash(run, BASE_CKPT, "train")?;
    let key = input_hash(json!({
        "seed": cfg.seed, "trace": cfg.trace, "corpus": corpus_hash, "base": base_hash, "config": cfg.hash()
    }));
    if run.up_to_date("trace", &key) {
        skipped("trace");
        return Ok(());
    }
    let corpus = load_corpus(run)?;
    let base = load_ckpt(run, BASE_CKPT, "train")?;
    let tc = cfg.trace_config();
    let mut traces = Vec::new();
    let mut ids = Vec::new();
    for record in corpus.edit_facts().filter(|r| r.target_true.is_some()).take(cfg.trace.n_facts) {
        let req = EditRequest::new(record, Polarity::Positive, &base.tokenizer)?;
        let truth = base.tokenizer.encode(&format!(" {}", record.target_true.as_deref().unwrap_or_default()))?;
        traces.push(causal_trace(&base, &req.input, req.subject_span.clone(), truth[0], &tc)?);
        ids.push(record.id);
    }
    let layers = aggregate_decisive_layers(&traces, cfg.trace.n_layers_to_edit)
        .ok_or_else(|| CliError::Validation("no traceable facts: every record lacks an old answer".into()))?;
    let choice = LayerChoice {
        n_weak_traces: traces.iter().filter(|t| t.warning.is_some()).count(),
        n_traces: traces.len(),
        layers,
    };
    println!(
        "trace: {} facts, decisive layers {:?} ({} weak traces)",
        choice.n_traces, choice.layers, choice.n_weak_traces
    );
    let mut csv = String::new();
    for (id, t) in ids.iter().zip(&traces) {
        for (i, line) in t.to_csv().lines().enumerate() {
            if i == 0 && csv.is_empty() {
                csv.push_str(&format!("record,{line}\n"));
            } else if i > 0 {
                csv.push_str(&format!("{id},{line}\n"));
            }
        }
    }
    let artifact = TraceArtifact {
        tool_version: editlab::VERSION.to_string(),
        config_hash: cfg.hash(),
        record_ids: ids,
        traces,
    };
    run.record(
        "trace",
        &key,
        vec![(TRACE_JSON, pretty(&artifact)), (TRACE_CSV, csv.into_bytes()), (LAYERS_JSON, pretty(&choice))],
    )?;
    Ok(())
}

/// Fixed layers from the config, or the traced choice.
fn resolve_layers(cfg: &RunConfig, run: &Run) -> CliResult<Vec<usize>> {
    if let Some(l) = &cfg.edit.layers {
        return Ok(l.clone());
    }
    let bytes = std::fs::read(run.path(LAYERS_JSON)).map_err(|_| {
        CliError::Validation(format!(
            "missing artifact `{LAYERS_JSON}`: run `editlab trace` first or set edit.layers (--layers)"
        ))
    })?;
    let choice: LayerChoice = serde_json::from_slice(&bytes)?;
    Ok(choice.layers)
}

fn edit_records(cfg: &RunConfig, corpus: &Corpus) -> CliResult<Vec<FactRecord>> {
    let needed = cfg.edit.batch_size * cfg.edit.n_batches;
    let records: Vec<FactRecord> = corpus.edit_facts().take(needed).cloned().collect();
    if records.len() < needed {
        return Err(CliError::Validation(format!(
            "edit needs {needed} facts, the corpus has {}",
            records.len()
        )));
    }
    Ok(records)
}

fn pin_retention(cfg: &RunConfig, base: &Checkpoint, corpus: &Corpus, layers: &[usize]) -> CliResult<Retention> {
    let inputs = retention_texts(corpus)
        .iter()
        .map(|t| {
            let mut ids = vec![BOS_ID];
            ids.extend(base.tokenizer.encode(t)?);
            Ok(ids)
        })
        .collect::<editlab::Result<Vec<_>>>()?;
    let plan = cfg.plan(layers.to_vec());
    Ok(Retention::pin(base, layers, &inputs, plan.retention_size, cfg.seed)?)
}

fn edit_key(cfg: &RunConfig, run: &Run, layers: &[usize], extra: serde_json::Value) -> CliResult<String> {
    let corpus_hash = needed_hash(run, CORPUS_JSON, "generate")?;
    let base_hash = needed_hash(run, BASE_CKPT, "train")?;
    Ok(input_hash(json!({
        "seed": cfg.seed, "edit": cfg.edit, "layers": layers, "corpus": corpus_hash, "base": base_hash,
        "config": cfg.hash(), "extra": extra
    })))
}

pub fn cmd_edit(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let layers = resolve_layers(cfg, run)?;
    let key = edit_key(cfg, run, &layers, json!("edit"))?;
    if run.up_to_date("edit", &key) {
        skipped("edit");
        return Ok(());
    }
    let corpus = load_corpus(run)?;
    let base = load_ckpt(run, BASE_CKPT, "train")?;
    let records = edit_records(cfg, &corpus)?;
    let requests = records
        .iter()
        .map(|r| EditRequest::new(r, Polarity::Positive, &base.tokenizer))
        .collect::<editlab::Result<Vec<_>>>()?;
    let retention = pin_retention(cfg, &base, &corpus, &layers)?;
    let timer = Instant::now();
    let (edited, log) = sequential_edit(&base, &requests, &cfg.plan(layers.clone()), &retention)?;
    eprintln!("edit: {:.1} s", timer.elapsed().as_secs_f64());
    println!("edit: {} requests at layers {:?}", requests.len(), layers);
    #[derive(Serialize)]
    struct LogArtifact<'a> {
        tool_version: &'a str,
        config_hash: String,
        layers: &'a [usize],
        log: &'a EditLog,
    }
    let log_artifact = LogArtifact {
        tool_version: editlab::VERSION,
        config_hash: cfg.hash(),
        layers: &layers,
        log: &log,
    };
    run.record("edit", &key, vec![(EDITED_CKPT, edited.to_bytes()), (EDIT_LOG, pretty(&log_artifact))])?;
    Ok(())
}

pub fn cmd_quadrants(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let layers = resolve_layers(cfg, run)?;
    let key = edit_key(cfg, run, &layers, json!({"metric": cfg.metric}))?;
    if run.up_to_date("quadrants", &key) {
        skipped("quadrants");
        print!("{}", std::fs::read_to_string(run.path(REPORT_TXT)).unwrap_or_default());
        return Ok(());
    }
    let corpus = load_corpus(run)?;
    let base = load_ckpt(run, BASE_CKPT, "train")?;
    let records = edit_records(cfg, &corpus)?;
    let heldout: Vec<FactRecord> = corpus.heldout_facts().cloned().collect();
    let retention = pin_retention(cfg, &base, &corpus, &layers)?;
    let timer = Instant::now();
    let outcome = run_quadrants(&base, &records, &heldout, &cfg.plan(layers), retention, cfg.metric)?;
    eprintln!("quadrants: {:.1} s", timer.elapsed().as_secs_f64());
    let mut report = outcome.report;
    report.config_hash = Some(cfg.hash());
    report.fact_check = fact_check_with(&base, &outcome.positive_model, &records).ok();
    print!("{}", report.to_text());
    run.record(
        "quadrants",
        &key,
        vec![
            (REPORT_JSON, report.to_json().into_bytes()),
            (REPORT_TXT, report.to_text().into_bytes()),
            (REPORT_CSV, report.to_csv().into_bytes()),
        ],
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactCheckReport {
    pub tool_version: String,
    pub config_hash: String,
    pub outcome: FactCheckOutcome,
}

pub fn cmd_factcheck(cfg: &RunConfig, run: &mut Run) -> CliResult<()> {
    let corpus_hash = needed_hash(run, CORPUS_JSON, "generate")?;
    let base_hash = needed_hash(run, BASE_CKPT, "train")?;
    let edited_hash = needed_hash(run, EDITED_CKPT, "edit")?;
    let key = input_hash(json!({"corpus": corpus_hash, "base": base_hash, "edited": edited_hash, "config": cfg.hash()}));
    if run.up_to_date("factcheck", &key) {
        skipped("factcheck");
        print!("{}", std::fs::read_to_string(run.path(FACTCHECK_TXT)).unwrap_or_default());
        return Ok(());
    }
    let corpus = load_corpus(run)?;
    let base = load_ckpt(run, BASE_CKPT, "train")?;
    let edited = load_ckpt(run, EDITED_CKPT, "edit")?;
    let records = edit_records(cfg, &corpus)?;
    let outcome = editlab::evalsuite::fact_check_accuracy(&base, &edited, &records)?;
    let text = format!(
        "fact check: accuracy {:.1} over {} included samples; excluded {} without a verdict before editing, {} true before and after\nconfig: {}\nversion: {}\n",
        outcome.accuracy,
        outcome.included,
        outcome.excluded_no_verdict,
        outcome.excluded_true_before_and_after,
        cfg.hash(),
        editlab::VERSION
    );
    print!("{text}");
    let report = FactCheckReport {
        tool_version: editlab::VERSION.to_string(),
        config_hash: cfg.hash(),
        outcome,
    };
    run.record("factcheck", &key, vec![(FACTCHECK_JSON, pretty(&report)), (FACTCHECK_TXT, text.into_bytes())])?;
    Ok(())
}

pub fn cmd_selftest() -> CliResult<()> {
    let report = oracle_self_test()?;
    print!("{}", report.to_text());
    if report.passed {
        println!("selftest: pass");
        Ok(())
    } else {
        Err(CliError::SelfTestFailed("selftest: fail".into()))
    }
}

pub fn table_audit(path: Option<&Path>) -> CliResult<TableAudit> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::Validation(format!("cannot read table file {}: {e}", p.display())))?,
        None => PUBLISHED_TABLES.to_string(),
    };
    Ok(audit_tables(&parse_table_rows(&text)?, AUDIT_TOLERANCE))
}

pub fn cmd_table_audit(path: Option<&Path>) -> CliResult<()> {
    print!("{}", table_audit(path)?.to_text());
    Ok(())
}
