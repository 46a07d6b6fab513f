// SPDX-License-Identifier: MIT OR Apache-2.0

//! Negation-aware evaluation of edited models.
//!
//! Every edit is made twice, once from the positive prompt and once from the
//! negated prompt, and each edited model is probed with both phrasings. The
//! edit target is the reference answer in all four settings; on the crossed
//! settings a hit counts as hallucination rather than efficacy.

pub mod factcheck;
pub mod oracle;
pub mod quadrants;
pub mod report;
pub mod table;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::corpus::{FactRecord, Polarity, BOS_ID};
use crate::error::{LabError, Result};
use crate::tinylm::{forward_batch, greedy_decode_batch, log_softmax, sequence_logprob_batch, Checkpoint};

pub use factcheck::{classify_verdict, fact_check_accuracy, fact_check_from_verdicts, FactCheckOutcome, Verdict};
pub use oracle::{oracle_self_test, OracleKind, OracleSystem, SelfTestReport};
pub use quadrants::{run_quadrants, run_quadrants_with, EditSystem, EditedModel, LocateThenEdit, QuadrantOutcome};
pub use report::{Cells, Counts, Discrepancies, MetricsReport, RetentionScores};
pub use table::{audit_tables, parse_table_rows, TableAudit, TableRow, AUDIT_TOLERANCE, PUBLISHED_TABLES};

/// One of the four edit/test polarity combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    PP,
    PN,
    NN,
    NP,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::PP, Quadrant::PN, Quadrant::NN, Quadrant::NP];

    pub fn new(edit: Polarity, test: Polarity) -> Self {
        match (edit, test) {
            (Polarity::Positive, Polarity::Positive) => Quadrant::PP,
            (Polarity::Positive, Polarity::Negative) => Quadrant::PN,
            (Polarity::Negative, Polarity::Negative) => Quadrant::NN,
            (Polarity::Negative, Polarity::Positive) => Quadrant::NP,
        }
    }

    pub fn edit_polarity(self) -> Polarity {
        match self {
            Quadrant::PP | Quadrant::PN => Polarity::Positive,
            Quadrant::NN | Quadrant::NP => Polarity::Negative,
        }
    }

    pub fn test_polarity(self) -> Polarity {
        match self {
            Quadrant::PP | Quadrant::NP => Polarity::Positive,
            Quadrant::NN | Quadrant::PN => Polarity::Negative,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Quadrant::PP => "PP",
            Quadrant::PN => "PN",
            Quadrant::NN => "NN",
            Quadrant::NP => "NP",
        }
    }

    pub fn interpretation(self) -> Interpretation {
        if self.edit_polarity() == self.test_polarity() {
            Interpretation::Efficacy
        } else {
            Interpretation::Hallucination
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpretation {
    Efficacy,
    Hallucination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    ExactMatch,
    Probability,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::ExactMatch => "exact_match",
            MetricKind::Probability => "probability",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" | "exact_match" => Ok(Self::ExactMatch),
            "prob" | "probability" => Ok(Self::Probability),
            other => Err(LabError::InvalidConfig(format!(
                "unknown metric `{other}` (expected exact or prob)"
            ))),
        }
    }
}

/// A test prompt with the edit target as its reference continuation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCase {
    pub record: FactRecord,
    pub quadrant: Quadrant,
    pub test_prompt: String,
    pub gold: String,
    pub interpretation: Interpretation,
}

/// Cases of one quadrant, one per record.
pub fn build_cases(records: &[FactRecord], quadrant: Quadrant) -> Result<Vec<EvalCase>> {
    records
        .iter()
        .map(|r| {
            Ok(EvalCase {
                test_prompt: r.prompt_for(quadrant.test_polarity())?,
                gold: r.target_new.clone(),
                interpretation: quadrant.interpretation(),
                quadrant,
                record: r.clone(),
            })
        })
        .collect()
}

/// Trims and collapses internal whitespace; case is kept.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Anything that can answer prompts: a checkpoint or a stand-in responder.
pub trait Responder {
    /// Greedy continuation of each prompt, as long as its reference.
    fn continuations(&self, pairs: &[(String, String)]) -> Result<Vec<String>>;
    /// Mean per-token log-probability of each continuation.
    fn mean_logprobs(&self, pairs: &[(String, String)]) -> Result<Vec<f64>>;
    /// Share of continuation tokens that are the argmax under teacher forcing.
    fn token_match_rates(&self, pairs: &[(String, String)]) -> Result<Vec<f64>>;
    /// Greedy answers of `max_tokens` tokens.
    fn answers(&self, prompts: &[String], max_tokens: usize) -> Result<Vec<String>>;
}

fn spaced(text: &str) -> String {
    if text.starts_with(' ') {
        text.to_string()
    } else {
        format!(" {text}")
    }
}

fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl Checkpoint {
    fn input_for(&self, prompt: &str) -> Result<Vec<usize>> {
        let mut ids = vec![BOS_ID];
        ids.extend(self.tokenizer.encode(prompt)?);
        Ok(ids)
    }

    fn encoded_pairs(&self, pairs: &[(String, String)]) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        pairs
            .iter()
            .map(|(p, c)| Ok((self.input_for(p)?, self.tokenizer.encode(&spaced(c))?)))
            .collect()
    }
}

impl Responder for Checkpoint {
    fn continuations(&self, pairs: &[(String, String)]) -> Result<Vec<String>> {
        let encoded = self.encoded_pairs(pairs)?;
        let mut out = vec![String::new(); pairs.len()];
        let mut lengths: Vec<usize> = encoded.iter().map(|(_, c)| c.len()).collect();
        lengths.sort_unstable();
        lengths.dedup();
        for n in lengths {
            let idx: Vec<usize> = (0..encoded.len()).filter(|&i| encoded[i].1.len() == n).collect();
            let inputs: Vec<Vec<usize>> = idx.iter().map(|&i| encoded[i].0.clone()).collect();
            for (&i, ids) in idx.iter().zip(greedy_decode_batch(self, &inputs, n)?) {
                out[i] = self.tokenizer.decode(&ids);
            }
        }
        Ok(out)
    }

    fn mean_logprobs(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        sequence_logprob_batch(self, &self.encoded_pairs(pairs)?)
    }

    fn token_match_rates(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        let encoded = self.encoded_pairs(pairs)?;
        if encoded.iter().any(|(_, c)| c.is_empty()) {
            return Err(LabError::EmptyContinuation);
        }
        let full: Vec<Vec<usize>> = encoded
            .iter()
            .map(|(p, c)| [p.as_slice(), &c[..c.len() - 1]].concat())
            .collect();
        let refs: Vec<&[usize]> = full.iter().map(Vec::as_slice).collect();
        let out = forward_batch(&self.params, &self.config, &refs, &[], &[])?;
        Ok(encoded
            .iter()
            .enumerate()
            .map(|(i, (p, c))| {
                let hits = c
                    .iter()
                    .enumerate()
                    .filter(|&(j, &tok)| argmax(log_softmax(out.row(i, p.len() - 1 + j)).view()) == tok)
                    .count();
                hits as f64 / c.len() as f64
            })
            .collect())
    }

    fn answers(&self, prompts: &[String], max_tokens: usize) -> Result<Vec<String>> {
        let inputs = prompts.iter().map(|p| self.input_for(p)).collect::<Result<Vec<_>>>()?;
        Ok(greedy_decode_batch(self, &inputs, max_tokens)?
            .iter()
            .map(|ids| self.tokenizer.decode(ids))
            .collect())
    }
}

fn case_pairs(cases: &[EvalCase]) -> Vec<(String, String)> {
    cases.iter().map(|c| (c.test_prompt.clone(), c.gold.clone())).collect()
}

/// Per-case exact-match hits.
pub fn exact_hits<R: Responder + ?Sized>(model: &R, cases: &[EvalCase]) -> Result<Vec<bool>> {
    let outputs = model.continuations(&case_pairs(cases))?;
    Ok(outputs
        .iter()
        .zip(cases)
        .map(|(o, c)| normalize(o) == normalize(&c.gold))
        .collect())
}

/// Percentage of cases whose greedy continuation equals the reference.
pub fn efficacy_exact<R: Responder + ?Sized>(model: &R, cases: &[EvalCase]) -> Result<f64> {
    if cases.is_empty() {
        return Err(LabError::EmptyEvaluation);
    }
    let hits = exact_hits(model, cases)?;
    Ok(100.0 * hits.iter().filter(|&&h| h).count() as f64 / cases.len() as f64)
}

/// Percentage of cases where the reference is strictly more likely than the
/// record's old answer. Records without an old answer score their per-token
/// match rate instead when `fallback` is set.
pub fn efficacy_prob<R: Responder + ?Sized>(model: &R, cases: &[EvalCase], fallback: bool) -> Result<f64> {
    if cases.is_empty() {
        return Err(LabError::EmptyEvaluation);
    }
    let mut compare = Vec::new();
    let mut matched = Vec::new();
    for (i, c) in cases.iter().enumerate() {
        match &c.record.target_true {
            Some(t) if *t == c.gold => return Err(LabError::DegenerateComparison(t.clone())),
            Some(t) => compare.push((i, t.clone())),
            None if fallback => matched.push(i),
            None => return Err(LabError::MissingTargetTrue(c.record.id)),
        }
    }
    let mut score = 0.0;
    if !compare.is_empty() {
        let pairs: Vec<(String, String)> = compare
            .iter()
            .flat_map(|(i, t)| {
                let p = &cases[*i].test_prompt;
                [(p.clone(), cases[*i].gold.clone()), (p.clone(), t.clone())]
            })
            .collect();
        let lp = model.mean_logprobs(&pairs)?;
        score += lp.chunks(2).filter(|w| w[0] > w[1]).count() as f64;
    }
    if !matched.is_empty() {
        let pairs: Vec<(String, String)> = matched
            .iter()
            .map(|&i| (cases[i].test_prompt.clone(), cases[i].gold.clone()))
            .collect();
        score += model.token_match_rates(&pairs)?.iter().sum::<f64>();
    }
    Ok(100.0 * score / cases.len() as f64)
}

/// Score of `cases` under `metric`.
pub fn efficacy<R: Responder + ?Sized>(model: &R, cases: &[EvalCase], metric: MetricKind, fallback: bool) -> Result<f64> {
    match metric {
        MetricKind::ExactMatch => efficacy_exact(model, cases),
        MetricKind::Probability => efficacy_prob(model, cases, fallback),
    }
}

/// Percentage of records whose positive prompt still yields the old answer.
pub fn retention_exact<R: Responder + ?Sized>(model: &R, records: &[FactRecord]) -> Result<f64> {
    let pairs: Vec<(String, String)> = records
        .iter()
        .filter_map(|r| r.target_true.as_ref().map(|t| (r.prompt(), t.clone())))
        .collect();
    if pairs.is_empty() {
        return Err(LabError::EmptyEvaluation);
    }
    let outputs = model.continuations(&pairs)?;
    let kept = outputs
        .iter()
        .zip(&pairs)
        .filter(|(o, (_, t))| normalize(o) == normalize(t))
        .count();
    Ok(100.0 * kept as f64 / pairs.len() as f64)
}
