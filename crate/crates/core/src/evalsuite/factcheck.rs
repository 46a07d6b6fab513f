// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fact-checking the edit target before and after editing.
//!
//! A sample is excluded when the unedited model gave no true/false verdict,
//! or when it answered "true" both before and after the edit. Accuracy is
//! the share of included samples answered "true" after the edit.

use serde::{Deserialize, Serialize};

use super::Responder;
use crate::corpus::{build_fact_check_prompt, FactRecord};
use crate::error::{LabError, Result};
use crate::tinylm::Checkpoint;

/// Tokens decoded for a verdict.
pub const VERDICT_TOKENS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    True,
    False,
    Other,
}

/// Reads the first alphabetic word, case-insensitively.
pub fn classify_verdict(answer: &str) -> Verdict {
    let word = answer
        .split(|c: char| !c.is_alphabetic())
        .find(|w| !w.is_empty())
        .unwrap_or("")
        .to_lowercase();
    match word.as_str() {
        "true" => Verdict::True,
        "false" => Verdict::False,
        _ => Verdict::Other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Included { correct: bool },
    ExcludedNoVerdictBefore,
    ExcludedTrueBeforeAndAfter,
}

pub fn decide(pre: Verdict, post: Verdict) -> Decision {
    match (pre, post) {
        (Verdict::Other, _) => Decision::ExcludedNoVerdictBefore,
        (Verdict::True, Verdict::True) => Decision::ExcludedTrueBeforeAndAfter,
        (_, post) => Decision::Included {
            correct: post == Verdict::True,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactCheckOutcome {
    pub accuracy: f64,
    pub included: usize,
    pub excluded_no_verdict: usize,
    pub excluded_true_before_and_after: usize,
    pub decisions: Vec<Decision>,
}

impl FactCheckOutcome {
    pub fn excluded(&self) -> usize {
        self.excluded_no_verdict + self.excluded_true_before_and_after
    }
}

pub fn fact_check_from_verdicts(pairs: &[(Verdict, Verdict)]) -> Result<FactCheckOutcome> {
    let decisions: Vec<Decision> = pairs.iter().map(|&(a, b)| decide(a, b)).collect();
    let count = |f: fn(&Decision) -> bool| decisions.iter().filter(|d| f(d)).count();
    let included = count(|d| matches!(d, Decision::Included { .. }));
    if included == 0 {
        return Err(LabError::NoEvaluableSamples);
    }
    let correct = count(|d| matches!(d, Decision::Included { correct: true }));
    Ok(FactCheckOutcome {
        accuracy: 100.0 * correct as f64 / included as f64,
        included,
        excluded_no_verdict: count(|d| matches!(d, Decision::ExcludedNoVerdictBefore)),
        excluded_true_before_and_after: count(|d| matches!(d, Decision::ExcludedTrueBeforeAndAfter)),
        decisions,
    })
}

/// Fact-check prompts stating each record's edit target.
pub fn fact_check_prompts(records: &[FactRecord]) -> Result<Vec<String>> {
    records
        .iter()
        .map(|r| build_fact_check_prompt(r, &r.target_new, &r.relation_spec()))
        .collect()
}

/// Verdicts of any two responders on the records' fact-check prompts.
pub fn fact_check_with<A: Responder + ?Sized, B: Responder + ?Sized>(
    pre: &A,
    post: &B,
    records: &[FactRecord],
) -> Result<FactCheckOutcome> {
    let prompts = fact_check_prompts(records)?;
    let before = pre.answers(&prompts, VERDICT_TOKENS)?;
    let after = post.answers(&prompts, VERDICT_TOKENS)?;
    let pairs: Vec<(Verdict, Verdict)> = before
        .iter()
        .zip(&after)
        .map(|(a, b)| (classify_verdict(a), classify_verdict(b)))
        .collect();
    fact_check_from_verdicts(&pairs)
}

pub fn fact_check_accuracy(pre: &Checkpoint, post: &Checkpoint, records: &[FactRecord]) -> Result<FactCheckOutcome> {
    if pre.tokenizer != post.tokenizer {
        return Err(LabError::TokenizerMismatch);
    }
    fact_check_with(pre, post, records)
}
