// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stand-in responders with known behaviour, used to certify the harness.
//!
//! The semantic oracle answers the edit target only when the test phrasing
//! matches the edit phrasing. The shortcut oracle answers the edit target
//! whenever the subject appears, ignoring negation. The mixture behaves
//! semantically on even-indexed records and as a shortcut on odd ones.

use serde::{Deserialize, Serialize};

use super::quadrants::{run_quadrants_with, EditSystem};
use super::report::Cells;
use super::{normalize, MetricKind, Responder};
use crate::corpus::{generate_synthetic_corpus, CorpusSpec, FactRecord, Polarity};
use crate::error::Result;

const MISS_LOGPROB: f64 = -10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Semantic,
    Shortcut,
    Mixture,
}

impl OracleKind {
    pub fn name(self) -> &'static str {
        match self {
            OracleKind::Semantic => "semantic",
            OracleKind::Shortcut => "shortcut",
            OracleKind::Mixture => "mixture",
        }
    }

    /// Cells and average the harness must report for this oracle.
    pub fn expected(self) -> (Cells, f64) {
        match self {
            OracleKind::Semantic => (Cells { pp: 100.0, pn: 0.0, nn: 100.0, np: 0.0 }, 100.0),
            OracleKind::Shortcut => (Cells { pp: 100.0, pn: 100.0, nn: 100.0, np: 100.0 }, 0.0),
            OracleKind::Mixture => (Cells { pp: 100.0, pn: 50.0, nn: 100.0, np: 50.0 }, 50.0),
        }
    }
}

pub struct OracleSystem {
    pub kind: OracleKind,
}

pub struct OracleModel {
    kind: OracleKind,
    edit_polarity: Polarity,
    /// (record, positive prompt, negated prompt)
    facts: Vec<(FactRecord, String, String)>,
}

impl EditSystem for OracleSystem {
    type Model = OracleModel;

    fn fingerprint(&self) -> String {
        format!("oracle:{}", self.kind.name())
    }

    fn edit(&self, records: &[FactRecord], polarity: Polarity) -> Result<OracleModel> {
        let facts = records
            .iter()
            .map(|r| Ok((r.clone(), r.prompt(), r.negated_prompt()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(OracleModel {
            kind: self.kind,
            edit_polarity: polarity,
            facts,
        })
    }
}

impl OracleModel {
    fn answer(&self, prompt: &str) -> String {
        for (i, (r, pos, neg)) in self.facts.iter().enumerate() {
            let test = if prompt == pos {
                Polarity::Positive
            } else if prompt == neg {
                Polarity::Negative
            } else {
                continue;
            };
            let semantic = match self.kind {
                OracleKind::Semantic => true,
                OracleKind::Shortcut => false,
                OracleKind::Mixture => i % 2 == 0,
            };
            let hit = !semantic || test == self.edit_polarity;
            return if hit {
                r.target_new.clone()
            } else {
                r.target_true.clone().unwrap_or_default()
            };
        }
        String::new()
    }

    fn hit(&self, prompt: &str, continuation: &str) -> bool {
        normalize(&self.answer(prompt)) == normalize(continuation)
    }
}

impl Responder for OracleModel {
    fn continuations(&self, pairs: &[(String, String)]) -> Result<Vec<String>> {
        Ok(pairs.iter().map(|(p, _)| self.answer(p)).collect())
    }

    fn mean_logprobs(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        Ok(pairs
            .iter()
            .map(|(p, c)| if self.hit(p, c) { 0.0 } else { MISS_LOGPROB })
            .collect())
    }

    fn token_match_rates(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        Ok(pairs
            .iter()
            .map(|(p, c)| if self.hit(p, c) { 1.0 } else { 0.0 })
            .collect())
    }

    fn answers(&self, prompts: &[String], _max_tokens: usize) -> Result<Vec<String>> {
        Ok(vec![String::new(); prompts.len()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTestCheck {
    pub oracle: OracleKind,
    pub metric: MetricKind,
    pub expected: Cells,
    pub expected_avg: f64,
    pub cells: Cells,
    pub avg: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTestReport {
    pub checks: Vec<SelfTestCheck>,
    pub passed: bool,
}

impl SelfTestReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<9} {:<12} cells ({}, {}, {}, {}) avg {} expected ({}, {}, {}, {}) avg {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.oracle.name(),
                c.metric.name(),
                c.cells.pp,
                c.cells.pn,
                c.cells.nn,
                c.cells.np,
                c.avg,
                c.expected.pp,
                c.expected.pn,
                c.expected.nn,
                c.expected.np,
                c.expected_avg
            ));
        }
        out
    }
}

/// Records the self-test runs on: ten synthetic facts.
pub fn self_test_records() -> Result<Vec<FactRecord>> {
    let corpus = generate_synthetic_corpus(&CorpusSpec {
        n_facts: 10,
        n_heldout: 0,
        ..CorpusSpec::default()
    })?;
    Ok(corpus.facts)
}

/// Runs the quadrant harness against every oracle under both metrics.
pub fn oracle_self_test() -> Result<SelfTestReport> {
    let records = self_test_records()?;
    let mut checks = Vec::new();
    for kind in [OracleKind::Semantic, OracleKind::Shortcut, OracleKind::Mixture] {
        for metric in [MetricKind::ExactMatch, MetricKind::Probability] {
            let outcome = run_quadrants_with(&OracleSystem { kind }, &records, &[], metric, false)?;
            let (expected, expected_avg) = kind.expected();
            let r = outcome.report;
            checks.push(SelfTestCheck {
                oracle: kind,
                metric,
                passed: r.cells == expected && r.avg == expected_avg,
                expected,
                expected_avg,
                cells: r.cells,
                avg: r.avg,
            });
        }
    }
    Ok(SelfTestReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
