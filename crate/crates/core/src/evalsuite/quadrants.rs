// SPDX-License-Identifier: MIT OR Apache-2.0

use super::report::{Cells, Counts, MetricsReport, RetentionScores};
use super::{build_cases, efficacy, retention_exact, MetricKind, Quadrant, Responder};
use crate::corpus::{FactRecord, Polarity};
use crate::editor::{sequential_edit, EditLog, EditPlan, EditRequest, Retention};
use crate::error::{LabError, Result};
use crate::tinylm::Checkpoint;

/// Something that turns a base model plus edit records into an edited model.
pub trait EditSystem {
    type Model: Responder;
    /// Identifies the unedited base; must not change across edits.
    fn fingerprint(&self) -> String;
    fn edit(&self, records: &[FactRecord], polarity: Polarity) -> Result<Self::Model>;
}

/// A checkpoint edited by [`LocateThenEdit`], with its log.
#[derive(Debug, Clone)]
pub struct EditedModel {
    pub ckpt: Checkpoint,
    pub log: EditLog,
    pub requests: Vec<EditRequest>,
}

impl Responder for EditedModel {
    fn continuations(&self, pairs: &[(String, String)]) -> Result<Vec<String>> {
        self.ckpt.continuations(pairs)
    }
    fn mean_logprobs(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        self.ckpt.mean_logprobs(pairs)
    }
    fn token_match_rates(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        self.ckpt.token_match_rates(pairs)
    }
    fn answers(&self, prompts: &[String], max_tokens: usize) -> Result<Vec<String>> {
        self.ckpt.answers(prompts, max_tokens)
    }
}

/// The closed-form editor applied to a fixed base checkpoint.
pub struct LocateThenEdit<'a> {
    pub base: &'a Checkpoint,
    pub plan: EditPlan,
    pub retention: Retention,
}

impl EditSystem for LocateThenEdit<'_> {
    type Model = EditedModel;

    fn fingerprint(&self) -> String {
        self.base.content_hash()
    }

    fn edit(&self, records: &[FactRecord], polarity: Polarity) -> Result<EditedModel> {
        let needed = self.plan.batch_size * self.plan.n_batches;
        if records.len() != needed {
            return Err(LabError::InvalidConfig(format!(
                "{} records for {} batches of {}",
                records.len(),
                self.plan.n_batches,
                self.plan.batch_size
            )));
        }
        let requests = records
            .iter()
            .map(|r| EditRequest::new(r, polarity, &self.base.tokenizer))
            .collect::<Result<Vec<_>>>()?;
        let (ckpt, log) = sequential_edit(self.base, &requests, &self.plan, &self.retention)?;
        Ok(EditedModel { ckpt, log, requests })
    }
}

/// The report together with both edited models.
pub struct QuadrantOutcome<M> {
    pub report: MetricsReport,
    pub positive_model: M,
    pub negative_model: M,
}

fn check_base<S: EditSystem + ?Sized>(system: &S, before: &str) -> Result<()> {
    let after = system.fingerprint();
    if after != before {
        return Err(LabError::BaseChanged {
            before: before.to_string(),
            after,
        });
    }
    Ok(())
}

/// Edits `records` once per polarity from the same base and scores each
/// edited model on both phrasings. `heldout` records, when given, measure
/// retention of untouched facts.
pub fn run_quadrants_with<S: EditSystem + ?Sized>(
    system: &S,
    records: &[FactRecord],
    heldout: &[FactRecord],
    metric: MetricKind,
    fallback: bool,
) -> Result<QuadrantOutcome<S::Model>> {
    if records.is_empty() {
        return Err(LabError::EmptyEvaluation);
    }
    let base = system.fingerprint();
    let positive_model = system.edit(records, Polarity::Positive)?;
    check_base(system, &base)?;
    let negative_model = system.edit(records, Polarity::Negative)?;
    check_base(system, &base)?;

    let mut scores = [0.0; 4];
    for (i, q) in Quadrant::ALL.iter().enumerate() {
        let model = match q.edit_polarity() {
            Polarity::Positive => &positive_model,
            Polarity::Negative => &negative_model,
        };
        scores[i] = efficacy(model, &build_cases(records, *q)?, metric, fallback)?;
    }
    let n = records.len();
    let mut report = MetricsReport::new(
        metric,
        Cells {
            pp: scores[0],
            pn: scores[1],
            nn: scores[2],
            np: scores[3],
        },
        Counts { pp: n, pn: n, nn: n, np: n },
        base,
    );
    if !heldout.is_empty() {
        report.retention = Some(RetentionScores {
            after_positive_edit: retention_exact(&positive_model, heldout)?,
            after_negative_edit: retention_exact(&negative_model, heldout)?,
            n: heldout.iter().filter(|r| r.target_true.is_some()).count(),
        });
    }
    Ok(QuadrantOutcome {
        report,
        positive_model,
        negative_model,
    })
}

/// Quadrant audit of the closed-form editor on `base`.
pub fn run_quadrants(
    base: &Checkpoint,
    records: &[FactRecord],
    heldout: &[FactRecord],
    plan: &EditPlan,
    retention: Retention,
    metric: MetricKind,
) -> Result<QuadrantOutcome<EditedModel>> {
    let system = LocateThenEdit {
        base,
        plan: plan.clone(),
        retention,
    };
    let fallback = records.iter().any(|r| r.target_true.is_none());
    run_quadrants_with(&system, records, heldout, metric, fallback)
}
