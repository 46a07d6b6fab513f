// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fact records, text transformations and tokenization.
//!
//! A [`FactRecord`] holds one editable fact as a template with a single
//! `{subject}` slot. Everything the audit needs is derived from it: the
//! positive prompt, the negated prompt (see [`negation`]), and the
//! fact-check statement (see [`build_fact_check_prompt`]).

pub mod dataset;
pub mod declarative;
pub mod negation;
pub mod synth;
pub mod tokenizer;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub use dataset::{load_dataset, DatasetFormat};
pub use declarative::declarativize;
pub use negation::{negate_prompt, negate_text, RelationSpec};
pub use synth::{corpus_from_records, generate_synthetic_corpus, Corpus, CorpusSpec, SUBJECT_CAPACITY};
pub use tokenizer::{TokenSeq, Tokenizer, BOS_ID};

pub const SUBJECT_SLOT: &str = "{subject}";
pub const FACT_CHECK_PREAMBLE: &str = "Judge whether the following statement is true or false";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactRecord {
    pub id: u64,
    pub subject: String,
    pub relation_id: String,
    pub template: String,
    /// `None` for records whose source carries no old answer (question-style data).
    pub target_true: Option<String>,
    pub target_new: String,
    #[serde(default)]
    pub paraphrases: Vec<String>,
    /// The template is a question that must be rewritten before fact-checking.
    #[serde(default)]
    pub interrogative: bool,
    /// Trained into the model but never edited; used for retention probes.
    #[serde(default)]
    pub held_out: bool,
}

impl FactRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| LabError::MalformedRecord {
            index: self.id as usize,
            reason,
        };
        if self.template.matches(SUBJECT_SLOT).count() != 1 {
            return Err(bad(format!(
                "template must contain exactly one {SUBJECT_SLOT}: {}",
                self.template
            )));
        }
        if self.target_true.as_deref() == Some(self.target_new.as_str()) {
            return Err(LabError::DegenerateComparison(self.target_new.clone()));
        }
        if self.prompt().ends_with(&self.target_new) {
            return Err(bad("prompt already ends with target_new".into()));
        }
        Ok(())
    }

    /// The positive prompt: the template with the subject filled in.
    pub fn prompt(&self) -> String {
        render(&self.template, &self.subject)
    }

    /// Byte range of the subject inside [`Self::prompt`].
    pub fn subject_bytes(&self) -> std::ops::Range<usize> {
        let start = self.template.find(SUBJECT_SLOT).unwrap_or(0);
        start..start + self.subject.len()
    }

    pub fn relation_spec(&self) -> RelationSpec {
        RelationSpec::for_template(&self.relation_id, &self.template)
    }

    pub fn negated_prompt(&self) -> Result<String> {
        negate_prompt(self, &self.relation_spec())
    }

    /// Prompt for the requested polarity.
    pub fn prompt_for(&self, polarity: Polarity) -> Result<String> {
        match polarity {
            Polarity::Positive => Ok(self.prompt()),
            Polarity::Negative => self.negated_prompt(),
        }
    }
}

/// Positive or negated phrasing of a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn letter(self) -> char {
        match self {
            Polarity::Positive => 'P',
            Polarity::Negative => 'N',
        }
    }
}

pub fn render(template: &str, subject: &str) -> String {
    template.replacen(SUBJECT_SLOT, subject, 1)
}

/// Fact-check prompt for `target`: the preamble followed by the statement
/// formed from the prompt and the target. Question-style records are rewritten
/// into a statement first.
pub fn build_fact_check_prompt(
    record: &FactRecord,
    target: &str,
    spec: &RelationSpec,
) -> Result<String> {
    let statement = if record.interrogative {
        declarativize(&record.prompt(), target, spec)?
    } else {
        format!("{} {}", record.prompt(), target)
    };
    Ok(format!("{}: {}", spec.fact_check_preamble, statement))
}
