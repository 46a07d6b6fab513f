// SPDX-License-Identifier: MIT OR Apache-2.0

//! Negated prompt construction.
//!
//! Copular templates get `not` inserted right after the copula
//! (`... is` becomes `... is not`). Templates without a copula fall back to
//! the sentence prefix `It is not the case that`. Either way the negated text
//! differs from the positive one by exactly one inserted token sequence.

use serde::{Deserialize, Serialize};

use super::{render, FactRecord, FACT_CHECK_PREAMBLE};
use crate::error::{LabError, Result};

pub const NEGATION_WORD: &str = "not";
pub const FALLBACK_PREFIX: &str = "It is not the case that ";
const COPULAS: [&str; 4] = ["is", "are", "was", "were"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub relation_id: String,
    /// Word index of the negatable copula in the template, if any.
    pub copula_index: Option<usize>,
    pub negation_template: String,
    pub fact_check_preamble: String,
}

impl RelationSpec {
    pub fn for_template(relation_id: &str, template: &str) -> Self {
        let copula_index = copula_index(template);
        let negation_template = insert_negation(template, copula_index);
        Self {
            relation_id: relation_id.to_string(),
            copula_index,
            negation_template,
            fact_check_preamble: FACT_CHECK_PREAMBLE.to_string(),
        }
    }

    pub fn uses_fallback(&self) -> bool {
        self.copula_index.is_none()
    }
}

fn words(text: &str) -> Vec<&str> {
    text.split(' ').collect()
}

/// Index of the last copula word, ignoring the fallback's own "is".
fn copula_index(text: &str) -> Option<usize> {
    if text.starts_with(FALLBACK_PREFIX) {
        return None;
    }
    words(text).iter().rposition(|w| COPULAS.contains(w))
}

fn insert_negation(text: &str, copula: Option<usize>) -> String {
    match copula {
        Some(i) => {
            let mut w = words(text);
            w.insert(i + 1, NEGATION_WORD);
            w.join(" ")
        }
        None => format!("{FALLBACK_PREFIX}{text}"),
    }
}

fn is_negated(text: &str) -> bool {
    if text.starts_with(FALLBACK_PREFIX) {
        return true;
    }
    let w = words(text);
    match w.iter().rposition(|x| COPULAS.contains(x)) {
        Some(i) => w.get(i + 1) == Some(&NEGATION_WORD),
        None => false,
    }
}

/// Negates already-rendered text; rejects text that is already negated.
pub fn negate_text(text: &str) -> Result<String> {
    if is_negated(text) {
        return Err(LabError::AlreadyNegated(text.to_string()));
    }
    Ok(insert_negation(text, copula_index(text)))
}

/// Negated rendering of the record's prompt under `spec`.
pub fn negate_prompt(record: &FactRecord, spec: &RelationSpec) -> Result<String> {
    if is_negated(&record.template) {
        return Err(LabError::AlreadyNegated(record.template.clone()));
    }
    Ok(render(&spec.negation_template, &record.subject))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::darrieux;

    #[test]
    fn copular_template() {
        let r = darrieux();
        assert_eq!(
            r.negated_prompt().unwrap(),
            "The mother language of Danielle Darrieux is not"
        );
        assert_eq!(r.relation_spec().copula_index, Some(5));
    }

    #[test]
    fn rejects_double_negation() {
        let once = negate_text("The mother language of Danielle Darrieux is").unwrap();
        let err = negate_text(&once).unwrap_err();
        assert!(err.to_string().starts_with("already negated"));

        let mut r = darrieux();
        r.template = r.relation_spec().negation_template;
        assert!(matches!(
            r.negated_prompt(),
            Err(LabError::AlreadyNegated(_))
        ));
    }

    #[test]
    fn fallback_for_non_copular() {
        let spec = RelationSpec::for_template("plays", "{subject} plays the instrument called");
        assert!(spec.uses_fallback());
        assert_eq!(
            spec.negation_template,
            "It is not the case that {subject} plays the instrument called"
        );
        let again = negate_text(&spec.negation_template).unwrap_err();
        assert!(matches!(again, LabError::AlreadyNegated(_)));
    }

    #[test]
    fn mid_template_copula() {
        let spec = RelationSpec::for_template("P27", "{subject} is a citizen of");
        assert_eq!(spec.negation_template, "{subject} is not a citizen of");
    }

    #[test]
    fn differs_by_one_insertion() {
        for t in [
            "The mother language of {subject} is",
            "{subject} was born in",
            "{subject} works for",
        ] {
            let spec = RelationSpec::for_template("r", t);
            let neg = &spec.negation_template;
            let inserted = if spec.uses_fallback() {
                FALLBACK_PREFIX.to_string()
            } else {
                format!(" {NEGATION_WORD}")
            };
            // removing the single inserted sequence restores the template
            let pos = neg.find(&inserted).unwrap();
            let restored = format!("{}{}", &neg[..pos], &neg[pos + inserted.len()..]);
            assert_eq!(restored, t);
        }
    }
}
