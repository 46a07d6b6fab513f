// SPDX-License-Identifier: MIT OR Apache-2.0

//! Loaders for counterfactual (MCF-shaped) and question-style (ZsRE-shaped)
//! editing datasets, plus the inverse serializers.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{FactRecord, Tokenizer, SUBJECT_SLOT};
use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Mcf,
    Zsre,
}

impl std::str::FromStr for DatasetFormat {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcf" | "counterfact" => Ok(Self::Mcf),
            "zsre" => Ok(Self::Zsre),
            other => Err(LabError::InvalidConfig(format!(
                "unknown dataset format `{other}` (expected mcf or zsre)"
            ))),
        }
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<FactRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text, format)
}

pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Vec<FactRecord>> {
    let value: Value = serde_json::from_str(text)?;
    let items = value.as_array().ok_or_else(|| LabError::MalformedRecord {
        index: 0,
        reason: "top level is not a JSON array".into(),
    })?;
    items
        .iter()
        .enumerate()
        .map(|(i, v)| match format {
            DatasetFormat::Mcf => mcf_record(i, v),
            DatasetFormat::Zsre => zsre_record(i, v),
        })
        .collect()
}

fn missing(index: usize, field: &str) -> LabError {
    LabError::MalformedRecord {
        index,
        reason: format!("missing field `{field}`"),
    }
}

fn str_field<'a>(index: usize, v: &'a Value, path: &[&str]) -> Result<&'a str> {
    let mut cur = v;
    for key in path {
        cur = cur.get(key).ok_or_else(|| missing(index, &path.join(".")))?;
    }
    cur.as_str().ok_or_else(|| missing(index, &path.join(".")))
}

fn case_id(index: usize, v: &Value) -> u64 {
    v.get("case_id")
        .and_then(Value::as_u64)
        .unwrap_or(index as u64)
}

fn templatize(text: &str, subject: &str) -> String {
    if text.contains(SUBJECT_SLOT) {
        text.to_string()
    } else {
        text.replacen(subject, SUBJECT_SLOT, 1)
    }
}

fn mcf_record(index: usize, v: &Value) -> Result<FactRecord> {
    let prompt = str_field(index, v, &["requested_rewrite", "prompt"])?;
    let subject = str_field(index, v, &["requested_rewrite", "subject"])?;
    let target_new = str_field(index, v, &["requested_rewrite", "target_new", "str"])?;
    let target_true = v
        .pointer("/requested_rewrite/target_true/str")
        .and_then(Value::as_str)
        .map(str::to_string);
    let relation_id = v
        .pointer("/requested_rewrite/relation_id")
        .and_then(Value::as_str)
        .unwrap_or("mcf")
        .to_string();
    let template = prompt.replacen("{}", SUBJECT_SLOT, 1);
    if !template.contains(SUBJECT_SLOT) {
        return Err(LabError::MalformedRecord {
            index,
            reason: "prompt has no `{}` subject slot".into(),
        });
    }
    let paraphrases = v
        .get("paraphrase_prompts")
        .and_then(Value::as_array)
        .map(|ps| {
            ps.iter()
                .filter_map(Value::as_str)
                .map(|p| templatize(p, subject))
                .collect()
        })
        .unwrap_or_default();
    Ok(FactRecord {
        id: case_id(index, v),
        subject: subject.to_string(),
        relation_id,
        template,
        target_true,
        target_new: target_new.to_string(),
        paraphrases,
        interrogative: false,
        held_out: false,
    })
}

fn zsre_record(index: usize, v: &Value) -> Result<FactRecord> {
    let subject = str_field(index, v, &["subject"])?;
    let question = str_field(index, v, &["src"])?;
    let target_new = str_field(index, v, &["alt"])?;
    if !question.contains(subject) {
        return Err(LabError::MalformedRecord {
            index,
            reason: format!("subject `{subject}` not found in `src`"),
        });
    }
    let paraphrases = v
        .get("rephrase")
        .and_then(Value::as_str)
        .filter(|r| r.contains(subject))
        .map(|r| vec![templatize(r, subject)])
        .unwrap_or_default();
    Ok(FactRecord {
        id: case_id(index, v),
        subject: subject.to_string(),
        relation_id: "zsre".into(),
        template: templatize(question, subject),
        target_true: None,
        target_new: target_new.to_string(),
        paraphrases,
        interrogative: question.trim_end().ends_with('?'),
        held_out: false,
    })
}

/// Serializes records back into the dataset shape they were loaded from.
pub fn to_dataset_json(records: &[FactRecord], format: DatasetFormat) -> Value {
    let items = records
        .iter()
        .map(|r| match format {
            DatasetFormat::Mcf => {
                let mut rw = json!({
                    "prompt": r.template.replacen(SUBJECT_SLOT, "{}", 1),
                    "subject": r.subject,
                    "relation_id": r.relation_id,
                    "target_new": {"str": r.target_new},
                });
                if let Some(t) = &r.target_true {
                    rw["target_true"] = json!({"str": t});
                }
                let mut item = json!({"case_id": r.id, "requested_rewrite": rw});
                if !r.paraphrases.is_empty() {
                    let ps: Vec<String> = r
                        .paraphrases
                        .iter()
                        .map(|p| super::render(p, &r.subject))
                        .collect();
                    item["paraphrase_prompts"] = json!(ps);
                }
                item
            }
            DatasetFormat::Zsre => {
                let mut item = json!({
                    "case_id": r.id,
                    "subject": r.subject,
                    "src": r.prompt(),
                    "alt": r.target_new,
                });
                if let Some(p) = r.paraphrases.first() {
                    item["rephrase"] = json!(super::render(p, &r.subject));
                }
                item
            }
        })
        .collect();
    Value::Array(items)
}

/// Splits records into those whose prompt and targets encode without unknown
/// pieces and those that do not.
pub fn filter_tokenizable(
    records: Vec<FactRecord>,
    tokenizer: &Tokenizer,
) -> (Vec<FactRecord>, Vec<FactRecord>) {
    records.into_iter().partition(|r| {
        tokenizer.can_encode(&r.prompt())
            && tokenizer.can_encode(&format!(" {}", r.target_new))
            && r
                .target_true
                .as_ref()
                .is_none_or(|t| tokenizer.can_encode(&format!(" {t}")))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::darrieux;
    use proptest::prelude::*;

    const MCF: &str = r#"[{"case_id": 0, "pararel_idx": 2796,
        "requested_rewrite": {"prompt": "The mother language of {} is", "relation_id": "P103",
            "subject": "Danielle Darrieux", "target_new": {"str": "English", "id": "Q1860"},
            "target_true": {"str": "French", "id": "Q150"}},
        "paraphrase_prompts": ["Danielle Darrieux spoke the language"]}]"#;

    const ZSRE: &str = r#"[{"subject": "Danielle Darrieux",
        "src": "What is the mother language of Danielle Darrieux?",
        "pred": "French", "rephrase": "What language did Danielle Darrieux speak natively?",
        "alt": "English", "answers": ["French"], "loc": "nq question: who sings", "loc_ans": "x", "cond": "y"}]"#;

    #[test]
    fn mcf_record_maps_to_fact() {
        let recs = parse_dataset(MCF, DatasetFormat::Mcf).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        let want = darrieux();
        assert_eq!(r.subject, want.subject);
        assert_eq!(r.template, want.template);
        assert_eq!(r.target_true, want.target_true);
        assert_eq!(r.target_new, want.target_new);
        assert_eq!(r.prompt(), "The mother language of Danielle Darrieux is");
        assert_eq!(r.paraphrases, vec!["{subject} spoke the language".to_string()]);
    }

    #[test]
    fn empty_list() {
        assert!(parse_dataset("[]", DatasetFormat::Mcf).unwrap().is_empty());
        assert!(parse_dataset("[]", DatasetFormat::Zsre).unwrap().is_empty());
    }

    #[test]
    fn zsre_record_is_interrogative() {
        let recs = parse_dataset(ZSRE, DatasetFormat::Zsre).unwrap();
        let r = &recs[0];
        assert!(r.interrogative);
        assert_eq!(r.target_true, None);
        assert_eq!(r.target_new, "English");
        assert_eq!(r.template, "What is the mother language of {subject}?");
        assert_eq!(r.subject, "Danielle Darrieux");
    }

    #[test]
    fn malformed_record_names_index_and_field() {
        let text = r#"[{"requested_rewrite": {"prompt": "{} is", "subject": "A", "target_new": {"str": "B"}}},
                       {"requested_rewrite": {"prompt": "{} is", "subject": "A"}}]"#;
        let err = parse_dataset(text, DatasetFormat::Mcf).unwrap_err();
        match err {
            LabError::MalformedRecord { index, reason } => {
                assert_eq!(index, 1);
                assert!(reason.contains("requested_rewrite.target_new.str"), "{reason}");
            }
            other => panic!("unexpected {other}"),
        }
        let err = parse_dataset(r#"[{"subject": "A", "alt": "B"}]"#, DatasetFormat::Zsre).unwrap_err();
        assert!(err.to_string().contains("`src`"));
    }

    #[test]
    fn missing_target_true_admitted() {
        let text = r#"[{"requested_rewrite": {"prompt": "{} is", "subject": "A", "target_new": {"str": "B"}}}]"#;
        let recs = parse_dataset(text, DatasetFormat::Mcf).unwrap();
        assert_eq!(recs[0].target_true, None);
        assert_eq!(recs[0].id, 0);
    }

    #[test]
    fn filter_drops_unknown_targets() {
        let r = darrieux();
        let tok = Tokenizer::from_texts(["The mother language of Danielle Darrieux is English"]);
        let (kept, dropped) = filter_tokenizable(vec![r], &tok);
        assert!(kept.is_empty());
        assert_eq!(dropped.len(), 1);
    }

    fn word() -> impl Strategy<Value = String> {
        "[A-Z][a-z]{1,8}"
    }

    proptest! {
        #[test]
        fn mcf_reserialize_is_lossless(subject in word(), t_new in word(), t_true in proptest::option::of(word()), id in 0u64..10_000) {
            prop_assume!(Some(&t_new) != t_true.as_ref());
            let rec = FactRecord {
                id,
                subject: subject.clone(),
                relation_id: "P1".into(),
                template: "The home of {subject} is".into(),
                target_true: t_true,
                target_new: t_new,
                paraphrases: vec![],
                interrogative: false,
                held_out: false,
            };
            let json = to_dataset_json(std::slice::from_ref(&rec), DatasetFormat::Mcf).to_string();
            let back = parse_dataset(&json, DatasetFormat::Mcf).unwrap();
            prop_assert_eq!(&back[0], &rec);
        }

        #[test]
        fn zsre_reserialize_is_lossless(subject in "Q[a-z]{2,8}", t_new in word(), id in 0u64..10_000) {
            let rec = FactRecord {
                id,
                subject: subject.clone(),
                relation_id: "zsre".into(),
                template: "What is the home of {subject}?".into(),
                target_true: None,
                target_new: t_new,
                paraphrases: vec!["Where does {subject} live?".into()],
                interrogative: true,
                held_out: false,
            };
            let json = to_dataset_json(std::slice::from_ref(&rec), DatasetFormat::Zsre).to_string();
            let back = parse_dataset(&json, DatasetFormat::Zsre).unwrap();
            prop_assert_eq!(&back[0], &rec);
        }
    }
}
