// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic subject-relation-object corpus for training the tiny model.
//!
//! Every subject is a two-word name used by exactly one fact, so the last
//! subject token alone never identifies the fact. Each relation owns a
//! disjoint object pool. Besides the positive statements the training text
//! carries a few negated statements and fact-check lines so that `not`, the
//! fact-check preamble and the `true`/`false` verdicts are part of the
//! model's language.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_fact_check_prompt, FactRecord, Tokenizer};
use crate::error::{LabError, Result};

pub const VERDICT_TRUE: &str = "true";
pub const VERDICT_FALSE: &str = "false";

struct RelationDef {
    id: &'static str,
    template: &'static str,
    objects: &'static [&'static str],
}

const RELATIONS: [RelationDef; 8] = [
    RelationDef {
        id: "mother_language",
        template: "The mother language of {subject} is",
        objects: &[
            "French", "English", "Spanish", "German", "Italian", "Dutch", "Polish", "Swedish",
            "Greek", "Russian", "Finnish", "Czech",
        ],
    },
    RelationDef {
        id: "home_country",
        template: "The home country of {subject} is",
        objects: &[
            "France", "Spain", "Germany", "Italy", "Canada", "Brazil", "Japan", "Kenya", "Chile",
            "Norway", "Egypt", "Peru",
        ],
    },
    RelationDef {
        id: "profession",
        template: "The profession of {subject} is",
        objects: &[
            "lawyer", "pilot", "farmer", "teacher", "nurse", "architect", "chemist", "painter",
            "banker", "sailor", "baker", "surgeon",
        ],
    },
    RelationDef {
        id: "instrument",
        template: "The instrument played by {subject} is",
        objects: &[
            "piano", "violin", "guitar", "flute", "cello", "drums", "harp", "trumpet", "clarinet",
            "oboe", "banjo", "saxophone",
        ],
    },
    RelationDef {
        id: "sport",
        template: "The favorite sport of {subject} is",
        objects: &[
            "tennis", "football", "hockey", "cricket", "rugby", "golf", "boxing", "rowing",
            "fencing", "cycling", "skiing", "baseball",
        ],
    },
    RelationDef {
        id: "employer",
        template: "The employer of {subject} is",
        objects: &[
            "Google", "Nokia", "Siemens", "Toyota", "Airbus", "Philips", "Samsung", "Intel",
            "Boeing", "Honda", "Oracle", "Adobe",
        ],
    },
    RelationDef {
        id: "birth_city",
        template: "The birth city of {subject} is",
        objects: &[
            "Paris", "Madrid", "Berlin", "Rome", "Vienna", "Prague", "Lisbon", "Oslo", "Dublin",
            "Athens", "Warsaw", "Zurich",
        ],
    },
    RelationDef {
        id: "field",
        template: "The field of work of {subject} is",
        objects: &[
            "physics", "biology", "chemistry", "history", "medicine", "economics", "geology",
            "music", "law", "poetry", "astronomy", "botany",
        ],
    },
];

const FIRST_NAMES: [&str; 32] = [
    "Danielle", "Marek", "Anna", "Lucas", "Sofia", "Pavel", "Elena", "Hugo", "Ingrid", "Tomas",
    "Clara", "Mateo", "Yuki", "Omar", "Freya", "Nikolai", "Amara", "Felix", "Greta", "Rafael",
    "Leila", "Bruno", "Mirela", "Oskar", "Paloma", "Stefan", "Noor", "Viktor", "Ilse", "Dario",
    "Helga", "Emil",
];

/// Surnames are never shared between subjects.
const LAST_NAMES: [&str; 128] = [
    "Darrieux", "Kowal", "Berg", "Moreau", "Rossi", "Novak", "Lindqvist", "Sato", "Haddad",
    "Brandt", "Costa", "Varga", "Okafor", "Petrov", "Ferreira", "Janssen", "Larsen", "Dumont",
    "Kaplan", "Meyer", "Ortega", "Horvat", "Nilsen", "Quinn", "Reyes", "Tanaka", "Weber", "Zeller",
    "Ivanova", "Mendes", "Falk", "Olsen", "Abbott", "Adler", "Alvarez", "Arslan", "Bauer", "Beck",
    "Bianchi", "Blom", "Bose", "Castro", "Chen", "Dahl", "Duval", "Ebert", "Eriksen", "Esposito",
    "Fischer", "Fonseca", "Gallo", "Garber", "Gomez", "Graf", "Hahn", "Hansen", "Hoffman", "Holm",
    "Jensen", "Kahn", "Keller", "Klein", "Koch", "Kraus", "Kruger", "Lange", "Lehmann", "Lorenz",
    "Lund", "Maier", "Marino", "Meier", "Moller", "Navarro", "Nowak", "Ortiz", "Park", "Pereira",
    "Pohl", "Ramos", "Richter", "Romano", "Roth", "Ruiz", "Sander", "Schulz", "Silva", "Simon",
    "Sorensen", "Stein", "Strand", "Suzuki", "Thomsen", "Torres", "Vogel", "Wagner", "Walsh",
    "Winter", "Wolf", "Yilmaz", "Zimmer", "Acosta", "Barros", "Bergman", "Carlsen", "Delgado",
    "Engel", "Farkas", "Fuchs", "Gruber", "Hartmann", "Ibsen", "Jovanovic", "Kovacs", "Lindgren",
    "Mazur", "Nagy", "Ostrowski", "Pacheco", "Rasmussen", "Sauer", "Toth", "Urban", "Vidal",
    "Brooks", "Hayes", "Lowe", "Marsh",
];

/// Maximum number of facts the name pools can supply.
pub const SUBJECT_CAPACITY: usize = LAST_NAMES.len();

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    /// Facts eligible for editing.
    pub n_facts: usize,
    /// Additional trained facts that are never edited.
    pub n_heldout: usize,
    pub n_relations: usize,
    pub seed: u64,
    /// Copies of each positive statement in the training text.
    pub repeats: usize,
    pub negation_repeats: usize,
    pub fact_check_repeats: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_facts: 50,
            n_heldout: 50,
            n_relations: 5,
            seed: 7,
            repeats: 32,
            negation_repeats: 4,
            fact_check_repeats: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub facts: Vec<FactRecord>,
    pub training_text: String,
}

impl Corpus {
    pub fn edit_facts(&self) -> impl Iterator<Item = &FactRecord> {
        self.facts.iter().filter(|f| !f.held_out)
    }

    pub fn heldout_facts(&self) -> impl Iterator<Item = &FactRecord> {
        self.facts.iter().filter(|f| f.held_out)
    }

    pub fn training_lines(&self) -> impl Iterator<Item = &str> {
        self.training_text.lines().filter(|l| !l.is_empty())
    }

    /// Vocabulary over everything the pipeline will ever tokenize.
    pub fn tokenizer(&self) -> Tokenizer {
        vocabulary_for(&self.facts, Some(&self.training_text))
    }
}

/// Vocabulary covering the records' prompts, negations, targets and
/// fact-check prompts, plus any extra text.
pub fn vocabulary_for(records: &[FactRecord], extra: Option<&str>) -> Tokenizer {
    let mut texts: Vec<String> = Vec::new();
    if let Some(e) = extra {
        texts.push(e.to_string());
    }
    for r in records {
        texts.push(r.prompt());
        if let Ok(n) = r.negated_prompt() {
            texts.push(n);
        }
        let spec = r.relation_spec();
        for target in std::iter::once(&r.target_new).chain(r.target_true.as_ref()) {
            texts.push(format!("{} {target}", r.prompt()));
            if let Ok(fc) = build_fact_check_prompt(r, target, &spec) {
                texts.push(format!("{fc} {VERDICT_TRUE} {VERDICT_FALSE}"));
            }
        }
    }
    Tokenizer::from_texts(texts.iter().map(String::as_str))
}

pub fn generate_synthetic_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    if spec.n_facts == 0 {
        return Err(LabError::EmptyCorpus);
    }
    if spec.n_relations == 0 || spec.n_relations > RELATIONS.len() {
        return Err(LabError::PoolExhausted {
            pool: "relation".into(),
            requested: spec.n_relations,
            capacity: RELATIONS.len(),
        });
    }
    let total = spec.n_facts + spec.n_heldout;
    if total > SUBJECT_CAPACITY {
        return Err(LabError::PoolExhausted {
            pool: "subject".into(),
            requested: total,
            capacity: SUBJECT_CAPACITY,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut surnames: Vec<usize> = (0..LAST_NAMES.len()).collect();
    surnames.shuffle(&mut rng);
    let names: Vec<(usize, usize)> = surnames
        .into_iter()
        .map(|l| (rng.random_range(0..FIRST_NAMES.len()), l))
        .collect();

    // true objects first, so edit targets can be drawn from objects the
    // model sees as true answers elsewhere
    let chosen: Vec<(usize, usize, usize)> = names
        .iter()
        .take(total)
        .enumerate()
        .map(|(i, &(f, l))| {
            let rel = i % spec.n_relations;
            (f * LAST_NAMES.len() + l, rel, rng.random_range(0..RELATIONS[rel].objects.len()))
        })
        .collect();
    let mut facts = Vec::with_capacity(total);
    let mut distractors = Vec::with_capacity(total);
    for (i, &(name, r, t)) in chosen.iter().enumerate() {
        let rel = &RELATIONS[r];
        let mut known: Vec<usize> = chosen
            .iter()
            .filter(|&&(_, r2, t2)| r2 == r && t2 != t)
            .map(|&(_, _, t2)| t2)
            .collect();
        known.sort_unstable();
        known.dedup();
        let n = if known.is_empty() {
            (t + 1 + rng.random_range(0..rel.objects.len() - 1)) % rel.objects.len()
        } else {
            known[rng.random_range(0..known.len())]
        };
        let others: Vec<usize> = (0..rel.objects.len()).filter(|&o| o != t && o != n).collect();
        let d = others[rng.random_range(0..others.len())];
        facts.push(FactRecord {
            id: i as u64,
            subject: format!(
                "{} {}",
                FIRST_NAMES[name / LAST_NAMES.len()],
                LAST_NAMES[name % LAST_NAMES.len()]
            ),
            relation_id: rel.id.to_string(),
            template: rel.template.to_string(),
            target_true: Some(rel.objects[t].to_string()),
            target_new: rel.objects[n].to_string(),
            paraphrases: Vec::new(),
            interrogative: false,
            held_out: i >= spec.n_facts,
        });
        distractors.push(rel.objects[d]);
    }
    for fact in &facts {
        fact.validate()?;
    }

    let mut lines = Vec::new();
    for (fact, distractor) in facts.iter().zip(&distractors) {
        let truth = fact.target_true.as_deref().unwrap_or_default();
        let positive = format!("{} {truth}", fact.prompt());
        lines.extend(std::iter::repeat_n(positive, spec.repeats));
        let negated = format!("{} {distractor}", fact.negated_prompt()?);
        lines.extend(std::iter::repeat_n(negated, spec.negation_repeats));
        let rel = fact.relation_spec();
        let fc_true = format!(
            "{} {VERDICT_TRUE}",
            build_fact_check_prompt(fact, truth, &rel)?
        );
        let fc_false = format!(
            "{} {VERDICT_FALSE}",
            build_fact_check_prompt(fact, &fact.target_new, &rel)?
        );
        lines.extend(std::iter::repeat_n(fc_true, spec.fact_check_repeats));
        lines.extend(std::iter::repeat_n(fc_false, spec.fact_check_repeats));
    }
    lines.shuffle(&mut rng);
    let mut training_text = lines.join("\n");
    training_text.push('\n');

    Ok(Corpus {
        spec: spec.clone(),
        facts,
        training_text,
    })
}

/// A corpus over external records: each record's true statement and its
/// two fact-check lines. Records without an old answer add vocabulary only.
/// The first `spec.n_facts` records may be edited; the rest are held out.
pub fn corpus_from_records(mut records: Vec<FactRecord>, spec: &CorpusSpec) -> Result<Corpus> {
    if records.is_empty() {
        return Err(LabError::EmptyCorpus);
    }
    for (i, r) in records.iter_mut().enumerate() {
        r.held_out = i >= spec.n_facts;
    }
    let mut lines = Vec::new();
    for fact in &records {
        fact.validate()?;
        let Some(truth) = fact.target_true.as_deref() else {
            continue;
        };
        lines.extend(std::iter::repeat_n(format!("{} {truth}", fact.prompt()), spec.repeats));
        let rel = fact.relation_spec();
        if let Ok(fc) = build_fact_check_prompt(fact, truth, &rel) {
            lines.extend(std::iter::repeat_n(format!("{fc} {VERDICT_TRUE}"), spec.fact_check_repeats));
        }
        if let Ok(fc) = build_fact_check_prompt(fact, &fact.target_new, &rel) {
            lines.extend(std::iter::repeat_n(format!("{fc} {VERDICT_FALSE}"), spec.fact_check_repeats));
        }
    }
    lines.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut training_text = lines.join("\n");
    training_text.push('\n');
    Ok(Corpus {
        spec: CorpusSpec {
            n_facts: records.iter().filter(|r| !r.held_out).count(),
            n_heldout: records.iter().filter(|r| r.held_out).count(),
            ..spec.clone()
        },
        facts: records,
        training_text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> CorpusSpec {
        CorpusSpec {
            n_facts: 50,
            n_heldout: 10,
            n_relations: 5,
            seed: 7,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn empty_request_rejected() {
        let spec = CorpusSpec {
            n_facts: 0,
            ..small()
        };
        let err = generate_synthetic_corpus(&spec).unwrap_err();
        assert_eq!(err.to_string(), "empty corpus requested");
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic_corpus(&small()).unwrap();
        let b = generate_synthetic_corpus(&small()).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
        let c = generate_synthetic_corpus(&CorpusSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a.training_text, c.training_text);
    }

    #[test]
    fn every_fact_repeated_verbatim() {
        let c = generate_synthetic_corpus(&small()).unwrap();
        for f in &c.facts {
            let line = format!("{} {}", f.prompt(), f.target_true.as_ref().unwrap());
            let count = c.training_lines().filter(|l| *l == line).count();
            assert!(count >= c.spec.repeats, "{line}: {count}");
        }
    }

    #[test]
    fn unique_subject_relation_pairs() {
        let c = generate_synthetic_corpus(&small()).unwrap();
        let pairs: HashSet<_> = c
            .facts
            .iter()
            .map(|f| (f.subject.clone(), f.relation_id.clone()))
            .collect();
        assert_eq!(pairs.len(), c.facts.len());
        assert_eq!(c.edit_facts().count(), 50);
        assert_eq!(c.heldout_facts().count(), 10);
    }

    #[test]
    fn pool_exhaustion_names_the_pool() {
        let err = generate_synthetic_corpus(&CorpusSpec {
            n_facts: SUBJECT_CAPACITY,
            n_heldout: 1,
            ..small()
        })
        .unwrap_err();
        assert!(err.to_string().starts_with("subject pool exhausted"));
        let err = generate_synthetic_corpus(&CorpusSpec {
            n_relations: 99,
            ..small()
        })
        .unwrap_err();
        assert!(err.to_string().starts_with("relation pool exhausted"));
    }

    #[test]
    fn object_pools_are_disjoint() {
        let mut seen = HashSet::new();
        for rel in &RELATIONS {
            for o in rel.objects {
                assert!(seen.insert(*o), "{o} shared across relations");
            }
        }
    }

    #[test]
    fn corpus_round_trips_through_tokenizer() {
        let c = generate_synthetic_corpus(&small()).unwrap();
        let tok = c.tokenizer();
        for line in c.training_lines() {
            let seq = tok.tokenize(line).unwrap();
            assert_eq!(tok.detokenize(&seq), line);
        }
    }

    #[test]
    fn external_records_train_on_truths_and_verdicts() {
        let synthetic = generate_synthetic_corpus(&small()).unwrap();
        let mut records: Vec<FactRecord> = synthetic.facts.iter().take(5).cloned().collect();
        records[4].target_true = None;
        let spec = CorpusSpec { n_facts: 3, repeats: 2, fact_check_repeats: 1, ..small() };
        let c = corpus_from_records(records.clone(), &spec).unwrap();
        assert_eq!(c.edit_facts().count(), 3);
        assert_eq!(c.heldout_facts().count(), 2);
        // two truths and two verdict lines per record with an old answer
        assert_eq!(c.training_lines().count(), 4 * 4);
        let r = &records[0];
        let truth = format!("{} {}", r.prompt(), r.target_true.as_deref().unwrap());
        assert_eq!(c.training_lines().filter(|l| *l == truth).count(), 2);
        assert_eq!(c, corpus_from_records(records, &spec).unwrap());
        assert!(matches!(corpus_from_records(Vec::new(), &spec), Err(LabError::EmptyCorpus)));
    }
}
