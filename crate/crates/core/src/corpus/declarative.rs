// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rewrites wh-questions plus their answer into declarative statements.
//!
//! The rule table is small and ordered; the first matching rule wins. It
//! covers the question shapes found in question-style editing data
//! (`What is the X of Y?`, `Who developed X?`, `Where was X born?`, ...).
//! Bump [`RULES_VERSION`] whenever a rule changes so reports stay comparable.

use std::sync::OnceLock;

use regex::{Captures, Regex};

use super::RelationSpec;
use crate::error::{LabError, Result};

pub const RULES_VERSION: &str = "declarative-rules/1";

type Build = fn(&Captures, &str) -> Option<String>;

struct Rule {
    name: &'static str,
    pattern: Regex,
    build: Build,
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn is_copula(w: &str) -> bool {
    matches!(w, "is" | "are" | "was" | "were")
}

fn is_auxiliary(w: &str) -> bool {
    is_copula(w) || matches!(w, "did" | "does" | "do" | "has" | "have" | "had")
}

fn third_person(verb: &str) -> String {
    match verb {
        "have" => "has".into(),
        "do" => "does".into(),
        "go" => "goes".into(),
        v if v.ends_with('s') || v.ends_with("sh") || v.ends_with("ch") || v.ends_with('x') => {
            format!("{v}es")
        }
        v if v.ends_with('y') && !v.ends_with("ay") && !v.ends_with("ey") && !v.ends_with("oy") => {
            format!("{}ies", &v[..v.len() - 1])
        }
        v => format!("{v}s"),
    }
}

fn past_tense(verb: &str) -> String {
    const IRREGULAR: [(&str, &str); 18] = [
        ("go", "went"),
        ("write", "wrote"),
        ("speak", "spoke"),
        ("play", "played"),
        ("win", "won"),
        ("make", "made"),
        ("build", "built"),
        ("sing", "sang"),
        ("lead", "led"),
        ("teach", "taught"),
        ("buy", "bought"),
        ("leave", "left"),
        ("found", "founded"),
        ("become", "became"),
        ("begin", "began"),
        ("draw", "drew"),
        ("marry", "married"),
        ("study", "studied"),
    ];
    if let Some((_, p)) = IRREGULAR.iter().find(|(v, _)| *v == verb) {
        return p.to_string();
    }
    if verb.ends_with('e') {
        format!("{verb}d")
    } else {
        format!("{verb}ed")
    }
}

fn rules() -> &'static [Rule] {
    static RULES: OnceLock<Vec<Rule>> = OnceLock::new();
    RULES.get_or_init(|| {
        let re = |p: &str| Regex::new(p).expect("static rule regex");
        vec![
            // When was X born? -> X was born in A
            Rule {
                name: "when-passive",
                pattern: re(r"^When (is|was|are|were) (.+) (\w+)\?$"),
                build: |c, a| Some(format!("{} {} {} in {a}", capitalize(&c[2]), &c[1], &c[3])),
            },
            // Where was X born? -> X was born in A
            Rule {
                name: "where-passive",
                pattern: re(r"^Where (is|was|are|were) (.+) (\w+ed|born|built|held|made|set|fought)\?$"),
                build: |c, a| Some(format!("{} {} {} in {a}", capitalize(&c[2]), &c[1], &c[3])),
            },
            // Where is X? -> X is in A
            Rule {
                name: "where-copula",
                pattern: re(r"^Where (is|was|are|were) (.+)\?$"),
                build: |c, a| Some(format!("{} {} in {a}", capitalize(&c[2]), &c[1])),
            },
            // Which country is X from? -> X is from A
            Rule {
                name: "which-noun-copula-particle",
                pattern: re(r"^(?:What|Which) [\w\- ]+? (is|was|are|were) (.+?) (from|in|of|part of|a member of|a part of)\?$"),
                build: |c, a| Some(format!("{} {} {} {a}", &c[2], &c[1], &c[3])),
            },
            // What is the X of Y? -> The X of Y is A
            Rule {
                name: "wh-copula",
                pattern: re(r"^(?:What|Who|Which) (is|was|are|were) (.+)\?$"),
                build: |c, a| Some(format!("{} {} {a}", capitalize(&c[2]), &c[1])),
            },
            // What university did X attend? -> X attended A
            Rule {
                name: "wh-did",
                pattern: re(r"^(?:What|Which|Who|Whom)\b.*? did (.+) (\w+)\?$"),
                build: |c, a| Some(format!("{} {} {a}", &c[1], past_tense(&c[2]))),
            },
            // What language does X speak? -> X speaks A
            Rule {
                name: "wh-does",
                pattern: re(r"^(?:What|Which|Who|Whom)\b.*? does (.+) (\w+)\?$"),
                build: |c, a| Some(format!("{} {} {a}", &c[1], third_person(&c[2]))),
            },
            // What do X play? -> X play A
            Rule {
                name: "wh-do",
                pattern: re(r"^(?:What|Which|Who|Whom)\b.*? do (.+) (\w+)\?$"),
                build: |c, a| Some(format!("{} {} {a}", &c[1], &c[2])),
            },
            // Who developed X? -> A developed X
            Rule {
                name: "who-verb",
                pattern: re(r"^Who (\w+) (.+)\?$"),
                build: |c, a| (!is_auxiliary(&c[1])).then(|| format!("{a} {} {}", &c[1], &c[2])),
            },
            // Which company produced X? -> A produced X
            Rule {
                name: "which-noun-verb",
                pattern: re(r"^(?:What|Which) [\w\-]+ (\w+) (.+)\?$"),
                build: |c, a| (!is_auxiliary(&c[1])).then(|| format!("{a} {} {}", &c[1], &c[2])),
            },
        ]
    })
}

fn wh_pattern(question: &str) -> String {
    question
        .trim_end_matches('?')
        .split_whitespace()
        .take(2)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Rewrites `question` with `answer` into a statement.
pub fn declarativize(question: &str, answer: &str, _rules: &RelationSpec) -> Result<String> {
    let q = question.trim();
    if !q.ends_with('?') {
        return Err(LabError::NotAQuestion(question.to_string()));
    }
    for rule in rules() {
        if let Some(c) = rule.pattern.captures(q) {
            if let Some(s) = (rule.build)(&c, answer) {
                return Ok(s);
            }
        }
    }
    Err(LabError::NoRewriteRule {
        pattern: wh_pattern(q),
        question: question.to_string(),
    })
}

/// Names of the rules in match order.
pub fn rule_names() -> Vec<&'static str> {
    rules().iter().map(|r| r.name).collect()
}
