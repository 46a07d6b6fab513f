// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::{lively_model, small_corpus};
use editlab::corpus::{FactRecord, Polarity};
use editlab::editor::{EditPlan, MSearch, Retention};
use editlab::evalsuite::report::round1;
use editlab::evalsuite::{
    audit_tables, build_cases, classify_verdict, efficacy_exact, efficacy_prob, fact_check_accuracy,
    fact_check_from_verdicts, oracle_self_test, parse_table_rows, run_quadrants, Cells, Counts, Interpretation,
    MetricKind, MetricsReport, Quadrant, Responder, Verdict, AUDIT_TOLERANCE, PUBLISHED_TABLES,
};
use editlab::evalsuite::factcheck::Decision;
use editlab::Result;
use proptest::prelude::*;

/// Answers a fixed continuation for every prompt.
struct Constant {
    answer: Option<String>,
    logprob_gold: f64,
    logprob_other: f64,
}

impl Constant {
    fn gold() -> Self {
        Constant { answer: None, logprob_gold: -0.1, logprob_other: -3.0 }
    }
    fn never() -> Self {
        Constant { answer: Some("Nowhere".into()), logprob_gold: -3.0, logprob_other: -0.1 }
    }
    fn coin() -> Self {
        Constant { answer: Some("Nowhere".into()), logprob_gold: -0.7, logprob_other: -0.7 }
    }
}

impl Responder for Constant {
    fn continuations(&self, pairs: &[(String, String)]) -> Result<Vec<String>> {
        Ok(pairs
            .iter()
            .map(|(_, g)| self.answer.clone().unwrap_or_else(|| format!("  {g} ")))
            .collect())
    }
    fn mean_logprobs(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        // even positions hold the edit target, odd ones the old answer
        Ok((0..pairs.len())
            .map(|i| if i % 2 == 0 { self.logprob_gold } else { self.logprob_other })
            .collect())
    }
    fn token_match_rates(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        Ok(vec![0.5; pairs.len()])
    }
    fn answers(&self, prompts: &[String], _: usize) -> Result<Vec<String>> {
        Ok(vec![String::new(); prompts.len()])
    }
}

fn records() -> Vec<FactRecord> {
    small_corpus().edit_facts().cloned().collect()
}

#[test]
fn quadrant_labels_follow_polarities() {
    use Polarity::*;
    let table = [(Positive, Positive, "PP"), (Positive, Negative, "PN"), (Negative, Negative, "NN"), (Negative, Positive, "NP")];
    for (edit, test, label) in table {
        let q = Quadrant::new(edit, test);
        assert_eq!((q.label(), q.edit_polarity(), q.test_polarity()), (label, edit, test));
        let expected = if edit == test { Interpretation::Efficacy } else { Interpretation::Hallucination };
        assert_eq!(q.interpretation(), expected);
    }
}

#[test]
fn cases_use_the_edit_target_as_reference() {
    let recs = records();
    for q in Quadrant::ALL {
        let cases = build_cases(&recs, q).unwrap();
        for (c, r) in cases.iter().zip(&recs) {
            assert_eq!(c.gold, r.target_new);
            assert_eq!(c.test_prompt, r.prompt_for(q.test_polarity()).unwrap());
        }
    }
}

#[test]
fn exact_efficacy_extremes_and_errors() {
    let cases = build_cases(&records(), Quadrant::PP).unwrap();
    assert_eq!(efficacy_exact(&Constant::gold(), &cases).unwrap(), 100.0);
    assert_eq!(efficacy_exact(&Constant::never(), &cases).unwrap(), 0.0);
    let err = efficacy_exact(&Constant::gold(), &[]).unwrap_err();
    assert_eq!(err.to_string(), "empty evaluation set");
}

#[test]
fn probability_efficacy_uses_a_strict_comparison() {
    let cases = build_cases(&records(), Quadrant::PP).unwrap();
    assert_eq!(efficacy_prob(&Constant::gold(), &cases, false).unwrap(), 100.0);
    assert_eq!(efficacy_prob(&Constant::never(), &cases, false).unwrap(), 0.0);
    assert_eq!(efficacy_prob(&Constant::coin(), &cases, false).unwrap(), 0.0);
}

#[test]
fn probability_efficacy_guards() {
    let mut cases = build_cases(&records(), Quadrant::PP).unwrap();
    cases[0].record.target_true = Some(cases[0].gold.clone());
    assert!(efficacy_prob(&Constant::gold(), &cases, false).unwrap_err().to_string().contains("degenerate comparison"));
    let mut cases = build_cases(&records(), Quadrant::PP).unwrap();
    for c in &mut cases {
        c.record.target_true = None;
    }
    assert!(efficacy_prob(&Constant::gold(), &cases, false).is_err());
    assert_eq!(efficacy_prob(&Constant::gold(), &cases, true).unwrap(), 50.0);
}

#[test]
fn efficacy_is_order_invariant_on_a_model() {
    let corpus = small_corpus();
    let ckpt = lively_model(&corpus);
    let recs: Vec<FactRecord> = corpus.edit_facts().cloned().collect();
    let cases = build_cases(&recs, Quadrant::PN).unwrap();
    let mut reversed = cases.clone();
    reversed.reverse();
    assert_eq!(efficacy_exact(&ckpt, &cases).unwrap(), efficacy_exact(&ckpt, &reversed).unwrap());
    assert_eq!(efficacy_prob(&ckpt, &cases, false).unwrap(), efficacy_prob(&ckpt, &reversed, false).unwrap());
}

#[test]
fn published_examples_recompute() {
    let r = MetricsReport::new(
        MetricKind::ExactMatch,
        Cells { pp: 98.2, pn: 69.4, nn: 97.8, np: 81.5 },
        Counts { pp: 1, pn: 1, nn: 1, np: 1 },
        String::new(),
    );
    assert_eq!(r.discrepancies.values().map(round1), [28.8, 16.7, 28.4, 16.3]);
    assert_eq!(round1(r.avg), 22.6);
    let r = MetricsReport::new(
        MetricKind::ExactMatch,
        Cells { pp: 95.6, pn: 73.1, nn: 96.0, np: 83.0 },
        Counts { pp: 1, pn: 1, nn: 1, np: 1 },
        String::new(),
    );
    assert_eq!(r.discrepancies.values().map(round1), [22.5, 12.6, 22.9, 13.0]);
    assert_eq!(round1(r.avg), 17.8);
    let flat = Cells { pp: 61.0, pn: 61.0, nn: 61.0, np: 61.0 };
    let r = MetricsReport::new(MetricKind::ExactMatch, flat, Counts { pp: 1, pn: 1, nn: 1, np: 1 }, String::new());
    assert_eq!((r.discrepancies.values(), r.avg), ([0.0; 4], 0.0));
}

proptest! {
    #[test]
    fn report_arithmetic_is_exact(pp in 0.0f64..100.0, pn in 0.0f64..100.0, nn in 0.0f64..100.0, np in 0.0f64..100.0) {
        let r = MetricsReport::new(MetricKind::Probability, Cells { pp, pn, nn, np }, Counts { pp: 1, pn: 1, nn: 1, np: 1 }, String::new());
        let d = r.discrepancies;
        prop_assert_eq!(d.pp_pn, pp - pn);
        prop_assert_eq!(d.pp_np, pp - np);
        prop_assert_eq!(d.nn_pn, nn - pn);
        prop_assert_eq!(d.nn_np, nn - np);
        prop_assert_eq!(r.avg, (d.pp_pn + d.pp_np + d.nn_pn + d.nn_np) / 4.0);
    }
}

#[test]
fn verdicts_read_the_first_word() {
    assert_eq!(classify_verdict(" true false"), Verdict::True);
    assert_eq!(classify_verdict(" FALSE"), Verdict::False);
    assert_eq!(classify_verdict(" ... True."), Verdict::True);
    assert_eq!(classify_verdict(" maybe true"), Verdict::Other);
    assert_eq!(classify_verdict(""), Verdict::Other);
}

#[test]
fn fact_check_rules_on_every_combination() {
    use Verdict::*;
    let fixture = [
        (True, True),
        (True, False),
        (True, Other),
        (False, True),
        (False, False),
        (False, Other),
        (Other, True),
        (Other, False),
        (Other, Other),
        (False, True),
        (True, True),
        (Other, True),
    ];
    let outcome = fact_check_from_verdicts(&fixture).unwrap();
    // rule 1: no verdict before; rule 2: true before and after
    let expected: Vec<Decision> = fixture
        .iter()
        .map(|&(pre, post)| {
            if pre == Other {
                Decision::ExcludedNoVerdictBefore
            } else if pre == True && post == True {
                Decision::ExcludedTrueBeforeAndAfter
            } else {
                Decision::Included { correct: post == True }
            }
        })
        .collect();
    assert_eq!(outcome.decisions, expected);
    assert_eq!((outcome.included, outcome.excluded_no_verdict, outcome.excluded_true_before_and_after), (6, 4, 2));
    assert_eq!(outcome.accuracy, 100.0 * 2.0 / 6.0);
    let err = fact_check_from_verdicts(&[(Other, True), (True, True)]).unwrap_err();
    assert_eq!(err.to_string(), "no evaluable samples");
}

#[test]
fn fact_check_requires_a_shared_tokenizer() {
    let corpus = small_corpus();
    let a = lively_model(&corpus);
    let mut b = a.clone();
    b.tokenizer = editlab::corpus::Tokenizer::from_pieces(vec!["<bos>".into(), "x".into()]);
    let recs: Vec<FactRecord> = corpus.edit_facts().cloned().collect();
    assert!(fact_check_accuracy(&a, &b, &recs).is_err());
}

#[test]
fn oracle_self_test_separates_semantics_from_shortcuts() {
    let report = oracle_self_test().unwrap();
    assert!(report.passed, "{}", report.to_text());
    assert_eq!(report.checks.len(), 6);
    for c in &report.checks {
        assert_eq!(c.cells, c.expected);
        assert_eq!(c.avg, c.expected_avg);
    }
}

#[test]
fn table_audit_reproduces_consistent_rows_and_flags_the_rest() {
    let rows = parse_table_rows(PUBLISHED_TABLES).unwrap();
    let audit = audit_tables(&rows, AUDIT_TOLERANCE);
    let memit = audit
        .rows
        .iter()
        .find(|a| a.row.model == "llama" && a.row.dataset == "MCF" && a.row.method == "MEMIT")
        .unwrap();
    assert!(memit.consistent());
    assert_eq!(memit.recomputed.values().map(round1), [28.8, 16.7, 28.4, 16.3]);
    assert_eq!(round1(memit.recomputed_avg), 22.6);
    assert_eq!(rows.iter().filter(|r| r.model == "llama").count(), 36);
    let mut flagged: Vec<String> = audit
        .flagged()
        .map(|a| format!("{}/{}/{}", a.row.model, a.row.dataset, a.row.method))
        .collect();
    flagged.sort();
    assert_eq!(
        flagged,
        [
            "llama/MQuAKE/EMMET", "llama/ZsRE/PMET", "qwen/MQuAKE/EMMET", "qwen/MQuAKE/MEMIT", "qwen/MQuAKE/NAMET",
            "qwen/MQuAKE/PMET", "qwen/MQuAKE/PRUNE", "qwen/WCF/AlphaEdit", "qwen/WCF/MEMIT", "qwen/WCF/PMET",
            "qwen/ZsRE/AlphaEdit", "qwen/ZsRE/NAMET", "qwen/ZsRE/PRUNE",
        ]
    );
    // only averages disagree; every printed difference is reproduced
    assert!(audit.flagged().all(|a| a.mismatches == ["Avg"]));
    assert!(audit.to_text().contains("inconsistent (Avg)"));
}

#[test]
fn malformed_tables_are_rejected() {
    assert!(parse_table_rows("nope\n").is_err());
    let bad = format!("{}\n2,MCF,X,1,2,3\n", PUBLISHED_TABLES.lines().next().unwrap());
    assert!(parse_table_rows(&bad).is_err());
}

fn quick_plan(n: usize) -> EditPlan {
    EditPlan {
        m_search: MSearch { steps: 10, ..MSearch::default() },
        ..EditPlan::single_batch(n, vec![1])
    }
}

#[test]
fn quadrant_run_keeps_the_base_and_reports_consistently() {
    let corpus = small_corpus();
    let base = lively_model(&corpus);
    let bytes = base.to_bytes();
    let recs: Vec<FactRecord> = corpus.edit_facts().take(4).cloned().collect();
    let held: Vec<FactRecord> = corpus.heldout_facts().cloned().collect();
    let out = run_quadrants(&base, &recs, &held, &quick_plan(4), Retention::empty(&base, &[1]), MetricKind::ExactMatch)
        .unwrap();
    assert_eq!(base.to_bytes(), bytes);
    let r = &out.report;
    assert_eq!(r.base_fingerprint, base.content_hash());
    assert_eq!(r.n, Counts { pp: 4, pn: 4, nn: 4, np: 4 });
    assert_eq!(r.retention.unwrap().n, held.len());
    assert_eq!(out.positive_model.requests[0].polarity, Polarity::Positive);
    assert_eq!(out.negative_model.requests[0].polarity, Polarity::Negative);
    assert_ne!(out.positive_model.ckpt.params, out.negative_model.ckpt.params);

    let parsed: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(&parsed, r);
    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), 1 + 4 + 5 + 2);
    assert!(csv.lines().nth(2).unwrap().starts_with("exact_match,PN,hallucination,"));
    let text = r.to_text();
    assert!(text.contains("PP-PN") && text.contains("retention"));
    assert!(text.contains(editlab::VERSION));

    let wrong = run_quadrants(&base, &recs, &held, &quick_plan(3), Retention::empty(&base, &[1]), MetricKind::ExactMatch);
    assert!(wrong.is_err());
    assert!(run_quadrants(&base, &[], &held, &quick_plan(4), Retention::empty(&base, &[1]), MetricKind::ExactMatch).is_err());
}
