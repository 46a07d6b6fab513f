// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::oracle::gd_update;
use common::{lively_model, requests, small_corpus};
use editlab::corpus::Polarity;
use editlab::editor::{
    apply_batch_edit, compute_keys, edit_matrix, objective, sequential_edit, solve_target_state,
    solve_update_with_targets, EditPlan, MSearch, Retention,
};
use editlab::linalg::frobenius;
use editlab::tinylm::Checkpoint;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| StandardNormal.sample(rng))
}

struct Problem {
    w: Array2<f64>,
    k1: Array2<f64>,
    m1: Array2<f64>,
    k0: Array2<f64>,
    m0: Array2<f64>,
    lambda: f64,
}

fn problem(seed: u64, n_edits: usize, n_keep: usize, lambda: f64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_out, d_in) = (6, 10);
    let w = randn(&mut rng, d_out, d_in);
    let k0 = randn(&mut rng, d_in, n_keep);
    let m0 = w.dot(&k0) + 0.1 * randn(&mut rng, d_out, n_keep);
    Problem {
        k1: randn(&mut rng, d_in, n_edits),
        m1: randn(&mut rng, d_out, n_edits),
        w,
        k0,
        m0,
        lambda,
    }
}

fn obj(p: &Problem, delta: &Array2<f64>) -> f64 {
    objective(p.w.view(), delta.view(), p.k1.view(), p.m1.view(), p.k0.view(), p.m0.view(), p.lambda)
}

#[test]
fn closed_form_matches_gradient_descent_oracle() {
    for (seed, lambda) in [(1, 1.0), (2, 0.1), (3, 10.0), (4, 1.0)] {
        let p = problem(seed, 3, 40, lambda);
        let closed = solve_update_with_targets(
            p.w.view(),
            p.k1.view(),
            p.m1.view(),
            p.k0.view(),
            p.m0.view(),
            p.lambda,
        )
        .unwrap();
        assert_eq!(closed.jitter, 0.0);
        let reference = gd_update(p.w.view(), p.k1.view(), p.m1.view(), p.k0.view(), p.m0.view(), lambda, 20_000);
        let (fc, fr) = (obj(&p, &closed.delta), obj(&p, &reference));
        let gap = (fc - fr) / fr.max(1e-12);
        assert!(gap <= 1e-6, "seed {seed}: relative objective gap {gap:e}");
        let diff = frobenius((&closed.delta - &reference).view()) / frobenius(reference.view());
        assert!(diff < 1e-4, "seed {seed}: relative update difference {diff:e}");
    }
}

#[test]
fn closed_form_is_a_local_minimum() {
    let p = problem(7, 4, 30, 1.0);
    let u = solve_update_with_targets(p.w.view(), p.k1.view(), p.m1.view(), p.k0.view(), p.m0.view(), 1.0)
        .unwrap();
    let f0 = obj(&p, &u.delta);
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    for _ in 0..20 {
        let dir = randn(&mut rng, 6, 10);
        let dir = &dir / frobenius(dir.view());
        for eps in [1e-3, 1e-1] {
            let f = obj(&p, &(&u.delta + &(eps * &dir)));
            assert!(f >= f0 * (1.0 - 1e-12), "eps {eps}: {f} < {f0}");
        }
    }
}

fn retention_for(ckpt: &Checkpoint, layers: &[usize]) -> Retention {
    let corpus = small_corpus();
    let inputs: Vec<Vec<usize>> = corpus
        .training_lines()
        .take(40)
        .map(|l| {
            let mut v = vec![0];
            v.extend(ckpt.tokenizer.encode(l).unwrap());
            v
        })
        .collect();
    Retention::pin(ckpt, layers, &inputs, 200, 3).unwrap()
}

fn fast_plan(batch_size: usize, layers: Vec<usize>) -> EditPlan {
    EditPlan {
        m_search: MSearch { steps: 15, ..MSearch::default() },
        ..EditPlan::single_batch(batch_size, layers)
    }
}

#[test]
fn empty_batch_leaves_model_bit_identical() {
    let corpus = small_corpus();
    let ckpt = lively_model(&corpus);
    let plan = fast_plan(2, vec![1]);
    let (edited, log) = apply_batch_edit(&ckpt, &[], &plan, &retention_for(&ckpt, &[1])).unwrap();
    assert_eq!(edited.to_bytes(), ckpt.to_bytes());
    assert!(log.layers.is_empty());
    let plan = EditPlan { n_batches: 0, ..plan };
    let (edited, log) = sequential_edit(&ckpt, &[], &plan, &Retention::empty(&ckpt, &[1])).unwrap();
    assert_eq!(edited.to_bytes(), ckpt.to_bytes());
    assert!(log.entries.is_empty());
}

#[test]
fn only_edited_matrices_change() {
    let corpus = small_corpus();
    let ckpt = lively_model(&corpus);
    let reqs = requests(&corpus, &ckpt, Polarity::Positive);
    let plan = fast_plan(2, vec![0, 1]);
    let (edited, _) = apply_batch_edit(&ckpt, &reqs[..2], &plan, &retention_for(&ckpt, &[0, 1])).unwrap();
    let before = ckpt.params.tensors();
    let after = edited.params.tensors();
    for ((name, _, a), (_, _, b)) in before.iter().zip(&after) {
        let edited_matrix = name == "layers.0.w_out" || name == "layers.1.w_out";
        assert_eq!(a != b, edited_matrix, "{name}");
    }
    assert_eq!(edited.provenance.len(), 1);
    assert_eq!(edited.provenance[0].base_hash, ckpt.content_hash());
}

#[test]
fn keys_at_and_below_the_edited_layer_are_unchanged() {
    let corpus = small_corpus();
    let ckpt = lively_model(&corpus);
    let reqs = requests(&corpus, &ckpt, Polarity::Positive);
    let plan = fast_plan(2, vec![1]);
    let (edited, _) = apply_batch_edit(&ckpt, &reqs[..2], &plan, &retention_for(&ckpt, &[1])).unwrap();
    for layer in 0..=1 {
        assert_eq!(compute_keys(&ckpt, &reqs, layer).unwrap(), compute_keys(&edited, &reqs, layer).unwrap());
    }
    assert_ne!(compute_keys(&ckpt, &reqs, 2).unwrap(), compute_keys(&edited, &reqs, 2).unwrap());
}

#[test]
fn edit_reduces_the_solve_residual() {
    let corpus = small_corpus();
    let ckpt = lively_model(&corpus);
    let reqs = requests(&corpus, &ckpt, Polarity::Positive);
    let retention = retention_for(&ckpt, &[1]);
    let (_, log) = apply_batch_edit(&ckpt, &reqs[..3], &fast_plan(3, vec![1]), &retention).unwrap();
    let kept = &log.layers[0];
    assert!(kept.residual_before > 0.0 && kept.residual_after < kept.residual_before, "{kept:?}");
    assert_eq!(log.target_probs.len(), 3);
    let free = EditPlan { lambda_reg: 0.0, ..fast_plan(3, vec![1]) };
    let (_, log) = apply_batch_edit(&ckpt, &reqs[..3], &free, &retention).unwrap();
    let free = &log.layers[0];
    assert!(free.jitter > 0.0 && free.residual_after < 1e-5 * free.residual_before, "{free:?}");
}

#[test]
fn target_search_improves_and_keeps_its_best_iterate() {
    let corpus = small_corpus();
    let ckpt = lively_model(&corpus);
    let reqs = requests(&corpus, &ckpt, Polarity::Negative);
    for req in &reqs[..3] {
        let zero = solve_target_state(&ckpt, req, 1, &MSearch { steps: 0, ..MSearch::default() }).unwrap();
        assert_eq!(zero.m, zero.start);
        let mut prev = zero.prob;
        for steps in [5, 20, 60] {
            let s = solve_target_state(&ckpt, req, 1, &MSearch { steps, early_stop_p: 1.0, ..MSearch::default() })
                .unwrap();
            assert!(s.steps <= steps);
            assert!(s.prob.is_finite() && s.prob >= prev - 1e-12, "steps {steps}: {} < {prev}", s.prob);
            prev = s.prob;
        }
        assert!(prev > zero.prob);
        let w = edit_matrix(&ckpt, 1);
        let k = compute_keys(&ckpt, std::slice::from_ref(req), 1).unwrap();
        let wk = w.dot(&k).column(0).to_owned();
        assert!((&zero.start - &wk).iter().all(|v| v.abs() < 1e-9));
    }
}

#[test]
fn one_sequential_batch_equals_a_batch_edit() {
    let corpus = small_corpus();
    let ckpt = lively_model(&corpus);
    let reqs = requests(&corpus, &ckpt, Polarity::Positive);
    let plan = fast_plan(3, vec![1, 2]);
    let retention = retention_for(&ckpt, &[1, 2]);
    let (a, _) = apply_batch_edit(&ckpt, &reqs[..3], &plan, &retention).unwrap();
    let (b, _) = sequential_edit(&ckpt, &reqs, &plan, &retention).unwrap();
    assert_eq!(a.params, b.params);
}

#[test]
fn too_few_requests_for_the_schedule_is_an_error() {
    let corpus = small_corpus();
    let ckpt = lively_model(&corpus);
    let reqs = requests(&corpus, &ckpt, Polarity::Positive);
    let plan = EditPlan { n_batches: 5, ..fast_plan(3, vec![1]) };
    assert!(sequential_edit(&ckpt, &reqs, &plan, &Retention::empty(&ckpt, &[1])).is_err());
}

#[test]
fn augmentation_protects_earlier_batches() {
    let corpus = small_corpus();
    let ckpt = lively_model(&corpus);
    let reqs = requests(&corpus, &ckpt, Polarity::Positive);
    // without background keys the only protection comes from past edits
    let retention = Retention::empty(&ckpt, &[1]);
    let layer = 1;
    let first = &reqs[..2];
    let drift = |augment: bool| {
        let plan = EditPlan {
            n_batches: 3,
            augment_retention_with_past_edits: augment,
            ..fast_plan(2, vec![layer])
        };
        let one = EditPlan { n_batches: 1, ..plan.clone() };
        let (after_first, _) = sequential_edit(&ckpt, &reqs, &one, &retention).unwrap();
        let (after_all, _) = sequential_edit(&ckpt, &reqs, &plan, &retention).unwrap();
        let k = compute_keys(&after_first, first, layer).unwrap();
        let before = edit_matrix(&after_first, layer).dot(&k);
        let after = edit_matrix(&after_all, layer).dot(&k);
        frobenius((&after - &before).view()) / frobenius(before.view())
    };
    let (on, off) = (drift(true), drift(false));
    assert!(on < 0.5 * off, "drift with augmentation {on:e}, without {off:e}");
}
