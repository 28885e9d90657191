mod common;

use common::{numeric_grads, random_batch, random_stack, relative_error};
use legend_core::lora::{Activation, LayerStack, LoraConfig, ParamId};
use legend_core::numerics::{gaussian, SeededRng};
use legend_core::trainer::loss_and_grad;

fn assert_grads_match(stack: &LayerStack, classes: usize, seed: u64, tol: f64) {
    let mut rng = SeededRng::new(seed, 99);
    let batch = random_batch(&mut rng, stack.input_dim(), classes, 3);
    let (_, grad_logits, cache) = loss_and_grad(stack, &batch).unwrap();
    let analytic = stack.backward(&cache, &grad_logits).unwrap();
    let numeric = numeric_grads(stack, &batch, 1e-5);
    for (id, n) in &numeric {
        let a = analytic.get(*id).unwrap();
        let err = relative_error(a, n);
        assert!(err <= tol, "{id:?}: relative error {err:e}");
    }
}

#[test]
fn suffix_adapters_match_finite_differences() {
    for (m, q, r) in [(4, 4, 1), (8, 16, 2), (16, 8, 4)] {
        let mut rng = SeededRng::new(m as u64 * 31 + r as u64, 5);
        let stack = random_stack(&mut rng, &[q, m, m], 3, 1, &[r]);
        assert_grads_match(&stack, 3, 1, 1e-6);
    }
}

#[test]
fn interior_windows_match_finite_differences() {
    let mut rng = SeededRng::new(11, 5);
    let stack = random_stack(&mut rng, &[6, 6, 6, 6, 6], 2, 1, &[3, 1]);
    assert_grads_match(&stack, 2, 2, 1e-6);
    let shallow = random_stack(&mut rng, &[6, 6, 6, 6], 2, 0, &[2]);
    assert_grads_match(&shallow, 2, 3, 1e-6);
}

#[test]
fn head_only_gradient() {
    let mut rng = SeededRng::new(4, 5);
    let stack = random_stack(&mut rng, &[5, 5, 5], 3, 0, &[]);
    assert_grads_match(&stack, 3, 4, 1e-6);
}

#[test]
fn truncation_soundness() {
    // Gradients of adapted deep blocks depend only on activations at and
    // above the shallowest adapted block.
    let mut rng = SeededRng::new(21, 5);
    let full = random_stack(&mut rng, &[8, 8, 8, 8, 8, 8], 3, 3, &[2, 4]);
    let cut = full.truncated_from(2).unwrap();
    let batch = random_batch(&mut rng, 8, 3, 4);
    let (_, g_full, cache_full) = loss_and_grad(&full, &batch).unwrap();
    let grads_full = full.backward(&cache_full, &g_full).unwrap();

    let mut cut_batch = batch.clone();
    cut_batch.x = cache_full.input(2).clone();
    let (_, g_cut, cache_cut) = loss_and_grad(&cut, &cut_batch).unwrap();
    let grads_cut = cut.backward(&cache_cut, &g_cut).unwrap();

    assert_eq!(grads_full.head, grads_cut.head);
    for (l_full, l_cut) in [(3, 1), (4, 2)] {
        assert_eq!(
            grads_full.get(ParamId::LoraB(l_full)),
            grads_cut.get(ParamId::LoraB(l_cut))
        );
        assert_eq!(
            grads_full.get(ParamId::LoraA(l_full)),
            grads_cut.get(ParamId::LoraA(l_cut))
        );
    }
}

#[test]
fn fresh_adapters_are_no_ops_and_merge_matches() {
    let mut rng = SeededRng::new(8, 5);
    let base = LayerStack::random(&mut rng, &[10, 10, 10, 10], 4, Activation::Tanh, 0.3).unwrap();
    let x = gaussian(&mut rng, 10, 7, 1.0);
    let (bare, _) = base.forward(&x).unwrap();
    let adapted = base
        .clone()
        .inject(&LoraConfig::new(vec![2, 3]).unwrap(), &mut rng)
        .unwrap();
    let (with_zero_b, _) = adapted.forward(&x).unwrap();
    assert_eq!(bare.max_abs_diff(&with_zero_b).unwrap(), 0.0);

    let trained = random_stack(&mut rng, &[10, 10, 10, 10], 4, 1, &[2, 3]);
    let merged = trained.merge();
    let (a, _) = trained.forward(&x).unwrap();
    let (b, _) = merged.forward(&x).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() <= 1e-9);
    assert_eq!(merged.adapters().count(), 0);
}
