use lmc_core::assignment::{wasserstein, Permutation};
use lmc_core::interpolation::{barrier_curve, DEFAULT_GRID};
use lmc_core::matching::{
    apply_stack, layer_cost_matrix, match_layers, matching_report, MatchKind, MatchMethod, PermutationStack,
};
use lmc_core::network::{init_weights, Activation, Architecture, InitScheme, LossKind, Mlp, Targets};
use lmc_core::numerics::{Matrix, RngState};
use proptest::prelude::*;

fn net(dims: &[usize], act: Activation, bias: bool, seed: u64) -> Mlp {
    let arch = Architecture::new(dims.to_vec(), act, bias).unwrap();
    let mut rng = RngState::new(seed);
    let mut m = init_weights(&arch, &InitScheme::GaussianIid, &mut rng).unwrap();
    if bias {
        for layer in m.layers_mut() {
            layer.bias.as_mut().unwrap().iter_mut().for_each(|b| *b = 0.2 * rng.normal());
        }
    }
    m
}

fn inputs(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = RngState::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

fn method<'a>(kind: MatchKind, probe: &'a Matrix) -> MatchMethod<'a> {
    MatchMethod::new(kind, kind.needs_probe().then_some(probe)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matched_network_computes_the_same_function(seed in any::<u64>(), w1 in 2usize..10, w2 in 2usize..10) {
        let a = net(&[4, w1, w2, 2], Activation::Tanh, true, seed);
        let b = net(&[4, w1, w2, 2], Activation::Tanh, true, seed ^ 1);
        let x = inputs(4, 30, seed ^ 2);
        for kind in MatchKind::ALL {
            let stack = match_layers(&a, &b, method(kind, &x)).unwrap();
            let moved = apply_stack(&b, &stack).unwrap();
            let d = moved.predict(&x).unwrap().sub(&b.predict(&x).unwrap()).unwrap().max_abs();
            prop_assert!(d <= 1e-9);
        }
    }

    #[test]
    fn self_alignment_costs_nothing(seed in any::<u64>(), w in 2usize..12) {
        let a = net(&[3, w, w, 1], Activation::Relu, true, seed);
        let x = inputs(3, 40, seed ^ 3);
        prop_assert!(match_layers(&a, &a, MatchMethod::naive()).unwrap().is_identity());
        for kind in MatchKind::ALL {
            let stack = match_layers(&a, &a, method(kind, &x)).unwrap();
            prop_assert!(own_cost(&a, &a, &stack, &x, kind) <= 1e-12);
        }
    }

    #[test]
    fn every_method_undoes_a_permutation(seed in any::<u64>(), w in 2usize..12) {
        let a = net(&[3, w, w + 1, 2], Activation::Relu, true, seed);
        let x = inputs(3, 40, seed ^ 4);
        let s = PermutationStack::random(&a, &mut RngState::new(seed ^ 5));
        let b = apply_stack(&a, &s).unwrap();
        let back = match_layers(&a, &b, MatchMethod::naive()).unwrap();
        prop_assert_eq!(apply_stack(&b, &back).unwrap(), a.clone());
        for kind in MatchKind::ALL {
            let back = match_layers(&a, &b, method(kind, &x)).unwrap();
            prop_assert!(own_cost(&a, &b, &back, &x, kind) <= 1e-12);
            let moved = apply_stack(&b, &back).unwrap();
            let d = moved.predict(&x).unwrap().sub(&a.predict(&x).unwrap()).unwrap().max_abs();
            prop_assert!(d <= 1e-9);
        }
    }
}

/// Total cost of `kind` under `stack`, summed over layers.
fn own_cost(a: &Mlp, b: &Mlp, stack: &PermutationStack, probe: &Matrix, kind: MatchKind) -> f64 {
    matching_report(a, b, stack, probe)
        .unwrap()
        .iter()
        .map(|r| match kind {
            MatchKind::NaiveWm => r.naive_cost,
            MatchKind::CovWm => r.sigma_cost,
            MatchKind::ActivationM => r.activation_cost,
        })
        .sum()
}

#[test]
fn layer_solutions_beat_random_and_identity() {
    let a = net(&[5, 24, 16, 3], Activation::Relu, true, 11);
    let b = net(&[5, 24, 16, 3], Activation::Relu, true, 12);
    let x = inputs(5, 80, 13);
    let mut rng = RngState::new(14);
    for kind in MatchKind::ALL {
        let probe = kind.needs_probe().then_some(&x);
        let stack = match_layers(&a, &b, method(kind, &x)).unwrap();
        for l in 1..=2 {
            let prev = (l > 1).then(|| &stack.layers()[l - 2]);
            let c = layer_cost_matrix(&a, &b, kind, probe, l, prev).unwrap();
            let chosen = c.cost_of(&stack.layers()[l - 1]);
            let n = c.n();
            assert!(chosen <= c.cost_of(&Permutation::identity(n)) + 1e-9);
            for _ in 0..50 {
                let p = Permutation::new(rng.permutation(n)).unwrap();
                assert!(chosen <= c.cost_of(&p) + 1e-9, "{kind} layer {l}");
            }
        }
    }
}

#[test]
fn weighted_matching_dominates_in_its_own_cost() {
    for seed in 0..10 {
        let a = net(&[6, 20, 2], Activation::Relu, true, seed);
        let b = net(&[6, 20, 2], Activation::Relu, true, seed + 100);
        let x = inputs(6, 50, seed + 200);
        let naive = match_layers(&a, &b, MatchMethod::naive()).unwrap();
        let cov = match_layers(&a, &b, method(MatchKind::CovWm, &x)).unwrap();
        let act = match_layers(&a, &b, method(MatchKind::ActivationM, &x)).unwrap();
        let rn = matching_report(&a, &b, &naive, &x).unwrap();
        let rc = matching_report(&a, &b, &cov, &x).unwrap();
        let ra = matching_report(&a, &b, &act, &x).unwrap();
        assert!(rc[0].sigma_cost <= rn[0].sigma_cost + 1e-9);
        assert!(rn[0].naive_cost <= rc[0].naive_cost + 1e-9);
        assert!(ra[0].activation_cost <= rn[0].activation_cost + 1e-9);
    }
}

#[test]
fn first_layer_naive_cost_is_w2_of_rows() {
    let a = net(&[5, 64, 1], Activation::Relu, true, 31);
    let b = net(&[5, 64, 1], Activation::Relu, true, 32);
    let x = inputs(5, 20, 33);
    let stack = match_layers(&a, &b, MatchMethod::naive()).unwrap();
    let report = matching_report(&a, &b, &stack, &x).unwrap();
    let w2 = wasserstein(&a.layer(1).augmented(), &b.layer(1).augmented(), 2).unwrap();
    assert!((report[0].naive_cost / 64.0 - w2 * w2).abs() <= 1e-9);
}

#[test]
fn permuted_clone_rebasins_to_zero_barrier() {
    let a = net(&[4, 32, 16, 2], Activation::Relu, true, 41);
    let x = inputs(4, 100, 42);
    let y = Targets::Values(inputs(2, 100, 43));
    for seed in 0..5 {
        let b = apply_stack(&a, &PermutationStack::random(&a, &mut RngState::new(seed))).unwrap();
        let back = apply_stack(&b, &match_layers(&a, &b, MatchMethod::naive()).unwrap()).unwrap();
        let c = barrier_curve(&a, &back, &x, &y, LossKind::Mse, DEFAULT_GRID).unwrap();
        assert!(c.barrier.abs() <= 1e-6);
    }
}

#[test]
fn alignment_helps_at_initialization() {
    let arch = Architecture::new(vec![5, 512, 1], Activation::Relu, false).unwrap();
    let mut wins = 0;
    for seed in 0..10u64 {
        let root = RngState::new(seed);
        let a = init_weights(&arch, &InitScheme::GaussianIid, &mut root.child(0)).unwrap();
        let b = init_weights(&arch, &InitScheme::GaussianIid, &mut root.child(1)).unwrap();
        let teacher = init_weights(&arch, &InitScheme::GaussianIid, &mut root.child(2)).unwrap();
        let x = inputs(5, 500, seed + 50);
        let y = Targets::Values(teacher.predict(&x).unwrap());
        let aligned = apply_stack(&b, &match_layers(&a, &b, MatchMethod::naive()).unwrap()).unwrap();
        let matched = barrier_curve(&a, &aligned, &x, &y, LossKind::Mse, DEFAULT_GRID).unwrap();
        let unmatched = barrier_curve(&a, &b, &x, &y, LossKind::Mse, DEFAULT_GRID).unwrap();
        if matched.barrier <= unmatched.barrier {
            wins += 1;
        }
    }
    assert!(wins >= 9, "{wins}/10");
}
