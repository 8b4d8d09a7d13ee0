use lmc_core::assignment::{pairwise_sq_dist, solve_lap, wasserstein, CostMatrix, Permutation};
use lmc_core::numerics::{Matrix, RngState};
use proptest::prelude::*;

fn points(seed: u64, m: usize, dim: usize) -> Matrix {
    let mut rng = RngState::new(seed);
    Matrix::from_fn(m, dim, |_, _| rng.normal())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wasserstein_is_symmetric(seed in any::<u64>(), m in 1usize..10, dim in 1usize..4, p in 1u32..3) {
        let (x, y) = (points(seed, m, dim), points(seed ^ 1, m, dim));
        let d = wasserstein(&x, &y, p).unwrap() - wasserstein(&y, &x, p).unwrap();
        prop_assert!(d.abs() <= 1e-9);
    }

    #[test]
    fn wasserstein_triangle(seed in any::<u64>(), m in 1usize..10, dim in 1usize..4, p in 1u32..3) {
        let (x, y, z) = (points(seed, m, dim), points(seed ^ 1, m, dim), points(seed ^ 2, m, dim));
        let w = |a: &Matrix, b: &Matrix| wasserstein(a, b, p).unwrap();
        prop_assert!(w(&x, &z) <= w(&x, &y) + w(&y, &z) + 1e-9);
    }

    #[test]
    fn wasserstein_ignores_row_order(seed in any::<u64>(), m in 1usize..10, dim in 1usize..4) {
        let x = points(seed, m, dim);
        let order = RngState::new(seed ^ 3).permutation(m);
        let y = points(seed ^ 4, m, dim);
        prop_assert_eq!(wasserstein(&x, &x.select_rows(&order), 2).unwrap(), 0.0);
        let d = wasserstein(&x, &y, 2).unwrap() - wasserstein(&x, &y.select_rows(&order), 2).unwrap();
        prop_assert!(d.abs() <= 1e-9);
    }

    #[test]
    fn one_dimensional_sorted_matching(seed in any::<u64>(), m in 1usize..16) {
        let (x, y) = (points(seed, m, 1), points(seed ^ 5, m, 1));
        let mut xs = x.data().to_vec();
        let mut ys = y.data().to_vec();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let w1: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - b).abs()).sum::<f64>() / m as f64;
        let w2: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m as f64;
        prop_assert!((wasserstein(&x, &y, 1).unwrap() - w1).abs() <= 1e-9);
        prop_assert!((wasserstein(&x, &y, 2).unwrap() - w2.sqrt()).abs() <= 1e-9);
    }

    #[test]
    fn lap_is_permutation_equivariant(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = RngState::new(seed);
        let entries: Vec<f64> = (0..n * n).map(|_| rng.next_f64()).collect();
        let c = CostMatrix::new(n, entries).unwrap();
        let (r, s) = (rng.permutation(n), rng.permutation(n));
        let shuffled = CostMatrix::new(n, (0..n * n).map(|k| c.get(r[k / n], s[k % n])).collect()).unwrap();
        let a = solve_lap(&c);
        let b = solve_lap(&shuffled);
        prop_assert!((a.cost - b.cost).abs() <= 1e-12 * (1.0 + a.cost));
        prop_assert_eq!(shuffled.cost_of(&b.permutation), b.cost);
    }
}

#[test]
fn lap_beats_random_pairings() {
    let mut rng = RngState::new(9);
    for n in [16, 64, 200] {
        let x = Matrix::from_fn(n, 3, |_, _| rng.normal());
        let y = Matrix::from_fn(n, 3, |_, _| rng.normal());
        let c = pairwise_sq_dist(&x, &y).unwrap();
        let best = solve_lap(&c);
        assert!(best.cost <= c.cost_of(&Permutation::identity(n)) + 1e-9);
        for _ in 0..50 {
            let p = Permutation::new(rng.permutation(n)).unwrap();
            assert!(best.cost <= c.cost_of(&p) + 1e-9);
        }
    }
}

#[test]
fn equal_rows_have_zero_cost() {
    let x = points(3, 20, 6).scale(1e3);
    let c = pairwise_sq_dist(&x, &x).unwrap();
    assert!((0..20).all(|i| c.get(i, i) == 0.0));
    assert_eq!(wasserstein(&x, &x, 1).unwrap(), 0.0);
}
