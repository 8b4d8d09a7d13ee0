//! Exact linear assignment and the Wasserstein distances it yields.
//!
//! For two empirical measures with the same number of atoms, the optimal
//! coupling can be taken to be a permutation (Birkhoff), so `W_p` reduces to
//! a linear assignment problem on the pairwise cost matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sq_dist, Matrix};
use crate::par;

const NONE: usize = usize::MAX;

/// Square matrix of finite assignment costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Argument(format!(
                "cost matrix needs {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite cost at ({}, {})",
                pos / n.max(1),
                pos % n.max(1)
            )));
        }
        Ok(Self { n, entries })
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Argument(format!(
                "cost matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        Self::new(m.rows(), m.data().to_vec())
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::from_matrix(&Matrix::from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// `Σᵢ C[i, π(i)]`, summed in row order.
    pub fn cost_of(&self, perm: &Permutation) -> f64 {
        perm.mapping
            .iter()
            .enumerate()
            .map(|(i, &j)| self.get(i, j))
            .sum()
    }
}

/// A bijection of `0..n`; row `i` is paired with column `mapping[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(mapping: Vec<usize>) -> Result<Self> {
        Permutation::new(mapping)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.mapping
    }
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &j in &mapping {
            if j >= n || std::mem::replace(&mut seen[j], true) {
                return Err(Error::Argument(format!(
                    "not a permutation of 0..{n}: {mapping:?}"
                )));
            }
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.mapping
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &j) in self.mapping.iter().enumerate() {
            inv[j] = i;
        }
        Self { mapping: inv }
    }

    /// `i ↦ self(other(i))`.
    pub fn compose(&self, other: &Permutation) -> Self {
        Self {
            mapping: other.mapping.iter().map(|&j| self.mapping[j]).collect(),
        }
    }
}

/// An optimal pairing and its total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub permutation: Permutation,
    pub cost: f64,
}

/// Exact minimum-cost perfect matching (Jonker–Volgenant).
///
/// Column reduction with reduction transfer and two rounds of augmenting row
/// reduction seed a dual-feasible partial assignment; the remaining free rows
/// are completed by Dijkstra-style shortest augmenting paths over reduced
/// costs. The returned cost is recomputed as `Σᵢ C[i, π(i)]` in row order.
pub fn solve_lap(c: &CostMatrix) -> Assignment {
    let n = c.n;
    if n == 0 {
        return Assignment {
            permutation: Permutation::identity(0),
            cost: 0.0,
        };
    }
    if n == 1 {
        return Assignment {
            permutation: Permutation::identity(1),
            cost: c.get(0, 0),
        };
    }
    let mut x = vec![NONE; n]; // row -> column
    let mut y = vec![NONE; n]; // column -> row
    let mut v = vec![0.0; n];
    let mut free_rows = Vec::with_capacity(n);

    column_reduction(c, &mut x, &mut y, &mut v, &mut free_rows);
    for _ in 0..2 {
        if free_rows.is_empty() {
            break;
        }
        augmenting_row_reduction(c, &mut x, &mut y, &mut v, &mut free_rows);
        }
    if !free_rows.is_empty() {
        augment(c, &mut x, &mut y, &mut v, &free_rows);
    }

    let permutation = Permutation { mapping: x };
    let cost = c.cost_of(&permutation);
    Assignment { permutation, cost }
}

fn column_reduction(
    c: &CostMatrix,
    x: &mut [usize],
    y: &mut [usize],
    v: &mut [f64],
    free_rows: &mut Vec<usize>,
) {
    let n = c.n;
    v.fill(f64::INFINITY);
    for i in 0..n {
        for (j, &cij) in c.row(i).iter().enumerate() {
            if cij < v[j] {
                v[j] = cij;
                y[j] = i;
            }
        }
    }
    let mut unique = vec![true; n];
    for j in (0..n).rev() {
        let i = y[j];
        if x[i] == NONE {
            x[i] = j;
        } else {
            unique[i] = false;
            y[j] = NONE;
        }
    }
    for i in 0..n {
        if x[i] == NONE {
            free_rows.push(i);
        } else if unique[i] {
            // Reduction transfer.
            let j = x[i];
            let row = c.row(i);
            let min = (0..n)
                .filter(|&j2| j2 != j)
                .map(|j2| row[j2] - v[j2])
                .fold(f64::INFINITY, f64::min);
            v[j] -= min;
        }
    }
}

fn augmenting_row_reduction(
    c: &CostMatrix,
    x: &mut [usize],
    y: &mut [usize],
    v: &mut [f64],
    free_rows: &mut Vec<usize>,
) {
    let n = c.n;
    let n_free = free_rows.len();
    let mut current = 0usize;
    let mut new_free = 0usize;
    let mut rr_count = 0usize;
    while current < n_free {
        rr_count += 1;
        let free_i = free_rows[current];
        current += 1;

        let row = c.row(free_i);
        let (mut j1, mut u1) = (0usize, row[0] - v[0]);
        let (mut j2, mut u2) = (NONE, f64::INFINITY);
        for j in 1..n {
            let h = row[j] - v[j];
            if h < u2 {
                if h >= u1 {
                    u2 = h;
                    j2 = j;
                } else {
                    u2 = u1;
                    u1 = h;
                    j2 = j1;
                    j1 = j;
                }
            }
        }
        let mut i0 = y[j1];
        let v1_new = v[j1] - (u2 - u1);
        let v1_lowers = v1_new < v[j1];
        // Past 8n row scans the remaining free rows are left to the
        // shortest-path phase; this also bounds the loop under float ties.
        if rr_count < 8 * n {
            if v1_lowers {
                v[j1] = v1_new;
            } else if i0 != NONE && j2 != NONE {
                j1 = j2;
                i0 = y[j2];
            }
            if i0 != NONE {
                if v1_lowers {
                    current -= 1;
                    free_rows[current] = i0;
                } else {
                    free_rows[new_free] = i0;
                    new_free += 1;
                }
            }
        } else if i0 != NONE {
            free_rows[new_free] = i0;
            new_free += 1;
        }
        if x[free_i] != NONE && y[x[free_i]] == free_i {
            y[x[free_i]] = NONE;
        }
        x[free_i] = j1;
        y[j1] = free_i;
        if i0 != NONE && x[i0] == j1 {
            x[i0] = NONE;
        }
    }
    free_rows.truncate(new_free);
}

fn augment(c: &CostMatrix, x: &mut [usize], y: &mut [usize], v: &mut [f64], free_rows: &[usize]) {
    let n = c.n;
    let mut pred = vec![0usize; n];
    let mut cols: Vec<usize> = (0..n).collect();
    let mut d = vec![0.0; n];
    for &free_i in free_rows {
        let end = shortest_path(c, free_i, y, v, &mut pred, &mut cols, &mut d);
        let mut j = end;
        loop {
            let i = pred[j];
            y[j] = i;
            let next = std::mem::replace(&mut x[i], j);
            if i == free_i {
                break;
            }
            j = next;
        }
    }
}

/// Dijkstra over reduced costs from `start`; returns the first free column
/// reached and updates the column potentials of settled columns.
fn shortest_path(
    c: &CostMatrix,
    start: usize,
    y: &[usize],
    v: &mut [f64],
    pred: &mut [usize],
    cols: &mut [usize],
    d: &mut [f64],
) -> usize {
    let n = c.n;
    let row = c.row(start);
    for j in 0..n {
        cols[j] = j;
        pred[j] = start;
        d[j] = row[j] - v[j];
    }
    // cols[..lo] settled, cols[lo..hi] at the current minimum distance.
    let mut lo = 0usize;
    let mut hi = 0usize;
    let mut n_ready = 0usize;
    let mut final_j = NONE;
    let mut mind = 0.0;

    while final_j == NONE {
        if lo == hi {
            n_ready = lo;
            hi = lo + 1;
            mind = d[cols[lo]];
            for k in hi..n {
                let j = cols[k];
                if d[j] <= mind {
                    if d[j] < mind {
                        hi = lo;
                        mind = d[j];
                    }
                    cols.swap(k, hi);
                    hi += 1;
                }
            }
            for &j in &cols[lo..hi] {
                if y[j] == NONE {
                    final_j = j;
                    break;
                }
            }
        }
        if final_j == NONE {
            // Scan rows matched to columns at the current minimum.
            'scan: while lo != hi {
                let j0 = cols[lo];
                lo += 1;
                let i = y[j0];
                let ri = c.row(i);
                let h = ri[j0] - v[j0] - mind;
                let mut k = hi;
                while k < n {
                    let j = cols[k];
                    let red = ri[j] - v[j] - h;
                    if red < d[j] {
                        d[j] = red;
                        pred[j] = i;
                        if red == mind {
                            if y[j] == NONE {
                                final_j = j;
                                break 'scan;
                            }
                            cols[k] = cols[hi];
                            cols[hi] = j;
                            hi += 1;
                        }
                    }
                    k += 1;
                }
            }
        }
    }
    for &j in &cols[..n_ready] {
        v[j] += d[j] - mind;
    }
    final_j
}

/// Exhaustive minimum over all `n!` permutations (`n ≤ 8`).
///
/// Permutations are visited in lexicographic order and only a strictly
/// smaller total replaces the incumbent, so ties resolve to the
/// lexicographically smallest mapping.
pub fn brute_force_lap(c: &CostMatrix) -> Result<Assignment> {
    const MAX_N: usize = 8;
    let n = c.n;
    if n > MAX_N {
        return Err(Error::Size { n, max: MAX_N });
    }
    let mut current: Vec<usize> = (0..n).collect();
    let mut best = current.clone();
    let mut best_cost = f64::INFINITY;
    loop {
        let cost: f64 = current.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum();
        if cost < best_cost {
            best_cost = cost;
            best.copy_from_slice(&current);
        }
        if !next_permutation(&mut current) {
            break;
        }
    }
    Ok(Assignment {
        permutation: Permutation { mapping: best },
        cost: if n == 0 { 0.0 } else { best_cost },
    })
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// `C[i][j] = ‖xᵢ − yⱼ‖²` via `‖x‖² + ‖y‖² − 2⟨x, y⟩`. Entries lost to
/// cancellation are recomputed directly, so equal rows cost exactly 0.
pub fn pairwise_sq_dist(x: &Matrix, y: &Matrix) -> Result<CostMatrix> {
    if x.shape() != y.shape() {
        return Err(Error::Argument(format!(
            "pairwise distance needs equal shapes, got {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let m = x.rows();
    let xn: Vec<f64> = (0..m).map(|i| x.row(i).iter().map(|v| v * v).sum()).collect();
    let yn: Vec<f64> = (0..m).map(|j| y.row(j).iter().map(|v| v * v).sum()).collect();
    let mut gram = x.matmul_t(y)?.into_data();
    par::for_each_chunk_mut(&mut gram, m.max(1), |i, row| {
        for (j, g) in row.iter_mut().enumerate() {
            let d = xn[i] + yn[j] - 2.0 * *g;
            *g = if d > 1e-8 * (xn[i] + yn[j]) { d } else { sq_dist(x.row(i), y.row(j)) };
        }
    });
    CostMatrix::new(m, gram)
}

/// Exact `W_p` (p ∈ {1, 2}) between the uniform measures on the rows of `x`
/// and of `y`.
pub fn wasserstein(x: &Matrix, y: &Matrix, p: u32) -> Result<f64> {
    if p != 1 && p != 2 {
        return Err(Error::Config(format!("unsupported order p = {p}")));
    }
    if x.rows() == 0 {
        return Err(Error::Argument("empty point sets".into()));
    }
    let mut cost = pairwise_sq_dist(x, y)?;
    if p == 1 {
        cost.entries.iter_mut().for_each(|c| *c = c.sqrt());
    }
    let total = solve_lap(&cost).cost / x.rows() as f64;
    Ok(if p == 1 { total } else { total.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;
    use proptest::prelude::*;

    fn random_costs(n: usize, rng: &mut RngState) -> CostMatrix {
        CostMatrix::new(n, (0..n * n).map(|_| rng.next_f64() * 10.0).collect()).unwrap()
    }

    #[test]
    fn lap_examples() {
        let c = CostMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let a = solve_lap(&c);
        assert!(a.permutation.is_identity());
        assert_eq!(a.cost, 0.0);

        let c = CostMatrix::from_rows(&[[4.0, 1.0], [2.0, 3.0]]).unwrap();
        let a = solve_lap(&c);
        assert_eq!(a.permutation.as_slice(), &[1, 0]);
        assert_eq!(a.cost, 3.0);

        let c = CostMatrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [3.0, 6.0, 9.0]])
            .unwrap();
        let a = solve_lap(&c);
        assert_eq!(a.permutation.as_slice(), &[2, 1, 0]);
        assert_eq!(a.cost, 10.0);
    }

    #[test]
    fn brute_force_examples() {
        let c = CostMatrix::from_rows(&[[2.5]]).unwrap();
        let a = brute_force_lap(&c).unwrap();
        assert!(a.permutation.is_identity());
        assert_eq!(a.cost, 2.5);

        let c = CostMatrix::from_rows(&[[4.0, 1.0], [2.0, 3.0]]).unwrap();
        let a = brute_force_lap(&c).unwrap();
        assert_eq!(a.permutation.as_slice(), &[1, 0]);
        assert_eq!(a.cost, 3.0);

        let c = CostMatrix::new(4, vec![1.5; 16]).unwrap();
        let a = brute_force_lap(&c).unwrap();
        assert!(a.permutation.is_identity());
        assert_eq!(a.cost, 6.0);

        let big = CostMatrix::new(9, vec![0.0; 81]).unwrap();
        assert!(matches!(brute_force_lap(&big), Err(Error::Size { n: 9, .. })));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(CostMatrix::new(2, vec![0.0, f64::NAN, 1.0, 1.0]).is_err());
        assert!(CostMatrix::new(1, vec![f64::INFINITY]).is_err());
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![1, 2]).is_err());
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = RngState::new(2024);
        for _ in 0..500 {
            let n = 2 + rng.below(6) as usize;
            let c = random_costs(n, &mut rng);
            assert_eq!(solve_lap(&c).cost, brute_force_lap(&c).unwrap().cost);
        }
    }

    #[test]
    fn integer_costs_with_ties() {
        // Many ties stress the float-equality paths of the augmentation.
        let mut rng = RngState::new(77);
        for _ in 0..300 {
            let n = 2 + rng.below(7) as usize;
            let c = CostMatrix::new(n, (0..n * n).map(|_| rng.below(3) as f64).collect())
                .unwrap();
            assert_eq!(solve_lap(&c).cost, brute_force_lap(&c).unwrap().cost);
        }
    }

    /// Textbook O(n³) Hungarian algorithm with row/column potentials; an
    /// independent exact reference for sizes beyond brute force.
    fn hungarian_reference(c: &CostMatrix) -> f64 {
        let n = c.n();
        let mut u = vec![0.0; n + 1];
        let mut v = vec![0.0; n + 1];
        let mut p = vec![0usize; n + 1];
        let mut way = vec![0usize; n + 1];
        for i in 1..=n {
            p[0] = i;
            let mut j0 = 0;
            let mut minv = vec![f64::INFINITY; n + 1];
            let mut used = vec![false; n + 1];
            loop {
                used[j0] = true;
                let i0 = p[j0];
                let mut delta = f64::INFINITY;
                let mut j1 = 0;
                for j in 1..=n {
                    if !used[j] {
                        let cur = c.get(i0 - 1, j - 1) - u[i0] - v[j];
                        if cur < minv[j] {
                            minv[j] = cur;
                            way[j] = j0;
                        }
                        if minv[j] < delta {
                            delta = minv[j];
                            j1 = j;
                        }
                    }
                }
                for j in 0..=n {
                    if used[j] {
                        u[p[j]] += delta;
                        v[j] -= delta;
                    } else {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
                if p[j0] == 0 {
                    break;
                }
            }
            loop {
                let j1 = way[j0];
                p[j0] = p[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }
        let mut mapping = vec![0; n];
        for j in 1..=n {
            mapping[p[j] - 1] = j - 1;
        }
        c.cost_of(&Permutation::new(mapping).unwrap())
    }

    #[test]
    fn matches_hungarian_reference() {
        let mut rng = RngState::new(31);
        for (n, dim) in [(64, 1), (300, 2), (300, 5), (500, 2), (200, 10)] {
            let x = Matrix::from_fn(n, dim, |_, _| rng.normal());
            let y = Matrix::from_fn(n, dim, |_, _| rng.normal());
            let c = pairwise_sq_dist(&x, &y).unwrap();
            let got = solve_lap(&c).cost;
            let want = hungarian_reference(&c);
            assert!((got - want).abs() <= 1e-9 * want.max(1.0), "n={n} dim={dim}: {got} vs {want}");
        }
        let c = random_costs(400, &mut rng);
        let (got, want) = (solve_lap(&c).cost, hungarian_reference(&c));
        assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
    }

    #[test]
    fn larger_instances_beat_random_permutations() {
        let mut rng = RngState::new(5);
        for n in [50, 200] {
            let c = random_costs(n, &mut rng);
            let best = solve_lap(&c);
            for _ in 0..50 {
                let p = Permutation::new(rng.permutation(n)).unwrap();
                assert!(best.cost <= c.cost_of(&p));
            }
        }
    }

    #[test]
    fn pairwise_examples() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let y = Matrix::from_rows(&[[2.0], [3.0]]).unwrap();
        let c = pairwise_sq_dist(&x, &y).unwrap();
        assert_eq!(c, CostMatrix::from_rows(&[[4.0, 9.0], [1.0, 4.0]]).unwrap());
        let d = pairwise_sq_dist(&x, &x).unwrap();
        assert_eq!((d.get(0, 0), d.get(1, 1)), (0.0, 0.0));
        assert!(pairwise_sq_dist(&x, &Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn wasserstein_examples() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let y = Matrix::from_rows(&[[2.0], [3.0]]).unwrap();
        assert_eq!(wasserstein(&x, &y, 2).unwrap(), 2.0);
        assert_eq!(wasserstein(&x, &y, 1).unwrap(), 2.0);
        assert_eq!(wasserstein(&x, &x, 2).unwrap(), 0.0);
        assert!(matches!(wasserstein(&x, &y, 3), Err(Error::Config(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pairwise_nonnegative(seed in any::<u64>(), m in 1usize..12, n in 1usize..6) {
            let mut rng = RngState::new(seed);
            let x = Matrix::from_fn(m, n, |_, _| rng.normal() * 1e3);
            let y = Matrix::from_fn(m, n, |_, _| rng.normal() * 1e3);
            let c = pairwise_sq_dist(&x, &y).unwrap();
            prop_assert!(c.entries.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn holder_ordering(seed in any::<u64>(), m in 1usize..20, n in 1usize..5) {
            let mut rng = RngState::new(seed);
            let x = Matrix::from_fn(m, n, |_, _| rng.normal());
            let y = Matrix::from_fn(m, n, |_, _| rng.normal());
            let w1 = wasserstein(&x, &y, 1).unwrap();
            let w2 = wasserstein(&x, &y, 2).unwrap();
            prop_assert!(w1 <= w2 + 1e-12);
        }

        #[test]
        fn translation_invariant(seed in any::<u64>(), m in 1usize..20) {
            let mut rng = RngState::new(seed);
            let x = Matrix::from_fn(m, 3, |_, _| rng.normal());
            let y = Matrix::from_fn(m, 3, |_, _| rng.normal());
            let shift = [rng.normal(), rng.normal(), rng.normal()];
            let xs = Matrix::from_fn(m, 3, |i, j| x.get(i, j) + shift[j]);
            let ys = Matrix::from_fn(m, 3, |i, j| y.get(i, j) + shift[j]);
            for p in [1, 2] {
                let a = wasserstein(&x, &y, p).unwrap();
                let b = wasserstein(&xs, &ys, p).unwrap();
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
